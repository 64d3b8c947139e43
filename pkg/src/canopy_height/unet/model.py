"""U-Net regression network with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ParameterError, ShapeError
from . import layers as L


@dataclass(frozen=True)
class UNetConfig:
    """Architecture description.

    ``depth`` is the number of encoder stages (each followed by a 2x2 max-pool);
    stage ``i`` has ``base_channels * 2**i`` channels and the bridge has
    ``base_channels * 2**depth``.
    """

    in_channels: int = 4
    depth: int = 3
    base_channels: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.depth < 1 or self.base_channels < 1:
            raise ParameterError(f"invalid UNetConfig {self}")

    @classmethod
    def desk(cls, seed: int = 0) -> "UNetConfig":
        return cls(depth=3, base_channels=8, seed=seed)

    @classmethod
    def paper(cls, seed: int = 0) -> "UNetConfig":
        return cls(depth=4, base_channels=64, seed=seed)

    def channels(self, stage: int) -> int:
        return self.base_channels * 2**stage

    @property
    def multiple(self) -> int:
        return 2**self.depth

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(config: UNetConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; the order is the serialization order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout, k=3):
        shapes[f"{name}.w"] = (cout, cin, k, k)
        shapes[f"{name}.b"] = (cout,)

    cin = config.in_channels
    for i in range(config.depth):
        c = config.channels(i)
        conv(f"enc{i}.conv1", cin, c)
        conv(f"enc{i}.conv2", c, c)
        cin = c
    cb = config.channels(config.depth)
    conv("bridge.conv1", cin, cb)
    conv("bridge.conv2", cb, cb)
    cin = cb
    for i in reversed(range(config.depth)):
        c = config.channels(i)
        shapes[f"dec{i}.up.w"] = (cin, c, 2, 2)
        shapes[f"dec{i}.up.b"] = (c,)
        conv(f"dec{i}.conv1", 2 * c, c)
        conv(f"dec{i}.conv2", c, c)
        cin = c
    conv("head", cin, 1, k=1)
    return shapes


def count_parameters(config: UNetConfig) -> int:
    return int(sum(np.prod(s) for s in parameter_shapes(config).values()))


def init_weights(config: UNetConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-uniform kernels from ``config.seed``, zero biases."""
    rng = np.random.default_rng(config.seed)
    weights = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=dtype)
            continue
        if ".up." in name:
            fan_in = shape[0] * shape[2] * shape[3]
        else:
            fan_in = shape[1] * shape[2] * shape[3]
        limit = np.sqrt(6.0 / fan_in)
        weights[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return weights


def zero_weights(config: UNetConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    return {k: np.zeros(s, dtype=dtype) for k, s in parameter_shapes(config).items()}


def check_input(config: UNetConfig, image: np.ndarray) -> None:
    if image.ndim != 4:
        raise ShapeError(f"image must be (batch, channels, H, W), got {image.shape}")
    if image.shape[1] != config.in_channels:
        raise ShapeError(f"expected {config.in_channels} channels, got {image.shape[1]}")
    m = config.multiple
    if image.shape[2] % m or image.shape[3] % m:
        raise ShapeError(f"height/width {image.shape[2:]} not divisible by 2**depth = {m}")


def _conv_relu(x, weights, name, tape):
    y, cache = L.conv2d_forward(x, weights[f"{name}.w"], weights[f"{name}.b"])
    y, mask = L.relu_forward(y)
    tape.append((name, cache, mask))
    return y


def forward(weights, config: UNetConfig, image, keep_tape: bool = False):
    """Run the network; returns ``(output, tape)`` with ``tape=None`` unless requested.

    ``image`` must already be scaled to [0, 1]. Output has shape (N, 1, H, W).
    """
    check_input(config, image)
    tape: list = []
    skips = []
    x = image
    for i in range(config.depth):
        x = _conv_relu(x, weights, f"enc{i}.conv1", tape)
        x = _conv_relu(x, weights, f"enc{i}.conv2", tape)
        skips.append(x)
        x, pcache = L.maxpool2x2_forward(x)
        tape.append((f"enc{i}.pool", pcache, None))
    x = _conv_relu(x, weights, "bridge.conv1", tape)
    x = _conv_relu(x, weights, "bridge.conv2", tape)
    for i in reversed(range(config.depth)):
        up, ucache = L.upconv2x2_forward(x, weights[f"dec{i}.up.w"], weights[f"dec{i}.up.b"])
        tape.append((f"dec{i}.up", ucache, skips[i].shape[1]))
        x = np.concatenate([skips[i], up], axis=1)
        x = _conv_relu(x, weights, f"dec{i}.conv1", tape)
        x = _conv_relu(x, weights, f"dec{i}.conv2", tape)
    logits, hcache = L.conv2d_forward(x, weights["head.w"], weights["head.b"])
    out = L.sigmoid(logits)
    tape.append(("head", hcache, out))
    return out, (tape if keep_tape else None)


def predict(weights, config: UNetConfig, image):
    return forward(weights, config, image)[0]


def backward(tape, grad_out) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given d(loss)/d(output)."""
    grads: dict[str, np.ndarray] = {}
    entries = list(tape)
    _, hcache, out = entries.pop()
    g = grad_out * out * (1 - out)
    g, grads["head.w"], grads["head.b"] = L.conv2d_backward(g, hcache)

    skip_grads: dict[int, np.ndarray] = {}

    def conv_relu_back(g, entry):
        name, cache, mask = entry
        g = L.relu_backward(g, mask)
        gx, grads[f"{name}.w"], grads[f"{name}.b"] = L.conv2d_backward(g, cache)
        return gx

    while entries:
        name, cache, extra = entries.pop()
        if name.endswith(".up"):
            stage = int(name[3:name.index(".")])
            nskip = extra
            skip_grads[stage] = g[:, :nskip]
            g, grads[f"{name}.w"], grads[f"{name}.b"] = L.upconv2x2_backward(
                np.ascontiguousarray(g[:, nskip:]), cache)
        elif name.endswith(".pool"):
            stage = int(name[3:name.index(".")])
            g = L.maxpool2x2_backward(g, cache) + skip_grads.pop(stage)
        else:
            g = conv_relu_back(g, (name, cache, extra))
    return grads


def receptive_field_radius(config: UNetConfig) -> int:
    """Largest distance (pixels, per axis) from an output pixel to any input pixel it depends on.

    Computed structurally by propagating 1-D dependency sets back through the
    layer graph, so it does not depend on weight values.
    """
    period = config.multiple
    worst = 0
    for p in range(period):
        deps = _deps_decoder(config, 0, {p})
        worst = max(worst, max(abs(i - p) for i in deps))
    return worst


def _conv_deps(s):
    return {j + d for j in s for d in (-1, 0, 1)}


def _deps_encoder_out(config, stage, cells):
    """Input pixels feeding the stage-``stage`` encoder output (pre-pool) at ``cells``."""
    s = _conv_deps(_conv_deps(cells))
    if stage == 0:
        return s
    return _deps_encoder_out(config, stage - 1, {2 * c + k for c in s for k in (0, 1)})


def _deps_decoder(config, stage, cells):
    """Input pixels feeding the decoder output of ``stage`` at ``cells``."""
    s = _conv_deps(_conv_deps(cells))
    deps = set(_deps_encoder_out(config, stage, s))
    coarse = {c // 2 for c in s}
    if stage + 1 == config.depth:
        bridge_in = _conv_deps(_conv_deps(coarse))
        deps |= _deps_encoder_out(config, stage, {2 * c + k for c in bridge_in for k in (0, 1)})
    else:
        deps |= _deps_decoder(config, stage + 1, coarse)
    return deps
