"""Patch datasets, train/validation split, flip augmentation and the RMSprop training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergedTrainingError, ParameterError, ShapeError, ValidationError
from .raster import GridSpec, PatchPair, Raster, read_raster, write_raster
from .tin import CHM_SCALE
from .unet import layers as L
from .unet.checkpoint import save_weights
from .unet.model import UNetConfig, backward, check_input, forward, init_weights
from .unet.optim import OptimizerState, rmsprop_step

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "val_mae_m", "clamped_targets"]
HEIGHT_SCALE = 100.0  # network output 1.0 == 100 m


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-4
    val_fraction: float = 0.1
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ParameterError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")

    @classmethod
    def paper(cls, seed: int = 0) -> "TrainConfig":
        return cls(epochs=5000, seed=seed)


@dataclass
class Dataset:
    items: list[PatchPair] = field(default_factory=list)
    roles: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def subset(self, idx) -> "Dataset":
        return Dataset([self.items[i] for i in idx], [self.roles[i] for i in idx])


def assemble_dataset(pairs, empties=()) -> Dataset:
    """Concatenate vegetated pairs and all-zero-target empty patches, keeping provenance."""
    empties = list(empties)
    for k, e in enumerate(empties):
        if np.any(e.target != 0):
            raise ValidationError(f"empty patch {k} ({e.source_id or 'unnamed'}) has non-zero target pixels")
    pairs = list(pairs)
    return Dataset(pairs + empties, ["pair"] * len(pairs) + ["empty"] * len(empties))


def split_sizes(n: int, val_fraction: float = 0.1) -> tuple[int, int]:
    """``(n_train, n_val)`` with ``n_val = round(n * val_fraction)`` (halves round up)."""
    n_val = int(math.floor(n * val_fraction + 0.5))
    n_val = min(max(n_val, 1), n - 1)
    return n - n_val, n_val


def split(dataset, val_fraction: float = 0.1, seed: int = 0):
    """Seeded shuffle, then the first ``n_train`` items train and the rest validate."""
    n = len(dataset)
    if n < 2:
        raise ParameterError("need at least 2 items to split")
    n_train, _ = split_sizes(n, val_fraction)
    perm = np.random.default_rng(seed).permutation(n)
    tr, va = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    if isinstance(dataset, Dataset):
        return dataset.subset(tr), dataset.subset(va)
    return [dataset[i] for i in tr], [dataset[i] for i in va]


def augment(pair: PatchPair, rng: np.random.Generator) -> PatchPair:
    """Independent 50% horizontal and vertical flips applied to image and target alike."""
    img, tgt = pair.image, pair.target
    if rng.random() < 0.5:
        img, tgt = img[..., ::-1], tgt[..., ::-1]
    if rng.random() < 0.5:
        img, tgt = img[..., ::-1, :], tgt[..., ::-1, :]
    return PatchPair(np.ascontiguousarray(img), np.ascontiguousarray(tgt), pair.offset, pair.source_id, pair.grid)


def scale_inputs(images: np.ndarray) -> np.ndarray:
    return images.astype(np.float32) / np.float32(255.0)


def scale_targets(targets: np.ndarray) -> tuple[np.ndarray, int]:
    """u8 CHM codes -> network units (meters / 100), clamped to 1; returns the clamp count."""
    t = targets.astype(np.float32) / np.float32(CHM_SCALE) / np.float32(HEIGHT_SCALE)
    over = t > 1.0
    return np.minimum(t, np.float32(1.0)), int(over.sum())


@dataclass
class TrainResult:
    weights: dict[str, np.ndarray]
    state: OptimizerState
    best_epoch: int
    best_val_loss: float
    log_rows: list[dict]
    clamped: int


def _stack(ds: Dataset):
    imgs = np.stack([p.image for p in ds.items]) if len(ds) else np.zeros((0, 4, 1, 1), np.uint8)
    tgts = np.stack([p.target for p in ds.items]) if len(ds) else np.zeros((0, 1, 1), np.uint8)
    return imgs, tgts


def evaluate(weights, config: UNetConfig, images: np.ndarray, targets: np.ndarray, batch_size: int = 32):
    """MSE (network units) and MAE (meters) of u8 images/targets."""
    se = ae = 0.0
    count = 0
    for i in range(0, len(images), batch_size):
        x = scale_inputs(images[i:i + batch_size])
        t, _ = scale_targets(targets[i:i + batch_size])
        p = forward(weights, config, x)[0][:, 0].astype(np.float64)
        d = p - t
        se += float(np.sum(d * d))
        ae += float(np.sum(np.abs(d)))
        count += d.size
    return se / count, ae / count * HEIGHT_SCALE


def _write_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_loss"]), repr(r["val_mae_m"]),
                        r["clamped_targets"]])


def train(dataset: Dataset, unet_config: UNetConfig, cfg: TrainConfig, out_dir=None,
          checkpoint_name: str = "best.ckpt", log_name: str = "train_log.csv") -> TrainResult:
    """Train with best-validation checkpointing.

    The final partial batch of each epoch is used. Validation patches are never
    augmented. When ``out_dir`` is given the checkpoint is rewritten whenever
    validation loss improves and the CSV log is rewritten every epoch.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds = split(dataset, cfg.val_fraction, cfg.seed)
    x_tr, t_tr = _stack(train_ds)
    x_va, t_va = _stack(val_ds)
    if len(train_ds):
        check_input(unet_config, scale_inputs(x_tr[:1]))
        if t_tr.shape[1:] != x_tr.shape[2:]:
            raise ShapeError(f"target patches {t_tr.shape[1:]} do not match images {x_tr.shape[2:]}")
    _, clamped = scale_targets(t_tr)

    weights = init_weights(unet_config)
    state = OptimizerState.for_params(weights, learning_rate=cfg.learning_rate)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    aug_rng = np.random.default_rng(seeds[1])

    rows: list[dict] = []
    best_val, best_epoch = math.inf, 0
    best_weights = {k: v.copy() for k, v in weights.items()}
    if out is not None:
        save_weights(weights, state, out / checkpoint_name, unet_config, epoch=0)
        _write_log(rows, out / log_name)

    n = len(x_tr)
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            imgs, tgts = x_tr[idx], t_tr[idx]
            if cfg.augment:
                flipped = [augment(PatchPair(a, b), aug_rng) for a, b in zip(imgs, tgts)]
                imgs = np.stack([p.image for p in flipped])
                tgts = np.stack([p.target for p in flipped])
            x = scale_inputs(imgs)
            t, _ = scale_targets(tgts)
            t = t[:, None]
            pred, tape = forward(weights, unet_config, x, keep_tape=True)
            loss = L.mse_loss(pred, t)
            if not np.isfinite(loss):
                raise DivergedTrainingError(epoch, loss)
            rmsprop_step(weights, backward(tape, L.mse_grad(pred, t)), state)
            loss_sum += loss * len(idx)
        train_loss = loss_sum / max(n, 1)
        val_loss, val_mae = evaluate(weights, unet_config, x_va, t_va, cfg.batch_size)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergedTrainingError(epoch, train_loss if not np.isfinite(train_loss) else val_loss)
        rows.append({"epoch": epoch, "train_loss": float(train_loss), "val_loss": float(val_loss),
                     "val_mae_m": float(val_mae), "clamped_targets": clamped})
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_weights = {k: v.copy() for k, v in weights.items()}
            if out is not None:
                save_weights(weights, state, out / checkpoint_name, unet_config, epoch=epoch,
                             extra={"val_loss": val_loss, "val_mae_m": val_mae})
        if out is not None:
            _write_log(rows, out / log_name)
        log.info("epoch %d train %.6g val %.6g mae %.3f m", epoch, train_loss, val_loss, val_mae)
    return TrainResult(best_weights, state, best_epoch, best_val, rows, clamped)


def read_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]), "val_loss": float(r["val_loss"]),
                 "val_mae_m": float(r["val_mae_m"]), "clamped_targets": int(r["clamped_targets"])}
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------- manifests

MANIFEST_COLUMNS = ["image", "target", "role", "row", "col", "source_id"]


def _patch_grid(pair: PatchPair) -> GridSpec:
    if pair.grid is not None:
        return pair.grid
    p = pair.size
    return GridSpec(float(pair.offset[1]), -float(pair.offset[0]), 1.0, p, p)


def write_patches(pairs, out_dir, role: str = "pair", manifest=None, append: bool = False, prefix: str = "patch"):
    """Persist patches as raster pairs and list them in a manifest CSV (paths relative to it)."""
    if role not in ("pair", "empty"):
        raise ParameterError(f"role must be 'pair' or 'empty', got {role!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Path(manifest) if manifest is not None else out / "manifest.csv"
    exists = manifest.exists() and append
    rows = []
    for k, p in enumerate(pairs):
        if role == "empty" and np.any(p.target != 0):
            raise ValidationError(f"empty patch {k} has non-zero target pixels")
        g = _patch_grid(p)
        stem = f"{prefix}_{k:06d}"
        write_raster(Raster(g, p.image), out / f"{stem}_img")
        write_raster(Raster(g, p.target), out / f"{stem}_chm")
        base = manifest.parent.resolve()
        rows.append([str((out / f"{stem}_img").resolve().relative_to(base)),
                     str((out / f"{stem}_chm").resolve().relative_to(base)),
                     role, p.offset[0], p.offset[1], p.source_id])
    with open(manifest, "a" if exists else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(MANIFEST_COLUMNS)
        w.writerows(rows)
    return manifest


def read_manifest(path) -> Dataset:
    path = Path(path)
    pairs, empties = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            img = read_raster(path.parent / r["image"])
            chm = read_raster(path.parent / r["target"])
            pp = PatchPair(np.array(img.data), np.array(chm.data[0]), (int(r["row"]), int(r["col"])),
                           r.get("source_id", ""), img.grid)
            (empties if r["role"] == "empty" else pairs).append(pp)
    return assemble_dataset(pairs, empties)
