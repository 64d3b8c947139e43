import os
import subprocess
import sys
import textwrap

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from canopy_height import _accel, kernels
from canopy_height.synth import single_conifer
from canopy_height.tin import build_chm, build_dsm_pitfree, build_dtm, grid_for_cloud


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 400), span=st.integers(1, 12))
def test_voxel_counts_backends_agree(seed, n, span):
    ijk = np.random.default_rng(seed).integers(0, span, (n, 3)).astype(np.int64)
    assert np.array_equal(kernels.voxel_other_counts_numba(ijk), kernels.voxel_other_counts_numpy(ijk))


def test_default_backend_is_numba():
    if os.environ.get("CANOPY_HEIGHT_NUMBA", "1") != "0":
        assert _accel.backend() == "numba"
        assert kernels.block_stat is kernels.block_stat_numba


def _chm_bytes():
    cloud, _ = single_conifer(seed=4)
    grid = grid_for_cloud(cloud, 1.0)
    dtm = build_dtm(cloud, grid)
    return build_chm(build_dsm_pitfree(cloud, grid), dtm).data.tobytes()


def test_env_flag_selects_numpy_and_matches(tmp_path):
    script = textwrap.dedent("""
        import sys
        from canopy_height import _accel, kernels
        from canopy_height.synth import single_conifer
        from canopy_height.tin import build_chm, build_dsm_pitfree, build_dtm, grid_for_cloud
        assert _accel.backend() == "numpy"
        assert kernels.rasterize_triangles is kernels.rasterize_triangles_numpy
        cloud, _ = single_conifer(seed=4)
        grid = grid_for_cloud(cloud, 1.0)
        chm = build_chm(build_dsm_pitfree(cloud, grid), build_dtm(cloud, grid))
        open(sys.argv[1], "wb").write(chm.data.tobytes())
    """)
    out = tmp_path / "chm.bin"
    env = dict(os.environ, CANOPY_HEIGHT_NUMBA="0")
    r = subprocess.run([sys.executable, "-c", script, str(out)], env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert out.read_bytes() == _chm_bytes()
