import json
import os
import subprocess
import sys

import numpy as np
import pytest

from biasdecoy import _accel
from biasdecoy import _kernels as K

needs_numba = pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba disabled")
ARGS = (6e9, 0.1, 1.7e-6, 0.033, 1.16, 5.0, 1e-7)


def random_rows(n, seed=0):
    rng = np.random.default_rng(seed)
    mu = np.full(n, 0.479)
    nu = rng.uniform(0.005, 0.45, n)
    pz = rng.uniform(0.5, 1.0, n)
    w = rng.dirichlet(np.ones(4) * 0.7, n)
    return np.column_stack([mu, nu, pz, w])


@needs_numba
@pytest.mark.parametrize("eta", [1.0, 0.1, 1e-3, 1e-4])
def test_batch_backends_agree(eta):
    X = random_rows(400)
    args = (6e9, eta, 1.7e-6, 0.033, 1.16, 5.0, 1e-7)
    a = K.biased_rate_batch(X, *args, backend="numba")
    b = K.biased_rate_batch(X, *args, backend="numpy")
    if eta >= 1e-3:
        assert (a > 0).sum() > 0
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-300)
    S = X[:, [0, 1, 3, 4, 6]].copy()
    S[:, 4] = 1.0 - S[:, 2] - S[:, 3]
    np.testing.assert_allclose(
        K.standard_rate_batch(S, *args, backend="numba"),
        K.standard_rate_batch(S, *args, backend="numpy"),
        rtol=1e-9, atol=1e-300,
    )


def test_batch_matches_scalar():
    X = random_rows(50, seed=3)
    got = K.biased_rate_batch(X, *ARGS)
    ref = [K.biased_rate(*row, *ARGS) for row in X]
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-300)


@needs_numba
def test_jitted_equals_python():
    for fn, args in [
        (K.binary_entropy, (0.033,)),
        (K.log2_tail, (0.01, 0.033, 1e5, 1e7)),
        (K.solve_theta, (0.033, 1e5, 1e7, 1e-7)),
        (K.overall_gain, (0.479, 0.01, 1.7e-6)),
    ]:
        assert fn(*args) == pytest.approx(_accel.py_func(fn)(*args), rel=1e-13)
    row = random_rows(1, seed=9)[0]
    assert K.biased_rate(*row, *ARGS) == pytest.approx(_accel.py_func(K.biased_rate)(*row, *ARGS), rel=1e-12)


def test_batch_shape_checks():
    with pytest.raises(ValueError):
        K.biased_rate_batch(np.zeros((3, 5)), *ARGS)
    with pytest.raises(ValueError):
        K.standard_rate_batch(np.zeros((3, 7)), *ARGS)


def test_tally_backends_on_shared_uniforms():
    rng = np.random.default_rng(1)
    uni = rng.random((50_000, 5))
    thr = np.array([0.5, 0.7, 0.9])
    cdf = np.array([np.cumsum([np.exp(-m) * m**k / np.prod(range(1, k + 1)) for k in range(8)])
                    for m in (0.479, 0.1, 0.1, 0.0)])
    p_det = rng.random((4, 2, 9))
    p_err = rng.random((4, 2, 9)) * 0.5
    outs = []
    for backend in (["numba", "numpy"] if _accel.USE_NUMBA else ["numpy"]):
        out = np.zeros((4, 2, 9, 3), dtype=np.int64)
        K.tally(uni, thr, 0.7, cdf, p_det, p_err, out, backend=backend)
        outs.append(out)
    assert outs[0][..., 0].sum() == 50_000
    for o in outs[1:]:
        assert np.array_equal(outs[0], o)


def test_env_flag_disables_numba():
    code = (
        "import json, numpy as np\n"
        "from biasdecoy import _accel, _kernels as K\n"
        "X = np.array([[0.479, 0.05, 0.93, 0.9, 0.03, 0.06, 0.01]])\n"
        "r = K.biased_rate_batch(X, 6e9, 0.1, 1.7e-6, 0.033, 1.16, 5.0, 1e-7)\n"
        "err = None\n"
        "try:\n"
        "    K.biased_rate_batch(X, 6e9, 0.1, 1.7e-6, 0.033, 1.16, 5.0, 1e-7, backend='numba')\n"
        "except RuntimeError as exc:\n"
        "    err = str(exc)\n"
        "print(json.dumps([_accel.backend_name(), float(r[0]), err]))\n"
    )
    env = dict(os.environ, BIASDECOY_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    name, rate, err = json.loads(out.stdout)
    assert name == "numpy" and err is not None
    X = np.array([[0.479, 0.05, 0.93, 0.9, 0.03, 0.06, 0.01]])
    assert rate == pytest.approx(K.biased_rate_batch(X, *ARGS)[0], rel=1e-9)
