"""Hot numeric kernels.

Every scalar kernel here is written against :mod:`math` only so it compiles
under ``numba.njit`` unchanged; with acceleration off the same functions run
as plain Python. The batch evaluators and the Monte Carlo tally come in two
flavours, a numba loop and a vectorised numpy version, which must agree.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, jit

E0 = 0.5
THETA_TOL = 1e-12
BRACKET_GAP = 1e-9


# ---------------------------------------------------------------- channel ---


@jit
def poisson_pmf(mu, n):
    if n == 0:
        return math.exp(-mu)
    if mu == 0.0:
        return 0.0
    return math.exp(n * math.log(mu) - mu - math.lgamma(n + 1.0))


@jit
def _arrive(i, eta):
    # 1 - (1 - eta)^i without cancellation at small eta
    if i == 0:
        return 0.0
    if eta >= 1.0:
        return 1.0
    return -math.expm1(i * math.log1p(-eta))


@jit
def yield_i(i, eta, y0):
    return y0 + (1.0 - y0) * _arrive(i, eta)


@jit
def error_yield_i(i, eta, y0, ed):
    return E0 * y0 + ed * _arrive(i, eta) * (1.0 - y0)


@jit
def overall_gain(mu, eta, y0):
    # 1 - e^{-eta mu}(1 - y0), written to keep precision at tiny eta*mu
    x = eta * mu
    return -math.expm1(-x) + math.exp(-x) * y0


@jit
def overall_error_gain(mu, eta, y0, ed):
    return E0 * y0 + ed * (-math.expm1(-eta * mu)) * (1.0 - y0)


@jit
def binary_entropy(x):
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


# ------------------------------------------------------------ fluctuation ---


@jit
def fluct_up(value, n, u):
    """value * (1 + u / sqrt(n * value)), capped at 1."""
    if u == 0.0:
        return value
    d = n * value
    if d <= 0.0:
        return 1.0
    return min(value * (1.0 + u / math.sqrt(d)), 1.0)


@jit
def down_factor(d, u):
    """max(0, 1 - u / sqrt(d)); zero when d carries no statistics."""
    if u == 0.0:
        return 1.0
    if d <= 0.0:
        return 0.0
    return max(1.0 - u / math.sqrt(d), 0.0)


@jit
def fluct_down(value, n, u):
    return value * down_factor(n * value, u)


@jit
def y1_lower_raw(q_mu_u, q_nu_l, y0_u, mu, nu):
    mu2 = mu * mu
    nu2 = nu * nu
    return (mu / (mu * nu - nu2)) * (
        q_nu_l * math.exp(nu) - q_mu_u * math.exp(mu) * nu2 / mu2 - (mu2 - nu2) / mu2 * y0_u
    )


@jit
def e1_upper_raw(eq_nu_x_u, y0_l, y1_l, nu):
    return (eq_nu_x_u * math.exp(nu) - E0 * y0_l) / (y1_l * nu)


# ------------------------------------------------------------ phase error ---


@jit
def xi(theta, e_bx, q_x):
    if theta == 0.0:
        return 0.0
    return (
        binary_entropy(e_bx + theta - q_x * theta)
        - q_x * binary_entropy(e_bx)
        - (1.0 - q_x) * binary_entropy(e_bx + theta)
    )


@jit
def log2_tail(theta, e_bx, n_x, n_z):
    """log2 of the random-sampling tail bound at deviation ``theta``."""
    n = n_x + n_z
    floor = 0.5 / n
    ef = e_bx if e_bx > floor else floor
    log_pref = 0.5 * math.log2(n) - 0.5 * (
        math.log2(ef) + math.log2(1.0 - ef) + math.log2(n_x) + math.log2(n_z)
    )
    return log_pref - n * xi(theta, e_bx, n_x / n)


@jit
def solve_theta(e_bx, n_x, n_z, p_fail):
    """Smallest theta with tail <= p_fail, by bisection; -1.0 if none exists."""
    if not (n_x > 0.0 and n_z > 0.0):
        return -1.0
    target = math.log2(p_fail)
    if log2_tail(0.0, e_bx, n_x, n_z) <= target:
        return 0.0
    hi = 1.0 - e_bx - BRACKET_GAP
    if hi <= 0.0 or log2_tail(hi, e_bx, n_x, n_z) > target:
        return -1.0
    lo = 0.0
    while hi - lo > THETA_TOL:
        mid = 0.5 * (lo + hi)
        if log2_tail(mid, e_bx, n_x, n_z) <= target:
            hi = mid
        else:
            lo = mid
    return hi


@jit
def sample_sizes(y1_l, mu, nu, n_mu, p_z, n_nu_x, p_x):
    n_z = n_mu * p_z * y1_l * mu * math.exp(-mu)
    n_x = n_nu_x * p_x * y1_l * nu * math.exp(-nu)
    return n_x, n_z


@jit
def phase_error_upper(e1_u, y1_l, mu, nu, n_mu, p_z, n_nu_x, p_x, p_fail):
    """(e1pz_u, theta_x, n_x, n_z); theta is NaN when no bound exists."""
    n_x, n_z = sample_sizes(y1_l, mu, nu, n_mu, p_z, n_nu_x, p_x)
    if e1_u >= 0.5:
        return min(e1_u, 1.0), 0.0, n_x, n_z
    theta = solve_theta(e1_u, n_x, n_z, p_fail)
    if theta < 0.0:
        return 0.5, math.nan, n_x, n_z
    return min(e1_u + theta, 1.0), theta, n_x, n_z


# --------------------------------------------------------------- key rate ---


@jit
def rate_from_stats(
    q_mu, e_mu, q_nu_z, eq_nu_x, y0_obs,
    mu, nu, p_z, n_mu, n_nu_z, n_nu_x, n_0, n_total,
    f, u, p_fail,
):
    """Biased-basis key rate from observed rates; returns (rate, q * bracket)."""
    if not (0.0 < nu < mu) or n_total <= 0.0:
        return 0.0, 0.0
    p_x = 1.0 - p_z
    q_mu_u = fluct_up(q_mu, n_mu * p_z, u)
    q_nu_l = fluct_down(q_nu_z, n_nu_z * p_z, u)
    y0_l = fluct_down(y0_obs, n_0, u)
    y0_u = fluct_up(y0_obs, n_0, u)
    q0_l = y0_l * math.exp(-mu) * down_factor(n_0 * y0_obs * math.exp(-mu), u)
    eq_x_u = fluct_up(eq_nu_x, n_nu_x * p_x, u)

    y1_l = min(max(y1_lower_raw(q_mu_u, q_nu_l, y0_u, mu, nu), 0.0), 1.0)
    feasible = y1_l > 0.0
    e1pz = 0.5
    if feasible:
        e1_u = min(max(e1_upper_raw(eq_x_u, y0_l, y1_l, nu), 0.0), 1.0)
        e1pz, theta, n_x, n_z = phase_error_upper(e1_u, y1_l, mu, nu, n_mu, p_z, n_nu_x, p_x, p_fail)
        feasible = not math.isnan(theta)
    q1_l = y1_l * mu * math.exp(-mu)
    h_ph = binary_entropy(e1pz) if e1pz < 0.5 else 1.0
    bracket = -f * q_mu * binary_entropy(e_mu) + q1_l * (1.0 - h_ph) + q0_l
    q = n_mu * p_z / n_total
    if not feasible:
        return 0.0, q * bracket
    return q * max(bracket, 0.0), q * bracket


@jit
def biased_rate(mu, nu, p_z, a_mu, a_nu_z, a_nu_x, a_0, n_total, eta, y0, ed, f, u, p_fail):
    """Key rate of the biased scheme on the honest channel (allocation fractions)."""
    q_mu = overall_gain(mu, eta, y0)
    e_mu = overall_error_gain(mu, eta, y0, ed) / q_mu if q_mu > 0.0 else 0.0
    q_nu = overall_gain(nu, eta, y0)
    eq_nu = overall_error_gain(nu, eta, y0, ed)
    return rate_from_stats(
        q_mu, e_mu, q_nu, eq_nu, y0,
        mu, nu, p_z, a_mu * n_total, a_nu_z * n_total, a_nu_x * n_total, a_0 * n_total, n_total,
        f, u, p_fail,
    )[0]


@jit
def standard_rate(mu, nu, a_mu, a_nu, a_0, n_total, eta, y0, ed, f, u, p_fail):
    """Unbiased baseline: two symmetric key bases, each a biased run at p_z = 1/2."""
    return 2.0 * biased_rate(
        mu, nu, 0.5, 0.5 * a_mu, 0.5 * a_nu, 0.5 * a_nu, a_0, n_total, eta, y0, ed, f, u, p_fail
    )


# ------------------------------------------------------------------ batch ---


@jit
def _biased_batch_loop(X, n_total, eta, y0, ed, f, u, p_fail):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = biased_rate(
            X[i, 0], X[i, 1], X[i, 2], X[i, 3], X[i, 4], X[i, 5], X[i, 6],
            n_total, eta, y0, ed, f, u, p_fail,
        )
    return out


def _H_vec(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xs = np.where(inside, x, 0.5)
    return np.where(inside, -xs * np.log2(xs) - (1.0 - xs) * np.log2(1.0 - xs), 0.0)


def _fluct_up_vec(value, n, u):
    if u == 0.0:
        return value
    d = n * value
    ok = d > 0.0
    return np.where(ok, np.minimum(value * (1.0 + u / np.sqrt(np.where(ok, d, 1.0))), 1.0), 1.0)


def _down_factor_vec(d, u):
    if u == 0.0:
        return np.ones_like(d)
    ok = d > 0.0
    return np.where(ok, np.maximum(1.0 - u / np.sqrt(np.where(ok, d, 1.0)), 0.0), 0.0)


def _log2_tail_vec(theta, e_bx, n_x, n_z):
    n = n_x + n_z
    ef = np.maximum(e_bx, 0.5 / n)
    log_pref = 0.5 * np.log2(n) - 0.5 * (np.log2(ef) + np.log2(1.0 - ef) + np.log2(n_x) + np.log2(n_z))
    q_x = n_x / n
    xi_v = _H_vec(e_bx + theta - q_x * theta) - q_x * _H_vec(e_bx) - (1.0 - q_x) * _H_vec(e_bx + theta)
    xi_v = np.where(theta == 0.0, 0.0, xi_v)
    return log_pref - n * xi_v


def _solve_theta_vec(e_bx, n_x, n_z, p_fail):
    """Vectorised twin of :func:`solve_theta` (same bracket, same steps)."""
    theta = np.full(e_bx.shape, -1.0)
    ok = (n_x > 0.0) & (n_z > 0.0)
    if not ok.any():
        return theta
    target = math.log2(p_fail)
    nx = np.where(ok, n_x, 1.0)
    nz = np.where(ok, n_z, 1.0)
    at_zero = ok & (_log2_tail_vec(0.0, e_bx, nx, nz) <= target)
    theta[at_zero] = 0.0
    hi = 1.0 - e_bx - BRACKET_GAP
    hi_safe = np.where(hi > 0.0, hi, 0.0)
    live = ok & ~at_zero & (hi > 0.0) & (_log2_tail_vec(hi_safe, e_bx, nx, nz) <= target)
    lo = np.zeros_like(e_bx)
    hi = hi_safe.copy()
    active = live & (hi - lo > THETA_TOL)
    while active.any():
        mid = 0.5 * (lo + hi)
        below = _log2_tail_vec(mid, e_bx, nx, nz) <= target
        hi = np.where(active & below, mid, hi)
        lo = np.where(active & ~below, mid, lo)
        active = live & (hi - lo > THETA_TOL)
    theta[live] = hi[live]
    return theta



def _biased_batch_numpy(X, n_total, eta, y0, ed, f, u, p_fail):
    X = np.asarray(X, dtype=float)
    mu, nu, p_z, a_mu, a_nu_z, a_nu_x, a_0 = (X[:, k] for k in range(7))
    valid = (nu > 0.0) & (nu < mu)
    nu_s = np.where(valid, nu, 0.5 * mu)
    p_x = 1.0 - p_z
    n_mu, n_nu_z, n_nu_x, n_0 = (a * n_total for a in (a_mu, a_nu_z, a_nu_x, a_0))

    q_mu = -np.expm1(-eta * mu) + np.exp(-eta * mu) * y0
    eq_mu = E0 * y0 + ed * (-np.expm1(-eta * mu)) * (1.0 - y0)
    e_mu = np.where(q_mu > 0.0, eq_mu / np.where(q_mu > 0.0, q_mu, 1.0), 0.0)
    q_nu = -np.expm1(-eta * nu_s) + np.exp(-eta * nu_s) * y0
    eq_nu = E0 * y0 + ed * (-np.expm1(-eta * nu_s)) * (1.0 - y0)
    y0v = np.full_like(mu, y0)

    q_mu_u = _fluct_up_vec(q_mu, n_mu * p_z, u)
    q_nu_l = q_nu * _down_factor_vec(n_nu_z * p_z * q_nu, u)
    y0_l = y0v * _down_factor_vec(n_0 * y0v, u)
    y0_u = _fluct_up_vec(y0v, n_0, u)
    q0_l = y0_l * np.exp(-mu) * _down_factor_vec(n_0 * y0v * np.exp(-mu), u)
    eq_x_u = _fluct_up_vec(eq_nu, n_nu_x * p_x, u)

    mu2, nu2 = mu * mu, nu_s * nu_s
    y1_raw = (mu / (mu * nu_s - nu2)) * (
        q_nu_l * np.exp(nu_s) - q_mu_u * np.exp(mu) * nu2 / mu2 - (mu2 - nu2) / mu2 * y0_u
    )
    y1_l = np.clip(y1_raw, 0.0, 1.0)
    has_y1 = y1_l > 0.0
    y1_s = np.where(has_y1, y1_l, 1.0)
    e1_u = np.clip((eq_x_u * np.exp(nu_s) - E0 * y0_l) / (y1_s * nu_s), 0.0, 1.0)

    n_z = n_mu * p_z * y1_l * mu * np.exp(-mu)
    n_x = n_nu_x * p_x * y1_l * nu_s * np.exp(-nu_s)
    need = has_y1 & (e1_u < 0.5)
    theta = np.full_like(mu, -1.0)
    if need.any():
        theta[need] = _solve_theta_vec(e1_u[need], n_x[need], n_z[need], p_fail)
    e1pz = np.where(
        need,
        np.where(theta >= 0.0, np.minimum(e1_u + theta, 1.0), 0.5),
        np.where(has_y1, np.minimum(e1_u, 1.0), 0.5),
    )
    feasible = has_y1 & ~(need & (theta < 0.0))
    h_ph = np.where(e1pz < 0.5, _H_vec(np.minimum(e1pz, 0.5)), 1.0)
    q1_l = y1_l * mu * np.exp(-mu)
    bracket = -f * q_mu * _H_vec(e_mu) + q1_l * (1.0 - h_ph) + q0_l
    q = n_mu * p_z / n_total
    return np.where(valid & feasible, q * np.maximum(bracket, 0.0), 0.0)


def biased_rate_batch(X, n_total, eta, y0, ed, f, u, p_fail, backend=None):
    """Rates for rows ``(mu, nu, p_z, a_mu, a_nu_z, a_nu_x, a_0)``."""
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 7:
        raise ValueError("expected an (n, 7) array of biased parameter rows")
    backend = backend or ("numba" if USE_NUMBA else "numpy")
    if backend == "numba":
        if not USE_NUMBA:
            raise RuntimeError("numba backend requested but acceleration is disabled")
        return _biased_batch_loop(X, n_total, eta, y0, ed, f, u, p_fail)
    return _biased_batch_numpy(X, n_total, eta, y0, ed, f, u, p_fail)


def standard_rate_batch(X, n_total, eta, y0, ed, f, u, p_fail, backend=None):
    """Rates for rows ``(mu, nu, a_mu, a_nu, a_0)`` of the unbiased baseline."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 5:
        raise ValueError("expected an (n, 5) array of standard parameter rows")
    mu, nu, a_mu, a_nu, a_0 = (X[:, k] for k in range(5))
    half = np.full_like(mu, 0.5)
    B = np.column_stack([mu, nu, half, 0.5 * a_mu, 0.5 * a_nu, 0.5 * a_nu, a_0])
    return 2.0 * biased_rate_batch(B, n_total, eta, y0, ed, f, u, p_fail, backend=backend)


# ------------------------------------------------------------ monte carlo ---


@jit
def _tally_loop(uni, class_thr, pz, photon_cdf, p_det, p_err, out):
    n_cls = class_thr.shape[0]
    k_max = photon_cdf.shape[1]
    for i in range(uni.shape[0]):
        c = 0
        while c < n_cls and uni[i, 0] >= class_thr[c]:
            c += 1
        b = 0 if uni[i, 1] < pz else 1
        n = 0
        while n < k_max and photon_cdf[c, n] < uni[i, 2]:
            n += 1
        out[c, b, n, 0] += 1
        if uni[i, 3] < p_det[c, b, n]:
            out[c, b, n, 1] += 1
            if uni[i, 4] < p_err[c, b, n]:
                out[c, b, n, 2] += 1


def _tally_numpy(uni, class_thr, pz, photon_cdf, p_det, p_err, out):
    c = np.searchsorted(class_thr, uni[:, 0], side="right")
    b = (uni[:, 1] >= pz).astype(np.int64)
    n = (photon_cdf[c] < uni[:, 2:3]).sum(axis=1)
    nb = out.shape[2]
    idx = (c * 2 + b) * nb + n
    det = uni[:, 3] < p_det.reshape(-1)[idx]
    err = det & (uni[:, 4] < p_err.reshape(-1)[idx])
    size = out.shape[0] * 2 * nb
    flat = out.reshape(size, 3)
    flat[:, 0] += np.bincount(idx, minlength=size)
    flat[:, 1] += np.bincount(idx[det], minlength=size)
    flat[:, 2] += np.bincount(idx[err], minlength=size)


def tally(uni, class_thr, pz, photon_cdf, p_det, p_err, out, backend=None):
    """Accumulate per-(class, Bob basis, photon number) sent/detected/error counts.

    ``uni`` holds five uniforms per pulse: intensity class, Bob's basis,
    photon number, detection, error. ``out`` is int64 and updated in place.
    """
    backend = backend or ("numba" if USE_NUMBA else "numpy")
    if backend == "numba":
        if not USE_NUMBA:
            raise RuntimeError("numba backend requested but acceleration is disabled")
        _tally_loop(uni, class_thr, pz, photon_cdf, p_det, p_err, out)
    else:
        _tally_numpy(uni, class_thr, pz, photon_cdf, p_det, p_err, out)
