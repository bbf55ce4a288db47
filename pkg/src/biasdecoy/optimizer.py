"""Per-loss maximisation of the key rate over protocol parameters.

Two stages: a coarse multi-start grid evaluated in one batch, then
Nelder-Mead refinement of the best grid points. Allocation fractions are
searched as log-weights normalised onto the simplex, so the sum-to-one
constraint never binds; bounded scalars (mu, nu, p_z) are clipped into
their ranges before every evaluation.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _kernels as _k
from .channel import ChannelParams, db_to_transmittance
from .decoy import ProtocolParams, SecurityParams
from .keyrate import KeyRateReport, StandardAllocation, evaluate_biased, evaluate_standard

log = logging.getLogger(__name__)

SCHEMES = ("biased", "standard")
MIN_FRACTION = 1e-12
MAX_EVALS = 10_000
RATE_TOL = 1e-10
DEFAULT_N_TOTAL = 6e9
DEFAULT_MU = 0.479

# coarse grid for each decoy/vacuum allocation fraction
_FRACTION_GRID = (1e-4, 0.4)


@dataclass(frozen=True)
class SearchSpace:
    """Where the optimiser may look.

    A range with equal ends pins that parameter; ``allocation`` pins the
    pulse fractions (``(a_mu, a_nu_z, a_nu_x, a_0)`` for the biased scheme,
    ``(a_mu, a_nu, a_0)`` for the baseline). ``mu_range=None`` keeps ``mu``
    fixed.
    """

    mu: float = DEFAULT_MU
    nu_range: tuple = (0.005, 0.45)
    pz_range: tuple = (0.5, 1.0)
    mu_range: tuple | None = None
    allocation: tuple | None = None
    n_total: float = DEFAULT_N_TOTAL
    grid_points: int = 5
    n_starts: int = 3

    def __post_init__(self):
        lo, hi = self.nu_range
        mu_hi = self.mu_range[1] if self.mu_range else self.mu
        if not (0.0 < lo <= hi < mu_hi):
            raise ValueError(f"nu_range must lie inside (0, mu), got {self.nu_range!r}")
        lo, hi = self.pz_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"pz_range must lie inside [0, 1], got {self.pz_range!r}")
        if self.mu_range is not None:
            lo, hi = self.mu_range
            if not (0.0 < lo <= hi):
                raise ValueError("mu_range must be a positive interval")
        if self.allocation is not None:
            a = tuple(float(v) for v in self.allocation)
            if min(a) < 0.0 or abs(sum(a) - 1.0) > 1e-12:
                raise ValueError("fixed allocation fractions must be non-negative and sum to 1")
        if self.grid_points < 5:
            raise ValueError("the coarse grid needs at least 5 points per axis")
        if self.n_total <= 0:
            raise ValueError("n_total must be positive")


@dataclass
class OptResult:
    scheme: str
    loss_db: float
    best_params: ProtocolParams | StandardAllocation | None
    best_rate: float
    report: KeyRateReport | None
    evaluations: int
    converged: bool
    x: np.ndarray = field(default=None, repr=False)

    @property
    def row(self) -> dict:
        """Flat parameter summary (fractions of n_total)."""
        p = self.best_params
        if p is None:
            return {}
        if isinstance(p, ProtocolParams):
            a_mu, a_nz, a_nx, a_0 = p.fractions
            return dict(mu=p.mu, nu=p.nu, p_z=p.p_z, a_mu=a_mu, a_nu_z=a_nz, a_nu_x=a_nx, a_0=a_0)
        return dict(
            mu=p.mu, nu=p.nu, p_z=0.5, a_mu=p.n_mu / p.n_total,
            a_nu_z=0.5 * p.n_nu / p.n_total, a_nu_x=0.5 * p.n_nu / p.n_total, a_0=p.n_0 / p.n_total,
        )


class _Layout:
    """Maps a free search vector to a kernel parameter row and back."""

    def __init__(self, space: SearchSpace, scheme: str):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.space = space
        self.scheme = scheme
        self.n_frac = 4 if scheme == "biased" else 3
        if space.allocation is not None and len(space.allocation) != self.n_frac:
            raise ValueError(f"{scheme} allocation needs {self.n_frac} fractions")
        self.free_mu = space.mu_range is not None and space.mu_range[0] < space.mu_range[1]
        self.free_nu = space.nu_range[0] < space.nu_range[1]
        self.free_pz = scheme == "biased" and space.pz_range[0] < space.pz_range[1]
        self.free_alloc = space.allocation is None
        self.dim = self.free_mu + self.free_nu + self.free_pz + (self.n_frac - 1) * self.free_alloc

    def _mu_bounds(self):
        sp = self.space
        return sp.mu_range if sp.mu_range is not None else (sp.mu, sp.mu)

    def decode(self, x):
        """Project a search vector onto the feasible set; returns (mu, nu, p_z, fractions)."""
        sp = self.space
        x = list(x)
        lo, hi = self._mu_bounds()
        mu = min(max(float(x.pop(0)), lo), hi) if self.free_mu else lo
        nu_lo, nu_hi = sp.nu_range
        nu_hi = min(nu_hi, mu * (1.0 - 1e-9))
        nu = min(max(float(x.pop(0)), nu_lo), nu_hi) if self.free_nu else min(nu_lo, nu_hi)
        if self.scheme == "biased":
            pz_lo, pz_hi = sp.pz_range
            pz = min(max(float(x.pop(0)), pz_lo), pz_hi) if self.free_pz else pz_lo
        else:
            pz = 0.5
        if self.free_alloc:
            bound = -math.log(MIN_FRACTION)
            logw = np.clip(np.asarray(x, dtype=float), -bound, bound)
            w = np.concatenate([[1.0], np.exp(logw)])
            fr = tuple(float(v) for v in w / w.sum())
        else:
            fr = tuple(float(v) for v in sp.allocation)
        return mu, nu, pz, fr

    def encode(self, mu, nu, pz, fr):
        x = []
        if self.free_mu:
            x.append(mu)
        if self.free_nu:
            x.append(nu)
        if self.free_pz:
            x.append(pz)
        if self.free_alloc:
            a_mu = max(fr[0], MIN_FRACTION)
            x.extend(math.log(max(a, MIN_FRACTION) / a_mu) for a in fr[1:])
        return np.asarray(x, dtype=float)

    def kernel_row(self, x):
        mu, nu, pz, fr = self.decode(x)
        if self.scheme == "biased":
            return (mu, nu, pz) + fr
        return (mu, nu) + fr

    def params(self, x):
        mu, nu, pz, fr = self.decode(x)
        n = self.space.n_total
        if self.scheme == "biased":
            return ProtocolParams.from_fractions(mu, nu, pz, *fr, n_total=n)
        return StandardAllocation.from_fractions(mu, nu, *fr, n_total=n)

    def grid(self):
        """Coarse multi-start grid as search vectors (deterministic order)."""
        sp = self.space
        g = sp.grid_points
        axes = []
        if self.free_mu:
            axes.append(np.linspace(*sp.mu_range, g))
        if self.free_nu:
            lo, hi = sp.nu_range
            axes.append(np.geomspace(lo, hi, g + 2)[1:-1])
        if self.free_pz:
            lo, hi = sp.pz_range
            axes.append(np.linspace(lo, hi, g + 2)[1:-1])
        fr_axis = np.geomspace(_FRACTION_GRID[0], _FRACTION_GRID[-1], g)
        pts = []
        for head in itertools.product(*axes) if axes else [()]:
            if self.free_alloc:
                for tail in itertools.product(fr_axis, repeat=self.n_frac - 1):
                    a_mu = 1.0 - sum(tail)
                    if a_mu <= 0.0:
                        continue
                    pts.append(np.concatenate([head, np.log(np.asarray(tail) / a_mu)]))
            else:
                pts.append(np.asarray(head, dtype=float))
        return pts


def _objective(layout, eta, ch, s):
    n = layout.space.n_total
    if layout.scheme == "biased":
        rate = _k.biased_rate
    else:
        rate = _k.standard_rate

    def f(x):
        return rate(*layout.kernel_row(x), n, eta, ch.y0, ch.ed, s.f, s.u_alpha, s.p_theta_x)

    return f


def _batch_rates(layout, pts, eta, ch, s):
    rows = np.array([layout.kernel_row(x) for x in pts], dtype=float)
    args = (layout.space.n_total, eta, ch.y0, ch.ed, s.f, s.u_alpha, s.p_theta_x)
    if layout.scheme == "biased":
        return _k.biased_rate_batch(rows, *args)
    return _k.standard_rate_batch(rows, *args)


def _pick_starts(pts, rates, k):
    """Indices of the k best grid points; ties fall to lexicographic order."""
    keys = [tuple(p) for p in pts]
    order = sorted(range(len(pts)), key=lambda i: (-rates[i], keys[i]))
    return [i for i in order[:k] if rates[i] > 0.0]


def _refine(f, x0, scale):
    """Nelder-Mead on the rate scaled by the best grid value (relative tolerance)."""
    res = minimize(
        lambda x: -f(x) / scale,
        x0,
        method="Nelder-Mead",
        options=dict(maxfev=MAX_EVALS, xatol=1e-8, fatol=RATE_TOL, adaptive=len(x0) > 4),
    )
    return res.x, -res.fun * scale, res.nfev, bool(res.success)


def optimize_at_loss(
    loss_db: float,
    ch_base: ChannelParams,
    s: SecurityParams,
    space: SearchSpace | None = None,
    scheme: str = "biased",
    warm_start=None,
) -> OptResult:
    """Maximise the key rate at one channel loss.

    ``ch_base`` supplies ``y0`` and ``ed``; its ``eta`` is replaced by the
    transmittance of ``loss_db``. ``warm_start`` is an earlier
    :class:`OptResult` whose optimum joins the refinement starts.
    """
    space = space or SearchSpace()
    layout = _Layout(space, scheme)
    eta = db_to_transmittance(loss_db)
    ch = ChannelParams(eta, ch_base.y0, ch_base.ed)
    f = _objective(layout, eta, ch, s)

    if layout.dim == 0:
        x = np.zeros(0)
        return _finish(layout, ch, s, loss_db, x, 1, True)

    pts = layout.grid()
    rates = _batch_rates(layout, pts, eta, ch, s)
    evals = len(pts)
    starts = [pts[i] for i in _pick_starts(pts, rates, space.n_starts)]
    if warm_start is not None and warm_start.x is not None and len(warm_start.x) == layout.dim:
        x_warm = np.asarray(warm_start.x, dtype=float)
        evals += 1
        if f(x_warm) > 0.0:
            starts.append(x_warm)
    if not starts:
        log.info("%s @ %.3g dB: no positive rate on the grid", scheme, loss_db)
        return _finish(layout, ch, s, loss_db, pts[0], evals, True)

    scale = max(float(rates.max()), max(f(x) for x in starts))
    best = None
    converged = True
    for x0 in starts:
        x, r, nfev, ok = _refine(f, x0, scale)
        evals += nfev
        converged &= ok
        cand = (r, tuple(-v for v in layout.kernel_row(x)))
        if best is None or cand > best[0]:
            best = (cand, x)
    log.debug("%s @ %.3g dB: rate %.6g after %d evaluations", scheme, loss_db, best[0][0], evals)
    return _finish(layout, ch, s, loss_db, best[1], evals, converged)


def _finish(layout, ch, s, loss_db, x, evals, converged):
    params = layout.params(x)
    if layout.scheme == "biased":
        report = evaluate_biased(params, ch, s)
    else:
        report = evaluate_standard(params, ch, s)
    return OptResult(
        scheme=layout.scheme,
        loss_db=float(loss_db),
        best_params=params,
        best_rate=report.rate,
        report=report,
        evaluations=int(evals),
        converged=bool(converged),
        x=np.asarray(layout.encode(*layout.decode(x)), dtype=float),
    )


@dataclass
class ScanPoint:
    loss_db: float
    biased: OptResult | None
    standard: OptResult | None

    @property
    def improvement(self) -> float:
        if self.biased is None or self.standard is None or self.standard.best_rate <= 0.0:
            return math.nan
        return self.biased.best_rate / self.standard.best_rate - 1.0


def scan_losses(
    loss_grid,
    ch_base: ChannelParams,
    s: SecurityParams,
    space: SearchSpace | None = None,
    schemes=SCHEMES,
    warm_start: bool = True,
) -> list[ScanPoint]:
    """Optimise every requested scheme at each loss, in grid order.

    Each point is warm-started from the previous optimum of the same scheme.
    """
    grid = [float(v) for v in loss_grid]
    if not grid:
        raise ValueError("loss grid is empty")
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
    space = space or SearchSpace()
    prev = {name: None for name in schemes}
    out = []
    for loss in grid:
        res = {}
        for scheme in schemes:
            r = optimize_at_loss(loss, ch_base, s, space, scheme, prev[scheme] if warm_start else None)
            res[scheme] = r
            if r.best_rate > 0.0:
                prev[scheme] = r
        out.append(ScanPoint(loss, res.get("biased"), res.get("standard")))
    return out
