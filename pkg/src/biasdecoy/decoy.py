"""Vacuum + weak decoy bounds with finite-size fluctuation.

Single-photon yield is bounded from Z-basis data only; the single-photon
error rate from X-basis decoy errors plus the basis-free vacuum yield.
Every bound is taken in its worst-case direction and clamped to [0, 1];
clamping never raises, it adds a flag to the result instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import _kernels as _k
from .channel import ObservedStats

# flags that make the single-photon estimate unusable
HARD_FLAGS = frozenset({"no_single_photon", "unbounded_phase_error"})


class UndefinedBoundError(ValueError):
    """Raised when the single-photon error bound has no valid yield to divide by."""


@dataclass(frozen=True)
class ProtocolParams:
    """Source intensities, pulse allocation (expected counts) and Bob's basis bias."""

    mu: float
    nu: float
    n_total: float
    n_mu: float
    n_nu_z: float
    n_nu_x: float
    n_0: float
    p_z: float
    p_x: float | None = None

    def __post_init__(self):
        if self.p_x is None:
            object.__setattr__(self, "p_x", 1.0 - self.p_z)
        if not (0.0 < self.nu < self.mu):
            raise ValueError(f"need 0 < nu < mu, got nu={self.nu!r}, mu={self.mu!r}")
        if not (0.0 <= self.p_z <= 1.0) or abs(self.p_z + self.p_x - 1.0) > 1e-12:
            raise ValueError("basis probabilities must lie in [0, 1] and sum to 1")
        counts = (self.n_mu, self.n_nu_z, self.n_nu_x, self.n_0)
        if min(counts) < 0 or self.n_total <= 0:
            raise ValueError("pulse counts must be non-negative and n_total positive")
        if abs(sum(counts) - self.n_total) > 1e-9 * self.n_total:
            raise ValueError("n_mu + n_nu_z + n_nu_x + n_0 must equal n_total")

    @classmethod
    def from_fractions(cls, mu, nu, p_z, a_mu, a_nu_z, a_nu_x, a_0, n_total):
        fr = (a_mu, a_nu_z, a_nu_x, a_0)
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"allocation fractions must sum to 1, got {sum(fr)!r}")
        return cls(mu, nu, n_total, *(a * n_total for a in fr), p_z=p_z)

    @property
    def fractions(self):
        return tuple(n / self.n_total for n in (self.n_mu, self.n_nu_z, self.n_nu_x, self.n_0))


@dataclass(frozen=True)
class SecurityParams:
    f: float = 1.16
    u_alpha: float = 5.0
    p_theta_x: float = 1e-7

    def __post_init__(self):
        if self.f < 1.0:
            raise ValueError("error-correction inefficiency f must be >= 1")
        # u_alpha = 0 is allowed: it switches fluctuations off
        if self.u_alpha < 0.0:
            raise ValueError("u_alpha must be non-negative")
        if not (0.0 < self.p_theta_x < 1.0):
            raise ValueError("p_theta_x must lie in (0, 1)")


@dataclass(frozen=True)
class Fluctuated:
    q_mu_u: float
    q_nu_l: float
    y0_l: float
    y0_u: float
    q0_l: float
    eq_nu_x_u: float
    flags: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class BoundEstimates:
    q_mu_u: float
    q_nu_l: float
    y0_l: float
    y0_u: float
    q0_l: float
    eq_nu_x_u: float
    y1_l: float
    q1_z_l: float
    e1_u: float
    flags: frozenset = field(default_factory=frozenset)

    @property
    def usable(self) -> bool:
        return not (self.flags & HARD_FLAGS)


def fluctuation_adjust(stats: ObservedStats, p: ProtocolParams, s: SecurityParams) -> Fluctuated:
    """Shift every measured rate by ``u_alpha`` standard deviations, worst way round."""
    u = float(s.u_alpha)
    flags = set()

    def down(name, value, n_eff):
        d = n_eff * value
        factor = _k.down_factor(d, u)
        if u > 0.0 and factor == 0.0:
            flags.add(f"starved:{name}")
        return value * factor

    def up(name, value, n_eff):
        out = _k.fluct_up(value, n_eff, u)
        if u > 0.0 and out >= 1.0 and value < 1.0:
            flags.add(f"saturated:{name}")
        return out

    y0 = stats.y0_obs
    q_mu_u = up("q_mu", stats.q_mu_z, p.n_mu * p.p_z)
    q_nu_l = down("q_nu", stats.q_nu_z, p.n_nu_z * p.p_z)
    y0_l = down("y0", y0, p.n_0)
    y0_u = up("y0", y0, p.n_0)
    q0_hat = y0 * math.exp(-p.mu)
    q0_l = y0_l * math.exp(-p.mu) * _k.down_factor(p.n_0 * q0_hat, u)
    if u > 0.0 and q0_l == 0.0:
        flags.add("starved:q0")
    eq_nu_x_u = up("eq_nu_x", stats.eq_nu_x, p.n_nu_x * p.p_x)
    return Fluctuated(q_mu_u, q_nu_l, y0_l, y0_u, q0_l, eq_nu_x_u, frozenset(flags))


def _y1_checked(mu, nu):
    if not (0.0 < nu < mu):
        raise ValueError(f"need 0 < nu < mu, got nu={nu!r}, mu={mu!r}")


def y1_lower(q_mu_u: float, q_nu_l: float, y0: float, mu: float, nu: float) -> float:
    """Lower bound on the single-photon yield, clamped to [0, 1].

    ``y0`` enters with a negative sign, so pass the upper-fluctuated
    background yield for a conservative bound.
    """
    _y1_checked(mu, nu)
    return min(max(_k.y1_lower_raw(q_mu_u, q_nu_l, y0, mu, nu), 0.0), 1.0)


def e1_upper(eq_nu_x_u: float, y0_l: float, y1_l: float, nu: float) -> float:
    """Upper bound on the single-photon bit error rate, clamped to [0, 1]."""
    if nu <= 0.0:
        raise ValueError("decoy intensity must be positive")
    if y1_l <= 0.0:
        raise UndefinedBoundError("no single-photon yield estimate; e1 is unbounded")
    return min(max(_k.e1_upper_raw(eq_nu_x_u, y0_l, y1_l, nu), 0.0), 1.0)


def estimate_bounds(stats: ObservedStats, p: ProtocolParams, s: SecurityParams) -> BoundEstimates:
    fl = fluctuation_adjust(stats, p, s)
    flags = set(fl.flags)
    raw_y1 = _k.y1_lower_raw(fl.q_mu_u, fl.q_nu_l, fl.y0_u, p.mu, p.nu)
    y1_l = min(max(raw_y1, 0.0), 1.0)
    if y1_l != raw_y1:
        flags.add("clamped:y1")
    if y1_l > 0.0:
        raw_e1 = _k.e1_upper_raw(fl.eq_nu_x_u, fl.y0_l, y1_l, p.nu)
        e1_u = min(max(raw_e1, 0.0), 1.0)
        if e1_u != raw_e1:
            flags.add("clamped:e1")
    else:
        e1_u = 1.0
        flags.add("no_single_photon")
    return BoundEstimates(
        q_mu_u=fl.q_mu_u,
        q_nu_l=fl.q_nu_l,
        y0_l=fl.y0_l,
        y0_u=fl.y0_u,
        q0_l=fl.q0_l,
        eq_nu_x_u=fl.eq_nu_x_u,
        y1_l=y1_l,
        q1_z_l=y1_l * p.mu * math.exp(-p.mu),
        e1_u=e1_u,
        flags=frozenset(flags),
    )
