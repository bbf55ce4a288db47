"""Random-sampling bound on the single-photon phase error rate.

The X-basis bit error rate of single-photon decoy events is a random sample
of the error pattern shared with the Z-basis signal events; given sample
sizes ``n_x`` and ``n_z`` the tail bound below fixes how far the hidden
Z-basis phase error rate can exceed the observed one, except with
probability ``p_fail``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import _kernels as _k
from .decoy import BoundEstimates, ProtocolParams, SecurityParams

THETA_TOL = _k.THETA_TOL
BRACKET_GAP = _k.BRACKET_GAP


class UnboundedPhaseError(RuntimeError):
    """No deviation in range pushes the tail bound below the target probability."""


@dataclass(frozen=True)
class SamplingInputs:
    e_bx: float
    n_x: float
    n_z: float
    p_fail: float = 1e-7

    def __post_init__(self):
        if not (0.0 <= self.e_bx < 1.0):
            raise ValueError(f"e_bx must lie in [0, 1), got {self.e_bx!r}")
        if not (self.n_x > 0 and self.n_z > 0):
            raise ValueError("sample counts n_x and n_z must be positive")
        if not (0.0 < self.p_fail < 1.0):
            raise ValueError("p_fail must lie in (0, 1)")

    @property
    def q_x(self) -> float:
        return self.n_x / (self.n_x + self.n_z)

    def scaled(self, factor: float) -> "SamplingInputs":
        return SamplingInputs(self.e_bx, self.n_x * factor, self.n_z * factor, self.p_fail)


@dataclass(frozen=True)
class PhaseErrorBound:
    e1_pz_u: float
    theta_x: float
    n_x: float
    n_z: float

    @property
    def bounded(self) -> bool:
        return not math.isnan(self.theta_x)


def xi(theta_x: float, e_bx: float, q_x: float) -> float:
    if theta_x < 0:
        raise ValueError("theta_x must be non-negative")
    if not (0.0 < q_x < 1.0):
        raise ValueError(f"q_x must lie in (0, 1), got {q_x!r}")
    if not (0.0 <= e_bx and e_bx + theta_x <= 1.0):
        raise ValueError("e_bx + theta_x must stay within [0, 1]")
    return _k.xi(float(theta_x), float(e_bx), float(q_x))


def log2_tail_prob_bound(theta_x: float, inp: SamplingInputs) -> float:
    if theta_x < 0 or inp.e_bx + theta_x > 1.0:
        raise ValueError("theta_x out of range")
    return _k.log2_tail(float(theta_x), inp.e_bx, float(inp.n_x), float(inp.n_z))


def tail_prob_bound(theta_x: float, inp: SamplingInputs) -> float:
    """Upper bound on Pr[phase error >= e_bx + theta_x].

    Below ``1 / (2 (n_x + n_z))`` the observed rate is floored inside the
    prefactor only, which keeps it finite at ``e_bx = 0``.
    """
    return 2.0 ** log2_tail_prob_bound(theta_x, inp)


def solve_theta(inp: SamplingInputs) -> float:
    """Smallest deviation whose tail bound is at most ``inp.p_fail``.

    Bisection on ``[0, 1 - e_bx - 1e-9]`` to an absolute width of 1e-12;
    the returned end of the bracket always satisfies the bound.
    """
    theta = _k.solve_theta(inp.e_bx, float(inp.n_x), float(inp.n_z), inp.p_fail)
    if theta < 0.0:
        raise UnboundedPhaseError(
            f"no deviation reaches p_fail={inp.p_fail:g} with n_x={inp.n_x:g}, n_z={inp.n_z:g}"
        )
    return theta


def sample_sizes(y1_l: float, p: ProtocolParams) -> tuple[float, float]:
    """Expected single-photon sample sizes ``(n_x, n_z)`` (real-valued)."""
    return _k.sample_sizes(y1_l, p.mu, p.nu, p.n_mu, p.p_z, p.n_nu_x, p.p_x)


def phase_error_upper(bounds: BoundEstimates, p: ProtocolParams, s: SecurityParams) -> PhaseErrorBound:
    """Upper bound on the Z-basis single-photon phase error rate.

    The decoy bound ``bounds.e1_u`` stands in for the observed X-basis rate.
    Failure to bound (no samples, no root) is reported as 1/2 with a NaN
    deviation; values at or above 1/2 leave nothing for privacy amplification.
    """
    if bounds.y1_l <= 0.0:
        return PhaseErrorBound(0.5, math.nan, 0.0, 0.0)
    e1pz, theta, n_x, n_z = _k.phase_error_upper(
        bounds.e1_u, bounds.y1_l, p.mu, p.nu, p.n_mu, p.p_z, p.n_nu_x, p.p_x, s.p_theta_x
    )
    return PhaseErrorBound(e1pz, theta, n_x, n_z)
