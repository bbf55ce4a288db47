"""Secure key rate for the biased-basis scheme and the unbiased baseline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from . import _kernels as _k
from .channel import ChannelParams, ObservedStats, expected_observables
from .decoy import BoundEstimates, ProtocolParams, SecurityParams, estimate_bounds
from .phase_error import PhaseErrorBound, phase_error_upper


@dataclass(frozen=True)
class KeyRateReport:
    rate: float
    sift_q: float
    i_ec: float
    q1_z: float
    q0: float
    e1_pz_u: float
    feasible: bool
    raw_bracket: float
    theta_x: float = math.nan
    y1_l: float = math.nan
    e1_u: float = math.nan
    n_x: float = math.nan
    n_z: float = math.nan
    scheme: str = "biased"
    flags: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


@dataclass(frozen=True)
class StandardAllocation:
    """Pulse budget of the unbiased baseline.

    Signal and decoy pulses are each split evenly between the Z and X bases
    and Bob measures either basis with probability 1/2.
    """

    mu: float
    nu: float
    n_total: float
    n_mu: float
    n_nu: float
    n_0: float

    def __post_init__(self):
        if not (0.0 < self.nu < self.mu):
            raise ValueError(f"need 0 < nu < mu, got nu={self.nu!r}, mu={self.mu!r}")
        counts = (self.n_mu, self.n_nu, self.n_0)
        if min(counts) < 0 or self.n_total <= 0:
            raise ValueError("pulse counts must be non-negative and n_total positive")
        if abs(sum(counts) - self.n_total) > 1e-9 * self.n_total:
            raise ValueError("n_mu + n_nu + n_0 must equal n_total")

    @classmethod
    def from_fractions(cls, mu, nu, a_mu, a_nu, a_0, n_total):
        if abs(a_mu + a_nu + a_0 - 1.0) > 1e-9:
            raise ValueError("allocation fractions must sum to 1")
        return cls(mu, nu, n_total, a_mu * n_total, a_nu * n_total, a_0 * n_total)

    def per_basis(self) -> ProtocolParams:
        """Bookkeeping for one key basis: half the signals, half the decoys tested on
        each side, Bob matching with probability 1/2. ``n_total`` shrinks by the
        other basis's signals so the counts still add up."""
        return ProtocolParams(
            self.mu, self.nu,
            n_total=self.n_total - 0.5 * self.n_mu,
            n_mu=0.5 * self.n_mu,
            n_nu_z=0.5 * self.n_nu,
            n_nu_x=0.5 * self.n_nu,
            n_0=self.n_0,
            p_z=0.5,
        )


def binary_entropy(x: float) -> float:
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"binary entropy needs x in [0, 1], got {x!r}")
    return _k.binary_entropy(float(x))


def sift_factor(p: ProtocolParams) -> float:
    """Fraction of all pulses that are Z-basis signals measured in Z."""
    return p.n_mu * p.p_z / p.n_total


def _assemble(q, stats, bounds, ph, f, scheme):
    h_ph = _k.binary_entropy(ph.e1_pz_u) if ph.e1_pz_u < 0.5 else 1.0
    i_ec = f * stats.q_mu_z * _k.binary_entropy(stats.e_mu_z)
    bracket = -f * stats.q_mu_z * _k.binary_entropy(stats.e_mu_z) + bounds.q1_z_l * (1.0 - h_ph) + bounds.q0_l
    flags = set(bounds.flags)
    if not ph.bounded and bounds.y1_l > 0.0:
        flags.add("unbounded_phase_error")
    feasible = bounds.usable and ph.bounded
    rate = q * max(bracket, 0.0) if feasible else 0.0
    return KeyRateReport(
        rate=rate,
        sift_q=q,
        i_ec=i_ec,
        q1_z=bounds.q1_z_l,
        q0=bounds.q0_l,
        e1_pz_u=ph.e1_pz_u,
        feasible=feasible,
        raw_bracket=bracket,
        theta_x=ph.theta_x,
        y1_l=bounds.y1_l,
        e1_u=bounds.e1_u,
        n_x=ph.n_x,
        n_z=ph.n_z,
        scheme=scheme,
        flags=tuple(sorted(flags)),
    )


def key_rate_biased(
    stats: ObservedStats,
    bounds: BoundEstimates,
    e1pz: PhaseErrorBound,
    p: ProtocolParams,
    s: SecurityParams,
) -> KeyRateReport:
    """Rate per pulse sent, from Z-basis signal data.

    Error correction is costed on the measured gain and QBER; privacy
    amplification uses the worst-case single-photon and background bounds.
    Negative brackets are reported as rate 0 with the raw value kept.
    """
    return _assemble(sift_factor(p), stats, bounds, e1pz, s.f, "biased")


def key_rate_standard(
    stats: ObservedStats,
    ch: ChannelParams,
    s: SecurityParams,
    alloc: StandardAllocation,
) -> KeyRateReport:
    """Unbiased vacuum+weak baseline.

    Key is drawn from both matched bases, so the sift factor is
    ``n_mu / (2 n_total)``. Each basis bounds its phase error from the other
    basis's decoys. ``stats`` are the Z-key-basis observables; the X-key
    basis mirrors them, which holds on the basis-symmetric honest channel
    described by ``ch``.
    """
    del ch  # statistics already encode the channel; kept for interface symmetry
    pb = alloc.per_basis()
    bounds = estimate_bounds(stats, pb, s)
    ph = phase_error_upper(bounds, pb, s)
    q = alloc.n_mu / (2.0 * alloc.n_total)
    return _assemble(q, stats, bounds, ph, s.f, "standard")


def evaluate_biased(p: ProtocolParams, ch: ChannelParams, s: SecurityParams, stats: ObservedStats | None = None) -> KeyRateReport:
    """Full pipeline on model-expected (or supplied) statistics."""
    stats = expected_observables(p, ch) if stats is None else stats
    bounds = estimate_bounds(stats, p, s)
    return key_rate_biased(stats, bounds, phase_error_upper(bounds, p, s), p, s)


def evaluate_standard(alloc: StandardAllocation, ch: ChannelParams, s: SecurityParams, stats: ObservedStats | None = None) -> KeyRateReport:
    stats = expected_observables(alloc, ch) if stats is None else stats
    return key_rate_standard(stats, ch, s, alloc)
