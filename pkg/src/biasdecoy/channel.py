"""Honest-channel photon statistics for a phase-randomised weak coherent source.

The channel is described by three numbers: total transmittance ``eta``
(channel times detector), background yield ``y0`` and misalignment error
``ed``. Background clicks are uniformly random, so their error rate is 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import _kernels as _k

E0 = _k.E0


def _check_unit(name, value):
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class ChannelParams:
    eta: float
    y0: float
    ed: float
    e0: float = E0

    def __post_init__(self):
        for name in ("eta", "y0", "ed"):
            _check_unit(name, getattr(self, name))
        if self.e0 != E0:
            raise ValueError("background error rate e0 is fixed at 1/2")

    def with_loss(self, loss_db: float) -> "ChannelParams":
        return ChannelParams(db_to_transmittance(loss_db), self.y0, self.ed)


@dataclass(frozen=True)
class ObservedStats:
    """Per-intensity, per-basis rates, either measured or model-expected.

    ``e_mu_z`` is the signal QBER (a ratio); ``eq_nu_x`` is the X-basis
    decoy error-gain product E_nu * Q_nu, not a ratio.
    """

    q_mu_z: float
    e_mu_z: float
    q_nu_z: float
    q_nu_x: float
    eq_nu_x: float
    y0_obs: float

    def __post_init__(self):
        for name in ("q_mu_z", "e_mu_z", "q_nu_z", "q_nu_x", "eq_nu_x", "y0_obs"):
            _check_unit(name, getattr(self, name))
        if self.eq_nu_x > self.q_nu_x:
            raise ValueError("eq_nu_x cannot exceed q_nu_x")


def db_to_transmittance(loss_db: float) -> float:
    if loss_db < 0:
        raise ValueError(f"loss must be non-negative, got {loss_db!r} dB")
    return 10.0 ** (-loss_db / 10.0)


def poisson_pmf(mu: float, n: int) -> float:
    """Probability that a coherent pulse of mean photon number ``mu`` holds ``n`` photons."""
    if mu < 0:
        raise ValueError(f"mean photon number must be non-negative, got {mu!r}")
    if n < 0 or int(n) != n:
        raise ValueError(f"photon count must be a non-negative integer, got {n!r}")
    return _k.poisson_pmf(float(mu), int(n))


def yield_i(i: int, ch: ChannelParams) -> float:
    """Detection probability given ``i`` photons left the source."""
    if i < 0:
        raise ValueError("photon count must be non-negative")
    return _k.yield_i(int(i), ch.eta, ch.y0)


def error_yield_i(i: int, ch: ChannelParams) -> float:
    """The product e_i * Y_i (probability of an erroneous click given ``i`` photons)."""
    if i < 0:
        raise ValueError("photon count must be non-negative")
    return _k.error_yield_i(int(i), ch.eta, ch.y0, ch.ed)


def gain_i(i: int, mu: float, ch: ChannelParams) -> float:
    return yield_i(i, ch) * poisson_pmf(mu, i)


def overall_gain(mu: float, ch: ChannelParams) -> float:
    if mu < 0:
        raise ValueError(f"intensity must be non-negative, got {mu!r}")
    return _k.overall_gain(float(mu), ch.eta, ch.y0)


def overall_error_gain(mu: float, ch: ChannelParams) -> float:
    if mu < 0:
        raise ValueError(f"intensity must be non-negative, got {mu!r}")
    return _k.overall_error_gain(float(mu), ch.eta, ch.y0, ch.ed)


def overall_qber(mu: float, ch: ChannelParams) -> tuple[float, float]:
    """Return ``(qber, error_gain_product)``.

    The QBER is NaN when the gain is exactly zero; the product is always
    defined, so callers that only need E*Q never divide by zero.
    """
    eq = overall_error_gain(mu, ch)
    q = overall_gain(mu, ch)
    return (eq / q if q > 0.0 else math.nan), eq


def photon_cutoff(mu: float, tail: float = 1e-15) -> int:
    """Smallest ``k`` with Poisson mass above ``k`` below ``tail``."""
    if mu <= 0.0:
        return 0
    cdf, k = 0.0, 0
    while True:
        cdf += poisson_pmf(mu, k)
        if 1.0 - cdf < tail or k > 10 * mu + 200:
            return k
        k += 1


def gain_series(mu: float, ch: ChannelParams, n_max: int | None = None) -> float:
    """Sum of per-photon-number gains, truncated where the Poisson tail is negligible."""
    n_max = photon_cutoff(mu) if n_max is None else n_max
    return math.fsum(gain_i(i, mu, ch) for i in range(n_max + 1))


def error_gain_series(mu: float, ch: ChannelParams, n_max: int | None = None) -> float:
    n_max = photon_cutoff(mu) if n_max is None else n_max
    return math.fsum(error_yield_i(i, ch) * poisson_pmf(mu, i) for i in range(n_max + 1))


def expected_observables(p, ch: ChannelParams) -> ObservedStats:
    """Model-expected statistics for the intensities of ``p`` (anything with ``mu``, ``nu``).

    The honest channel treats both bases alike, so Z and X expectations coincide.
    """
    mu, nu = p.mu, p.nu
    q_mu = overall_gain(mu, ch)
    e_mu, _ = overall_qber(mu, ch)
    q_nu = overall_gain(nu, ch)
    return ObservedStats(
        q_mu_z=q_mu,
        e_mu_z=0.0 if math.isnan(e_mu) else e_mu,
        q_nu_z=q_nu,
        q_nu_x=q_nu,
        eq_nu_x=overall_error_gain(nu, ch),
        y0_obs=overall_gain(0.0, ch),
    )
