"""Pulse-level Monte Carlo of the four-preparation biased decoy protocol.

Each pulse draws an intensity class (signal, Z decoy, X decoy, vacuum),
Bob's basis, a Poisson photon number, a click and, given a click, an error.
Uniforms come from numpy's PCG64 in fixed-size chunks, each seeded from a
child of ``SeedSequence(seed)``; counts are therefore independent of how
many workers process the chunks.

The tallies keep the photon number of every pulse. The estimation pipeline
never sees it; it exists so tests can compare decoy bounds with the true
single-photon yield and error rate.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .channel import ChannelParams, ObservedStats, photon_cutoff
from .decoy import ProtocolParams

CLASSES = ("signal", "decoy_z", "decoy_x", "vacuum")
ALICE_BASIS = ("Z", "Z", "X", "-")
BOB_BASES = ("Z", "X")
MODES = ("none", "intercept_resend_z", "yield_override")
CHUNK = 1 << 20
CSV_COLUMNS = ("intensity_class", "alice_basis", "bob_basis", "sent", "detected", "errors")


class MissingStatisticError(ValueError):
    pass


@dataclass(frozen=True)
class AdversaryConfig:
    """Eavesdropper model.

    ``intercept_resend_z``: every pulse is measured in Z and resent, so
    X-prepared photons reach Bob with a random bit. ``yield_override``:
    per-photon-number yields and conditional error rates replace the honest
    ones, indexed by Alice's basis; NaN or missing entries stay honest.
    """

    mode: str = "none"
    yields_z: tuple = ()
    yields_x: tuple = ()
    errors_z: tuple = ()
    errors_x: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown adversary mode {self.mode!r}")
        for name in ("yields_z", "yields_x", "errors_z", "errors_x"):
            vals = [v for v in getattr(self, name) if v is not None and not math.isnan(v)]
            if any(not (0.0 <= v <= 1.0) for v in vals):
                raise ValueError(f"{name} entries must lie in [0, 1]")


@dataclass
class SimCounts:
    """Counts indexed ``[class, bob_basis, photons, (sent, detected, errors)]``.

    The last photon bin collects everything at or above its index.
    """

    tallies: np.ndarray
    p_z: float
    n_pulses: int

    def cell(self, cls: str, bob: str) -> tuple[int, int, int]:
        c, b = CLASSES.index(cls), BOB_BASES.index(bob)
        s, d, e = self.tallies[c, b].sum(axis=0)
        return int(s), int(d), int(e)

    def sent_by_class(self) -> dict:
        return {name: int(self.tallies[i, :, :, 0].sum()) for i, name in enumerate(CLASSES)}

    def rows(self):
        for c, cls in enumerate(CLASSES):
            for bob in BOB_BASES:
                s, d, e = self.cell(cls, bob)
                yield dict(
                    intensity_class=cls, alice_basis=ALICE_BASIS[c], bob_basis=bob,
                    sent=s, detected=d, errors=e,
                )

    def single_photon_yield(self, basis: str = "Z") -> float:
        """Empirical detection rate of one-photon pulses prepared and measured in ``basis``."""
        classes = (0, 1) if basis == "Z" else (2,)
        b = BOB_BASES.index(basis)
        s = sum(self.tallies[c, b, 1, 0] for c in classes)
        d = sum(self.tallies[c, b, 1, 1] for c in classes)
        return d / s if s else math.nan

    def single_photon_error(self, basis: str = "X") -> float:
        classes = (0, 1) if basis == "Z" else (2,)
        b = BOB_BASES.index(basis)
        d = sum(self.tallies[c, b, 1, 1] for c in classes)
        e = sum(self.tallies[c, b, 1, 2] for c in classes)
        return e / d if d else math.nan


def _photon_bins(p: ProtocolParams) -> int:
    return max(photon_cutoff(p.mu), photon_cutoff(p.nu), 2) + 1


def _override(table, n, default):
    if n < len(table) and table[n] is not None and not math.isnan(table[n]):
        return float(table[n])
    return default


def channel_tables(p: ProtocolParams, ch: ChannelParams, adv: AdversaryConfig, n_bins: int):
    """Click and conditional-error probabilities per (class, Bob basis, photon number)."""
    p_det = np.zeros((4, 2, n_bins + 1))
    p_err = np.full((4, 2, n_bins + 1), 0.5)
    for c in range(4):
        alice = ALICE_BASIS[c]
        for b, bob in enumerate(BOB_BASES):
            for n in range(n_bins + 1):
                y = _k.yield_i(n, ch.eta, ch.y0)
                e = _k.error_yield_i(n, ch.eta, ch.y0, ch.ed) / y if y > 0.0 else 0.5
                if adv.mode == "yield_override":
                    which = "x" if alice == "X" else "z"
                    y = _override(getattr(adv, f"yields_{which}"), n, y)
                    e = _override(getattr(adv, f"errors_{which}"), n, e)
                elif adv.mode == "intercept_resend_z" and alice == "X" and bob == "X" and n >= 1:
                    e = 0.5
                p_det[c, b, n] = y
                if alice == bob:
                    p_err[c, b, n] = e
    return p_det, p_err


def simulate(
    p: ProtocolParams,
    ch: ChannelParams,
    adv: AdversaryConfig | None = None,
    seed: int = 0,
    n_pulses: int = 10_000_000,
    workers: int = 1,
    backend: str | None = None,
    chunk: int = CHUNK,
) -> SimCounts:
    if n_pulses < 1:
        raise ValueError("n_pulses must be at least 1")
    adv = adv or AdversaryConfig()
    fr = np.asarray(p.fractions, dtype=float)
    if fr.min() < 0.0 or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("allocation fractions must be non-negative and sum to 1")
    class_thr = np.cumsum(fr)[:3]
    n_bins = _photon_bins(p)
    intens = (p.mu, p.nu, p.nu, 0.0)
    photon_cdf = np.array(
        [np.cumsum([_k.poisson_pmf(m, k) for k in range(n_bins)]) for m in intens]
    )
    p_det, p_err = channel_tables(p, ch, adv, n_bins)

    n_chunks = -(-n_pulses // chunk)
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)

    def run(i):
        size = min(chunk, n_pulses - i * chunk)
        uni = np.random.default_rng(seeds[i]).random((size, 5))
        out = np.zeros((4, 2, n_bins + 1, 3), dtype=np.int64)
        _k.tally(uni, class_thr, p.p_z, photon_cdf, p_det, p_err, out, backend=backend)
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    else:
        parts = [run(i) for i in range(n_chunks)]
    return SimCounts(np.sum(parts, axis=0), p.p_z, int(n_pulses))


def counts_to_stats(c: SimCounts, strict: bool = False) -> tuple[ObservedStats, frozenset]:
    """Empirical rates plus a set of flags for empty or click-less cells.

    Missing rates are reported as 0 and flagged; ``strict`` raises instead.
    """
    flags = set()

    def ratio(num, den, name):
        if den == 0:
            flags.add(f"missing:{name}")
            if strict:
                raise MissingStatisticError(f"no events to estimate {name}")
            return 0.0
        return num / den

    s, d, e = c.cell("signal", "Z")
    q_mu = ratio(d, s, "q_mu_z")
    e_mu = ratio(e, d, "e_mu_z")
    s, d, _ = c.cell("decoy_z", "Z")
    q_nu_z = ratio(d, s, "q_nu_z")
    s, d, e = c.cell("decoy_x", "X")
    q_nu_x = ratio(d, s, "q_nu_x")
    eq_nu_x = ratio(e, s, "eq_nu_x")
    s0 = sum(c.cell("vacuum", b)[0] for b in BOB_BASES)
    d0 = sum(c.cell("vacuum", b)[1] for b in BOB_BASES)
    y0 = ratio(d0, s0, "y0_obs")
    return ObservedStats(q_mu, e_mu, q_nu_z, q_nu_x, eq_nu_x, y0), frozenset(flags)


def realized_params(c: SimCounts, p: ProtocolParams) -> ProtocolParams:
    """Protocol parameters carrying the pulse counts a simulation actually sent."""
    sent = c.sent_by_class()
    return ProtocolParams(
        p.mu, p.nu, float(c.n_pulses),
        float(sent["signal"]), float(sent["decoy_z"]), float(sent["decoy_x"]), float(sent["vacuum"]),
        p_z=p.p_z,
    )


def write_counts_csv(c: SimCounts, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        w.writerows(c.rows())
