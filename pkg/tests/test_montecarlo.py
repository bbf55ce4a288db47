import csv
import math
from types import SimpleNamespace

import numpy as np
import pytest

from biasdecoy import _accel
from biasdecoy import montecarlo as mc
from biasdecoy.channel import ChannelParams, expected_observables
from biasdecoy.decoy import ProtocolParams, SecurityParams, estimate_bounds

CH10 = ChannelParams(0.1, 1.7e-6, 0.033)
P = ProtocolParams.from_fractions(0.479, 0.1, 0.7, 0.4, 0.15, 0.15, 0.3, 1e6)


def within(k, n, p, z=5.0):
    sigma = math.sqrt(p * (1 - p) / n)
    return abs(k / n - p) <= z * sigma


def test_vacuum_only_background():
    p = ProtocolParams.from_fractions(0.479, 0.1, 0.9, 0.0, 0.0, 0.0, 1.0, 1e6)
    ch = ChannelParams(0.5, 1.7e-6, 0.033)
    c = mc.simulate(p, ch, seed=3, n_pulses=10**6)
    s = sum(c.cell("vacuum", b)[0] for b in mc.BOB_BASES)
    d = sum(c.cell("vacuum", b)[1] for b in mc.BOB_BASES)
    assert s == 10**6
    assert within(d, s, 1.7e-6)


def test_noiseless_lossless():
    ch = ChannelParams(1.0, 0.0, 0.0)
    c = mc.simulate(P, ch, seed=5, n_pulses=500_000)
    assert c.tallies[..., 2][:, 0, :][:2].sum() == 0  # no errors in matched Z cells
    s, d, e = c.cell("signal", "Z")
    assert e == 0
    assert within(d, s, 1 - math.exp(-0.479))
    s, d, e = c.cell("decoy_x", "X")
    assert e == 0


def test_honest_agrees_with_model():
    c = mc.simulate(P, CH10, seed=11, n_pulses=2_000_000)
    ex = expected_observables(P, CH10)
    s, d, e = c.cell("signal", "Z")
    assert within(d, s, ex.q_mu_z) and within(e, d, ex.e_mu_z)
    s, d, _ = c.cell("decoy_z", "Z")
    assert within(d, s, ex.q_nu_z)
    s, d, e = c.cell("decoy_x", "X")
    assert within(d, s, ex.q_nu_x) and within(e, s, ex.eq_nu_x)
    # mismatched bases give random bits
    s, d, e = c.cell("signal", "X")
    assert within(e, d, 0.5)


def test_intercept_resend_z():
    adv = mc.AdversaryConfig("intercept_resend_z")
    c = mc.simulate(P, CH10, adv, seed=2, n_pulses=2_000_000)
    s, d, e = c.cell("decoy_x", "X")
    assert 0.45 <= e / d <= 0.55
    st, _ = mc.counts_to_stats(c)
    assert st.e_mu_z - expected_observables(P, CH10).e_mu_z <= 0.01


def test_seed_determinism_and_sharding():
    a = mc.simulate(P, CH10, seed=7, n_pulses=300_000, chunk=1 << 16)
    b = mc.simulate(P, CH10, seed=7, n_pulses=300_000, chunk=1 << 16, workers=3)
    c = mc.simulate(P, CH10, seed=8, n_pulses=300_000, chunk=1 << 16)
    assert np.array_equal(a.tallies, b.tallies)
    assert not np.array_equal(a.tallies, c.tallies)


@pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba disabled")
def test_backends_agree():
    a = mc.simulate(P, CH10, seed=4, n_pulses=400_000, backend="numba")
    b = mc.simulate(P, CH10, seed=4, n_pulses=400_000, backend="numpy")
    assert np.array_equal(a.tallies, b.tallies)


def test_cell_invariants():
    c = mc.simulate(P, CH10, seed=1, n_pulses=700_001)
    t = c.tallies
    assert t[..., 0].sum() == 700_001
    assert (t[..., 2] <= t[..., 1]).all() and (t[..., 1] <= t[..., 0]).all()
    sent = c.sent_by_class()
    for name, frac in zip(mc.CLASSES, P.fractions):
        assert within(sent[name], 700_001, frac)
    bob_z = t[:, 0, :, 0].sum()
    assert within(bob_z, 700_001, P.p_z)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        mc.simulate(P, CH10, n_pulses=0)
    bad = SimpleNamespace(mu=0.5, nu=0.1, p_z=0.9, fractions=(0.5, 0.2, 0.2, 0.3))
    with pytest.raises(ValueError):
        mc.simulate(bad, CH10, n_pulses=10)
    with pytest.raises(ValueError):
        mc.AdversaryConfig("photon_number_splitting")
    with pytest.raises(ValueError):
        mc.AdversaryConfig("yield_override", yields_z=(0.1, 1.5))


def _counts(cells):
    t = np.zeros((4, 2, 3, 3), dtype=np.int64)
    for (ci, b), (s, d, e) in cells.items():
        t[ci, b, 1] = (s, d, e)
    return mc.SimCounts(t, 0.5, int(t[..., 0].sum()))


def test_counts_to_stats_all_detected():
    c = _counts({(0, 0): (100, 100, 3), (1, 0): (50, 50, 0), (2, 1): (40, 40, 2), (3, 0): (10, 10, 5)})
    st, flags = mc.counts_to_stats(c)
    assert st.q_mu_z == st.q_nu_z == st.q_nu_x == st.y0_obs == 1.0
    assert st.e_mu_z == 0.03 and st.eq_nu_x == 0.05
    assert not flags


def test_counts_to_stats_flags_missing():
    c = _counts({(0, 0): (100, 0, 0), (1, 0): (50, 5, 0), (2, 1): (40, 4, 1), (3, 0): (10, 0, 0)})
    st, flags = mc.counts_to_stats(c)
    assert "missing:e_mu_z" in flags and st.e_mu_z == 0.0
    c = _counts({(0, 0): (100, 9, 1), (1, 0): (50, 5, 0), (3, 0): (10, 0, 0)})
    _, flags = mc.counts_to_stats(c)
    assert {"missing:q_nu_x", "missing:eq_nu_x"} <= flags
    with pytest.raises(mc.MissingStatisticError):
        mc.counts_to_stats(c, strict=True)


def test_multiphoton_boost_keeps_yield_bound_sound():
    # Eve lets every multi-photon pulse through; single photons stay honest
    boost = (math.nan, math.nan) + (1.0,) * 10
    adv = mc.AdversaryConfig("yield_override", yields_z=boost, yields_x=boost)
    p = ProtocolParams.from_fractions(0.479, 0.1, 0.7, 0.4, 0.15, 0.15, 0.3, 1e7)
    s = SecurityParams()
    for seed in range(5):
        c = mc.simulate(p, CH10, adv, seed=seed, n_pulses=2_000_000)
        st, _ = mc.counts_to_stats(c)
        b = estimate_bounds(st, mc.realized_params(c, p), s)
        assert b.y1_l <= c.single_photon_yield("Z")
    asym = estimate_bounds(st, mc.realized_params(c, p), SecurityParams(u_alpha=0.0))
    assert asym.y1_l <= c.single_photon_yield("Z") + 5 * math.sqrt(0.1 / 1e5)


def test_counts_csv(tmp_path):
    c = mc.simulate(P, CH10, seed=0, n_pulses=10_000)
    path = tmp_path / "counts.csv"
    mc.write_counts_csv(c, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == mc.CSV_COLUMNS
    assert len(rows) == 8
    assert sum(int(r["sent"]) for r in rows) == 10_000
    assert {r["alice_basis"] for r in rows if r["intensity_class"] == "decoy_x"} == {"X"}
