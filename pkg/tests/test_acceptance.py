"""Acceptance checks, one test per criterion.  Tolerances are pinned here, not
taken from experiment defaults.  Several of these take minutes (marked slow)."""

import time

import numpy as np
import pytest

from vinolab import harness
from vinolab.packets import PROP84_C

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def run(exp, write=False, **cfg):
    t0 = time.perf_counter()
    rep = harness.run(harness.load_config(None, cfg, experiment=exp), write=write)
    return rep, time.perf_counter() - t0


# 1 ------------------------------------------------------------------------

def test_01_geometry_exactness():
    rep, secs = run("geometry-exactness", cases=1000, seed=0)
    s = rep["summary"]
    assert all(r["cases"] == 1000 for r in rep["rows"])
    assert s["dual-dimension-product"] <= 1e-12
    assert s["shear-duality-pairing"] <= 1e-10
    assert s["frenet-orthonormality"] <= 1e-12
    assert secs < 5.0


# 2 ------------------------------------------------------------------------

def test_02_triple_volume_band():
    rep, secs = run("triple-volume", delta=[1 / 8, 1 / 16, 1 / 32])
    ratios = [r["ratio"] for r in rep["rows"]]
    assert {r["delta"] for r in rep["rows"]} == {1 / 8, 1 / 16, 1 / 32}
    assert all(1 / 64 <= q <= 64 for q in ratios), (min(ratios), max(ratios))
    assert secs < 120.0


# 3 ------------------------------------------------------------------------

@pytest.mark.slow
def test_03_l4_plank_growth():
    rep, secs = run("l4-planks", delta=[1 / 8, 1 / 16, 1 / 32], method="exact")
    by = {r["delta"]: r for r in rep["rows"]}
    assert all(r["method"] == "exact" for r in rep["rows"])
    C0 = by[1 / 8]["l4"] / by[1 / 8]["l1"] / np.log(8) ** 2
    for d in (1 / 16, 1 / 32):
        norm = by[d]["l4"] / by[d]["l1"] / np.log(1 / d) ** 2
        assert norm <= 2 * C0, (d, norm, C0)
    assert secs < 600.0


# 4 ------------------------------------------------------------------------

def test_04_partition_lemmas():
    rep, secs = run("partition-lemmas", R=[2.0**9, 2.0**12], samples=100_000, seed=0)
    by = {r["R"]: r for r in rep["rows"]}
    assert all(r["samples"] == 100_000 for r in rep["rows"])
    assert sum(r["violations"] for r in rep["rows"]) == 0
    m9, m12 = by[2.0**9]["max_multiplicity"], by[2.0**12]["max_multiplicity"]
    assert abs(m12 - m9) <= 1, f"49-dilate multiplicity {m9} at R=2^9 vs {m12} at R=2^12"
    assert secs < 120.0


# 5 ------------------------------------------------------------------------

def _within(rows, log_scale):
    env = log_scale**6
    return [r for r in rows if r["count"] > r["bound"] * env]


@pytest.mark.slow
def test_05_incidence_envelopes():
    t0 = time.perf_counter()
    tubes, _ = run("tube-incidence", R=2.0**12, N=4.0, N1=4.0, trials=20, seed=0, threads=4)
    plates, _ = run("plate-kakeya", delta=1 / 16, N=2, trials=20, seed=0, threads=4)
    planks, _ = run("plank-incidence", R=2.0**12, N=2, Z1=2, trials=20, seed=0, threads=4)
    secs = time.perf_counter() - t0

    for rep in (tubes, plates, planks):
        assert len({r["trial"] for r in rep["rows"]}) == 20
    assert _within(tubes["rows"], np.log(2.0**12)) == []
    assert _within(planks["rows"], np.log(2.0**12)) == []
    assert _within(plates["rows"], np.log(16.0)) == []

    # the L4 plate bound is the smaller one past twice the crossover
    delta, N = 1 / 16, 2
    cut = 2 * np.sqrt(N) * delta**-0.5
    l2 = {(r["trial"], r["r"]): r["bound"] for r in plates["rows"] if r["theorem"] == "plate-l2"}
    l4 = {(r["trial"], r["r"]): r["bound"] for r in plates["rows"] if r["theorem"] == "plate-l4"}
    above = [k for k in l2 if k[1] >= cut]
    assert above
    assert all(l4[k] < l2[k] for k in above)
    assert secs < 900.0


# 6 ------------------------------------------------------------------------

def test_06_counting_oracle():
    rep, _ = run("counting-oracle", R=64.0, trials=50, seed=0)
    assert len(rep["rows"]) == 50
    assert sum(r["mismatched_cubes"] for r in rep["rows"]) == 0


# 7 ------------------------------------------------------------------------

@pytest.mark.slow
def test_07_decoupling_criticality():
    R = [2.0**k for k in range(8, 17)]
    t0 = time.perf_counter()
    rnd, _ = run("decoupling-slope", R=R, p=[10.0], alpha=0.5, coeffs="random", samples=1_000_000,
                 trials=20, seed=0, threads=4)
    const, _ = run("decoupling-slope", R=R, p=[10.0, 14.0], alpha=0.5, coeffs="ones",
                   samples=1_000_000, trials=5, seed=0, threads=4)
    secs = time.perf_counter() - t0

    assert all(r["samples"] == 1_000_000 for r in rnd["rows"] + const["rows"])
    slopes = rnd["summary"]["p=10"]["slopes"]
    assert len(slopes) == 20
    assert float(np.median(slopes)) <= 0.05
    gap = const["summary"]["p=14"]["median_slope"] - const["summary"]["p=10"]["median_slope"]
    assert gap >= 0.02
    assert secs < 1800.0


# 8 ------------------------------------------------------------------------

def test_08_exponent_arithmetic():
    from vinolab.decoupling import critical_p_bound, sigma_pd

    assert abs(sigma_pd(10, 3) - 0.4) <= 1e-12
    assert critical_p_bound(7) == 22
    rep, _ = run("exponents")
    assert rep["passed"]


# 9 ------------------------------------------------------------------------

@pytest.mark.slow
def test_09_pigeonholing():
    rep, _ = run("pigeonholing", R=2.0**12, trials=110, seed=0, threads=4)
    fx = [r for r in rep["rows"] if r["kind"] == "fixture"]
    rnd = [r for r in rep["rows"] if r["kind"] == "random"]
    assert len(fx) == 10 and len(rnd) == 100
    assert all(r["planted_match"] for r in fx)
    assert all(r["lY_le_mX"] for r in rnd)
    ratios = [r["ratio"] for r in fx if r["ratio"] is not None]
    assert len(ratios) == 10
    C = max(ratios)
    assert C <= PROP84_C
    assert all(q <= C for q in ratios)


# 10 -----------------------------------------------------------------------

@pytest.mark.parametrize("exp, cfg", [
    ("geometry-exactness", {"cases": 200}),
    ("counting-oracle", {"trials": 3}),
    ("tube-incidence", {"R": 512.0, "trials": 2}),
    ("decoupling-slope", {"R": [256.0, 1024.0], "samples": 20_000, "trials": 2}),
    ("pigeonholing", {"trials": 12, "plates": 60, "planks": 60}),
])
def test_10_rerun_byte_identical_csv(tmp_path, exp, cfg):
    a, _ = run(exp, write=True, seed=7, out=str(tmp_path / "a"), **cfg)
    b, _ = run(exp, write=True, seed=7, out=str(tmp_path / "b"), threads=3, **cfg)
    assert open(a["files"]["csv"], "rb").read() == open(b["files"]["csv"], "rb").read()
