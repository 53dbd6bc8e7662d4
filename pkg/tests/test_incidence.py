import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vinolab.errors import DomainError, InfeasibleCaps, UseMonteCarlo
from vinolab.geometry import OrientedBox, Role, intersect_boxes, make_box
from vinolab.incidence import (
    boxes_overlap, brute_force_richness, count_rich_cubes, cube_richness, generate_family,
    l4_plank_sum, origin_planks, structure_counts, triple_volume, triple_volume_model,
    verify_plank_incidence, verify_plate_kakeya, verify_tube_incidence,
)


def _dense(rc):
    out = np.zeros(rc.grid**3, dtype=np.int64)
    out[rc.cells] = rc.richness
    return out.reshape((rc.grid,) * 3)


def _cube(center, side=1.0):
    return OrientedBox(np.asarray(center, float), np.eye(3), np.full(3, side))


# ---------------------------------------------------------------- families

@pytest.mark.parametrize("mode", ["uniform-random", "plany", "bush", "grid"])
def test_tube_family_respects_caps(mode):
    fam = generate_family(Role.TUBE, 512.0, {"N": 2, "N1": 1}, 0.2, mode, seed=5)
    assert fam.cap_violation() is None
    assert fam.is_separated() or mode == "bush"
    counts = fam.container_counts()
    assert counts["N"] <= 2 and counts["N1"] <= 1


def test_plate_family_cap_per_direction():
    fam = generate_family(Role.PLATE, 1 / 8, {"N": 3}, 0.05, seed=1)
    _, per_dir = np.unique(fam.direction, return_counts=True)
    assert per_dir.max() <= 3


def test_structured_planks():
    fam = generate_family(Role.SPATIAL_PLANK, 4096.0, {"N": 2, "Z1": 2}, 0.05, seed=2)
    assert len(fam) > 0
    sc = structure_counts(fam)
    assert isinstance(sc, dict)


def test_family_is_seed_deterministic():
    a = generate_family(Role.TUBE, 512.0, {"N": 4}, 0.1, seed=9)
    b = generate_family(Role.TUBE, 512.0, {"N": 4}, 0.1, seed=9)
    assert np.array_equal(a.centers, b.centers) and np.array_equal(a.direction, b.direction)


def test_infeasible_caps():
    with pytest.raises(InfeasibleCaps):
        generate_family(Role.TUBE, 512.0, {"N": 2, "N1": 4})
    with pytest.raises(InfeasibleCaps):
        generate_family(Role.SPATIAL_PLANK, 4096.0, {"N": 8, "Z1": 2})
    with pytest.raises(InfeasibleCaps):
        generate_family(Role.TUBE, 512.0, {"N": 1.5})
    with pytest.raises(InfeasibleCaps):
        # every slot requested while only one tube per container is allowed
        generate_family(Role.TUBE, 64.0, {"N": 1}, density=1.0)


def test_family_domain_errors():
    with pytest.raises(DomainError):
        generate_family(Role.FAT_PLATE, 512.0)
    with pytest.raises(DomainError):
        generate_family(Role.TUBE, 512.0, mode="spiral")
    with pytest.raises(DomainError):
        generate_family(Role.TUBE, 512.0, density=0.0)
    with pytest.raises(DomainError):
        generate_family(Role.PLATE, 1 / 8, {"M": 2})


# ---------------------------------------------------------------- counting

@pytest.mark.parametrize("seed", range(6))
def test_counts_match_brute_force(seed):
    role, scale, caps, dens = [(Role.TUBE, 64.0, {"N": 4}, 0.3),
                               (Role.PLATE, 0.25, {"N": 4}, 0.1),
                               (Role.SPATIAL_PLANK, 64.0, {"M": 16}, 0.02)][seed % 3]
    fam = generate_family(role, scale, caps, dens, seed=seed)
    rc = cube_richness(fam)
    assert np.array_equal(_dense(rc), brute_force_richness(fam, rc.cube_side, rc.ambient))


def test_cube_count_is_monotone_in_r():
    fam = generate_family(Role.TUBE, 512.0, {"N": 4}, 0.2, seed=3)
    rs = [1, 2, 4, 8, 16]
    qs = count_rich_cubes(fam, r=rs)
    assert all(a >= b for a, b in zip(qs, qs[1:]))
    assert qs[0] == count_rich_cubes(fam, r=1)


def test_half_open_cubes():
    # cubes are [k, k+1): a closed box [0, 1]^3 meets the cubes starting at 0 and at 1,
    # but not those ending at 0
    rc = cube_richness([_cube([0.5, 0.5, 0.5])], cube_side=1.0, ambient=2.0)
    corners = {tuple(v) for v in rc.cubes(1)}
    assert corners == {(x, y, z) for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)}
    # strictly inside one cube: exactly one
    rc = cube_richness([_cube([0.5, 0.5, 0.5], 1 - 1e-9)], cube_side=1.0, ambient=2.0)
    assert np.array_equal(rc.cubes(1), [[0.0, 0.0, 0.0]])
    # a box ending exactly where a cube begins does meet it; ending below it does not
    rc = cube_richness([_cube([-0.5, -0.5, -0.5])], cube_side=1.0, ambient=2.0)
    assert (0.0, 0.0, 0.0) in {tuple(v) for v in rc.cubes(1)}
    rc = cube_richness([_cube([-0.5, -0.5, -0.5], 1 - 1e-9)], cube_side=1.0, ambient=2.0)
    assert rc.count(1) == 1


def test_counting_requires_a_grid_that_divides():
    with pytest.raises(DomainError):
        cube_richness([_cube([0, 0, 0])], cube_side=0.7, ambient=2.0)
    with pytest.raises(DomainError):
        cube_richness([_cube([0, 0, 0])])


def test_empty_family_has_no_rich_cubes():
    rc = cube_richness([], cube_side=1.0, ambient=2.0)
    assert rc.count(1) == 0 and rc.max_richness == 0 and rc.histogram() == {}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_overlap_agrees_with_intersection_volume(seed):
    rng = np.random.default_rng(seed)
    def box():
        Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        return OrientedBox(rng.normal(size=3), Q, rng.uniform(0.3, 1.5, 3))
    p, q = box(), box()
    vol = intersect_boxes([p, q]).volume()
    assert boxes_overlap(p, q) == boxes_overlap(q, p)
    if vol > 1e-9:
        assert boxes_overlap(p, q)
    if not boxes_overlap(p, q):
        assert vol == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- L4 sums

def test_l4_closed_forms():
    b = make_box(Role.SPATIAL_PLANK, (0.0, 0.5), 8.0)
    one = l4_plank_sum([b], delta=0.5)
    assert one.l4 == pytest.approx(b.volume, rel=1e-12) and one.ratio == pytest.approx(1.0)
    # two copies: (1+1)^4 everywhere on the box
    two = l4_plank_sum([b, b], delta=0.5)
    assert two.l4 == pytest.approx(16 * b.volume, rel=1e-10)
    assert two.ratio == pytest.approx(8.0, rel=1e-10)
    # disjoint copies add
    far = b.translated([1e4, 0, 0])
    assert l4_plank_sum([b, far], delta=0.5).l4 == pytest.approx(2 * b.volume, rel=1e-10)


def test_l4_exact_matches_monte_carlo():
    fam = origin_planks(1 / 8)
    ex = l4_plank_sum(fam, "exact", delta=1 / 8)
    mc = l4_plank_sum(fam, "monte-carlo", samples=200_000, seed=1, delta=1 / 8)
    assert ex.l1 == pytest.approx(mc.l1, rel=1e-12)
    assert abs(ex.l4 - mc.l4) <= 5 * mc.stderr + 1e-3 * ex.l4


def test_l4_exact_refuses_large_families():
    with pytest.raises(UseMonteCarlo):
        l4_plank_sum(origin_planks(1 / 64), "exact", delta=1 / 64)
    with pytest.raises(DomainError):
        l4_plank_sum(origin_planks(1 / 8), "simpson", delta=1 / 8)


def test_triple_volume_with_itself_is_plank_volume():
    delta = 1 / 8
    P = origin_planks(delta, [0.0])[0]
    assert triple_volume(delta, 0.0, 0.0) == pytest.approx(P.volume, rel=1e-9)
    assert triple_volume_model(delta, 0.0, 0.0) == pytest.approx(delta**-6, rel=1e-12)


def test_triple_volume_decreases_with_separation():
    delta = 1 / 16
    vols = [triple_volume(delta, d, d / 2) for d in (1 / 8, 1 / 4, 1 / 2)]
    assert vols[0] > vols[1] > vols[2] > 0


# ---------------------------------------------------------------- verifiers

def test_tube_verifier_rows():
    rep = verify_tube_incidence(512.0, {"N": 4}, trials=1, seed=0)
    th = {r["theorem"] for r in rep.rows}
    assert {"tube-plate-spacing", "tube-bilinear-baseline", "tube-scale-search"} <= th
    for r in rep.rows:
        assert r["ratio"] == pytest.approx(r["count"] / r["bound"])
        assert r["within_envelope"] == (r["count"] <= r["bound"] * r["envelope"])
    with pytest.raises(DomainError):
        verify_tube_incidence(2.0**20, {"N": 4})


def test_plate_verifier_crossover():
    rep = verify_plate_kakeya(1 / 8, 2, trials=1, seed=0, density=0.05)
    cross = rep.summary["crossover_r"]
    assert cross == pytest.approx(np.sqrt(2 * 8))
    for r in rep.rows:
        assert r["above_crossover"] == (r["r"] >= 2 * cross)
    with pytest.raises(DomainError):
        verify_plate_kakeya(1 / 8, 2, mode="L3")


def test_plank_verifier_trials_are_independent_of_total():
    one = verify_plank_incidence(4096.0, 2, 2, trials=1, seed=3, first_trial=1).rows
    two = verify_plank_incidence(4096.0, 2, 2, trials=2, seed=3).rows
    strip = lambda rs: [{k: v for k, v in r.items() if k != "trials"} for r in rs]
    assert strip(one) == strip([r for r in two if r["trial"] == 1])
