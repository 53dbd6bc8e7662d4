import numpy as np
import pytest
from scipy.integrate import quad

from vinolab.errors import DomainError
from vinolab.packets import (
    FIRST, SECOND, PacketEnsemble, PacketField, Profile, build_fixture, lower_class, parameters,
    pigeonhole_analysis, prop84_check, random_ensemble, synthesize_from_packets, upper_class,
)

R = 2.0**12


def test_dyadic_classes():
    assert upper_class(3.0) == 4 and upper_class(4.0) == 4 and upper_class(0.3) == 0.5
    assert lower_class(3.0) == 2 and lower_class(4.0) == 4


@pytest.mark.parametrize("p", [2.0, 4.0, 10.0])
def test_profile_mass_against_quadrature(p):
    prof = Profile()
    f = lambda u: float(prof(u)) ** p
    want = 2 * (quad(f, 0, 1, points=[0.75])[0] + quad(f, 1, np.inf)[0])
    assert prof.lp_mass(p) == pytest.approx(want, rel=1e-6)


def test_profile_shape():
    prof = Profile()
    assert prof(0.0) == 1.0 and prof(0.75) == 1.0
    assert prof(1.0) == pytest.approx(0.5)
    assert prof(2.0) == pytest.approx(0.5 * 2.0**-20)


def test_scale_must_be_sixth_power():
    with pytest.raises(DomainError):
        PacketEnsemble(1000.0)
    with pytest.raises(DomainError):
        PacketEnsemble(2.0**5)
    ens = PacketEnsemble(R)
    assert (ens.s, ens.n_J, ens.n_I) == (4, 64, 16)
    assert np.array_equal(ens.plate_dims(), [64, 4096, 4096])
    assert np.array_equal(ens.plank_dims(), [16, 256, 4096])


def test_bad_indices_rejected():
    with pytest.raises(DomainError):
        PacketEnsemble(R, [64], [[0, 0, 0]], [1.0])
    with pytest.raises(DomainError):
        PacketEnsemble(R, [0, 1], [[0, 0, 0]], [1.0])


# ---------------------------------------------------------------- synthesis

def _field(centers, amps, dims=(2.0, 4.0, 8.0), seed=0):
    rng = np.random.default_rng(seed)
    k = len(centers)
    frames = np.array([np.linalg.qr(rng.normal(size=(3, 3)))[0] for _ in range(k)])
    carriers = rng.uniform(-1, 1, (k, 3))
    return PacketField(centers, frames, dims, carriers, amps, Profile())


def test_single_packet():
    F = _field([[1.0, 2.0, 3.0]], [2.0 - 1j])
    assert abs(F([1.0, 2.0, 3.0])[0]) == pytest.approx(abs(2 - 1j), rel=1e-12)
    assert abs(F([1.0 + 100, 2.0, 3.0])[0]) < 1e-12
    assert F.lp_norm_packet(0, 2) == pytest.approx(
        abs(2 - 1j) * (1 * 2 * 4 * Profile().lp_mass(2) ** 3) ** 0.5, rel=1e-12)


@pytest.mark.parametrize("p", [2.0, 6.0])
def test_disjoint_packets_norms_add(p):
    # well separated packets: ||sum||_p^p equals the sum of exact packet norms
    centers = np.array([[0.0, 0, 0], [200.0, 0, 0], [0, 300.0, 0]])
    amps = np.array([1.0, 0.5j, 2.0])
    F = _field(centers, amps)
    rng = np.random.default_rng(1)
    total = 0.0
    n = 200_000
    for k in range(len(F)):
        u = rng.uniform(-4, 4, (n, 3)) * F.half
        x = centers[k] + u @ F.frames[k]
        total += np.prod(8 * F.half) * np.mean(np.abs(F(x)) ** p)
    exact = sum(F.lp_norm_packet(k, p) ** p for k in range(len(F)))
    assert 0.5 <= (total / exact) ** (1 / p) <= 2.0
    assert total == pytest.approx(exact, rel=0.02)


def test_zero_amplitudes_give_zero_field():
    F = _field([[0.0, 0, 0], [1.0, 1, 1]], [0.0, 0.0])
    assert np.array_equal(F(np.random.default_rng(0).normal(size=(50, 3))), np.zeros(50))


def test_synthesis_is_linear():
    ens = random_ensemble(R, 20, 5, seed=3)
    x = np.random.default_rng(2).uniform(-R / 2, R / 2, (100, 3))
    f = synthesize_from_packets(ens)(x)
    ens.plate_amp = ens.plate_amp * (2 - 3j)
    assert np.allclose(synthesize_from_packets(ens)(x), (2 - 3j) * f, rtol=1e-12, atol=1e-12)


def test_repeated_packets_warn_and_sum():
    ens = PacketEnsemble(R, [3, 3], [[0.0, 0, 0]] * 2, [1.0, 1.0])
    with pytest.warns(RuntimeWarning):
        F = synthesize_from_packets(ens)
    assert abs(F([0.0, 0, 0])[0]) == pytest.approx(2.0)


def test_synthesis_errors():
    ens = PacketEnsemble(R, [0], [[2 * R, 0, 0]], [1.0])
    with pytest.raises(DomainError):
        synthesize_from_packets(ens)
    with pytest.raises(DomainError):
        synthesize_from_packets(PacketEnsemble(R), kind="tube")


def test_ensemble_roundtrip():
    ens = pigeonhole_analysis(build_fixture(R, n=2, X=2, m=2, Y=2, seed=1))
    back = PacketEnsemble.from_dict(ens.to_dict())
    assert np.array_equal(back.plate_amp, ens.plate_amp)
    assert np.array_equal(back.plank_center, ens.plank_center)
    assert back.planted == ens.planted


# ---------------------------------------------------------------- pigeonholing

def test_fixture_recovered_exactly():
    ens = pigeonhole_analysis(build_fixture(R, n=4, X=2, m=2, Y=2))
    got = parameters(ens)
    assert {k: got[k] for k in ens.planted} == ens.planted
    assert (got["n"], got["X"], got["m"]) == (4, 2, 2)


def test_fixture_with_phases_and_heights():
    ens = pigeonhole_analysis(build_fixture(R, n=4, X=2, m=4, Y=8, N=4, Z1=2, Z2=2, w=0.5, A=0.25, seed=9))
    got = parameters(ens)
    assert {k: got[k] for k in ens.planted} == ens.planted


def test_analysis_is_idempotent():
    ens = random_ensemble(R, 100, 100, seed=4)
    first = parameters(pigeonhole_analysis(ens))
    colls = ens.params["collections"]
    second = parameters(pigeonhole_analysis(ens))
    assert first == second and ens.params["collections"] == colls


def test_random_ensembles_satisfy_lY_le_mX():
    for seed in range(5):
        ens = pigeonhole_analysis(random_ensemble(R, 150, 150, seed=seed))
        for c in ens.params["collections"]:
            q = c["params"]
            assert q["l"] * q["Y"] <= q["m"] * q["X"]


def test_fixture_validation():
    with pytest.raises(DomainError):
        build_fixture(R, n=3)
    with pytest.raises(DomainError):
        build_fixture(R, X=4, Y=2)
    with pytest.raises(DomainError):
        build_fixture(R, m=8)


def test_empty_ensemble_rejected():
    with pytest.raises(DomainError):
        pigeonhole_analysis(PacketEnsemble(R))
    with pytest.raises(DomainError):
        parameters(PacketEnsemble(R))


def test_prop84_needs_parameters():
    ens = build_fixture(R, n=2, X=2, m=2, Y=2)
    with pytest.raises(DomainError):
        prop84_check(ens)
    ens.params = {k: None for k in FIRST + SECOND}
    with pytest.raises(DomainError):
        prop84_check(ens)


def test_prop84_report_on_fixture():
    ens = pigeonhole_analysis(build_fixture(R, n=2, X=2, m=2, Y=2, N=2, Z1=2, Z2=2))
    rep = prop84_check(ens, seed=0)
    s = rep.summary
    assert s["binding"] in s["bounds"]
    assert s["ratio"] == pytest.approx(s["A_median"] / s["bounds"][s["binding"]])
    assert s["A_max"] >= s["A_median"] > 0
    assert len(rep.rows) == len(ens.params["plank_collections"][0]["planks"])
