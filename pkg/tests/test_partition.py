import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vinolab.errors import DomainError, NotInUnion
from vinolab.partition import (
    LEMMA_FACTOR, SmallPlankFamily, build_cp_family, classify_point, classify_points,
    covering_curve, dyadic_sigmas, equivariance_shear, partition_params, sample_union,
    verify_partition_lemmas,
)


def test_dyadic_sigmas():
    assert dyadic_sigmas(512.0) == [1 / 8, 1 / 4, 1 / 2, 1.0]
    assert dyadic_sigmas(4096.0)[0] == 1 / 16
    with pytest.raises(DomainError):
        dyadic_sigmas(1.0)


@pytest.mark.parametrize("R", [512.0, 4096.0])
def test_family_sizes(R):
    for s in dyadic_sigmas(R):
        fam = build_cp_family(R, s)
        assert len(fam) == round(R ** (1 / 3) * s)
        assert fam.spacing == pytest.approx(R ** (-1 / 3) / s)
    assert len(partition_params(R)) == round(R ** (1 / 3))


def test_family_rejects_bad_sigma():
    with pytest.raises(DomainError):
        build_cp_family(512.0, 0.3)
    with pytest.raises(DomainError):
        build_cp_family(512.0, 1 / 16)


def test_covering_curve_at_zero_is_seed():
    seed = np.array([0.1, -0.2, 0.3])
    assert np.array_equal(covering_curve(seed, 0.0), seed)


@settings(max_examples=50)
@given(st.floats(0, 1), st.sampled_from([1.0, 0.5, 0.25, 0.125]))
def test_shear_equivariance(s, sigma):
    R = 512.0
    half = np.array([R ** (-1 / 3) * sigma**2, R ** (-2 / 3) * sigma, 1 / R])
    at0 = SmallPlankFamily(R, sigma, np.array([0.0]), half)
    at_s = SmallPlankFamily(R, sigma, np.array([s]), half)
    w = np.random.default_rng(0).uniform(-1.5, 1.5, (64, 3)) * half
    moved = equivariance_shear(s).apply(w)
    assert np.allclose(at_s.dilation_needed(moved), at0.dilation_needed(w), rtol=1e-9, atol=1e-9)


def test_sampled_points_lie_in_base_planks():
    rng = np.random.default_rng(1)
    w, c = sample_union(512.0, 2000, rng)
    base = build_cp_family(512.0, 1.0)
    assert base.contains(w).any(axis=1).all()
    assert set(np.unique(c)) <= set(partition_params(512.0))


def test_classification_layers_and_multiplicity():
    rng = np.random.default_rng(2)
    w, _ = sample_union(512.0, 3000, rng)
    cl = classify_points(w, 512.0)
    assert not np.isnan(cl.sigma).any()
    assert (cl.index >= 0).all() and (cl.multiplicity >= 1).all()
    # the recorded plank really contains the point
    for s in np.unique(cl.sigma):
        sel = cl.sigma == s
        fam = cl.families[s]
        lam = fam.dilation_needed(w[sel])
        assert (lam[np.arange(sel.sum()), cl.index[sel]] <= 1 + 1e-12).all()
        # and no plank of a smaller layer does
        for t in dyadic_sigmas(512.0):
            if t < s:
                assert not cl.families[t].contains(w[sel]).any()


def test_classify_point_outside_union():
    with pytest.raises(NotInUnion):
        classify_point(np.array([1.0, 1.0, 1.0]), 512.0)
    sigma, idx, mult = classify_point(np.zeros(3), 512.0)
    assert sigma == 1 / 8 and idx >= 0 and mult >= 1


def test_partition_report_small():
    rep = verify_partition_lemmas(512.0, 5000, seed=4)
    d = rep.to_dict()
    assert d["violations"] == 0
    assert d["coverage"] == 1.0
    assert sum(d["sigma_layers"].values()) == 5000
    assert sum(d["multiplicity_hist"].values()) == 5000
    assert d["needed_factor"] <= LEMMA_FACTOR
    assert verify_partition_lemmas(512.0, 5000, seed=4).to_dict() == d


def test_partition_report_rejects_no_samples():
    with pytest.raises(DomainError):
        verify_partition_lemmas(512.0, 0, seed=0)
