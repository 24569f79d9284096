import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from cplcalib import projection_loss as pl
from cplcalib.camera_model import CameraParams, WorldPoint
from cplcalib.errors import (
    DisparityZeroOrNegative,
    EmptyPixelSet,
    InvalidParams,
    LengthMismatch,
    NonPositiveWeight,
    ZeroDenominator,
)

import oracles

BASE = (1000.0, 1000.0, 640.0, 480.0, 0.5, 10.0, 0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0)


def random_vector(rng):
    return np.array([
        rng.uniform(300, 1500), rng.uniform(300, 1500), rng.uniform(200, 800), rng.uniform(150, 600),
        rng.uniform(0.1, 1.0), rng.uniform(0.5, 2.0), rng.uniform(-0.5, 0.5),
        *rng.uniform(-5, 5, 3), *rng.uniform(-20, 20, 3),
    ])


def random_pixels(rng, n=8):
    return np.column_stack([rng.uniform(0, 1280, n), rng.uniform(0, 960, n), rng.uniform(1, 100, n)])


vectors = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


def test_reconstruct_chain_example():
    assert pl.reconstruct(BASE, (640, 480)).as_array().tolist() == [51, 2, 3]
    flat = pl.ParamVector13(BASE).replace(t_x=0.0, t_y=0.0, t_z=0.0)
    assert pl.reconstruct(flat, (740, 380)).as_array() == pytest.approx([50, -5, 5], abs=1e-12)
    with pytest.raises(DisparityZeroOrNegative):
        pl.reconstruct(pl.ParamVector13(BASE).replace(d=0.0), (1, 1))


def test_reconstruct_many_matches_scalar():
    rng = np.random.default_rng(3)
    omega, pix = random_vector(rng), random_pixels(rng)
    many = pl.reconstruct_many(omega, pix)
    for row, p in zip(many, pix):
        assert row == pytest.approx(pl.reconstruct(omega, p).as_array(), rel=1e-13, abs=1e-12)


def test_param_vector_round_trip():
    params = CameraParams.from_values(900, 800, 600, 400, 0.3, 0.1, 1, 2, 3)
    vec = pl.ParamVector13.from_parts(params, 1.5, WorldPoint(4, 5, 6))
    back, d, point = vec.to_parts()
    assert back == params and d == 1.5 and point == WorldPoint(4, 5, 6)
    assert pl.ParamVector13.from_mapping(vec.as_dict()) == vec
    assert vec["theta_p"] == vec[pl.THETA] == 0.1
    with pytest.raises(InvalidParams):
        pl.ParamVector13((1.0,) * 12)


def test_cpl_translation_shift_is_one_third():
    rng = np.random.default_rng(7)
    pix = random_pixels(rng)
    shifted = pl.ParamVector13(BASE).replace(t_x=BASE[7] + 1.0)
    assert pl.cpl(BASE, shifted, pix) == pytest.approx(1 / 3, abs=1e-12)
    assert oracles.plain_loss(BASE, shifted.values, pix) == pytest.approx(1 / 3, abs=1e-12)


def test_cpl_single_pixel_matches_oracle():
    truth = BASE
    pred = (1100.0, 950.0, 600.0, 500.0, 0.55, 9.0, 0.05, 1.5, 1.0, 3.5, 0, 0, 0)
    pix = [(700.0, 300.0)]
    expected = oracles.mae3(oracles.world_from_vector(truth, 700, 300), oracles.world_from_vector(pred, 700, 300))
    assert pl.cpl(truth, pred, pix) == pytest.approx(expected, rel=1e-12)


def test_cpl_errors():
    with pytest.raises(EmptyPixelSet):
        pl.cpl(BASE, BASE, [])
    with pytest.raises(InvalidParams):
        pl.cpl(BASE, BASE[:12], [(1, 1)])


def test_disentangled_at_truth_and_single_fx():
    pix = [(740.0, 380.0)]
    assert not pl.cpl_disentangled(BASE, BASE, pix).terms.any()
    pred = pl.ParamVector13(BASE).replace(f_x=1100.0)
    bd = pl.cpl_disentangled(BASE, pred, pix)
    assert bd["f_x"] == pytest.approx(oracles.hybrid_term(BASE, pred.values, 0, pix), rel=1e-12)
    assert bd["f_x"] > 0
    assert np.count_nonzero(bd.terms) == 1


def test_disentangled_terms_match_hybrid_oracle():
    rng = np.random.default_rng(11)
    truth, pix = random_vector(rng), random_pixels(rng, 4)
    pred = truth * rng.uniform(0.8, 1.2, 13)
    bd = pl.cpl_disentangled(truth, pred, pix)
    for j in range(pl.N_CAMERA):
        assert bd.terms[j] == pytest.approx(oracles.hybrid_term(truth, pred, j, pix), rel=1e-10, abs=1e-14)
    assert bd.terms[10:] == pytest.approx(np.abs(pred[10:] - truth[10:]) / 3, rel=1e-15)
    assert bd.aggregate == pytest.approx(bd.terms.sum() / 13, rel=1e-15)


def test_ten_parameter_mode_zeroes_point_terms():
    rng = np.random.default_rng(12)
    truth, pix = random_vector(rng), random_pixels(rng)
    pred = truth.copy()
    pred[10:] += 5.0
    assert not pl.cpl_disentangled(truth, pred, pix, point_terms=False).terms.any()


def test_weighted_examples():
    rng = np.random.default_rng(13)
    truth, pix = random_vector(rng), random_pixels(rng)
    bd = pl.cpl_disentangled(truth, truth * 1.1, pix)
    assert pl.cpl_weighted(bd, pl.AdaptiveWeights.uniform()) == pytest.approx(bd.aggregate, abs=1e-15)
    zero = pl.cpl_disentangled(truth, truth, pix)
    assert pl.cpl_weighted(zero, pl.AdaptiveWeights.normalized(rng.uniform(0.1, 5, 13))) == 0.0
    with pytest.raises(NonPositiveWeight):
        pl.AdaptiveWeights(np.array([13.0] + [0.0] * 12))
    with pytest.raises(InvalidParams):
        pl.AdaptiveWeights(np.full(13, 2.0))


def test_nmae_examples():
    assert pl.nmae((2, 4), (1, 5)) == pytest.approx(1 / 3, abs=1e-12)
    assert pl.nmae((2, 4), (2, 4)) == 0.0
    with pytest.raises(ZeroDenominator):
        pl.nmae((0, 0), (1, 1))
    with pytest.raises(LengthMismatch):
        pl.nmae((1, 2), (1,))


def test_nmae_per_parameter_zero_truth_is_nan():
    truth = pl.ParamVector13(BASE)
    out = pl.nmae_per_parameter(truth, truth.replace(f_x=1100.0))
    assert list(out) == list(pl.TABLE_ORDER)
    assert out["f_x"] == pytest.approx(0.1)
    assert math.isnan(out["theta_p"])


@settings(max_examples=100, deadline=None)
@given(vectors)
def test_symmetric_and_non_negative(rng):
    a, pix = random_vector(rng), random_pixels(rng)
    b = random_vector(rng)
    assert pl.cpl(a, b, pix) >= 0
    assert pl.cpl(a, b, pix) == pl.cpl(b, a, pix)
    assert pl.cpl(a, a, pix) == 0.0


@settings(max_examples=100, deadline=None)
@given(vectors, st.integers(0, 12))
def test_isolation(rng, j):
    truth, pix = random_vector(rng), random_pixels(rng)
    pred = truth.copy()
    pred[j] = pred[j] * 1.1 + 0.01
    terms = pl.cpl_disentangled(truth, pred, pix).terms
    assert not np.delete(terms, j).any()
    assert terms[j] >= 0


@settings(max_examples=100, deadline=None)
@given(vectors, st.integers(0, 12), st.floats(1.01, 100))
def test_weight_scaling_monotone(rng, j, c):
    truth, pix = random_vector(rng), random_pixels(rng)
    bd = pl.cpl_disentangled(truth, truth * rng.uniform(0.8, 1.2, 13), pix)
    raw = rng.uniform(0.1, 5, 13)
    bumped = raw.copy()
    bumped[j] *= c
    # compare unnormalized sums: sum(raw * L) / 13 is the weighted loss before renormalization
    before = float(np.sum(raw * bd.terms))
    after = float(np.sum(bumped * bd.terms))
    if bd.terms[j] > 0:
        assert after >= before


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=10),
       st.floats(1e-3, 1e3), st.booleans(), st.integers(0, 2**32 - 1))
def test_nmae_scale_invariance(values, c, negate, seed):
    y = np.array(values)
    yhat = y + np.random.default_rng(seed).normal(0, 1, y.size) * np.maximum(1.0, np.abs(y))
    # scaling rounds y and y_hat by ~eps*|y|; keep |y - y_hat| well above that
    assume(np.mean(np.abs(y)) > 1e-6)
    assume(np.mean(np.abs(y - yhat)) > 1e-2 * np.mean(np.abs(y)))
    k = -c if negate else c
    base = pl.nmae(y, yhat)
    assert pl.nmae(k * y, k * yhat) == pytest.approx(base, rel=1e-12, abs=1e-300)
