import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emocluster.objectives import (
    ContrastiveBatch,
    MtlWeights,
    cosine_sim,
    cross_entropy,
    mtl_combine,
    ntxent_variant,
)

from oracles import longdouble_ntxent


def test_cosine_orthogonal():
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)


def test_cosine_scale_invariance():
    assert cosine_sim([2.0, 2.0], [1.0, 1.0]) == pytest.approx(1.0)


def test_cosine_antiparallel():
    assert cosine_sim([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(-1.0)


def test_cosine_zero_vector_rejected():
    with pytest.raises(ValueError, match="zero"):
        cosine_sim([0.0, 0.0], [1.0, 0.0])


@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.floats(-4, 4).filter(lambda a: abs(a) > 1e-3),
    st.floats(-4, 4).filter(lambda b: abs(b) > 1e-3),
)
@settings(max_examples=60, deadline=None)
def test_cosine_signed_scale_property(x, y, a, b):
    x, y = np.asarray(x), np.asarray(y)
    if np.linalg.norm(x) < 1e-6 or np.linalg.norm(y) < 1e-6:
        return
    lhs = cosine_sim(a * x, b * y)
    rhs = np.sign(a * b) * cosine_sim(x, y)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def _batch_with_sims(sim_pos, sim_negs, tau):
    """Build 2-D unit vectors realizing the requested cosine similarities."""
    anchor = np.array([[1.0, 0.0]])
    positive = np.array([[sim_pos, np.sqrt(1.0 - sim_pos**2)]])
    negs = np.stack([[s, np.sqrt(1.0 - s**2)] for s in sim_negs])
    return ContrastiveBatch(anchor, positive, [negs], tau)


def test_ntxent_equal_sims_single_negative_is_zero():
    batch = _batch_with_sims(0.5, [0.5], tau=0.7)
    loss, _ = ntxent_variant(batch, include_positive_in_denominator=False)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_ntxent_worked_example_negatives_only():
    batch = _batch_with_sims(0.8, [0.2, 0.4], tau=0.5)
    loss, _ = ntxent_variant(batch, include_positive_in_denominator=False)
    expected = longdouble_ntxent(0.8, [0.2, 0.4], 0.5, include_positive=False)
    assert loss == pytest.approx(expected, abs=1e-9)
    assert loss == pytest.approx(-0.287, abs=5e-4)  # scalar evaluation of the printed form


def test_ntxent_worked_example_with_positive():
    batch = _batch_with_sims(0.8, [0.2, 0.4], tau=0.5)
    loss, _ = ntxent_variant(batch, include_positive_in_denominator=True)
    expected = longdouble_ntxent(0.8, [0.2, 0.4], 0.5, include_positive=True)
    assert loss == pytest.approx(expected, abs=1e-9)
    assert loss > 0.0


def test_ntxent_equal_sims_with_positive_closed_form():
    for m in (1, 2, 4):
        batch = _batch_with_sims(0.3, [0.3] * m, tau=0.9)
        loss, _ = ntxent_variant(batch, include_positive_in_denominator=True)
        assert loss == pytest.approx(np.log(1 + m), abs=1e-12)


def test_ntxent_directional_sensitivity():
    rng = np.random.default_rng(0)
    anchor = rng.normal(size=(1, 4))
    positive = rng.normal(size=(1, 4))
    negatives = rng.normal(size=(1, 3, 4))

    def loss_for(pos, negs):
        batch = ContrastiveBatch(anchor, pos, [negs[0]], tau=0.5)
        return ntxent_variant(batch, False)[0]

    base = loss_for(positive, negatives)
    # moving the positive toward the anchor decreases the loss
    closer = positive + 0.2 * (anchor - positive)
    assert loss_for(closer, negatives) < base
    # moving one negative toward the anchor increases the loss
    harder = negatives.copy()
    harder[0, 0] += 0.3 * (anchor[0] - harder[0, 0])
    assert loss_for(positive, harder) > base


def test_ntxent_negative_permutation_invariance():
    rng = np.random.default_rng(1)
    anchor = rng.normal(size=(2, 5))
    positive = rng.normal(size=(2, 5))
    negs = [rng.normal(size=(4, 5)) for _ in range(2)]
    loss_a, grads_a = ntxent_variant(ContrastiveBatch(anchor, positive, negs, 0.3), False)
    perm = [3, 0, 2, 1]
    negs_p = [n[perm] for n in negs]
    loss_b, grads_b = ntxent_variant(ContrastiveBatch(anchor, positive, negs_p, 0.3), False)
    assert loss_a == pytest.approx(loss_b, abs=1e-12)
    assert np.allclose(grads_a.d_anchor, grads_b.d_anchor)
    for da, db in zip(grads_a.d_negatives, grads_b.d_negatives):
        assert np.allclose(da[perm], db)


def test_ntxent_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    anchor = rng.normal(size=(2, 4))
    positive = rng.normal(size=(2, 4))
    negs = [rng.normal(size=(3, 4)), rng.normal(size=(2, 4))]
    for include in (False, True):
        loss, grads = ntxent_variant(ContrastiveBatch(anchor, positive, negs, 0.4), include)
        eps = 1e-6
        for arr, g in ((anchor, grads.d_anchor), (positive, grads.d_positive)):
            flat, gflat = arr.reshape(-1), np.asarray(g).reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                lp = ntxent_variant(ContrastiveBatch(anchor, positive, negs, 0.4), include)[0]
                flat[j] = orig - eps
                lm = ntxent_variant(ContrastiveBatch(anchor, positive, negs, 0.4), include)[0]
                flat[j] = orig
                assert gflat[j] == pytest.approx((lp - lm) / (2 * eps), abs=1e-6)


def test_ntxent_rejects_bad_batches():
    good = _batch_with_sims(0.5, [0.1], tau=0.5)
    with pytest.raises(ValueError, match="temperature"):
        ntxent_variant(ContrastiveBatch(good.z_anchor, good.z_positive, good.z_negatives, 0.0), False)
    with pytest.raises(ValueError, match="negatives"):
        ntxent_variant(
            ContrastiveBatch(good.z_anchor, good.z_positive, [np.zeros((0, 2))], 0.5), False
        )


def test_cross_entropy_uniform_logits():
    logits = np.zeros((3, 4))
    loss, grad = cross_entropy(logits, np.array([0, 1, 2]))
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)
    assert grad.shape == (3, 4)


def test_cross_entropy_margin_limit():
    losses = []
    for margin in (2.0, 10.0, 40.0):
        logits = np.zeros((1, 3))
        logits[0, 1] = margin
        losses.append(cross_entropy(logits, np.array([1]))[0])
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-12


def test_cross_entropy_matches_naive_formula():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(6, 5))
    labels = rng.integers(0, 5, size=6)
    loss, grad = cross_entropy(logits, labels)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    naive = float(-np.log(probs[np.arange(6), labels]).mean())
    assert loss == pytest.approx(naive, abs=1e-12)
    onehot = np.zeros_like(logits)
    onehot[np.arange(6), labels] = 1.0
    assert np.allclose(grad, (probs - onehot) / 6.0, atol=1e-12)


def test_cross_entropy_label_range_checked():
    with pytest.raises(ValueError, match="labels out of range"):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_cross_entropy_extreme_logits_stable():
    logits = np.array([[1000.0, -1000.0], [-1000.0, 1000.0]])
    loss, grad = cross_entropy(logits, np.array([0, 1]))
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_mtl_combine_reductions():
    assert mtl_combine(0.7, 9.9, MtlWeights(1.0, 0.0)) == pytest.approx(0.7)
    assert mtl_combine(0.5, 1.0, MtlWeights(1.0, 1.0)) == pytest.approx(1.5)
    assert mtl_combine(0.5, 1.0, MtlWeights(2.0, 0.25)) == pytest.approx(1.25)


def test_mtl_weights_validation():
    with pytest.raises(ValueError):
        MtlWeights(0.0, 0.0).validate()
    with pytest.raises(ValueError):
        MtlWeights(1.0, 1.0, grl_lambda=-1.0).validate()
    with pytest.raises(ValueError):
        MtlWeights(-0.5, 1.0).validate()
