"""Semantic extraction block, softened KL loss, mixing schedule."""

import numpy as np
import pytest
from conftest import assert_gradients_match, synthetic_triples, write_dataset

from kgedistill.autodiff import Parameter, Tensor, backward, tensor_sum
from kgedistill.data import augment_reciprocal, load_dataset, make_batches
from kgedistill.distill import (
    SemanticBlock,
    TeacherCache,
    beta_at_epoch,
    central_feature,
    distill_loss,
    extract,
    partial_similarities,
    semantic_features,
    semantic_information,
    total_loss,
    whole_similarities,
)
from kgedistill.errors import ShapeError
from kgedistill.rng import RngState


class TestCentralFeature:
    def test_zero_batch_gives_zero(self):
        out = central_feature(Tensor(np.zeros((3, 4))), Tensor(np.eye(4)))
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_single_row_identity_projection(self):
        row = np.array([[1.0, -2.0, 3.0]])
        out = central_feature(Tensor(row), Tensor(np.eye(3)))
        np.testing.assert_array_equal(out.data, row[0])

    def test_mean_of_rows(self):
        out = central_feature(Tensor([[1.0, 3.0], [3.0, 1.0]]), Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, [2.0, 2.0])


class TestSemanticFeatures:
    def test_zero_projection(self):
        out = semantic_features(Tensor(np.ones((2, 3))), Tensor(np.zeros((3, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_identity_projection(self):
        x = np.arange(6.0).reshape(2, 3)
        out = semantic_features(Tensor(x), Tensor(np.eye(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_value(self):
        out = semantic_features(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0]])


class TestPartialSimilarities:
    def test_zero_central_feature(self):
        out = partial_similarities(Tensor(np.zeros(2)), Tensor(np.ones((3, 2))))
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_hand_value(self):
        out = partial_similarities(Tensor([1.0, 0.0]), Tensor([[2.0, 9.0], [3.0, 9.0]]))
        np.testing.assert_array_equal(out.data, [2.0, 3.0])

    def test_duplicate_rows_tie(self):
        out = partial_similarities(Tensor([0.5, -1.0]), Tensor([[2.0, 1.0], [2.0, 1.0]]))
        assert out.data[0] == out.data[1]


class TestWholeSimilarities:
    def test_zero_similarities_give_uniform(self):
        out = whole_similarities(Tensor(np.zeros(2)), Tensor(np.ones((2, 5))))
        np.testing.assert_allclose(out.data, 0.2, atol=1e-15)

    def test_hand_value(self):
        out = whole_similarities(Tensor([1.0]), Tensor([[np.log(2.0), 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [0.5, 0.25, 0.25], atol=1e-15)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = rng.normal(0, 3, 4)
            w = rng.normal(0, 2, (4, 7))
            out = whole_similarities(Tensor(s), Tensor(w))
            assert abs(out.data.sum() - 1.0) <= 1e-12
            assert (out.data >= 0).all()

    def test_batch_size_mismatch(self):
        with pytest.raises(ShapeError):
            whole_similarities(Tensor(np.zeros(3)), Tensor(np.ones((2, 5))))


class TestSemanticInformation:
    def test_identical_rows_fixed_point(self):
        e = Tensor(np.tile([2.0, -1.0, 0.5], (4, 1)))
        q = Tensor(np.array([0.1, 0.2, 0.3, 0.4]))
        out = semantic_information(q, e)
        np.testing.assert_allclose(out.data, [2.0, -1.0, 0.5], atol=1e-15)

    def test_one_hot_selects_row(self):
        e = Tensor(np.arange(12.0).reshape(4, 3))
        out = semantic_information(Tensor([0.0, 0.0, 1.0, 0.0]), e)
        np.testing.assert_array_equal(out.data, e.data[2])

    def test_hand_value(self):
        out = semantic_information(Tensor([0.5, 0.5]), Tensor([[0.0, 2.0], [4.0, 0.0]]))
        np.testing.assert_array_equal(out.data, [2.0, 1.0])


def _toy_setup(tmp_path, bs=2, d=4, k_b=3, seed=5):
    train, valid, test = synthetic_triples(6, 2, 10, 1, 1)
    write_dataset(tmp_path / "kg", train, valid, test)
    store = augment_reciprocal(load_dataset(tmp_path / "kg"))
    entities = Parameter(RngState(seed, "e").normal(0, 0.5, (store.n_entities, d)))
    block = SemanticBlock(d, store.n_entities, bs, k_b, RngState(seed, "b"))
    batch = make_batches(store, bs, RngState(seed, "s"))[0]
    return store, entities, block, batch


class TestExtract:
    def test_composition_equals_sub_ops(self, tmp_path):
        store, entities, block, batch = _toy_setup(tmp_path)
        got = extract(batch, entities, block).data

        from kgedistill.autodiff import gather_rows

        e_batch = gather_rows(entities, batch.heads)
        c = central_feature(e_batch, block.w_central)
        feats = semantic_features(e_batch, block.w_features)
        s = partial_similarities(c, feats)
        q = whole_similarities(s, block.w_expand)
        want = semantic_information(q, entities).data
        np.testing.assert_array_equal(got, want)

    def test_convex_hull_property(self, tmp_path):
        store, entities, block, batch = _toy_setup(tmp_path)
        out = extract(batch, entities, block).data
        lo = entities.data.min(axis=0) - 1e-12
        hi = entities.data.max(axis=0) + 1e-12
        assert (out >= lo).all() and (out <= hi).all()

    def test_permuted_batch_recomputation(self, tmp_path):
        """Permuting the batch rows permutes K and s; the oracle recomputes
        the pipeline directly on the permuted inputs."""
        store, entities, block, batch = _toy_setup(tmp_path)
        perm = np.array([1, 0])
        permuted_heads = batch.heads[perm]

        got = extract(permuted_heads, entities, block).data

        e_rows = entities.data[permuted_heads]
        v = e_rows.mean(axis=0)
        c = v @ block.w_central.data
        feats = e_rows @ block.w_features.data
        s = feats @ c
        logits = s @ block.w_expand.data
        shifted = np.exp(logits - logits.max())
        q = shifted / shifted.sum()
        want = q @ entities.data
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_wrong_batch_size_rejected(self, tmp_path):
        store, entities, block, batch = _toy_setup(tmp_path)
        with pytest.raises(ShapeError):
            extract(np.array([0, 1, 2]), entities, block)

    def test_gradients_match_finite_differences(self, tmp_path):
        store, entities, block, batch = _toy_setup(tmp_path)
        w = RngState(9, "w").normal(0, 1, 4)
        assert_gradients_match(
            lambda: tensor_sum(extract(batch, entities, block) * w),
            [entities, block.w_central, block.w_features, block.w_expand],
        )


class TestDistillLoss:
    def test_identical_vectors_give_zero(self):
        v = np.array([0.3, -0.7, 1.1])
        assert distill_loss(Tensor(v), v, 2.0).item() == 0.0

    def test_hand_value(self):
        # p_s = [2/3, 1/3], p_t = [1/2, 1/2], loss = (1/2) KL(p_s || p_t)
        loss = distill_loss(Tensor([np.log(2.0), 0.0]), np.zeros(2), 1.0)
        np.testing.assert_allclose(loss.item(), 0.028316506132567876, rtol=1e-12)

    def test_teacher_gets_no_gradient(self):
        student = Parameter([0.4, -0.2, 0.9])
        teacher = Parameter([0.1, 0.3, -0.5])
        loss = distill_loss(student, teacher, 3.0)
        backward(loss)
        np.testing.assert_array_equal(teacher.grad, np.zeros(3))
        assert np.any(student.grad != 0)

    def test_nonnegative_and_zero_iff_matching(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            d = int(rng.integers(2, 8))
            s = rng.normal(0, 1, d)
            t = rng.normal(0, 1, d)
            val = distill_loss(Tensor(s), t, float(10 ** rng.uniform(-1, 5))).item()
            assert val >= 0.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            distill_loss(Tensor([1.0, 2.0]), np.zeros(3), 1.0)

    def test_student_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        student = Parameter(rng.normal(0, 1, 5))
        teacher = rng.normal(0, 1, 5)
        for temperature in (1.0, 4.0):
            assert_gradients_match(
                lambda t=temperature: distill_loss(student, teacher, t), [student]
            )


class TestBetaSchedule:
    def test_endpoints(self):
        assert beta_at_epoch(0, 1500, 1.0) == 1.0
        assert beta_at_epoch(1500, 1500, 1.0) == 0.0

    def test_midpoint(self):
        assert beta_at_epoch(750, 1500, 1.0) == 0.5

    def test_monotone_nonincreasing(self):
        values = [beta_at_epoch(ep, 100, 0.8) for ep in range(101)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[0] == 0.8 and values[-1] == 0.0

    def test_out_of_range_epoch(self):
        with pytest.raises(ValueError):
            beta_at_epoch(11, 10, 1.0)
        with pytest.raises(ValueError):
            beta_at_epoch(-1, 10, 1.0)


class TestTotalLoss:
    def test_beta_zero_returns_task_loss_object(self):
        bce = Tensor(4.0)
        assert total_loss(bce, Tensor(8.0), 0.0) is bce

    def test_beta_one_returns_distill_loss_object(self):
        kl = Tensor(8.0)
        assert total_loss(Tensor(4.0), kl, 1.0) is kl

    def test_convex_combination(self):
        out = total_loss(Tensor(4.0), Tensor(8.0), 0.25)
        assert out.item() == 5.0

    def test_invalid_beta(self):
        with pytest.raises(ValueError):
            total_loss(Tensor(1.0), Tensor(1.0), 1.5)


class TestTeacherCache:
    def test_starts_absent(self):
        assert not TeacherCache().present

    def test_refresh_copies(self):
        cache = TeacherCache()
        src = np.array([1.0, 2.0])
        cache.refresh(src)
        src[0] = 99.0
        np.testing.assert_array_equal(cache.vector, [1.0, 2.0])
