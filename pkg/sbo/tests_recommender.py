"""
testing code for `recommender.py`

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
from django.test import SimpleTestCase

from dataclasses import replace

import numpy as np

from .dataset import InteractionDataset, SplitSpec, split_per_user
from .errors import ConfigError, DimensionError, DivergenceError
from .recommender import (TrainConfig, BprModel, bpr_loss_and_grads, sample_negatives, train_bpr, recommend_topk,
    ndcg_at_k, per_user_ndcg, evaluate_model)
from .tests_dataset import random_dataset, TempDirMixin


#########################################################################################
## SUNDRY HELPER FUNCTIONS AND OBJECTS

def block_dataset(seed, users_per_block=20, items_per_block=10, per_user=6):
    """two user blocks, each consuming only items of its own item block"""
    rng = np.random.default_rng(seed)
    profiles = []
    for block in (0, 1):
        for _ in range(users_per_block):
            profiles.append(block * items_per_block + rng.choice(items_per_block, size=per_user, replace=False))
    return InteractionDataset.from_profiles(["u{}".format(u) for u in range(2 * users_per_block)],
                                            ["i{}".format(i) for i in range(2 * items_per_block)], profiles)

def empty_like(dataset):
    return dataset.with_pairs(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

def numeric_grad(f, x, eps=1e-6):
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        keep = x[idx]
        x[idx] = keep + eps
        up = f()
        x[idx] = keep - eps
        down = f()
        x[idx] = keep
        out[idx] = (up - down) / (2 * eps)
    return out

def line_model(item_scores, n_users=1):
    """one-dimensional model where every user scores item v as item_scores[v]"""
    return BprModel(np.ones((n_users, 1)), np.asarray(item_scores, dtype=float)[:, None])


#########################################################################################
## CONFIGURATION AND CHECKPOINTS

class ConfigTest(SimpleTestCase):

    def test_validation(s):
        with s.assertRaises(ConfigError): TrainConfig(epochs=0)
        with s.assertRaises(ConfigError): TrainConfig(learning_rate=0)
        with s.assertRaises(ConfigError): TrainConfig(batch_size=0)
        with s.assertRaises(ConfigError): TrainConfig(patience=0)
        with s.assertRaises(ConfigError): TrainConfig(reg=-1.0)

    def test_from_settings(s):
        cfg = TrainConfig.from_settings(epochs=3)
        s.assertEqual(cfg.epochs, 3)
        s.assertEqual(cfg.dim, 64)
        s.assertEqual(cfg.k, 10)


class CheckpointTest(TempDirMixin, SimpleTestCase):

    def test_save_load(s):
        rng = np.random.default_rng(0)
        model = BprModel(rng.normal(size=(5, 3)), rng.normal(size=(7, 3)), seed=12)
        back = BprModel.load(model.save(s.dir / "ckpt" / "model.txt"))
        s.assertTrue(np.array_equal(back.user_factors, model.user_factors))
        s.assertTrue(np.array_equal(back.item_factors, model.item_factors))
        s.assertEqual((back.dim, back.n_users, back.n_items, back.seed), (3, 5, 7, 12))

    def test_bad_files(s):
        path = s.write("model.txt", "# bpr-mf d=2 users=1 items=1 seed=0\n0,0,1.0,2.0\n")
        with s.assertRaises(DimensionError):
            BprModel.load(path)
        with s.assertRaises(DimensionError):
            BprModel.load(s.write("plain.txt", "0,0,1.0\n"))

    def test_mismatched_dims(s):
        with s.assertRaises(DimensionError):
            BprModel(np.zeros((2, 3)), np.zeros((2, 4)))


#########################################################################################
## OBJECTIVE

class ObjectiveTest(SimpleTestCase):

    def test_gradients(s):
        """central differences on 100 small instances, repeated users and items included"""
        rng = np.random.default_rng(1)
        for _ in range(100):
            n_users, n_items, dim = int(rng.integers(1, 5)), int(rng.integers(2, 7)), int(rng.integers(1, 9))
            U, V = rng.normal(size=(n_users, dim)), rng.normal(size=(n_items, dim))
            batch = int(rng.integers(1, 9))
            users = rng.integers(0, n_users, batch)
            pos = rng.integers(0, n_items, batch)
            neg = (pos + rng.integers(1, n_items, batch)) % n_items
            reg = float(rng.choice([0.0, 1e-2, 0.5]))
            loss, gU, gV = bpr_loss_and_grads(U, V, users, pos, neg, reg)
            f = lambda: bpr_loss_and_grads(U, V, users, pos, neg, reg)[0]
            np.testing.assert_allclose(gU, numeric_grad(f, U), rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(gV, numeric_grad(f, V), rtol=1e-4, atol=1e-7)

    def test_loss_value(s):
        """zero embeddings: every margin is 0, the loss is ln 2"""
        loss, gU, gV = bpr_loss_and_grads(np.zeros((2, 3)), np.zeros((3, 3)), np.array([0, 1]),
                                          np.array([0, 1]), np.array([2, 2]), 0.1)
        s.assertAlmostEqual(loss, np.log(2.0), places=12)
        s.assertFalse(gU.any())

    def test_negatives_unobserved(s):
        d = random_dataset(2, 30, 12, density=0.5)
        codes = d.user_idx * d.n_items + d.item_idx
        users = np.repeat(np.flatnonzero(d.profile_sizes() < d.n_items), 20)
        neg = sample_negatives(np.random.default_rng(3), users, codes, d.n_items)
        s.assertFalse(np.isin(users * d.n_items + neg, codes).any())


#########################################################################################
## RANKING AND METRICS

class MetricTest(SimpleTestCase):

    def test_ndcg_examples(s):
        s.assertAlmostEqual(ndcg_at_k([5, 3], {3}, 2), 1 / np.log2(3), places=12)
        s.assertAlmostEqual(ndcg_at_k([5, 3], {3}, 2), 0.6309297535714575, places=12)
        s.assertEqual(ndcg_at_k([3, 5], {3}, 2), 1.0)
        s.assertEqual(ndcg_at_k([1, 2], {1, 2, 3}, 2), 1.0)
        s.assertEqual(ndcg_at_k([4, 5], {1}, 2), 0.0)
        s.assertEqual(ndcg_at_k([4, 5], set(), 2), 0.0)
        s.assertEqual(ndcg_at_k([], {1}, 3), 0.0)
        with s.assertRaises(ConfigError):
            ndcg_at_k([1], {1}, 0)

    def test_ndcg_monotone(s):
        """moving a relevant item up past an irrelevant one never lowers the score"""
        rng = np.random.default_rng(4)
        for _ in range(300):
            ranked = rng.permutation(15)
            relevant = set(rng.choice(15, size=int(rng.integers(1, 6)), replace=False).tolist())
            k = int(rng.integers(1, 16))
            value = ndcg_at_k(ranked, relevant, k)
            s.assertTrue(0.0 <= value <= 1.0)
            for i in range(14):
                if ranked[i] not in relevant and ranked[i + 1] in relevant:
                    swapped = ranked.copy()
                    swapped[i], swapped[i + 1] = swapped[i + 1], swapped[i]
                    s.assertGreaterEqual(ndcg_at_k(swapped, relevant, k), value)

    def test_topk_matches_full_sort(s):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n_items = int(rng.integers(1, 25))
            item_scores = rng.integers(-3, 4, n_items).astype(float)
            exclude = rng.choice(n_items, size=int(rng.integers(0, n_items + 1)), replace=False)
            k = int(rng.integers(1, 30))
            expected = sorted((v for v in range(n_items) if v not in set(exclude.tolist())),
                              key=lambda v: (-item_scores[v], v))[:k]
            s.assertEqual(recommend_topk(line_model(item_scores), 0, k, exclude).tolist(), expected)

    def test_topk_shift_invariant(s):
        """adding the same constant to every item's score keeps the ranking"""
        rng = np.random.default_rng(6)
        U, V = rng.normal(size=(3, 4)), rng.normal(size=(12, 4))
        base = BprModel(U, V)
        shifted = BprModel(np.hstack([U, np.ones((3, 1))]), np.hstack([V, np.full((12, 1), 7.5)]))
        for u in range(3):
            s.assertEqual(recommend_topk(base, u, 5, [0, 1]).tolist(), recommend_topk(shifted, u, 5, [0, 1]).tolist())

    def test_topk_edges(s):
        model = line_model([1.0, 1.0, 3.0, 2.0])
        s.assertEqual(recommend_topk(model, 0, 3).tolist(), [2, 3, 0])
        s.assertEqual(recommend_topk(model, 0, 10, [2]).tolist(), [3, 0, 1])
        s.assertEqual(len(recommend_topk(model, 0, 2, [0, 1, 2, 3])), 0)
        with s.assertRaises(ConfigError):
            recommend_topk(model, 0, 0)

    def test_evaluate_hand_case(s):
        """items ranked 0 > 1 > 2 > 3 for everyone; three users with test items, one without"""
        model = line_model([4.0, 3.0, 2.0, 1.0], n_users=4)
        users, items = ["a", "b", "c", "d"], ["w", "x", "y", "z"]
        seen = InteractionDataset.from_profiles(users, items, [[0], [], [1], [0]])
        test = InteractionDataset.from_profiles(users, items, [[1], [2], [2], []])
        s.assertEqual(per_user_ndcg(model, test, seen, 2), {0: 1.0, 1: 0.0, 2: 1 / np.log2(3)})
        s.assertAlmostEqual(evaluate_model(model, test, seen, 2), (1.0 + 1 / np.log2(3)) / 3, places=12)

    def test_evaluate_empty(s):
        model = line_model([1.0, 2.0], n_users=2)
        test = InteractionDataset.from_profiles(["a", "b"], ["x", "y"], [[], []])
        with s.assertLogs("sbo.recommender", level="WARNING"):
            s.assertEqual(evaluate_model(model, test, test, 5), 0.0)


#########################################################################################
## TRAINING

class TrainTest(SimpleTestCase):

    cfg = TrainConfig(epochs=150, learning_rate=0.05, batch_size=64, patience=5, seed=3, dim=8, reg=1e-4)

    def test_deterministic(s):
        d = block_dataset(0)
        cfg = TrainConfig(epochs=5, learning_rate=0.01, batch_size=32, patience=2, seed=9, dim=4)
        a, b = train_bpr(d, empty_like(d), cfg), train_bpr(d, empty_like(d), cfg)
        s.assertTrue(np.array_equal(a.user_factors, b.user_factors))
        s.assertTrue(np.array_equal(a.item_factors, b.item_factors))
        c = train_bpr(d, empty_like(d), replace(cfg, seed=10))
        s.assertFalse(np.array_equal(a.item_factors, c.item_factors))

    def test_learns_blocks(s):
        """held-out items of the user's own block beat a random ranking by a wide margin"""
        trainval, test = split_per_user(block_dataset(1), SplitSpec(0.34, 0))
        model = train_bpr(trainval, empty_like(trainval), s.cfg)
        s.assertEqual((model.n_users, model.n_items, model.dim), (40, 20, 8))
        s.assertGreater(evaluate_model(model, test, trainval, 10), 0.5)

    def test_early_stopping(s):
        trainval, test = split_per_user(block_dataset(2), SplitSpec(0.34, 0))
        train, validation = split_per_user(trainval, SplitSpec(0.25, 1))
        model = train_bpr(train, validation, replace(s.cfg, epochs=40, patience=2))
        s.assertEqual(model.n_items, 20)
        s.assertTrue(np.isfinite(model.user_factors).all())

    def test_bad_inputs(s):
        d = block_dataset(3)
        other = InteractionDataset.from_profiles(list(d.users), list(d.items)[:-1], [[0]] * d.n_users)
        with s.assertRaises(DimensionError):
            train_bpr(d, other, s.cfg)
        with s.assertRaises(ConfigError):
            train_bpr(d.with_pairs(d.user_idx[d.user_idx > 0], d.item_idx[d.user_idx > 0]),
                          d.with_pairs(np.array([0]), np.array([0])), s.cfg)
        with s.assertRaises(ConfigError):
            train_bpr(empty_like(d), empty_like(d), s.cfg)

    def test_divergence(s):
        d = block_dataset(4)
        with s.assertRaises(DivergenceError):
            train_bpr(d, empty_like(d), TrainConfig(epochs=3, learning_rate=1e200, batch_size=16, seed=1, dim=4))
