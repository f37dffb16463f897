"""
testing code for `stereotype.py`

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
from django.test import SimpleTestCase

import math

import numpy as np
import pandas as pd

from .dataset import InteractionDataset, GroupPartition
from .errors import UndefinedScoreError, UnknownGroupError, ConfigError
from .obfuscation import ObfuscationConfig, obfuscate_user
from .stereotype import (StereotypeTable, ThresholdPolicy, compute_igi, compute_ister, user_score, user_scores,
    user_profile, compute_gamma, ister_histogram, emit_distributions)
from .tests_dataset import random_dataset, random_partition, TempDirMixin


#########################################################################################
## SUNDRY HELPER FUNCTIONS AND OBJECTS

def toy():
    """users a, b (m) and c, d (f); item v consumed by a, b, c; item w by d only"""
    d = InteractionDataset.from_profiles(list("abcd"), ["v", "w", "x"], [[0], [0], [0], [1]])
    p = GroupPartition(list("abcd"), ("m", "f"), [0, 0, 1, 1])
    return d, p

def igi_oracle(dataset, partition):
    out = np.zeros((dataset.n_items, 2))
    for v in range(dataset.n_items):
        for g in (0, 1):
            members = [u for u in range(dataset.n_users) if partition.assignment[u] == g]
            hits = sum(1 for u in members if v in set(dataset.profile(u).tolist()))
            out[v, g] = hits / len(members)
    return out

def ister_oracle(igi):
    out = []
    for a, b in igi:
        out.append(0.0 if max(a, b) == 0 else (a - b) / max(a, b))
    return np.array(out)


#########################################################################################
## ITEM SCORES

class ItemScoreTest(SimpleTestCase):

    def test_igi_toy(s):
        """v is consumed by both m and one f"""
        d, p = toy()
        igi = compute_igi(d, p)
        s.assertEqual(igi[0].tolist(), [1.0, 0.5])
        s.assertEqual(igi[1].tolist(), [0.0, 0.5])
        s.assertEqual(igi[2].tolist(), [0.0, 0.0])

    def test_ister_toy(s):
        d, p = toy()
        table = StereotypeTable.from_dataset(d, p)
        s.assertEqual(table.ister.tolist(), [0.5, -1.0, 0.0])
        s.assertEqual(table.shared.tolist(), [True, False, False])
        s.assertEqual(table.labels, ("m", "f"))

    def test_ister_equal(s):
        s.assertEqual(compute_ister(np.array([[0.4, 0.4]])).tolist(), [0.0])

    def test_oracle(s):
        """200 random datasets against the double-loop oracle"""
        rng = np.random.default_rng(0)
        for seed in range(200):
            d = random_dataset(seed, int(rng.integers(2, 21)), int(rng.integers(1, 31)))
            p = random_partition(d, seed)
            igi = compute_igi(d, p)
            expected = igi_oracle(d, p)
            np.testing.assert_allclose(igi, expected, rtol=0, atol=1e-12)
            np.testing.assert_allclose(compute_ister(igi), ister_oracle(expected), rtol=0, atol=1e-12)

    def test_antisymmetry_and_bounds(s):
        """1000 random inclination tables, with zeros mixed in"""
        rng = np.random.default_rng(1)
        for _ in range(1000):
            igi = rng.random((30, 2))
            igi[rng.random((30, 2)) < 0.25] = 0.0
            ister = compute_ister(igi)
            s.assertTrue(np.array_equal(compute_ister(igi, (1, 0)), -ister))
            s.assertTrue(((igi >= 0) & (igi <= 1)).all())
            s.assertTrue(((ister >= -1) & (ister <= 1)).all())
            one_zero = (igi == 0).sum(axis=1) == 1
            s.assertTrue(np.array_equal(np.abs(ister) == 1.0, one_zero))
            s.assertTrue((ister[(igi == 0).all(axis=1)] == 0).all())

    def test_signed(s):
        d, p = toy()
        table = StereotypeTable.from_dataset(d, p)
        s.assertTrue(np.array_equal(table.signed(1), -table.ister))
        with s.assertRaises(UnknownGroupError):
            table.signed(2)

    def test_summary(s):
        d, p = toy()
        summary = StereotypeTable.from_dataset(d, p).summary()
        s.assertEqual(summary['items'], 3)
        s.assertEqual(summary['shared_items'], 1)
        s.assertAlmostEqual(summary['extreme_share'], 1 / 3)


#########################################################################################
## USER SCORES AND THRESHOLD

class UserScoreTest(SimpleTestCase):

    def test_constant(s):
        scores = np.full(5, 0.3)
        s.assertAlmostEqual(user_score([0, 1, 4], scores, "mean"), 0.3)
        s.assertAlmostEqual(user_score([0, 1, 4], scores, "median"), 0.3)

    def test_examples(s):
        s.assertEqual(user_score([0, 1, 2], np.array([-1.0, 0.0, 1.0]), "mean"), 0.0)
        s.assertAlmostEqual(user_score([0, 1, 2, 3], np.array([0.1, 0.2, 0.9, 1.0]), "median"), 0.55, places=12)

    def test_bounds(s):
        rng = np.random.default_rng(3)
        for _ in range(100):
            signed = rng.uniform(-1, 1, 20)
            profile = rng.choice(20, size=int(rng.integers(1, 20)), replace=False)
            for agg in ("mean", "median"):
                score = user_score(profile, signed, agg)
                s.assertTrue(signed[profile].min() - 1e-12 <= score <= signed[profile].max() + 1e-12)

    def test_empty(s):
        with s.assertRaises(UndefinedScoreError):
            user_score([], np.zeros(3))
        with s.assertRaises(ConfigError):
            user_score([0], np.zeros(3), "mode")

    def test_users_use_own_group(s):
        """a (m) scores +0.5 on v, d (f) scores +1.0 on w"""
        d, p = toy()
        table = StereotypeTable.from_dataset(d, p)
        scores = user_scores(d, p, table)
        s.assertEqual(scores.tolist(), [0.5, 0.5, -0.5, 1.0])
        profile = user_profile(d, p, table, 3)
        s.assertEqual((profile.score, profile.group), (1.0, "f"))

    def test_gamma(s):
        s.assertAlmostEqual(compute_gamma([0.2, 0.4]), 0.3, places=12)
        s.assertEqual(compute_gamma([0.7, 0.7, 0.7]), 0.7)
        s.assertEqual(compute_gamma([0.1, 0.5, 0.2], "median"), 0.2)
        with s.assertRaises(UndefinedScoreError):
            compute_gamma([])

    def test_gamma_equal_scores(s):
        """equal scores give back exactly that score, so every user passes S_u >= gamma"""
        for c in (0.1, 0.2, 0.7, -0.3, 1.0 / 3):
            for n in (1, 2, 3, 7, 10, 1000):
                s.assertEqual(compute_gamma([c] * n), c)
                s.assertEqual(compute_gamma([c] * n, "median"), c)
                s.assertTrue(obfuscate_user(0, np.array([0, 1]), 0, c, compute_gamma([c] * n), np.zeros(4), 4,
                                            ObfuscationConfig("removal", "topstereo", 0.5))[1].selected)

    def test_gamma_within_scores(s):
        rng = np.random.default_rng(8)
        for _ in range(200):
            values = rng.choice([0.1, 0.2, 0.7], int(rng.integers(1, 50)))
            gamma = compute_gamma(values)
            s.assertTrue(values.min() <= gamma <= values.max())

    def test_gamma_random(s):
        rng = np.random.default_rng(5)
        for _ in range(50):
            values = rng.uniform(-1, 1, int(rng.integers(1, 500)))
            s.assertAlmostEqual(compute_gamma(values), math.fsum(values) / len(values), delta=1e-12)

    def test_policy(s):
        s.assertEqual(ThresholdPolicy("median", "mean").gamma([1.0, 2.0, 6.0]), 3.0)
        with s.assertRaises(ConfigError):
            ThresholdPolicy("mean", "mode")


#########################################################################################
## DISTRIBUTION FILES

class DistributionTest(TempDirMixin, SimpleTestCase):

    def table(s, ister):
        ister = np.asarray(ister, dtype=float)
        return StereotypeTable(np.zeros((len(ister), 2)), ister, ("f", "m"), np.ones(len(ister), dtype=bool))

    def test_histogram(s):
        """-1, 0, 1 in two bins: the upper bin includes both edges' items"""
        counts, edges = ister_histogram(s.table([-1.0, 0.0, 1.0]), bins=2)
        s.assertEqual(counts.tolist(), [1, 2])
        s.assertEqual(edges.tolist(), [-1.0, 0.0, 1.0])

    def test_files(s):
        d, p = toy()
        table = StereotypeTable.from_dataset(d, p)
        scores = user_scores(d, p, table)
        hist_path, series_path = emit_distributions(table, scores, s.dir / "dist", partition=p, bins=4)
        hist = pd.read_csv(hist_path)
        s.assertEqual(int(hist["count"].sum()), d.n_items)
        series = pd.read_csv(series_path, dtype={"user_id": str})
        s.assertTrue((np.diff(series["score"].values) <= 0).all())
        s.assertEqual(series["user_id"].tolist()[0], "d")
        s.assertAlmostEqual(series["gamma"].iloc[0], float(np.mean(scores)))
