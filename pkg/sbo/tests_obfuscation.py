"""
testing code for `obfuscation.py`

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
from django.test import SimpleTestCase

import math
from fractions import Fraction

import numpy as np
import pandas as pd

from .dataset import InteractionDataset, GroupPartition, user_stream, load_saved_dataset
from .errors import ConfigError, ProfileEmptiedError, UnknownGroupError
from .obfuscation import (ObfuscationConfig, Candidates, Strategy, Sampler, build_mu, subsample, bernoulli_select,
    topstereo_select, random_select, obfuscate_profile, obfuscate_user, obfuscate_dataset, split_budget, AUDIT_COLUMNS)
from .stereotype import StereotypeTable, user_score, user_scores
from .tests_dataset import random_dataset, random_partition, TempDirMixin


#########################################################################################
## SUNDRY HELPER FUNCTIONS AND OBJECTS

def algorithm_oracle(dataset, partition, config):
    """
    straight-line rendition of the obfuscation loop: scores and threshold from scratch, ranking
    with sorted(), one RNG stream per (seed, user), trials for imputation candidates before removal ones
    """
    ister = StereotypeTable.from_dataset(dataset, partition).ister.tolist()
    n_items = dataset.n_items
    profiles = [sorted(set(dataset.profile(u).tolist())) for u in range(dataset.n_users)]
    mus = []
    scores = []
    for u, profile in enumerate(profiles):
        mu = [ister[v] if partition.assignment[u] == 0 else -ister[v] for v in range(n_items)]
        values = np.array([mu[v] for v in profile])
        scores.append(float(np.median(values)) if config.aggregator == "median" else float(np.mean(values)))
        mus.append(mu)
    gamma = float(np.median(scores)) if config.gamma_mode == "median" else math.fsum(scores) / len(scores)
    gamma = min(max(gamma, min(scores)), max(scores))

    result = []
    for u, profile in enumerate(profiles):
        if scores[u] < gamma:
            result.append(profile)
            continue
        mu = mus[u]
        n = math.floor(Fraction(str(config.ratio)) * len(profile))
        if config.strategy == "imputation": n_imp, n_rem = n, 0
        elif config.strategy == "removal": n_imp, n_rem = 0, n
        else:
            n_imp = min(n, math.ceil(Fraction(str(config.omega)) * n))
            n_rem = n - n_imp
        unseen = [v for v in range(n_items) if v not in profile]
        rng = np.random.default_rng([config.seed, u])

        if config.sampler == "random":
            imp = sorted(rng.choice(np.array(unseen), size=min(n_imp, len(unseen)), replace=False).tolist()) \
                if min(n_imp, len(unseen)) else []
            rem = sorted(rng.choice(np.array(profile), size=min(n_rem, len(profile)), replace=False).tolist()) \
                if min(n_rem, len(profile)) else []
        else:
            imp = sorted(sorted(unseen, key=lambda v: (mu[v], v))[:n_imp])
            rem = sorted(sorted(profile, key=lambda v: (-mu[v], v))[:n_rem])
            if config.sampler == "sbsampling":
                draws = rng.random(len(imp))
                imp = [v for v, d in zip(imp, draws) if d < abs(mu[v])]
                draws = rng.random(len(rem))
                rem = [v for v, d in zip(rem, draws) if d < abs(mu[v])]

        rewritten = sorted((set(profile) - set(rem)) | set(imp))
        result.append(rewritten if rewritten else profile)
    return result

def toy_pair():
    """a (f) consumes x, b (m) consumes y: both score 1.0, so both are selected"""
    d = InteractionDataset.from_profiles(["a", "b"], ["x", "y", "z"], [[0], [1]])
    p = GroupPartition(["a", "b"], ("f", "m"), [0, 1])
    return d, p

def balanced_pair(n):
    """
    n users per group; a_i consumes every x and y_i, b_i every y and x_i

    every item scores 1 - 1/n for its group, every user 1 - 1/n on n items and -(1 - 1/n)
    on one; with n a power of two all users score bit-identically
    """
    users = ["a{}".format(i) for i in range(n)] + ["b{}".format(i) for i in range(n)]
    items = ["x{}".format(i) for i in range(n)] + ["y{}".format(i) for i in range(n)]
    profiles = [list(range(n)) + [n + i] for i in range(n)] + [[i] + list(range(n, 2 * n)) for i in range(n)]
    d = InteractionDataset.from_profiles(users, items, profiles)
    p = GroupPartition(users, ("f", "m"), [0] * n + [1] * n)
    return d, p


#########################################################################################
## CONFIGURATION

class ConfigTest(SimpleTestCase):

    def test_validation(s):
        with s.assertRaises(ConfigError): ObfuscationConfig(ratio=0.0)
        with s.assertRaises(ConfigError): ObfuscationConfig(ratio=1.5)
        with s.assertRaises(ConfigError): ObfuscationConfig(omega=1.5)
        with s.assertRaises(ConfigError): ObfuscationConfig(strategy="shuffle")
        with s.assertRaises(ConfigError): ObfuscationConfig(sampler="best")
        with s.assertRaises(ConfigError): ObfuscationConfig(aggregator="mode")
        with s.assertRaises(ConfigError): ObfuscationConfig(seed=-1)

    def test_enums_and_label(s):
        cfg = ObfuscationConfig("weighted", "topstereo", 0.05, aggregator="median")
        s.assertIs(cfg.strategy, Strategy.WEIGHTED)
        s.assertIs(cfg.sampler, Sampler.TOPSTEREO)
        s.assertEqual(cfg.label, "weighted-topstereo-rho0.05-median")

    def test_from_settings(s):
        cfg = ObfuscationConfig.from_settings(ratio=0.05)
        s.assertEqual(cfg.ratio, 0.05)
        s.assertIs(cfg.strategy, Strategy.REMOVAL)

    def test_split_budget(s):
        s.assertEqual(split_budget(5, "weighted", 0.5), (3, 2))
        s.assertEqual(split_budget(4, "weighted", 0.5), (2, 2))
        s.assertEqual(split_budget(5, "removal", 0.5), (0, 5))
        s.assertEqual(split_budget(5, "imputation", 0.5), (5, 0))
        s.assertEqual(split_budget(5, "weighted", 0.0), (0, 5))
        s.assertEqual(split_budget(5, "weighted", 1.0), (5, 0))
        s.assertEqual(split_budget(2, "weighted", 0.5000000000001), (2, 0))
        s.assertEqual(split_budget(10, "weighted", 0.3), (3, 7))


#########################################################################################
## ALGORITHM STEPS

class StepTest(SimpleTestCase):

    def test_build_mu(s):
        d, p = toy_pair()
        table = StereotypeTable.from_dataset(d, p)
        s.assertTrue(np.array_equal(build_mu(table, "f"), table.ister))
        s.assertTrue(np.array_equal(build_mu(table, "m"), -table.ister))
        s.assertTrue((build_mu(table, 0) + build_mu(table, 1) == 0).all())
        with s.assertRaises(UnknownGroupError):
            build_mu(table, "x")

    def test_subsample_removal(s):
        """rho 0.1 of 25 items: the two highest-scoring profile items"""
        mu = np.linspace(-1, 1, 40)
        profile = np.arange(10, 35)
        c = subsample(40, profile, 0.1, "removal", mu)
        s.assertEqual(c.remove.tolist(), [33, 34])
        s.assertEqual(len(c.impute), 0)

    def test_subsample_imputation_not_sign_gated(s):
        mu = np.array([0.5, 0.9, 0.2, 0.3, 0.8, 0.1, 0.4, 0.6, 0.7, 0.05])
        c = subsample(10, [1, 4, 8, 2, 3], 0.4, "imputation", mu)
        s.assertEqual(c.impute.tolist(), [5, 9])

    def test_subsample_weighted(s):
        """omega 0.5, n = 5: three imputation and two removal candidates"""
        mu = np.linspace(-1, 1, 20)
        c = subsample(20, np.arange(10, 20), 0.5, "weighted", mu, omega=0.5)
        s.assertEqual(c.impute.tolist(), [0, 1, 2])
        s.assertEqual(c.remove.tolist(), [18, 19])

    def test_subsample_ties_and_pool(s):
        mu = np.zeros(6)
        s.assertEqual(subsample(6, [0, 1, 2, 3], 0.5, "removal", mu).remove.tolist(), [0, 1])
        s.assertEqual(subsample(6, [0, 1, 2, 3, 4], 0.5, "imputation", mu).impute.tolist(), [5])
        s.assertEqual(len(subsample(6, [0, 1, 2], 0.1, "removal", mu)), 0)
        with s.assertRaises(ProfileEmptiedError):
            subsample(6, [], 0.5, "removal", mu)

    def test_bernoulli_extremes(s):
        mu = np.array([1.0, -1.0, 0.0, 0.0])
        for seed in range(20):
            chosen = bernoulli_select(Candidates(np.array([1, 3]), np.array([0, 2])), mu, user_stream(seed, 0))
            s.assertEqual(chosen.impute.tolist(), [1])
            s.assertEqual(chosen.remove.tolist(), [0])

    def test_bernoulli_calibration(s):
        """10 000 seeded trials per candidate, within 0.02 of |M_u|"""
        mu = np.array([0.1, -0.5, 0.9, 0.7])
        candidates = Candidates(np.zeros(0, dtype=np.int64), np.array([0, 1, 2, 3]))
        hits = np.zeros(4)
        trials = 10000
        for t in range(trials):
            hits[bernoulli_select(candidates, mu, user_stream(123, t)).remove] += 1
        np.testing.assert_allclose(hits / trials, np.abs(mu), atol=0.02)

    def test_topstereo(s):
        c = Candidates(np.array([4]), np.array([1, 2]))
        s.assertIs(topstereo_select(c), c)
        s.assertEqual(len(topstereo_select(Candidates.empty())), 0)

    def test_random_select(s):
        s.assertEqual(random_select(8, [1, 3, 5], 1.0, "removal", 0.5, user_stream(0, 0)).remove.tolist(), [1, 3, 5])
        s.assertEqual(len(random_select(8, [1, 3, 5], 0.1, "removal", 0.5, user_stream(0, 0))), 0)
        c = random_select(8, [0, 1, 2, 3], 0.5, "imputation", 0.5, user_stream(0, 0))
        s.assertEqual(len(c.impute), 2)
        s.assertFalse(set(c.impute.tolist()) & {0, 1, 2, 3})

    def test_random_uniformity(s):
        """one removal out of four, 10 000 seeded draws"""
        counts = np.zeros(4)
        trials = 10000
        for t in range(trials):
            counts[random_select(10, [0, 1, 2, 3], 0.25, "removal", 0.5, user_stream(77, t)).remove] += 1
        np.testing.assert_allclose(counts / trials, 0.25, atol=0.02)

    def test_obfuscate_profile(s):
        s.assertEqual(obfuscate_profile([1, 2, 3], [3], "removal").tolist(), [1, 2])
        s.assertEqual(obfuscate_profile([1, 2], [5], "imputation").tolist(), [1, 2, 5])
        both = Candidates(np.array([5]), np.array([3]))
        s.assertEqual(obfuscate_profile([1, 2, 3], both, "weighted").tolist(), [1, 2, 5])

    def test_obfuscate_profile_errors(s):
        with s.assertRaises(ValueError): obfuscate_profile([1, 2], [4], "removal")
        with s.assertRaises(ValueError): obfuscate_profile([1, 2], [2], "imputation")
        with s.assertRaises(ConfigError): obfuscate_profile([1, 2], Candidates(np.array([4]), np.array([1])), "removal")
        with s.assertRaises(ProfileEmptiedError): obfuscate_profile([1, 2], [1, 2], "removal")

    def test_destereotyping(s):
        """removing the single top item lowers the mean score of a profile with two distinct scores"""
        rng = np.random.default_rng(8)
        tested = 0
        while tested < 500:
            signed = np.round(rng.uniform(-1, 1, 30), int(rng.integers(1, 4)))
            profile = np.sort(rng.choice(30, size=int(rng.integers(2, 15)), replace=False))
            if len(np.unique(signed[profile])) < 2: continue
            c = subsample(30, profile, 1.0 / len(profile), "removal", signed)
            s.assertEqual(len(c.remove), 1)
            after = obfuscate_profile(profile, c, "removal")
            s.assertLess(user_score(after, signed), user_score(profile, signed))
            tested += 1


#########################################################################################
## DATASET LEVEL

class DatasetTest(TempDirMixin, SimpleTestCase):

    def run_both(s, d, p, cfg, workers=1):
        table = StereotypeTable.from_dataset(d, p)
        return obfuscate_dataset(d, p, table, cfg, workers)

    def test_oracle(s):
        """50 random datasets x 3 strategies x 3 samplers against the straight-line rendition"""
        rng = np.random.default_rng(2)
        for seed in range(50):
            d = random_dataset(seed, int(rng.integers(2, 21)), int(rng.integers(5, 31)), density=0.35)
            p = random_partition(d, seed + 1000)
            table = StereotypeTable.from_dataset(d, p)
            ratio = float(rng.choice([0.2, 0.35, 0.5]))
            for strategy in ("imputation", "removal", "weighted"):
                for sampler in ("sbsampling", "topstereo", "random"):
                    cfg = ObfuscationConfig(strategy, sampler, ratio, 0.5, seed=seed)
                    outcome = obfuscate_dataset(d, p, table, cfg)
                    expected = algorithm_oracle(d, p, cfg)
                    got = [outcome.dataset.profile(u).tolist() for u in range(d.n_users)]
                    s.assertEqual(got, expected, "{} seed {}".format(cfg.label, seed))

    def test_invariants(s):
        """budget, untouched users, set algebra and reruns (including a worker pool)"""
        rng = np.random.default_rng(4)
        strategies = ("imputation", "removal", "weighted")
        samplers = ("sbsampling", "topstereo", "random")
        for run in range(1000):
            d = random_dataset(run, int(rng.integers(2, 12)), int(rng.integers(4, 20)), density=0.4)
            p = random_partition(d, run)
            cfg = ObfuscationConfig(strategies[run % 3], samplers[(run // 3) % 3], float(rng.uniform(0.05, 0.9)),
                                    float(rng.uniform(0, 1)), seed=run)
            outcome = s.run_both(d, p, cfg)
            for a in outcome.audits:
                before = set(d.profile(a.user).tolist())
                after = set(outcome.dataset.profile(a.user).tolist())
                s.assertLessEqual(len(a.chosen), math.floor(Fraction(str(cfg.ratio)) * len(before)))
                s.assertLessEqual(len(a.chosen), len(a.candidates))
                if not a.selected: s.assertEqual(before, after)
                if cfg.strategy == Strategy.REMOVAL: s.assertTrue(after <= before)
                if cfg.strategy == Strategy.IMPUTATION: s.assertTrue(before <= after)
                s.assertEqual(after - before, set(a.added.tolist()))
                s.assertEqual(before - after, set(a.removed.tolist()))
            if run % 50 == 0:
                s.assertEqual(s.run_both(d, p, cfg).dataset, outcome.dataset)
                s.assertEqual(s.run_both(d, p, cfg, workers=3).dataset, outcome.dataset)

    def test_other_users_unaffected(s):
        """adding or dropping an item of one selected user changes no other user's outcome"""
        for seed in range(20):
            d = random_dataset(seed, 12, 25, density=0.35, min_items=2)
            p = random_partition(d, seed)
            table = StereotypeTable.from_dataset(d, p)
            mus = (build_mu(table, 0), build_mu(table, 1))
            for strategy in ("imputation", "removal", "weighted"):
                for sampler in ("sbsampling", "topstereo", "random"):
                    cfg = ObfuscationConfig(strategy, sampler, 0.5, seed=seed)
                    scores = user_scores(d, p, table, cfg.aggregator)
                    gamma = cfg.policy.gamma(scores)
                    def run(profiles):
                        return [obfuscate_user(u, profiles[u], p.group_of(u), scores[u], gamma, mus[p.group_of(u)],
                                               d.n_items, cfg) for u in range(d.n_users)]
                    profiles = [d.profile(u) for u in range(d.n_users)]
                    before = run(profiles)
                    target = next(a.user for _, a in before if a.selected)
                    absent = np.setdiff1d(np.arange(d.n_items), profiles[target])
                    changes = [profiles[target][1:]] + ([np.union1d(profiles[target], absent[:1])] if len(absent) else [])
                    for changed in changes:
                        after = run(profiles[:target] + [changed] + profiles[target + 1:])
                        for (old_profile, old), (new_profile, new) in zip(before, after):
                            if old.user == target: continue
                            msg = "{} seed {} user {}".format(cfg.label, seed, old.user)
                            s.assertEqual(old.selected, new.selected, msg)
                            s.assertEqual(old.chosen.impute.tolist(), new.chosen.impute.tolist(), msg)
                            s.assertEqual(old.chosen.remove.tolist(), new.chosen.remove.tolist(), msg)
                            s.assertEqual(old_profile.tolist(), new_profile.tolist(), msg)

    def test_identity(s):
        """a ratio giving n = 0 for everyone leaves the dataset as it is"""
        d = random_dataset(3, 10, 20, density=0.3)
        p = random_partition(d, 3)
        outcome = s.run_both(d, p, ObfuscationConfig("weighted", "topstereo", 0.01))
        s.assertEqual(outcome.dataset, d)
        s.assertEqual(outcome.summary()['added'] + outcome.summary()['removed'], 0)

    def test_all_equal_selected(s):
        d, p = toy_pair()
        outcome = s.run_both(d, p, ObfuscationConfig("imputation", "topstereo", 1.0))
        s.assertEqual(outcome.gamma, 1.0)
        s.assertEqual(outcome.selected_users().tolist(), [0, 1])
        s.assertEqual(outcome.dataset.profile(0).tolist(), [0, 1])

    def test_equal_scores_all_selected(s):
        """equal scores below 1: the threshold is that score and nobody falls under it"""
        for n, score in ((2, 0.5 / 3), (4, 2.25 / 5), (8, 6.125 / 9)):
            d, p = balanced_pair(n)
            scores = user_scores(d, p, StereotypeTable.from_dataset(d, p))
            s.assertEqual(set(scores.tolist()), {score})
            for gamma_mode in ("mean", "median"):
                outcome = s.run_both(d, p, ObfuscationConfig("removal", "topstereo", 0.5, gamma_mode=gamma_mode))
                s.assertEqual(outcome.gamma, score)
                s.assertEqual(outcome.selected_users().tolist(), list(range(2 * n)))
                s.assertTrue(all(len(a.removed) for a in outcome.audits))

    def test_emptied_profile_warns(s):
        """removing every item is refused for that user and recorded in the audit"""
        d, p = toy_pair()
        with s.assertLogs("sbo.obfuscation", level="WARNING"):
            outcome = s.run_both(d, p, ObfuscationConfig("removal", "topstereo", 1.0))
        s.assertEqual(outcome.dataset, d)
        s.assertTrue(all(a.warning for a in outcome.audits))
        s.assertEqual(outcome.summary()['warnings'], 2)

    def test_save(s):
        d = random_dataset(6, 12, 20, density=0.4)
        p = random_partition(d, 6)
        outcome = s.run_both(d, p, ObfuscationConfig("weighted", "sbsampling", 0.5, seed=9))
        written = outcome.save(s.dir / "obf")
        s.assertEqual(load_saved_dataset(written[0]), outcome.dataset)
        audit = pd.read_csv(written[-1], keep_default_na=False)
        s.assertEqual(tuple(audit.columns), AUDIT_COLUMNS)
        s.assertEqual(len(audit), d.n_users)
        s.assertEqual(int(audit["selected"].sum()), outcome.summary()['selected'])
