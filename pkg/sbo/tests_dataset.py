"""
testing code for `dataset.py`

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
from django.test import SimpleTestCase

import tempfile
from pathlib import Path

import numpy as np

from .dataset import (InteractionDataset, GroupPartition, SplitSpec, load_interactions, load_user_attributes,
    k_core_filter, split_per_user, kfold_user_split, to_preference_vectors, save_dataset, load_saved_dataset,
    holdout_size, fraction_count)
from .errors import (ParseError, EmptyInputError, CoverageError, LabelCardinalityError, EmptyCoreError,
    SplitInfeasibleError, FoldInfeasibleError, DimensionError, EmptyGroupError, ConfigError)


#########################################################################################
## SUNDRY HELPER FUNCTIONS AND OBJECTS

def random_dataset(seed, n_users=20, n_items=30, density=0.3, min_items=1):
    """random dataset where every user has at least `min_items` items"""
    rng = np.random.default_rng(seed)
    profiles = []
    for _ in range(n_users):
        profile = np.flatnonzero(rng.random(n_items) < density)
        if len(profile) < min_items: profile = rng.choice(n_items, size=min_items, replace=False)
        profiles.append(profile)
    return InteractionDataset.from_profiles(["u{}".format(u) for u in range(n_users)],
                                            ["i{}".format(i) for i in range(n_items)], profiles)

def random_partition(dataset, seed):
    """random two-group partition with both groups non-empty"""
    rng = np.random.default_rng(seed)
    assignment = rng.integers(0, 2, size=dataset.n_users)
    assignment[0], assignment[-1] = 0, 1
    return GroupPartition(dataset.users, ("f", "m"), assignment)

def pairs(dataset):
    """the interactions as a set of external id pairs"""
    return {(dataset.users[u], dataset.items[i]) for u, i in zip(dataset.user_idx, dataset.item_idx)}


class TempDirMixin():
    """gives each test a fresh temporary directory `s.dir`"""

    def setUp(s):
        tmp = tempfile.TemporaryDirectory()
        s.addCleanup(tmp.cleanup)
        s.dir = Path(tmp.name)

    def write(s, name, text):
        path = s.dir / name
        path.write_text(text, encoding="utf-8")
        return path


#########################################################################################
## LOAD INTERACTIONS

class LoadInteractionsTest(TempDirMixin, SimpleTestCase):

    def test_read_back(s):
        """three rows, two users, two items"""
        d = load_interactions(s.write("a.csv", "user_id,item_id\na,x\na,y\nb,x\n"))
        s.assertEqual(d.n_users, 2)
        s.assertEqual(d.n_items, 2)
        s.assertEqual(len(d), 3)
        s.assertEqual(pairs(d), {("a", "x"), ("a", "y"), ("b", "x")})

    def test_duplicates(s):
        """a repeated row counts once"""
        d = load_interactions(s.write("a.csv", "user_id,item_id\na,x\na,x\nb,x\n"))
        s.assertEqual(len(d), 2)

    def test_first_appearance_order(s):
        d = load_interactions(s.write("a.csv", "user_id,item_id\nb,y\na,x\nb,x\n"))
        s.assertEqual(d.users, ("b", "a"))
        s.assertEqual(d.items, ("y", "x"))

    def test_tab_and_extra_columns(s):
        """tab is sniffed from the header; ratings and timestamps are ignored"""
        d = load_interactions(s.write("a.tsv", "user_id\titem_id\trating\tts\na\tx\t5\t1\nb\ty\t1\t2\n"))
        s.assertEqual(pairs(d), {("a", "x"), ("b", "y")})

    def test_forced_delimiter(s):
        d = load_interactions(s.write("a.txt", "user_id;item_id\na;x\n"), delimiter=";")
        s.assertEqual(pairs(d), {("a", "x")})

    def test_only_comma_or_tab_detected(s):
        """other delimiters must be given explicitly"""
        with s.assertRaises(ParseError) as ctx:
            load_interactions(s.write("a.txt", "user_id;item_id\na;x\n"))
        s.assertEqual(ctx.exception.line, 1)

    def test_blank_lines(s):
        d = load_interactions(s.write("a.csv", "user_id,item_id\na,x\n\nb,y\n"))
        s.assertEqual(len(d), 2)

    def test_bad_header(s):
        with s.assertRaises(ParseError) as ctx:
            load_interactions(s.write("a.csv", "user,item\na,x\n"))
        s.assertEqual(ctx.exception.line, 1)

    def test_missing_field(s):
        """the parse error names the physical line"""
        with s.assertRaises(ParseError) as ctx:
            load_interactions(s.write("a.csv", "user_id,item_id\na,x\nb,\n"))
        s.assertEqual(ctx.exception.line, 3)

    def test_too_many_fields(s):
        with s.assertRaises(ParseError):
            load_interactions(s.write("a.csv", "user_id,item_id\na,x\nb,y,z\n"))

    def test_empty(s):
        with s.assertRaises(EmptyInputError):
            load_interactions(s.write("a.csv", ""))
        with s.assertRaises(EmptyInputError):
            load_interactions(s.write("b.csv", "user_id,item_id\n"))

    def test_missing_file(s):
        with s.assertRaises(FileNotFoundError):
            load_interactions(s.dir / "nope.csv")


#########################################################################################
## LOAD USER ATTRIBUTES

class LoadAttributesTest(TempDirMixin, SimpleTestCase):

    def setUp(s):
        super().setUp()
        s.dataset = load_interactions(s.write("d.csv", "user_id,item_id\na,x\nb,x\nc,y\nd,y\n"))

    def test_sizes(s):
        """4 users labelled m, m, f, f"""
        p = load_user_attributes(s.write("l.csv", "user_id,label\na,m\nb,m\nc,f\nd,f\n"), s.dataset)
        s.assertEqual(p.labels, ("f", "m"))
        s.assertEqual(p.sizes(), (2, 2))
        s.assertEqual(p.label_of(0), "m")

    def test_group_order(s):
        p = load_user_attributes(s.write("l.csv", "user_id,label\na,m\nb,m\nc,f\nd,f\n"), s.dataset,
                                 group_order=("m", "f"))
        s.assertEqual(p.labels, ("m", "f"))
        s.assertEqual(p.group_of(0), 0)

    def test_coverage(s):
        """an unlabelled user is named in the error"""
        with s.assertRaises(CoverageError) as ctx:
            load_user_attributes(s.write("l.csv", "user_id,label\na,m\nb,m\nc,f\n"), s.dataset)
        s.assertEqual(ctx.exception.missing, ["d"])

    def test_cardinality(s):
        with s.assertRaises(LabelCardinalityError):
            load_user_attributes(s.write("l.csv", "user_id,label\na,m\nb,m\nc,f\nd,x\n"), s.dataset)

    def test_conflicting_labels(s):
        with s.assertRaises(ParseError):
            load_user_attributes(s.write("l.csv", "user_id,label\na,m\na,f\nb,m\nc,f\nd,f\n"), s.dataset)

    def test_extra_users_ignored(s):
        p = load_user_attributes(s.write("l.csv", "user_id,label\na,m\nb,m\nc,f\nd,f\ne,f\n"), s.dataset)
        s.assertEqual(p.ignored, 1)
        s.assertEqual(p.users, s.dataset.users)


#########################################################################################
## DATASET AND PARTITION OBJECTS

class ObjectsTest(TempDirMixin, SimpleTestCase):

    def test_index_range(s):
        with s.assertRaises(DimensionError):
            InteractionDataset(["a"], ["x"], [0], [1])

    def test_profiles(s):
        d = InteractionDataset.from_profiles(["a", "b"], ["x", "y", "z"], [[2, 0, 2], [1]])
        s.assertEqual(list(d.profile(0)), [0, 2])
        s.assertEqual(list(d.profile_sizes()), [2, 1])
        s.assertEqual(d.describe()['density'], 3 / 6)

    def test_empty_group(s):
        with s.assertRaises(EmptyGroupError):
            GroupPartition(["a", "b"], ("f", "m"), [0, 0])

    def test_align(s):
        p = GroupPartition(["a", "b", "c"], ("f", "m"), [0, 1, 1])
        d = InteractionDataset.from_profiles(["c", "a"], ["x"], [[0], [0]])
        s.assertEqual(list(p.align(d).assignment), [1, 0])
        with s.assertRaises(CoverageError):
            p.align(InteractionDataset.from_profiles(["z"], ["x"], [[0]]))

    def test_permuted(s):
        p = random_partition(random_dataset(1), 1)
        q = p.permuted(5)
        s.assertEqual(p.sizes(), q.sizes())
        s.assertEqual(q, p.permuted(5))

    def test_save_and_reload(s):
        """a saved dataset comes back with its catalogs, including items without interactions"""
        d = InteractionDataset.from_profiles(["a", "b"], ["x", "y", "z"], [[0, 1], [1]])
        written = save_dataset(d, s.dir / "out" / "d.csv")
        s.assertEqual([p.name for p in written], ["d.csv", "d.users.csv", "d.items.csv"])
        s.assertEqual(load_saved_dataset(s.dir / "out" / "d.csv"), d)


#########################################################################################
## K-CORE

def kcore_oracle(dataset, k):
    """repeated full scans deleting users and items below k"""
    edges = pairs(dataset)
    while True:
        users, items = {}, {}
        for u, i in edges:
            users[u] = users.get(u, 0) + 1
            items[i] = items.get(i, 0) + 1
        keep = {(u, i) for u, i in edges if users[u] >= k and items[i] >= k}
        if keep == edges: return edges
        edges = keep

class KCoreTest(SimpleTestCase):

    def test_fixed_point(s):
        """a complete 5x5 block is its own 5-core"""
        d = InteractionDataset.from_profiles(list("abcde"), list("vwxyz"), [range(5)] * 5)
        s.assertIs(k_core_filter(d, 5), d)

    def test_star(s):
        d = InteractionDataset.from_profiles(["a"], list("vwxyz"), [range(5)])
        with s.assertRaises(EmptyCoreError):
            k_core_filter(d, 2)

    def test_oracle(s):
        """random 30 x 40 datasets against the brute-force deletion oracle"""
        for seed in range(10):
            d = random_dataset(seed, 30, 40, density=0.15)
            expected = kcore_oracle(d, 3)
            if not expected:
                with s.assertRaises(EmptyCoreError): k_core_filter(d, 3)
                continue
            core = k_core_filter(d, 3)
            s.assertEqual(pairs(core), expected)
            s.assertTrue((core.profile_sizes() >= 3).all())
            s.assertTrue((core.item_counts() >= 3).all())
            s.assertEqual(k_core_filter(core, 3), core)

    def test_order_kept(s):
        d = InteractionDataset.from_profiles(["a", "b", "c"], ["x", "y", "z"], [[0, 2], [0, 2], [1]])
        core = k_core_filter(d, 2)
        s.assertEqual(core.users, ("a", "b"))
        s.assertEqual(core.items, ("x", "z"))

    def test_bad_k(s):
        with s.assertRaises(ConfigError):
            k_core_filter(random_dataset(0), 0)


#########################################################################################
## SPLITS

class SplitTest(SimpleTestCase):

    def test_sizes(s):
        """10 items -> 2 in the holdout, 4 items -> 1 (minimum rule)"""
        d = InteractionDataset.from_profiles(["a", "b"], ["i{}".format(i) for i in range(10)], [range(10), range(4)])
        retained, holdout = split_per_user(d, SplitSpec(0.2, 3))
        s.assertEqual(list(holdout.profile_sizes()), [2, 1])
        s.assertEqual(list(retained.profile_sizes()), [8, 3])
        s.assertEqual(holdout_size(0.2, 4), 1)
        s.assertEqual(fraction_count(0.1, 30), 3)

    def test_fraction_count_exact(s):
        """ratios are taken as the decimals they were written as"""
        s.assertEqual(fraction_count(0.29, 100), 29)
        s.assertEqual(fraction_count(0.7, 10), 7)
        s.assertEqual(fraction_count(0.4999999999999, 2), 0)
        s.assertEqual(fraction_count(np.float64(0.3), np.int64(20)), 6)
        s.assertEqual(holdout_size(0.4999999999999, 2), 1)

    def test_partition_and_determinism(s):
        d = random_dataset(4, 25, 30, density=0.4, min_items=2)
        retained, holdout = split_per_user(d, SplitSpec(0.2, 11))
        s.assertFalse(pairs(retained) & pairs(holdout))
        s.assertEqual(pairs(retained) | pairs(holdout), pairs(d))
        again = split_per_user(d, SplitSpec(0.2, 11))
        s.assertEqual(again[0], retained)
        s.assertEqual(again[1], holdout)

    def test_infeasible(s):
        d = InteractionDataset.from_profiles(["a", "b"], ["x", "y"], [[0, 1], [1]])
        with s.assertRaises(SplitInfeasibleError) as ctx:
            split_per_user(d, SplitSpec(0.2, 0))
        s.assertEqual(ctx.exception.user, "b")

    def test_spec(s):
        with s.assertRaises(ConfigError): SplitSpec(1.0, 0)
        with s.assertRaises(ConfigError): SplitSpec(0.0, 0)
        with s.assertRaises(ConfigError): SplitSpec(0.2, -1)
        s.assertEqual(SplitSpec.from_settings().fraction, 0.2)

    def test_kfold(s):
        folds = kfold_user_split(np.arange(10), 5, 7)
        s.assertEqual([len(te) for _, te in folds], [2] * 5)
        s.assertEqual(sorted(np.concatenate([te for _, te in folds])), list(range(10)))
        for train, test in folds:
            s.assertEqual(sorted(np.concatenate([train, test])), list(range(10)))

        folds = kfold_user_split(np.arange(11), 5, 7)
        s.assertEqual(sorted(len(te) for _, te in folds), [2, 2, 2, 2, 3])
        again = kfold_user_split(np.arange(11), 5, 7)
        for (a, b), (c, e) in zip(folds, again):
            s.assertEqual(list(a), list(c))
            s.assertEqual(list(b), list(e))

    def test_kfold_errors(s):
        with s.assertRaises(FoldInfeasibleError): kfold_user_split(np.arange(3), 5, 0)
        with s.assertRaises(ConfigError): kfold_user_split(np.arange(3), 1, 0)


#########################################################################################
## PREFERENCE VECTORS

class PreferenceVectorTest(SimpleTestCase):

    def test_vectors(s):
        d = InteractionDataset.from_profiles(["a", "b"], ["w", "x", "y", "z"], [[0, 2], []])
        X = to_preference_vectors(d, 4).toarray()
        s.assertEqual(X[0].tolist(), [1, 0, 1, 0])
        s.assertEqual(X[1].tolist(), [0, 0, 0, 0])
        s.assertEqual(to_preference_vectors(d, 6).shape, (2, 6))

    def test_row_sums(s):
        d = random_dataset(9)
        X = to_preference_vectors(d)
        s.assertEqual(np.asarray(X.sum(axis=1)).ravel().tolist(), d.profile_sizes().tolist())

    def test_universe(s):
        d = InteractionDataset.from_profiles(["a"], ["w", "x", "y"], [[2]])
        with s.assertRaises(DimensionError):
            to_preference_vectors(d, 2)
