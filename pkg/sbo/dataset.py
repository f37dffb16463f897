"""
implicit-feedback interaction datasets and binary attribute partitions

- **InteractionDataset** is an immutable set of (user, item) index pairs over two ordered
    catalogs of external identifiers; loaded and k-core filtered datasets have tight catalogs
    (every user and item occurs), while derived datasets (slices, obfuscated profiles) keep
    the catalogs of the dataset they were derived from, so that indices stay comparable

- **GroupPartition** assigns every catalog user to one of exactly two groups

- loaders, the k-core filter, the per-user holdout split, the user k-fold split and the
    preference-vector builder are all deterministic functions of (input, seed)

FILE FORMATS
    interactions    header `user_id,item_id[,...]`, extra columns ignored, comma or tab
    attributes      header `user_id,label`
    id maps         header `internal_index,external_id`, one file per catalog, written next
                    to every saved dataset as `<stem>.users.csv` and `<stem>.items.csv`
"""
import logging
import math
import re
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from django.conf import settings
from sklearn.model_selection import KFold

from .errors import (ParseError, EmptyInputError, CoverageError, LabelCardinalityError,
    EmptyCoreError, SplitInfeasibleError, FoldInfeasibleError, DimensionError, EmptyGroupError,
    UnknownGroupError, ConfigError)

logger = logging.getLogger(__name__)

INTERACTION_COLUMNS = ("user_id", "item_id")
ATTRIBUTE_COLUMNS = ("user_id", "label")
IDMAP_COLUMNS = ("internal_index", "external_id")


##############################################################################################
## SUNDRY HELPERS

def as_fraction(value):
    """the decimal a ratio was written as, exactly (0.1 is 1/10, not the nearest double)"""
    return Fraction(str(value))

def fraction_count(fraction, size):
    """floor(fraction * size) in exact arithmetic"""
    return math.floor(as_fraction(fraction) * int(size))

def user_stream(seed, user):
    """
    the random stream dedicated to one user

    the stream only depends on (seed, user index), so users can be processed in any order
    or in parallel without changing each other's draws
    """
    return np.random.default_rng([int(seed), int(user)])

def idmap_paths(path):
    """returns the (users, items) id-map paths that accompany a dataset file"""
    path = Path(path)
    return (path.with_name(path.stem + ".users" + path.suffix),
            path.with_name(path.stem + ".items" + path.suffix))


##############################################################################################
## INTERACTION DATASET

class InteractionDataset():
    """
    immutable set of observed (user, item) pairs

    pairs are stored as two parallel index arrays sorted by (user, item) with duplicates
    removed; the per-user profile X_u is a slice of the item array
    """

    def __init__(self, users, items, user_idx, item_idx):
        self.users = tuple(str(u) for u in users)
        self.items = tuple(str(i) for i in items)
        user_idx = np.asarray(user_idx, dtype=np.int64).ravel()
        item_idx = np.asarray(item_idx, dtype=np.int64).ravel()
        if user_idx.shape != item_idx.shape:
            raise DimensionError("user and item index arrays differ in length")
        if len(user_idx):
            if user_idx.min() < 0 or user_idx.max() >= len(self.users):
                raise DimensionError("user index outside the catalog of {} users".format(len(self.users)))
            if item_idx.min() < 0 or item_idx.max() >= len(self.items):
                raise DimensionError("item index outside the catalog of {} items".format(len(self.items)))

        width = max(len(self.items), 1)
        codes = np.unique(user_idx * width + item_idx)
        self._user_idx = codes // width
        self._item_idx = codes % width
        self._user_idx.flags.writeable = False
        self._item_idx.flags.writeable = False
        self._indptr = np.searchsorted(self._user_idx, np.arange(len(self.users) + 1))
        self._indptr.flags.writeable = False
        self._matrix = None

    ##################################################################
    ## CONSTRUCTORS

    @classmethod
    def from_profiles(cls, users, items, profiles):
        """builds a dataset from one item-index collection per user (in catalog order)"""
        profiles = [np.asarray(p, dtype=np.int64).ravel() for p in profiles]
        if len(profiles) != len(users):
            raise DimensionError("{} profiles for {} users".format(len(profiles), len(users)))
        user_idx = np.repeat(np.arange(len(profiles), dtype=np.int64), [len(p) for p in profiles])
        item_idx = np.concatenate(profiles) if profiles else np.zeros(0, dtype=np.int64)
        return cls(users, items, user_idx, item_idx)

    def with_pairs(self, user_idx, item_idx):
        """a dataset over the same catalogs with different pairs"""
        return InteractionDataset(self.users, self.items, user_idx, item_idx)

    def union(self, other):
        """all pairs of both datasets (catalogs must be identical)"""
        self._check_same_catalogs(other)
        return self.with_pairs(np.concatenate([self._user_idx, other.user_idx]),
                               np.concatenate([self._item_idx, other.item_idx]))

    def _check_same_catalogs(self, other):
        if self.users != other.users or self.items != other.items:
            raise DimensionError("datasets are defined over different catalogs")

    ##################################################################
    ## PROPERTIES

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_items(self):
        return len(self.items)

    @property
    def user_idx(self):
        return self._user_idx

    @property
    def item_idx(self):
        return self._item_idx

    def __len__(self):
        return len(self._user_idx)

    def __eq__(self, other):
        if not isinstance(other, InteractionDataset): return NotImplemented
        return (self.users == other.users and self.items == other.items
                and np.array_equal(self._user_idx, other.user_idx)
                and np.array_equal(self._item_idx, other.item_idx))

    def __repr__(self):
        return "<InteractionDataset users={} items={} interactions={}>".format(
            self.n_users, self.n_items, len(self))

    def profile(self, user):
        """sorted item indices X_u of the given user index"""
        return self._item_idx[self._indptr[user]:self._indptr[user + 1]]

    def profiles(self):
        """list of all profiles, in catalog order"""
        return [self.profile(u) for u in range(self.n_users)]

    def profile_sizes(self):
        return np.diff(self._indptr)

    def item_counts(self):
        return np.bincount(self._item_idx, minlength=self.n_items)

    @property
    def matrix(self):
        """the binary user-item matrix as `scipy.sparse.csr_matrix`"""
        if self._matrix is None:
            data = np.ones(len(self), dtype=np.float32)
            self._matrix = sp.csr_matrix((data, self._item_idx.copy(), self._indptr.copy()),
                                         shape=(self.n_users, self.n_items))
        return self._matrix

    def describe(self):
        """dataset statistics: users, items, interactions, density"""
        cells = self.n_users * self.n_items
        return {
            'users': self.n_users,
            'items': self.n_items,
            'interactions': len(self),
            'density': len(self) / cells if cells else 0.0,
        }


##############################################################################################
## GROUP PARTITION

class GroupPartition():
    """
    assignment of every catalog user to one of two groups

    `labels` is the canonical group order (g, g'); `assignment[u]` is 0 for the first and 1
    for the second label; both groups must be non-empty
    """

    def __init__(self, users, labels, assignment, ignored=0):
        self.users = tuple(str(u) for u in users)
        self.labels = tuple(str(l) for l in labels)
        if len(self.labels) != 2 or self.labels[0] == self.labels[1]:
            raise LabelCardinalityError("a partition needs exactly two distinct labels, got {}".format(self.labels))
        assignment = np.asarray(assignment, dtype=np.int8).ravel()
        if len(assignment) != len(self.users):
            raise DimensionError("{} group tags for {} users".format(len(assignment), len(self.users)))
        if len(assignment) and not np.isin(assignment, (0, 1)).all():
            raise UnknownGroupError("group tags must be 0 or 1")
        self.assignment = assignment
        self.assignment.flags.writeable = False
        self.ignored = ignored
        for g, size in enumerate(self.sizes()):
            if size == 0: raise EmptyGroupError("group '{}' has no users".format(self.labels[g]))

    def __eq__(self, other):
        if not isinstance(other, GroupPartition): return NotImplemented
        return (self.users == other.users and self.labels == other.labels
                and np.array_equal(self.assignment, other.assignment))

    def __repr__(self):
        return "<GroupPartition {}={} {}={}>".format(self.labels[0], self.sizes()[0],
                                                     self.labels[1], self.sizes()[1])

    def sizes(self):
        """(|U_g|, |U_g'|)"""
        counts = np.bincount(self.assignment, minlength=2)
        return int(counts[0]), int(counts[1])

    def index(self, group):
        """position of a group given by label or index"""
        if isinstance(group, str):
            try: return self.labels.index(group)
            except ValueError: raise UnknownGroupError("unknown group label '{}'".format(group))
        if group in (0, 1): return int(group)
        raise UnknownGroupError("unknown group index {}".format(group))

    def group_of(self, user):
        return int(self.assignment[user])

    def label_of(self, user):
        return self.labels[self.assignment[user]]

    def members(self, group):
        return np.flatnonzero(self.assignment == self.index(group))

    def align(self, dataset):
        """the same assignment re-indexed to the user catalog of `dataset`"""
        if dataset.users == self.users: return self
        position = {u: i for i, u in enumerate(self.users)}
        missing = [u for u in dataset.users if u not in position]
        if missing: raise CoverageError(missing)
        assignment = self.assignment[[position[u] for u in dataset.users]]
        return GroupPartition(dataset.users, self.labels, assignment)

    def permuted(self, seed):
        """the same group sizes with the labels randomly shuffled over users"""
        rng = np.random.default_rng(int(seed))
        return GroupPartition(self.users, self.labels, rng.permutation(self.assignment))


##############################################################################################
## READING AND WRITING

def _sniff_delimiter(path):
    """tab if the header row contains a tab, comma otherwise"""
    with open(path, encoding="utf-8") as f:
        header = f.readline()
    return "\t" if "\t" in header else ","

def _read_rows(path, columns, delimiter=None):
    """
    reads a delimited file into a frame holding the requested (string) columns

    the frame index is the physical line number of each data row; blank lines are dropped
    """
    path = Path(path)
    if not path.exists(): raise FileNotFoundError(str(path))
    if delimiter == None: delimiter = settings.SBO_DATASET.get('delimiter')
    if delimiter == None: delimiter = _sniff_delimiter(path)
    try:
        # header=None: the header row fixes the column count, longer rows are parser errors
        raw = pd.read_csv(path, sep=delimiter, header=None, dtype=str, keep_default_na=False,
                          skip_blank_lines=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyInputError("{} is empty".format(path))
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError("wrong number of columns in {}".format(path.name),
                         line=int(match.group(1)) if match else None)

    header = [str(c).strip() for c in raw.iloc[0].fillna("")]
    if tuple(header[:len(columns)]) != tuple(columns):
        raise ParseError("expected header starting with {}, got {}".format(",".join(columns), ",".join(header)), line=1)
    frame = raw.iloc[1:, :len(columns)].copy()
    frame.columns = list(columns)
    frame.index = np.arange(2, len(raw) + 1)
    if frame.empty: raise EmptyInputError("{} has no data rows".format(path))

    missing = frame.isna() | (frame.apply(lambda c: c.astype(str).str.strip()) == "")
    blank = missing.all(axis=1)
    broken = missing.any(axis=1) & ~blank
    if broken.any():
        raise ParseError("missing field(s) in {}".format(path.name), line=int(frame.index[broken][0]))
    frame = frame[~blank].apply(lambda c: c.str.strip())
    if frame.empty: raise EmptyInputError("{} has no data rows".format(path))
    return frame

def load_interactions(path, delimiter=None, users=None, items=None):
    """
    reads an interaction file into an `InteractionDataset`

    catalogs are ordered by first appearance, unless `users` and `items` pin them (then
    rows with unknown ids are an error); repeated (user, item) rows count once
    """
    frame = _read_rows(path, INTERACTION_COLUMNS, delimiter)
    if users is None:
        user_idx, user_catalog = pd.factorize(frame["user_id"])
        user_catalog = list(user_catalog)
    else:
        user_catalog = list(users)
        user_idx = _lookup(frame["user_id"], user_catalog, "user")
    if items is None:
        item_idx, item_catalog = pd.factorize(frame["item_id"])
        item_catalog = list(item_catalog)
    else:
        item_catalog = list(items)
        item_idx = _lookup(frame["item_id"], item_catalog, "item")

    dataset = InteractionDataset(user_catalog, item_catalog, user_idx, item_idx)
    logger.info("loaded %s: %d rows, %d users, %d items, %d distinct interactions",
                Path(path).name, len(frame), dataset.n_users, dataset.n_items, len(dataset))
    return dataset

def _lookup(column, catalog, what):
    """maps external ids to catalog positions; unknown ids raise with their line number"""
    codes = pd.Index(catalog).get_indexer(column)
    unknown = codes < 0
    if unknown.any():
        line = int(column.index[unknown][0])
        raise ParseError("{} '{}' not in catalog".format(what, column[unknown].iloc[0]), line=line)
    return codes

def load_user_attributes(path, dataset, delimiter=None, group_order=None):
    """
    reads the attribute file and builds the partition of `dataset`'s users

    NOTE
    - the canonical group order is `group_order` if given, else the sorted label strings
    - users in the file but not in the dataset are ignored (and counted in a warning)
    """
    frame = _read_rows(path, ATTRIBUTE_COLUMNS, delimiter)
    labels = sorted(frame["label"].unique())
    if len(labels) != 2:
        raise LabelCardinalityError("attribute must take exactly two values, found {}: {}".format(
            len(labels), ", ".join(labels[:10])))
    if group_order is not None:
        group_order = tuple(group_order)
        if sorted(group_order) != labels:
            raise LabelCardinalityError("group order {} does not match labels {}".format(group_order, labels))
        labels = list(group_order)

    conflicting = frame.groupby("user_id")["label"].nunique()
    conflicting = conflicting[conflicting > 1]
    if len(conflicting):
        raise ParseError("conflicting labels for user '{}'".format(conflicting.index[0]))
    label_by_user = dict(zip(frame["user_id"], frame["label"]))

    missing = [u for u in dataset.users if u not in label_by_user]
    if missing: raise CoverageError(missing)
    known = set(dataset.users)
    ignored = sum(1 for u in label_by_user if u not in known)
    if ignored:
        logger.warning("%d labelled user(s) in %s are not in the dataset and were ignored", ignored, Path(path).name)

    assignment = [labels.index(label_by_user[u]) for u in dataset.users]
    if len(set(assignment)) < 2:
        raise LabelCardinalityError("only one label occurs among the dataset users")
    partition = GroupPartition(dataset.users, labels, assignment, ignored=ignored)
    logger.info("loaded %s: %s", Path(path).name, partition)
    return partition

def save_dataset(dataset, path, delimiter=","):
    """writes the interactions (external ids) plus both id-map files; returns the paths"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        "user_id": np.asarray(dataset.users, dtype=object)[dataset.user_idx] if len(dataset) else [],
        "item_id": np.asarray(dataset.items, dtype=object)[dataset.item_idx] if len(dataset) else [],
    })
    frame.to_csv(path, sep=delimiter, index=False, lineterminator="\n")
    users_path, items_path = idmap_paths(path)
    for catalog, target in ((dataset.users, users_path), (dataset.items, items_path)):
        pd.DataFrame({"internal_index": np.arange(len(catalog)), "external_id": list(catalog)}).to_csv(
            target, sep=delimiter, index=False, lineterminator="\n")
    return [path, users_path, items_path]

def read_idmap(path, delimiter=None):
    """reads an id-map file; returns the catalog ordered by internal index"""
    frame = _read_rows(path, IDMAP_COLUMNS, delimiter)
    order = frame["internal_index"].astype(int)
    if sorted(order) != list(range(len(order))):
        raise ParseError("id map {} is not a dense 0-based index".format(Path(path).name))
    return list(frame["external_id"].values[np.argsort(order.values)])

def load_saved_dataset(path, delimiter=None):
    """reads a dataset written by `save_dataset`, catalogs pinned by its id maps"""
    users_path, items_path = idmap_paths(path)
    return load_interactions(path, delimiter, users=read_idmap(users_path, delimiter),
                             items=read_idmap(items_path, delimiter))

def save_partition(partition, path, delimiter=","):
    """writes the attribute file of a partition"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"user_id": list(partition.users),
                  "label": [partition.labels[g] for g in partition.assignment]}).to_csv(
        path, sep=delimiter, index=False, lineterminator="\n")
    return path


##############################################################################################
## FILTERING

def k_core_filter(dataset, k):
    """
    the maximal k-core: users and items with fewer than k interactions are removed until
    every remaining user and item has at least k

    catalogs are compacted, keeping the relative order of the surviving ids
    """
    if k < 1: raise ConfigError("k must be >= 1, got {}".format(k))
    users, items = dataset.user_idx, dataset.item_idx
    keep = np.ones(len(dataset), dtype=bool)
    rounds = 0
    while True:
        user_counts = np.bincount(users[keep], minlength=dataset.n_users)
        item_counts = np.bincount(items[keep], minlength=dataset.n_items)
        drop = keep & ((user_counts[users] < k) | (item_counts[items] < k))
        if not drop.any(): break
        keep &= ~drop
        rounds += 1
    if not keep.any():
        raise EmptyCoreError("the {}-core of {} is empty".format(k, dataset))

    kept_users = np.flatnonzero(user_counts > 0)
    kept_items = np.flatnonzero(item_counts > 0)
    if rounds == 0 and len(kept_users) == dataset.n_users and len(kept_items) == dataset.n_items:
        return dataset

    user_map = np.full(dataset.n_users, -1, dtype=np.int64)
    user_map[kept_users] = np.arange(len(kept_users))
    item_map = np.full(dataset.n_items, -1, dtype=np.int64)
    item_map[kept_items] = np.arange(len(kept_items))
    result = InteractionDataset([dataset.users[u] for u in kept_users], [dataset.items[i] for i in kept_items],
                                user_map[users[keep]], item_map[items[keep]])
    logger.info("%d-core after %d round(s): %d -> %d users, %d -> %d items, %d -> %d interactions",
                k, rounds, dataset.n_users, result.n_users, dataset.n_items, result.n_items, len(dataset), len(result))
    return result


##############################################################################################
## SPLITTING

@dataclass(frozen=True)
class SplitSpec:
    """holdout fraction and seed of a per-user split"""
    fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ConfigError("holdout fraction must lie strictly between 0 and 1, got {}".format(self.fraction))
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("split seed must be a non-negative integer, got {}".format(self.seed))

    @classmethod
    def from_settings(cls, seed_key='test_seed', **overrides):
        """`seed_key` selects which seed of SBO_DATASET to use ('test_seed' or 'valid_seed')"""
        conf = settings.SBO_DATASET
        values = {'fraction': conf['holdout_fraction'], 'seed': conf[seed_key]}
        values.update(overrides)
        return cls(**values)

def holdout_size(fraction, size):
    """floor(fraction * size), at least 1"""
    return max(1, fraction_count(fraction, size))

def split_per_user(dataset, spec):
    """
    samples, per user, floor(fraction * |X_u|) items (at least one) into the holdout

    RETURNS
        (retained, holdout), both over the catalogs of `dataset`
    """
    hold = np.zeros(len(dataset), dtype=bool)
    sizes = dataset.profile_sizes()
    starts = dataset._indptr
    for u in range(dataset.n_users):
        size = int(sizes[u])
        if size == 0: continue
        if size < 2: raise SplitInfeasibleError(dataset.users[u], size)
        chosen = user_stream(spec.seed, u).choice(size, size=holdout_size(spec.fraction, size), replace=False)
        hold[starts[u] + chosen] = True
    users, items = dataset.user_idx, dataset.item_idx
    return dataset.with_pairs(users[~hold], items[~hold]), dataset.with_pairs(users[hold], items[hold])

def kfold_user_split(users, folds, seed):
    """
    shuffles `users` by seed and partitions them into `folds` near-equal test sets

    RETURNS
        list of (train_users, test_users) arrays, one per fold
    """
    users = np.asarray(users)
    if folds < 2: raise ConfigError("need at least 2 folds, got {}".format(folds))
    if len(users) < folds:
        raise FoldInfeasibleError("{} folds requested for {} users".format(folds, len(users)))
    splitter = KFold(n_splits=folds, shuffle=True, random_state=int(seed) % 2**32)
    return [(users[train], users[test]) for train, test in splitter.split(users)]


##############################################################################################
## PREFERENCE VECTORS

def to_preference_vectors(dataset, universe=None):
    """
    the multi-hot preference matrix (users x universe) as `scipy.sparse.csr_matrix`

    `universe` pins the column count to the original item universe
    """
    if universe is None: universe = dataset.n_items
    if len(dataset) and dataset.item_idx.max() >= universe:
        raise DimensionError("item index {} outside a universe of {} items".format(dataset.item_idx.max(), universe))
    data = np.ones(len(dataset), dtype=np.float32)
    return sp.csr_matrix((data, dataset.item_idx.copy(), dataset._indptr.copy()), shape=(dataset.n_users, universe))
