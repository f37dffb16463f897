"""
stereotypicality scores

- item group inclination      igi(v, g) = |{u in U_g : (u, v) observed}| / |U_g|
- item stereotypicality       ister(v) = (igi(v, g) - igi(v, g')) / max(igi(v, g), igi(v, g'))
                              with ister(v) = 0 when neither group consumed v; the sign
                              convention follows the partition's group order (g, g')
- user stereotypicality       S_u = mean or median of the group-signed ister over X_u
- threshold                   gamma = mean (or median) of S_u over all users of both groups

the table and gamma are computed once on the data before obfuscation and then frozen
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import EmptyGroupError, UndefinedScoreError, UnknownGroupError, ConfigError

logger = logging.getLogger(__name__)

AGGREGATORS = ("mean", "median")
GAMMA_MODES = ("mean", "median")


##############################################################################################
## STEREOTYPE TABLE

@dataclass(frozen=True)
class StereotypeTable:
    """
    per-item inclination (n_items x 2) and signed stereotypicality for the pair (g, g')

    `shared` flags the items consumed by at least one user of each group
    """
    igi: np.ndarray
    ister: np.ndarray
    labels: tuple
    shared: np.ndarray

    @classmethod
    def from_dataset(cls, dataset, partition):
        igi = compute_igi(dataset, partition)
        return cls(igi=igi, ister=compute_ister(igi), labels=tuple(partition.labels),
                   shared=(igi > 0).all(axis=1))

    @property
    def n_items(self):
        return len(self.ister)

    def signed(self, group):
        """ister oriented so that positive means stereotypical for `group` (index 0 or 1)"""
        if group == 0: return self.ister
        if group == 1: return -self.ister
        raise UnknownGroupError("unknown group index {}".format(group))

    def summary(self):
        """summary statistics of the ister distribution"""
        values = self.ister
        return {
            'items': self.n_items,
            'shared_items': int(self.shared.sum()),
            'mean': float(values.mean()) if len(values) else 0.0,
            'std': float(values.std()) if len(values) else 0.0,
            'min': float(values.min()) if len(values) else 0.0,
            'max': float(values.max()) if len(values) else 0.0,
            'extreme_share': float((np.abs(values) == 1.0).mean()) if len(values) else 0.0,
        }


@dataclass(frozen=True)
class UserStereotypeProfile:
    """the stereotypicality S_u of one user"""
    score: float
    aggregator: str
    group: str


@dataclass(frozen=True)
class ThresholdPolicy:
    """
    how S_u and gamma are formed: `aggregator` builds S_u from item scores, `mode` builds
    gamma from all S_u
    """
    aggregator: str = "mean"
    mode: str = "mean"

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ConfigError("aggregator must be one of {}, got '{}'".format(AGGREGATORS, self.aggregator))
        if self.mode not in GAMMA_MODES:
            raise ConfigError("gamma mode must be one of {}, got '{}'".format(GAMMA_MODES, self.mode))

    def gamma(self, scores):
        return compute_gamma(scores, self.mode)


##############################################################################################
## ITEM SCORES

def compute_igi(dataset, partition):
    """
    the inclination table, shape (n_items, 2), column order = partition group order
    """
    partition = partition.align(dataset)
    sizes = partition.sizes()
    for g, size in enumerate(sizes):
        if size == 0: raise EmptyGroupError("group '{}' is empty, inclination undefined".format(partition.labels[g]))
    groups = partition.assignment[dataset.user_idx]
    igi = np.empty((dataset.n_items, 2), dtype=np.float64)
    for g in (0, 1):
        igi[:, g] = np.bincount(dataset.item_idx[groups == g], minlength=dataset.n_items) / sizes[g]
    return igi

def compute_ister(igi, pair=(0, 1)):
    """
    signed stereotypicality for the ordered column pair; exactly antisymmetric in the pair
    """
    a = igi[:, pair[0]]
    b = igi[:, pair[1]]
    top = np.maximum(a, b)
    ister = np.zeros(len(a), dtype=np.float64)
    np.divide(a - b, top, out=ister, where=top > 0)
    return ister


##############################################################################################
## USER SCORES AND THRESHOLD

def user_score(profile, signed_scores, aggregator="mean"):
    """S_u: mean or median of `signed_scores` over the items of `profile`"""
    if aggregator not in AGGREGATORS:
        raise ConfigError("aggregator must be one of {}, got '{}'".format(AGGREGATORS, aggregator))
    values = np.asarray(signed_scores)[np.asarray(profile, dtype=np.int64)]
    if len(values) == 0: raise UndefinedScoreError("stereotypicality of an empty profile is undefined")
    if aggregator == "median": return float(np.median(values))
    return float(np.mean(values))

def user_scores(dataset, partition, table, aggregator="mean"):
    """S_u for every catalog user, each against the scores signed for their own group"""
    partition = partition.align(dataset)
    signed = (table.signed(0), table.signed(1))
    return np.array([user_score(dataset.profile(u), signed[partition.group_of(u)], aggregator)
                     for u in range(dataset.n_users)], dtype=np.float64)

def user_profile(dataset, partition, table, user, aggregator="mean"):
    """the `UserStereotypeProfile` of one user index"""
    partition = partition.align(dataset)
    group = partition.group_of(user)
    return UserStereotypeProfile(user_score(dataset.profile(user), table.signed(group), aggregator),
                                 aggregator, partition.labels[group])

def compute_gamma(scores, mode="mean"):
    """
    the selection threshold over all users' scores; users with S_u >= gamma are selected

    NOTE
    the mean is summed exactly and clamped into [min, max], so equal scores give gamma equal
    to that score and every user is selected
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) == 0: raise UndefinedScoreError("threshold of an empty score list is undefined")
    if mode == "median": return float(np.median(scores))
    if mode != "mean": raise ConfigError("gamma mode must be one of {}, got '{}'".format(GAMMA_MODES, mode))
    gamma = math.fsum(scores) / len(scores)
    return float(min(max(gamma, scores.min()), scores.max()))


##############################################################################################
## DISTRIBUTION FILES

HISTOGRAM_FILE = "ister_histogram.csv"
SERIES_FILE = "user_stereotypicality.csv"

def ister_histogram(table, bins=20, shared_only=False):
    """
    bin counts of ister over [-1, 1]; the last bin includes its upper edge

    RETURNS
        (counts, edges)
    """
    values = table.ister[table.shared] if shared_only else table.ister
    return np.histogram(values, bins=bins, range=(-1.0, 1.0))

def emit_distributions(table, scores, path, gamma=None, partition=None, bins=20, shared_only=False, delimiter=","):
    """
    writes the ister histogram and the descending S_u series (with the gamma line)

    RETURNS
        list of written paths
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    scores = np.asarray(scores, dtype=np.float64)
    if gamma == None: gamma = compute_gamma(scores)

    counts, edges = ister_histogram(table, bins, shared_only)
    histogram = pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})
    histogram.to_csv(path / HISTOGRAM_FILE, sep=delimiter, index=False, lineterminator="\n")

    order = np.argsort(-scores, kind="stable")
    series = pd.DataFrame({
        "rank": np.arange(1, len(scores) + 1),
        "user_id": [partition.users[u] for u in order] if partition is not None else order,
        "group": [partition.label_of(u) for u in order] if partition is not None else "",
        "score": scores[order],
        "gamma": gamma,
    })
    series.to_csv(path / SERIES_FILE, sep=delimiter, index=False, lineterminator="\n")
    logger.info("wrote stereotypicality distributions for %d items and %d users to %s",
                int(counts.sum()), len(scores), path)
    return [path / HISTOGRAM_FILE, path / SERIES_FILE]
