"""
stereotypicality-based obfuscation of user profiles

for every user:

1. the user's scores M_u are the item stereotypicality signed for the user's own group
2. users with S_u >= gamma are selected, all others are copied unchanged
3. the candidates X_u^rho are sub-sampled: at most floor(rho * |X_u|) items, the most
    stereotypical profile items for removal and the most counter-stereotypical unseen items
    for imputation (weighted splits the budget ceil(omega * n) / rest between the two)
4. the sampler picks C_u from the candidates: `sbsampling` keeps each candidate after an
    independent Bernoulli trial with success rate |M_u(v)|, `topstereo` keeps all of them,
    `random` bypasses the ranking and draws uniformly from the strategy's pool
5. removal deletes C_u from the profile, imputation adds it

random draws come from a per-user stream derived from (seed, user index), so the result does
not depend on processing order or on the number of workers
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from django.conf import settings
from joblib import Parallel, delayed

from .dataset import InteractionDataset, as_fraction, fraction_count, user_stream, save_dataset
from .errors import ProfileEmptiedError, UnknownGroupError, DimensionError, ConfigError
from .stereotype import ThresholdPolicy, user_scores

logger = logging.getLogger(__name__)


##############################################################################################
## CONFIGURATION

class Strategy(str, Enum):
    IMPUTATION = "imputation"
    REMOVAL = "removal"
    WEIGHTED = "weighted"

class Sampler(str, Enum):
    SBSAMPLING = "sbsampling"
    TOPSTEREO = "topstereo"
    RANDOM = "random"


@dataclass(frozen=True)
class ObfuscationConfig:
    """strategy, sampler, ratio rho, weight omega (weighted only), threshold policy, seed"""
    strategy: Strategy = Strategy.REMOVAL
    sampler: Sampler = Sampler.SBSAMPLING
    ratio: float = 0.1
    omega: float = 0.5
    aggregator: str = "mean"
    gamma_mode: str = "mean"
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "strategy", Strategy(self.strategy))
            object.__setattr__(self, "sampler", Sampler(self.sampler))
        except ValueError as e:
            raise ConfigError(str(e))
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError("ratio must lie in (0, 1], got {}".format(self.ratio))
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError("omega must lie in [0, 1], got {}".format(self.omega))
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer, got {}".format(self.seed))
        ThresholdPolicy(self.aggregator, self.gamma_mode)

    @classmethod
    def from_settings(cls, **overrides):
        values = dict(settings.SBO_OBFUSCATION)
        values.update(overrides)
        return cls(**values)

    @property
    def policy(self):
        return ThresholdPolicy(self.aggregator, self.gamma_mode)

    @property
    def label(self):
        return "{}-{}-rho{:g}-{}".format(self.strategy.value, self.sampler.value, self.ratio, self.aggregator)


##############################################################################################
## CANDIDATE SETS

@dataclass(frozen=True)
class Candidates:
    """item indices designated for imputation and for removal, each sorted ascending"""
    impute: np.ndarray
    remove: np.ndarray

    def __len__(self):
        return len(self.impute) + len(self.remove)

    def __iter__(self):
        return iter((self.impute, self.remove))

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    @classmethod
    def of(cls, items, strategy):
        """wraps a plain item collection as the designation of a single-sided strategy"""
        items = np.unique(np.asarray(items, dtype=np.int64))
        none = np.zeros(0, dtype=np.int64)
        strategy = Strategy(strategy)
        if strategy == Strategy.IMPUTATION: return cls(items, none)
        if strategy == Strategy.REMOVAL: return cls(none, items)
        raise ConfigError("weighted obfuscation needs separate imputation and removal items")


def obfuscation_budget(ratio, size):
    """n = floor(rho * |X_u|)"""
    return fraction_count(ratio, size)

def split_budget(n, strategy, omega=0.5):
    """(n_imputation, n_removal) for a budget of n items"""
    strategy = Strategy(strategy)
    if strategy == Strategy.IMPUTATION: return n, 0
    if strategy == Strategy.REMOVAL: return 0, n
    n_impute = min(n, math.ceil(as_fraction(omega) * int(n)))
    return n_impute, n - n_impute


##############################################################################################
## ALGORITHM STEPS

def build_mu(table, group):
    """
    M_u for a user of `group` (label or index): the table's ister for the first group of the
    table's order, its negation for the second
    """
    if isinstance(group, str):
        try: group = table.labels.index(group)
        except ValueError: raise UnknownGroupError("unknown group label '{}'".format(group))
    return table.signed(group)

def _top(pool, keys, n):
    """the n pool items with the smallest keys, ties by ascending item index; sorted"""
    if n <= 0 or len(pool) == 0: return np.zeros(0, dtype=np.int64)
    order = np.lexsort((pool, keys))
    return np.sort(pool[order[:n]])

def _pools(n_items, profile):
    profile = np.unique(np.asarray(profile, dtype=np.int64))
    return np.setdiff1d(np.arange(n_items, dtype=np.int64), profile, assume_unique=True), profile

def subsample(n_items, profile, ratio, strategy, mu, omega=0.5):
    """
    the obfuscation candidates X_u^rho

    removal takes the profile items with the largest M_u, imputation the unseen items with the
    smallest M_u; a pool smaller than its share of the budget is taken entirely
    """
    if len(profile) == 0: raise ProfileEmptiedError("cannot sub-sample an empty profile")
    mu = np.asarray(mu)
    n_impute, n_remove = split_budget(obfuscation_budget(ratio, len(profile)), strategy, omega)
    unseen, seen = _pools(n_items, profile)
    return Candidates(_top(unseen, mu[unseen], n_impute), _top(seen, -mu[seen], n_remove))

def bernoulli_select(candidates, mu, rng):
    """
    keeps each candidate after an independent Bernoulli trial with success rate |M_u(v)|

    trials are drawn from `rng` for the imputation candidates first, then for the removal
    candidates, each in ascending item order
    """
    mu = np.asarray(mu)
    chosen = []
    for items in candidates:
        draws = rng.random(len(items))
        chosen.append(items[draws < np.abs(mu[items])])
    return Candidates(*chosen)

def topstereo_select(candidates):
    """the ranked candidates are the choice"""
    return candidates

def random_select(n_items, profile, ratio, strategy, omega, rng):
    """
    floor(rho * |X_u|) items drawn uniformly without replacement from the strategy's pool
    (imputation draws first)
    """
    if len(profile) == 0: raise ProfileEmptiedError("cannot sample from an empty profile")
    n_impute, n_remove = split_budget(obfuscation_budget(ratio, len(profile)), strategy, omega)
    unseen, seen = _pools(n_items, profile)
    chosen = []
    for pool, n in ((unseen, n_impute), (seen, n_remove)):
        n = min(n, len(pool))
        chosen.append(np.sort(rng.choice(pool, size=n, replace=False)) if n else np.zeros(0, dtype=np.int64))
    return Candidates(*chosen)

def obfuscate_profile(profile, chosen, strategy):
    """
    X~_u: removal deletes the chosen items, imputation adds them, weighted does both

    `chosen` is a `Candidates` pair, or a plain item collection for a single-sided strategy
    """
    strategy = Strategy(strategy)
    if not isinstance(chosen, Candidates): chosen = Candidates.of(chosen, strategy)
    profile = np.unique(np.asarray(profile, dtype=np.int64))
    if strategy == Strategy.IMPUTATION and len(chosen.remove): raise ConfigError("imputation cannot remove items")
    if strategy == Strategy.REMOVAL and len(chosen.impute): raise ConfigError("removal cannot add items")
    if not np.isin(chosen.remove, profile).all(): raise ValueError("removal of items outside the profile")
    if np.isin(chosen.impute, profile).any(): raise ValueError("imputation of items already in the profile")

    result = np.union1d(np.setdiff1d(profile, chosen.remove, assume_unique=True), chosen.impute)
    if len(result) == 0: raise ProfileEmptiedError("obfuscation would remove every item of the profile")
    return result


##############################################################################################
## DATASET LEVEL

@dataclass
class UserAudit:
    """what happened to one user"""
    user: int
    user_id: str
    group: str
    score: float
    selected: bool
    candidates: Candidates = field(default_factory=Candidates.empty)
    chosen: Candidates = field(default_factory=Candidates.empty)
    added: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    removed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    warning: Optional[str] = None


AUDIT_COLUMNS = ("user_id", "group", "score", "selected", "candidates", "chosen",
                 "added", "removed", "added_items", "removed_items", "warning")

@dataclass
class ObfuscationOutcome:
    """the rewritten dataset plus the per-user audit trail"""
    dataset: InteractionDataset
    audits: list
    gamma: float
    config: ObfuscationConfig

    def selected_users(self):
        return np.array([a.user for a in self.audits if a.selected], dtype=np.int64)

    def summary(self):
        selected = sum(1 for a in self.audits if a.selected)
        added = sum(len(a.added) for a in self.audits)
        removed = sum(len(a.removed) for a in self.audits)
        candidates = sum(len(a.candidates) for a in self.audits)
        return {
            'users': len(self.audits),
            'selected': selected,
            'selected_share': selected / len(self.audits) if self.audits else 0.0,
            'gamma': self.gamma,
            'candidates': candidates,
            'added': added,
            'removed': removed,
            'realised_share': (added + removed) / candidates if candidates else 0.0,
            'warnings': sum(1 for a in self.audits if a.warning),
        }

    def audit_frame(self):
        items = self.dataset.items
        rows = []
        for a in self.audits:
            rows.append((a.user_id, a.group, a.score, int(a.selected), len(a.candidates), len(a.chosen),
                         len(a.added), len(a.removed),
                         " ".join(items[i] for i in a.added), " ".join(items[i] for i in a.removed),
                         a.warning or ""))
        return pd.DataFrame(rows, columns=list(AUDIT_COLUMNS))

    def save(self, path, delimiter=","):
        """writes `obfuscated.csv` (with id maps) and `audit.csv` into directory `path`"""
        path = Path(path)
        written = save_dataset(self.dataset, path / "obfuscated.csv", delimiter)
        self.audit_frame().to_csv(path / "audit.csv", sep=delimiter, index=False, lineterminator="\n")
        return written + [path / "audit.csv"]


def obfuscate_user(user, profile, group, score, gamma, mu, n_items, config, user_id="", label=""):
    """
    runs the algorithm for one user

    RETURNS
        (new profile, UserAudit)
    """
    audit = UserAudit(user, user_id, label, score, bool(score >= gamma))
    if not audit.selected: return profile, audit

    rng = user_stream(config.seed, user)
    if config.sampler == Sampler.RANDOM:
        candidates = chosen = random_select(n_items, profile, config.ratio, config.strategy, config.omega, rng)
    else:
        candidates = subsample(n_items, profile, config.ratio, config.strategy, mu, config.omega)
        if config.sampler == Sampler.SBSAMPLING: chosen = bernoulli_select(candidates, mu, rng)
        else: chosen = topstereo_select(candidates)
    audit.candidates, audit.chosen = candidates, chosen

    try:
        rewritten = obfuscate_profile(profile, chosen, config.strategy)
    except ProfileEmptiedError as e:
        audit.warning = str(e)
        logger.warning("user '%s': %s; profile left unchanged", user_id, e)
        return profile, audit
    audit.added, audit.removed = chosen.impute, chosen.remove
    return rewritten, audit

def obfuscate_dataset(dataset, partition, table, config, workers=1):
    """
    applies the algorithm to every user of `dataset`

    `table` (and the threshold derived here) must come from `dataset` before obfuscation;
    `workers` > 1 runs users in a thread pool, the result is identical to a single worker
    """
    partition = partition.align(dataset)
    if table.n_items != dataset.n_items:
        raise DimensionError("table covers {} items, dataset has {}".format(table.n_items, dataset.n_items))
    scores = user_scores(dataset, partition, table, config.aggregator)
    gamma = config.policy.gamma(scores)
    mus = (build_mu(table, 0), build_mu(table, 1))

    def work(users):
        out = []
        for u in users:
            g = partition.group_of(u)
            out.append(obfuscate_user(int(u), dataset.profile(u), g, scores[u], gamma, mus[g], dataset.n_items,
                                      config, dataset.users[u], partition.labels[g]))
        return out

    users = np.arange(dataset.n_users)
    if workers > 1:
        chunks = [c for c in np.array_split(users, workers) if len(c)]
        results = [r for part in Parallel(n_jobs=workers, prefer="threads")(delayed(work)(c) for c in chunks) for r in part]
    else:
        results = work(users)

    profiles = [r[0] for r in results]
    audits = [r[1] for r in results]
    outcome = ObfuscationOutcome(InteractionDataset.from_profiles(dataset.users, dataset.items, profiles),
                                 audits, gamma, config)
    summary = outcome.summary()
    logger.info("%s: gamma=%.4f, %d of %d users selected, %d items added, %d removed",
                config.label, gamma, summary['selected'], summary['users'], summary['added'], summary['removed'])
    return outcome
