"""
planted-stereotype synthetic data

two groups of users; the item catalog is cut into an exclusive core per group, a lean
signature pool per group and a common pool. Every user draws `signature` distinct signature
items: a few (`exclusive`, a per-user count) from their group's core, which nobody in the
other group ever consumes, and the rest from the lean pools, each draw landing in the other
group's lean pool with probability `crossover`. On top come `common` distinct items from the
common pool.

NOTE
the group signal is concentrated in the core items; with `crossover` near 1/2 the lean
pools carry only a weak signal, with `crossover=0` they are exclusive as well
"""
import logging
from pathlib import Path

import numpy as np

from .dataset import InteractionDataset, GroupPartition, save_dataset, save_partition
from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_LABELS = ("F", "M")


class PlantedLayout():
    """the item index ranges of the catalog pools, in catalog order"""

    def __init__(s, n_items, core, signature_pool):
        s.n_items = n_items
        s.core = core
        s.signature_pool = signature_pool
        items = np.arange(n_items)
        s.cores = (items[:core], items[core:2 * core])
        start = 2 * core
        s.lean = (items[start:start + signature_pool], items[start + signature_pool:start + 2 * signature_pool])
        s.common = items[start + 2 * signature_pool:]

    @classmethod
    def default(cls, n_items, core=None, signature_pool=None):
        if core is None: core = max(1, n_items // 30)
        if signature_pool is None: signature_pool = (n_items - 2 * core) // 3
        return cls(n_items, core, signature_pool)


def default_exclusive(signature):
    return (max(1, signature // 20), max(1, signature // 5))

def generate_planted(users_per_group=150, n_items=600, signature=40, common=40, seed=0,
                     core=None, exclusive=None, signature_pool=None, crossover=0.45, labels=DEFAULT_LABELS):
    """
    RETURNS
        (InteractionDataset, GroupPartition); users are `u0000`.., items `i0000`.., users of
        group 0 come first

    NOTE
    - `core` defaults to a thirtieth of the catalog per group, `signature_pool` to a third of
        what the cores leave
    - `exclusive` is the (low, high) range of a user's core draws, both ends included,
        capped at the core size and at `signature`; it defaults to (signature/20, signature/5)
    """
    layout = PlantedLayout.default(n_items, core, signature_pool)
    if exclusive is None: exclusive = default_exclusive(signature)
    low, high = (min(int(e), layout.core, signature) for e in exclusive)
    if users_per_group < 1: raise ConfigError("need at least one user per group")
    if not 0.0 <= crossover <= 1.0: raise ConfigError("crossover must lie in [0, 1], got {}".format(crossover))
    if layout.core < 1: raise ConfigError("the core pools need at least one item")
    if not 0 <= low <= high: raise ConfigError("bad range of core draws {}".format(tuple(exclusive)))
    if signature - low > layout.signature_pool or common > len(layout.common):
        raise ConfigError("pools of {} lean and {} common items cannot supply {} + {} draws".format(
            layout.signature_pool, len(layout.common), signature - low, common))
    if signature + common < 1: raise ConfigError("users need at least one interaction")

    rng = np.random.default_rng(int(seed))
    profiles, assignment = [], []
    for group in (0, 1):
        for _ in range(users_per_group):
            n_core = int(rng.integers(low, high + 1))
            n_cross = int(rng.binomial(signature - n_core, crossover))
            n_own = signature - n_core - n_cross
            profiles.append(np.concatenate([
                rng.choice(layout.cores[group], size=n_core, replace=False),
                rng.choice(layout.lean[group], size=n_own, replace=False),
                rng.choice(layout.lean[1 - group], size=n_cross, replace=False),
                rng.choice(layout.common, size=common, replace=False),
            ]))
            assignment.append(group)

    users = ["u{:04d}".format(u) for u in range(len(profiles))]
    items = ["i{:04d}".format(i) for i in range(n_items)]
    dataset = InteractionDataset.from_profiles(users, items, profiles)
    partition = GroupPartition(users, labels, assignment)
    logger.info("planted %d users x %d items, %d signature (%d-%d from a core of %d) + %d common interactions per user",
                dataset.n_users, dataset.n_items, signature, low, high, layout.core, common)
    return dataset, partition

def write_planted(path, delimiter=",", **kwargs):
    """generates a planted dataset into directory `path`; returns the written paths"""
    path = Path(path)
    dataset, partition = generate_planted(**kwargs)
    written = save_dataset(dataset, path / "interactions.csv", delimiter)
    written.append(save_partition(partition, path / "attributes.csv", delimiter))
    return written
