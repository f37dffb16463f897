"""
BPR matrix factorization for implicit feedback, top-k ranking and NDCG

the model scores score(u, v) = <user_u, item_v>; training maximises ln sigmoid of the
score margin between an observed item and a uniformly sampled unobserved item, with L2
regularization on the embeddings touched by each sample, using Adam; early stopping keeps
the checkpoint with the best validation NDCG@k

CHECKPOINT FORMAT
    comma-separated text; `#` header lines record `d`, `users`, `items` and `seed`, then one
    row per embedding: `kind,index,f_0,...,f_{d-1}` with kind 0 = user and 1 = item
"""
import logging
import math
import re
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy.special import expit

from .errors import DivergenceError, ConfigError, DimensionError
from .optim import Adam

logger = logging.getLogger(__name__)


##############################################################################################
## CONFIGURATION

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.001
    batch_size: int = 512
    patience: int = 10
    seed: int = 0
    dim: int = 64
    reg: float = 1e-4
    init_std: float = 0.01
    k: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1: raise ConfigError("epochs must be >= 1, got {}".format(self.epochs))
        if self.patience < 1: raise ConfigError("patience must be >= 1, got {}".format(self.patience))
        if not self.learning_rate > 0: raise ConfigError("learning rate must be > 0, got {}".format(self.learning_rate))
        if self.batch_size < 1: raise ConfigError("batch size must be >= 1, got {}".format(self.batch_size))
        if self.dim < 1: raise ConfigError("embedding dimension must be >= 1, got {}".format(self.dim))
        if self.reg < 0: raise ConfigError("regularization must be >= 0, got {}".format(self.reg))
        if self.k < 1: raise ConfigError("k must be >= 1, got {}".format(self.k))

    @classmethod
    def from_settings(cls, **overrides):
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in settings.SBO_RECOMMENDER.items() if k in known}
        values.update(overrides)
        return cls(**values)


##############################################################################################
## MODEL

class BprModel():
    """user and item embedding matrices"""

    def __init__(self, user_factors, item_factors, seed=0):
        self.user_factors = np.asarray(user_factors, dtype=np.float64)
        self.item_factors = np.asarray(item_factors, dtype=np.float64)
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise DimensionError("user and item embeddings differ in dimension")
        self.seed = seed

    @property
    def dim(self):
        return self.user_factors.shape[1]

    @property
    def n_users(self):
        return self.user_factors.shape[0]

    @property
    def n_items(self):
        return self.item_factors.shape[0]

    def scores(self, user):
        """score(u, v) for all items v"""
        return self.item_factors @ self.user_factors[user]

    def copy(self):
        return BprModel(self.user_factors.copy(), self.item_factors.copy(), self.seed)

    ##################################################################
    ## CHECKPOINTS

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = np.vstack([
            np.column_stack([np.zeros(self.n_users), np.arange(self.n_users), self.user_factors]),
            np.column_stack([np.ones(self.n_items), np.arange(self.n_items), self.item_factors]),
        ])
        header = "bpr-mf d={} users={} items={} seed={}".format(self.dim, self.n_users, self.n_items, self.seed)
        fmt = ["%d", "%d"] + ["%.17g"] * self.dim
        np.savetxt(path, rows, fmt=fmt, delimiter=",", header=header, comments="# ")
        return path

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            header = f.readline()
        meta = dict(re.findall(r"(\w+)=(\d+)", header))
        try: dim, n_users, n_items = int(meta["d"]), int(meta["users"]), int(meta["items"])
        except KeyError: raise DimensionError("{} has no checkpoint header".format(path))
        rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        if rows.shape != (n_users + n_items, dim + 2):
            raise DimensionError("checkpoint body does not match its header")
        users, items = rows[:n_users], rows[n_users:]
        return cls(users[np.argsort(users[:, 1]), 2:], items[np.argsort(items[:, 1]), 2:], int(meta.get("seed", 0)))


##############################################################################################
## OBJECTIVE

def bpr_loss_and_grads(user_factors, item_factors, users, pos, neg, reg):
    """
    mean over the batch of -ln sigmoid(score(u, v+) - score(u, v-)) plus reg/2 times the
    squared norms of the three embeddings of each sample

    RETURNS
        (loss, gradient w.r.t. user_factors, gradient w.r.t. item_factors)
    """
    batch = len(users)
    U = user_factors[users]
    P = item_factors[pos]
    N = item_factors[neg]
    margin = np.einsum("ij,ij->i", U, P - N)
    loss = (np.logaddexp(0.0, -margin).sum()
            + 0.5 * reg * ((U * U).sum() + (P * P).sum() + (N * N).sum())) / batch

    coef = (-expit(-margin) / batch)[:, None]
    grad_users = np.zeros_like(user_factors)
    grad_items = np.zeros_like(item_factors)
    np.add.at(grad_users, users, coef * (P - N) + reg * U / batch)
    np.add.at(grad_items, pos, coef * U + reg * P / batch)
    np.add.at(grad_items, neg, -coef * U + reg * N / batch)
    return loss, grad_users, grad_items

def sample_negatives(rng, users, seen_codes, n_items):
    """uniform negatives per user, redrawn while they hit an observed pair"""
    neg = rng.integers(0, n_items, size=len(users))
    while True:
        hit = np.isin(users * n_items + neg, seen_codes)
        if not hit.any(): return neg
        neg[hit] = rng.integers(0, n_items, size=int(hit.sum()))


##############################################################################################
## TRAINING

def train_bpr(train, validation, cfg):
    """
    trains BPR-MF on `train`, early-stopping on NDCG@k over `validation` (both datasets over
    the same catalogs); returns the best checkpoint, or the last one if there is no validation
    """
    if len(train) == 0: raise ConfigError("cannot train on an empty dataset")
    if train.users != validation.users or train.items != validation.items:
        raise DimensionError("train and validation use different catalogs")
    train_sizes = train.profile_sizes()
    unseen = np.unique(validation.user_idx[train_sizes[validation.user_idx] == 0])
    if len(unseen):
        raise ConfigError("validation user '{}' has no training interactions".format(train.users[unseen[0]]))

    n_items = train.n_items
    eligible = np.flatnonzero(train_sizes[train.user_idx] < n_items)
    if not len(eligible): raise ConfigError("no user has an unobserved item to sample as negative")
    seen_codes = train.user_idx * n_items + train.item_idx

    rng = np.random.default_rng(cfg.seed)
    model = BprModel(rng.normal(0.0, cfg.init_std, (train.n_users, cfg.dim)),
                     rng.normal(0.0, cfg.init_std, (n_items, cfg.dim)), cfg.seed)
    opt = Adam({"user": model.user_factors, "item": model.item_factors},
               cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    steps = int(math.ceil(len(train) / cfg.batch_size))
    validate = len(validation) > 0

    best, best_ndcg, stale = None, -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for _ in range(steps):
            pick = eligible[rng.integers(0, len(eligible), size=cfg.batch_size)]
            users, pos = train.user_idx[pick], train.item_idx[pick]
            neg = sample_negatives(rng, users, seen_codes, n_items)
            loss, grad_users, grad_items = bpr_loss_and_grads(model.user_factors, model.item_factors,
                                                              users, pos, neg, cfg.reg)
            if not np.isfinite(loss): raise DivergenceError(epoch, loss)
            opt.step({"user": grad_users, "item": grad_items})
            total += loss
        if not validate:
            logger.debug("epoch %d: loss %.5f", epoch, total / steps)
            continue

        ndcg = evaluate_model(model, validation, train, cfg.k)
        logger.debug("epoch %d: loss %.5f, validation ndcg@%d %.5f", epoch, total / steps, cfg.k, ndcg)
        if ndcg > best_ndcg:
            best, best_ndcg, stale = model.copy(), ndcg, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("early stop after epoch %d, best validation ndcg@%d %.5f", epoch, cfg.k, best_ndcg)
                break
    return best if best is not None else model


##############################################################################################
## RANKING AND METRICS

def recommend_topk(model, user, k, exclude=()):
    """the k highest-scoring items outside `exclude`, by descending score then item index"""
    if k < 1: raise ConfigError("k must be >= 1, got {}".format(k))
    scores = model.scores(user)
    eligible = np.ones(len(scores), dtype=bool)
    eligible[np.asarray(exclude, dtype=np.int64)] = False
    candidates = np.flatnonzero(eligible)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:k]]

def ndcg_at_k(ranked, relevant, k):
    """binary-relevance NDCG@k; 0 if there is nothing relevant"""
    if k < 1: raise ConfigError("k must be >= 1, got {}".format(k))
    relevant = set(int(r) for r in relevant)
    if not relevant: return 0.0
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    hits = np.array([int(v) in relevant for v in list(ranked)[:k]], dtype=bool)
    dcg = discounts[:len(hits)][hits].sum()
    idcg = discounts[:min(len(relevant), k)].sum()
    return float(dcg / idcg)

def per_user_ndcg(model, test, seen, k=10):
    """{user index: NDCG@k} for every user with test items; `seen` items are not recommended"""
    out = {}
    for u in np.flatnonzero(test.profile_sizes()):
        ranked = recommend_topk(model, u, k, seen.profile(u))
        out[int(u)] = ndcg_at_k(ranked, test.profile(u), k)
    return out

def evaluate_model(model, test, seen, k=10):
    """mean NDCG@k over users with a non-empty test profile"""
    values = per_user_ndcg(model, test, seen, k)
    if not values:
        logger.warning("no user has test interactions, reporting ndcg@%d = 0", k)
        return 0.0
    return float(np.mean(list(values.values())))
