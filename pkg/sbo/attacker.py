"""
feed-forward attribute-inference attacker

a two-layer network A = [|V|, l, 2] reads a user's multi-hot preference vector and predicts
the user's group; it is trained for a fixed number of epochs with class-weighted cross
entropy and Adam, and scored with balanced accuracy under a k-fold split of the users
"""
import logging
from dataclasses import dataclass, field, fields

import numpy as np
from django.conf import settings
from joblib import Parallel, delayed
from scipy.special import log_softmax, softmax
from sklearn.metrics import balanced_accuracy_score

from .dataset import kfold_user_split, to_preference_vectors
from .errors import DegenerateLabelsError, UndefinedMetricError, DimensionError, DivergenceError, ConfigError
from .optim import Adam

logger = logging.getLogger(__name__)

CLASS_WEIGHT_MODES = ("inverse", "none")


##############################################################################################
## ACTIVATIONS

def _relu(z):
    return np.maximum(z, 0.0)

def _drelu(z):
    return np.where(z > 0, 1.0, 0.0)

def _dtanh(z):
    return 1.0 - np.tanh(z) ** 2

ACTIVATIONS = {
    'relu': (_relu, _drelu),
    'tanh': (np.tanh, _dtanh),
}


##############################################################################################
## CONFIGURATION AND MODEL

@dataclass(frozen=True)
class AttackConfig:
    hidden: int = 128
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.001
    seed: int = 0
    class_weight: str = "inverse"
    activation: str = "relu"
    init_std: float = 0.01

    def __post_init__(self):
        if self.hidden < 1: raise ConfigError("hidden size must be >= 1, got {}".format(self.hidden))
        if self.epochs < 1: raise ConfigError("epochs must be >= 1, got {}".format(self.epochs))
        if self.batch_size < 1: raise ConfigError("batch size must be >= 1, got {}".format(self.batch_size))
        if not self.learning_rate > 0: raise ConfigError("learning rate must be > 0, got {}".format(self.learning_rate))
        if self.class_weight not in CLASS_WEIGHT_MODES:
            raise ConfigError("class weight must be one of {}, got '{}'".format(CLASS_WEIGHT_MODES, self.class_weight))
        if self.activation not in ACTIVATIONS:
            raise ConfigError("activation must be one of {}, got '{}'".format(tuple(ACTIVATIONS), self.activation))

    @classmethod
    def from_settings(cls, **overrides):
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in settings.SBO_ATTACKER.items() if k in known}
        values.update(overrides)
        return cls(**values)


@dataclass
class AttackerModel:
    """weights W1 (|V| x l), b1 (l), W2 (l x 2), b2 (2)"""
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    @classmethod
    def initial(cls, n_inputs, hidden, rng, init_std=0.01, activation="relu"):
        return cls(rng.normal(0.0, init_std, (n_inputs, hidden)), np.zeros(hidden),
                   rng.normal(0.0, init_std, (hidden, 2)), np.zeros(2), activation)

    @property
    def layers(self):
        return [self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]]

    @property
    def params(self):
        return {'W1': self.W1, 'b1': self.b1, 'W2': self.W2, 'b2': self.b2}

    def logits(self, X):
        if X.shape[-1] != self.W1.shape[0]:
            raise DimensionError("input has {} features, the attacker expects {}".format(X.shape[-1], self.W1.shape[0]))
        return forward(self.params, X, self.activation)[0]


##############################################################################################
## OBJECTIVE

def forward(params, X, activation="relu"):
    """logits plus the cache needed by the backward pass; `X` may be a sparse matrix"""
    act = ACTIVATIONS[activation][0]
    z1 = np.asarray(X @ params['W1']) + params['b1']
    h = act(z1)
    return h @ params['W2'] + params['b2'], (z1, h)

def class_weights(labels):
    """w_g = N / (2 N_g)"""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=2)
    if (counts == 0).any(): raise DegenerateLabelsError("both classes must be present to weight them")
    return len(labels) / (2.0 * counts)

def weighted_cross_entropy_and_grads(params, X, labels, weights, activation="relu"):
    """
    sum_i w_{y_i} * -ln p(y_i | x_i) divided by sum_i w_{y_i}

    RETURNS
        (loss, {name: gradient})
    """
    labels = np.asarray(labels, dtype=np.int64)
    logits, (z1, h) = forward(params, X, activation)
    logp = log_softmax(logits, axis=1)
    rows = np.arange(len(labels))
    w = np.asarray(weights, dtype=np.float64)[labels]
    total = w.sum()
    loss = -(w * logp[rows, labels]).sum() / total

    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    dlogits *= (w / total)[:, None]
    dh = dlogits @ params['W2'].T
    dz1 = dh * ACTIVATIONS[activation][1](z1)
    grads = {
        'W1': np.asarray(X.T @ dz1),
        'b1': dz1.sum(axis=0),
        'W2': h.T @ dlogits,
        'b2': dlogits.sum(axis=0),
    }
    return loss, grads


##############################################################################################
## TRAINING AND PREDICTION

def train_attacker(vectors, labels, cfg):
    """
    trains on the rows of `vectors` (dense or sparse, width |V|) for cfg.epochs epochs; the
    mini-batch order is a seeded permutation per epoch
    """
    labels = np.asarray(labels, dtype=np.int64)
    if vectors.shape[0] != len(labels):
        raise DimensionError("{} vectors for {} labels".format(vectors.shape[0], len(labels)))
    if len(np.unique(labels)) < 2:
        raise DegenerateLabelsError("training labels contain a single class")
    weights = class_weights(labels) if cfg.class_weight == "inverse" else np.ones(2)

    rng = np.random.default_rng(cfg.seed)
    model = AttackerModel.initial(vectors.shape[1], cfg.hidden, rng, cfg.init_std, cfg.activation)
    opt = Adam(model.params, cfg.learning_rate)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(labels))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = weighted_cross_entropy_and_grads(model.params, vectors[batch], labels[batch],
                                                           weights, cfg.activation)
            if not np.isfinite(loss): raise DivergenceError(epoch, loss)
            opt.step(grads)
            total += loss * len(batch)
        logger.debug("attacker epoch %d: loss %.5f", epoch, total / len(labels))
    return model

def predict(model, vector):
    """
    (label, class probabilities) for a single preference vector; ties go to class 0

    EXAMPLE
        predict(model, dataset_vectors[u])  ->  (1, array([0.31, 0.69]))
    """
    vector = np.asarray(vector.todense() if hasattr(vector, "todense") else vector, dtype=np.float64).ravel()
    probs = softmax(model.logits(vector[None, :])[0])
    return int(np.argmax(probs)), probs

def predict_labels(model, vectors):
    """predicted class per row; np.argmax keeps the first maximum, so ties go to class 0"""
    return np.argmax(model.logits(vectors), axis=1)


##############################################################################################
## METRICS AND CROSS-VALIDATION

def balanced_accuracy(predictions, labels):
    """mean of the two per-class recalls"""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if len(predictions) != len(labels):
        raise DimensionError("{} predictions for {} labels".format(len(predictions), len(labels)))
    if len(np.unique(labels)) < 2:
        raise UndefinedMetricError("balanced accuracy needs both classes among the labels")
    return float(balanced_accuracy_score(labels, predictions))


@dataclass
class AttackResult:
    """mean BAcc plus the per-fold values (None for skipped folds)"""
    mean: float
    folds: list = field(default_factory=list)

    @property
    def scored(self):
        return [v for v in self.folds if v is not None]

    def as_dict(self):
        return {'mean': self.mean, 'folds': list(self.folds)}


def run_attack_cv(dataset, partition, cfg, folds=5, seed=0, universe=None, workers=1):
    """
    k-fold attack over the users of `dataset`: train on the preference vectors of the train
    fold, report balanced accuracy on the test fold

    NOTE
    - `universe` pins the input width to the original item catalog size
    - a fold lacking a class on either side is skipped with a warning
    - folds run on a thread pool when `workers` > 1, results are kept in fold order
    """
    partition = partition.align(dataset)
    vectors = to_preference_vectors(dataset, universe)
    labels = np.asarray(partition.assignment, dtype=np.int64)
    splits = kfold_user_split(np.arange(dataset.n_users), folds, seed)

    def fold(i, train, test):
        if len(np.unique(labels[train])) < 2 or len(np.unique(labels[test])) < 2:
            logger.warning("fold %d lacks a class in its train or test users and was skipped", i)
            return None
        model = train_attacker(vectors[train], labels[train], cfg)
        value = balanced_accuracy(predict_labels(model, vectors[test]), labels[test])
        logger.debug("fold %d: balanced accuracy %.4f", i, value)
        return value

    if workers > 1:
        values = Parallel(n_jobs=workers, prefer="threads")(delayed(fold)(i, tr, te) for i, (tr, te) in enumerate(splits))
    else:
        values = [fold(i, tr, te) for i, (tr, te) in enumerate(splits)]

    scored = [v for v in values if v is not None]
    if not scored: raise DegenerateLabelsError("every fold lacks a class, no balanced accuracy to report")
    result = AttackResult(float(np.mean(scored)), values)
    logger.info("attack over %d folds: mean balanced accuracy %.4f", len(scored), result.mean)
    return result
