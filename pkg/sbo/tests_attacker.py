"""
testing code for `attacker.py`

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
from django.test import SimpleTestCase

import numpy as np
from scipy import sparse

from .attacker import (AttackConfig, AttackerModel, AttackResult, class_weights, weighted_cross_entropy_and_grads,
    train_attacker, predict, predict_labels, balanced_accuracy, run_attack_cv)
from .dataset import GroupPartition, to_preference_vectors
from .errors import ConfigError, DegenerateLabelsError, DimensionError, UndefinedMetricError
from .synthetic import generate_planted
from .tests_recommender import numeric_grad


#########################################################################################
## SUNDRY HELPER FUNCTIONS AND OBJECTS

def separable(n=40, width=6, seed=0):
    """class 0 always has feature 0, class 1 always has feature 1, the rest is noise"""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    X = (rng.random((n, width)) < 0.3).astype(float)
    X[:, :2] = 0.0
    X[labels == 0, 0] = 1.0
    X[labels == 1, 1] = 1.0
    return X, labels

SMALL = AttackConfig(hidden=16, epochs=30, batch_size=16, learning_rate=0.01, seed=5, init_std=0.1)


#########################################################################################
## CONFIGURATION AND MODEL

class ConfigTest(SimpleTestCase):

    def test_validation(s):
        with s.assertRaises(ConfigError): AttackConfig(hidden=0)
        with s.assertRaises(ConfigError): AttackConfig(epochs=0)
        with s.assertRaises(ConfigError): AttackConfig(learning_rate=-1.0)
        with s.assertRaises(ConfigError): AttackConfig(class_weight="balanced")
        with s.assertRaises(ConfigError): AttackConfig(activation="gelu")

    def test_from_settings(s):
        cfg = AttackConfig.from_settings(epochs=2)
        s.assertEqual((cfg.hidden, cfg.epochs, cfg.batch_size), (128, 2, 64))

    def test_model_shape(s):
        model = AttackerModel.initial(10, 4, np.random.default_rng(0))
        s.assertEqual(model.layers, [10, 4, 2])
        s.assertEqual(model.logits(np.zeros((3, 10))).shape, (3, 2))
        with s.assertRaises(DimensionError):
            model.logits(np.zeros((3, 9)))


#########################################################################################
## OBJECTIVE

class ObjectiveTest(SimpleTestCase):

    def test_gradients(s):
        """central differences on 100 random instances per activation, with uneven class weights"""
        rng = np.random.default_rng(1)
        for activation in ("tanh", "relu"):
            checked = 0
            while checked < 100:
                n, width, hidden = int(rng.integers(2, 7)), int(rng.integers(1, 6)), int(rng.integers(1, 5))
                model = AttackerModel.initial(width, hidden, rng, 1.0, activation)
                model.b1[:] = rng.normal(size=hidden)
                X = rng.normal(size=(n, width))
                # relu has no derivative at 0
                if activation == "relu" and np.abs(X @ model.W1 + model.b1).min() < 1e-3: continue
                labels = rng.integers(0, 2, n)
                weights = np.array([1.0, float(rng.uniform(0.5, 3.0))])
                params = model.params
                loss, grads = weighted_cross_entropy_and_grads(params, X, labels, weights, activation)
                f = lambda: weighted_cross_entropy_and_grads(params, X, labels, weights, activation)[0]
                for name in ("W1", "b1", "W2", "b2"):
                    np.testing.assert_allclose(grads[name], numeric_grad(f, params[name]), rtol=1e-4, atol=1e-7,
                                               err_msg="{} {} #{}".format(activation, name, checked))
                checked += 1

    def test_uniform_loss(s):
        """zero weights: both classes at probability 1/2"""
        model = AttackerModel.initial(3, 2, np.random.default_rng(0), 0.0)
        loss, _ = weighted_cross_entropy_and_grads(model.params, np.ones((4, 3)), [0, 1, 1, 1], [3.0, 1.0])
        s.assertAlmostEqual(loss, np.log(2.0), places=12)

    def test_class_weights(s):
        s.assertEqual(class_weights([0, 1, 0, 1]).tolist(), [1.0, 1.0])
        w = class_weights(np.repeat([0, 1], [4331, 1709]))
        s.assertAlmostEqual(w[1] / w[0], 4331 / 1709, places=12)
        s.assertAlmostEqual(w[1] / w[0], 2.534, places=3)
        with s.assertRaises(DegenerateLabelsError):
            class_weights([1, 1, 1])


#########################################################################################
## TRAINING AND PREDICTION

class PredictTest(SimpleTestCase):

    def model(s, b2):
        m = AttackerModel.initial(4, 3, np.random.default_rng(0), 0.0)
        m.b2[:] = b2
        return m

    def test_tie(s):
        label, probs = predict(s.model([0.0, 0.0]), np.ones(4))
        s.assertEqual(label, 0)
        s.assertEqual(probs.tolist(), [0.5, 0.5])
        s.assertEqual(predict_labels(s.model([0.0, 0.0]), np.ones((3, 4))).tolist(), [0, 0, 0])

    def test_confident(s):
        label, probs = predict(s.model([10.0, -10.0]), np.zeros(4))
        s.assertEqual(label, 0)
        s.assertAlmostEqual(probs[0], 1.0, places=8)
        s.assertAlmostEqual(probs.sum(), 1.0, places=12)
        s.assertEqual(predict(s.model([-10.0, 10.0]), np.zeros(4))[0], 1)

    def test_sparse_input(s):
        X, labels = separable()
        model = train_attacker(X, labels, SMALL)
        s.assertEqual(predict(model, sparse.csr_matrix(X[:1]))[0], predict(model, X[0])[0])

    def test_separable(s):
        X, labels = separable()
        model = train_attacker(X, labels, AttackConfig(hidden=8, epochs=200, batch_size=8, learning_rate=0.05, seed=1,
                                                       init_std=0.1))
        s.assertEqual((predict_labels(model, X) == labels).mean(), 1.0)

    def test_deterministic(s):
        X, labels = separable(seed=3)
        a, b = train_attacker(X, labels, SMALL), train_attacker(X, labels, SMALL)
        s.assertTrue(np.array_equal(a.W1, b.W1))
        s.assertTrue(np.array_equal(a.b2, b.b2))

    def test_bad_inputs(s):
        X, labels = separable()
        with s.assertRaises(DegenerateLabelsError):
            train_attacker(X, np.zeros(len(labels)), SMALL)
        with s.assertRaises(DimensionError):
            train_attacker(X[:-1], labels, SMALL)


#########################################################################################
## METRICS AND CROSS-VALIDATION

class MetricTest(SimpleTestCase):

    def test_balanced_accuracy(s):
        s.assertAlmostEqual(balanced_accuracy([0, 0, 1, 1, 0], [0, 0, 1, 1, 1]), (1.0 + 2 / 3) / 2, places=12)
        s.assertAlmostEqual(balanced_accuracy([0, 0, 1, 1, 0], [0, 0, 1, 1, 1]), 0.8333333333333333, places=12)
        s.assertEqual(balanced_accuracy([0, 0, 0, 0], [0, 1, 1, 1]), 0.5)
        s.assertEqual(balanced_accuracy([1, 0], [1, 0]), 1.0)
        with s.assertRaises(UndefinedMetricError):
            balanced_accuracy([0, 1], [1, 1])
        with s.assertRaises(DimensionError):
            balanced_accuracy([0, 1, 1], [0, 1])

    def test_result(s):
        r = AttackResult(0.75, [0.5, None, 1.0])
        s.assertEqual(r.scored, [0.5, 1.0])
        s.assertEqual(r.as_dict(), {'mean': 0.75, 'folds': [0.5, None, 1.0]})


class CrossValidationTest(SimpleTestCase):

    def test_planted(s):
        """planted signature items make the attribute easy to infer"""
        d, p = generate_planted(users_per_group=60, n_items=120, signature=15, common=15, seed=2, crossover=0.0)
        result = run_attack_cv(d, p, SMALL, folds=5, seed=13)
        s.assertEqual(len(result.folds), 5)
        s.assertGreaterEqual(result.mean, 0.9)
        s.assertEqual(run_attack_cv(d, p, SMALL, folds=5, seed=13).folds, result.folds)
        s.assertEqual(run_attack_cv(d, p, SMALL, folds=5, seed=13, workers=2).folds, result.folds)

    def test_universe(s):
        """a narrower dataset is read against the pinned item universe"""
        d, p = generate_planted(users_per_group=20, n_items=60, signature=8, common=8, seed=3)
        s.assertEqual(to_preference_vectors(d, 80).shape, (40, 80))
        result = run_attack_cv(d, p, SMALL, folds=2, seed=1, universe=80)
        s.assertEqual(len(result.scored), 2)
        with s.assertRaises(DimensionError):
            run_attack_cv(d, p, SMALL, folds=2, seed=1, universe=30)

    def test_degenerate(s):
        """a single user in one group cannot be on both sides of any fold"""
        d, _ = generate_planted(users_per_group=5, n_items=30, signature=4, common=4, seed=4)
        p = GroupPartition(d.users, ("F", "M"), [0] * 9 + [1])
        with s.assertLogs("sbo.attacker", level="WARNING"):
            with s.assertRaises(DegenerateLabelsError):
                run_attack_cv(d, p, SMALL, folds=5, seed=0)
