"""
testing code for `harness.py` and `synthetic.py`

the end-to-end trade-off checks on the full planted dataset take minutes; they only run
with the SBO_ACCEPTANCE environment variable set

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
from django.test import SimpleTestCase
from django.conf import settings

from pathlib import Path
from unittest import skipUnless

import numpy as np
import pandas as pd

from .attacker import AttackConfig, run_attack_cv
from .dataset import load_interactions, load_user_attributes
from .errors import ConfigError
from .harness import (ExperimentConfig, ExperimentReport, ReportRow, GridCell, prepare, prepare_dataset,
    run_cell, run_experiment, emit_tradeoff, REPORT_COLUMNS, ORIGINAL)
from .obfuscation import ObfuscationConfig, obfuscate_dataset
from .recommender import TrainConfig
from .stereotype import StereotypeTable, HISTOGRAM_FILE, SERIES_FILE
from .synthetic import PlantedLayout, default_exclusive, generate_planted, write_planted
from .tests_dataset import pairs, TempDirMixin


#########################################################################################
## SUNDRY HELPER FUNCTIONS AND OBJECTS

FAST = dict(
    core_k=2,
    recommender=TrainConfig(epochs=3, learning_rate=0.01, batch_size=64, patience=2, seed=1, dim=8),
    attacker=AttackConfig(hidden=8, epochs=3, batch_size=32, learning_rate=0.01, seed=2),
    attack_folds=2,
    workers=1,
)

def small_planted(seed=0):
    return generate_planted(users_per_group=15, n_items=60, signature=6, common=6, seed=seed)

def fast_config(out, **overrides):
    values = dict(FAST, out=str(out))
    values.update(overrides)
    return ExperimentConfig.from_settings(**values)

def report_of(*rows):
    return ExperimentReport([ReportRow(config, strategy=strategy, sampler=sampler, ndcg=ndcg, bacc_mean=bacc)
                             for config, strategy, sampler, ndcg, bacc in rows])


#########################################################################################
## SYNTHETIC DATA

class SyntheticTest(TempDirMixin, SimpleTestCase):

    LAYOUT = dict(users_per_group=10, n_items=60, signature=6, common=3, seed=1, core=4, exclusive=(1, 3),
                  signature_pool=10)

    def test_layout(s):
        layout = PlantedLayout.default(600)
        s.assertEqual((layout.core, layout.signature_pool, len(layout.common)), (20, 186, 188))
        s.assertEqual(default_exclusive(40), (2, 8))
        layout = PlantedLayout(60, 4, 10)
        s.assertEqual(layout.cores[1].tolist(), [4, 5, 6, 7])
        s.assertEqual((layout.lean[0][0], layout.lean[1][0], layout.common[0]), (8, 18, 28))

    def test_planted(s):
        d, p = generate_planted(**s.LAYOUT)
        layout = PlantedLayout(60, 4, 10)
        s.assertEqual((d.n_users, d.n_items), (20, 60))
        s.assertEqual(p.sizes(), (10, 10))
        s.assertTrue((d.profile_sizes() == 9).all())
        for u in range(d.n_users):
            profile, g = d.profile(u), p.group_of(u)
            n_core = int(np.isin(profile, layout.cores[g]).sum())
            s.assertTrue(1 <= n_core <= 3)
            s.assertFalse(np.isin(profile, layout.cores[1 - g]).any())
            s.assertEqual(int(np.isin(profile, np.concatenate(layout.lean)).sum()), 6 - n_core)
            s.assertEqual(int(np.isin(profile, layout.common).sum()), 3)

    def test_crossover(s):
        layout = PlantedLayout(60, 4, 10)
        for crossover, pool in ((0.0, 1), (1.0, 0)):
            d, p = generate_planted(**dict(s.LAYOUT, crossover=crossover))
            for u in p.members(0):
                s.assertFalse(np.isin(d.profile(u), layout.lean[pool]).any())

    def test_core_exclusive(s):
        """core items are consumed by one group only, so they are maximally stereotypical"""
        d, p = generate_planted(**s.LAYOUT)
        table = StereotypeTable.from_dataset(d, p)
        layout = PlantedLayout(60, 4, 10)
        for g in (0, 1):
            consumed = [i for i in layout.cores[g] if d.item_counts()[i] > 0]
            s.assertTrue(consumed)
            s.assertEqual(table.signed(g)[consumed].tolist(), [1.0] * len(consumed))

    def test_core_removed(s):
        """removal by stereotypicality strips every core item when the budget covers them"""
        d, p = generate_planted(users_per_group=30, n_items=300, signature=20, common=20, seed=3)
        layout = PlantedLayout.default(300)
        outcome = obfuscate_dataset(d, p, StereotypeTable.from_dataset(d, p),
                                    ObfuscationConfig("removal", "sbsampling", 0.1, seed=7))
        s.assertGreater(len(outcome.selected_users()), 0)
        for u in outcome.selected_users():
            core = d.profile(u)[np.isin(d.profile(u), layout.cores[p.group_of(u)])]
            s.assertLessEqual(len(core), 4)
            s.assertFalse(np.isin(core, outcome.dataset.profile(u)).any())

    def test_deterministic(s):
        s.assertEqual(small_planted(4)[0], small_planted(4)[0])
        s.assertNotEqual(small_planted(4)[0], small_planted(5)[0])

    def test_bad_arguments(s):
        with s.assertRaises(ConfigError): generate_planted(users_per_group=0)
        with s.assertRaises(ConfigError): generate_planted(n_items=30, signature=11)
        with s.assertRaises(ConfigError): generate_planted(crossover=1.5)
        with s.assertRaises(ConfigError): generate_planted(exclusive=(3, 1))

    def test_write(s):
        written = write_planted(s.dir / "data", users_per_group=5, n_items=30, signature=4, common=4, seed=2)
        d, p = generate_planted(users_per_group=5, n_items=30, signature=4, common=4, seed=2)
        loaded = load_interactions(written[0])
        s.assertEqual(pairs(loaded), pairs(d))
        s.assertEqual(load_user_attributes(written[-1], loaded).sizes(), (5, 5))


#########################################################################################
## CONFIGURATION

class ConfigTest(TempDirMixin, SimpleTestCase):

    YAML = """
experiment:
  interactions: data/interactions.csv
  attributes: data/attributes.csv     # relative to this file
  out: runs/a
  core_k: 3
  test_seed: 1

grid:
  strategy: [removal, imputation]
  sampler: topstereo
  ratio: [0.05, 0.1]

recommender:
  epochs: 4
  reg: 1e-5

attacker:
  hidden: 8
"""

    def test_defaults(s):
        cfg = ExperimentConfig.from_settings()
        s.assertEqual(cfg.test_seed, 2024)
        s.assertEqual(cfg.valid_seed, 2025)
        s.assertEqual([c.label for c in cfg.cells()], ["removal-sbsampling-rho0.1-mean"])

    def test_from_file(s):
        cfg = ExperimentConfig.from_file(s.write("exp.yaml", s.YAML))
        s.assertEqual(cfg.interactions, str(s.dir / "data" / "interactions.csv"))
        s.assertEqual(cfg.attributes, str(s.dir / "data" / "attributes.csv"))
        s.assertEqual((cfg.core_k, cfg.test_seed, cfg.valid_seed), (3, 1, 2025))
        s.assertEqual((cfg.recommender.epochs, cfg.recommender.dim, cfg.recommender.reg), (4, 64, 1e-5))
        s.assertEqual((cfg.attacker.hidden, cfg.attacker.epochs), (8, 50))
        s.assertEqual([c.label for c in cfg.cells()], [
            "removal-topstereo-rho0.05-mean", "removal-topstereo-rho0.1-mean",
            "imputation-topstereo-rho0.05-mean", "imputation-topstereo-rho0.1-mean"])

    def test_typed_values(s):
        cfg = ExperimentConfig.from_file(s.write("t.yaml", "experiment:\n  omega: 1\n  group_order: [M, F]\n"
                                                           "grid:\n  ratio: 0.2\n"))
        s.assertEqual((cfg.omega, cfg.group_order, cfg.ratios), (1.0, ("M", "F"), (0.2,)))
        s.assertIsInstance(cfg.omega, float)
        s.assertEqual(ExperimentConfig.from_file(s.write("empty.yaml", "")).cells(), ExperimentConfig.from_settings().cells())

    def test_shipped_file(s):
        cfg = ExperimentConfig.from_file(Path(__file__).resolve().parent.parent / "experiments" / "planted.yaml")
        s.assertEqual(len(cfg.cells()), 18)
        s.assertEqual((cfg.recommender.seed, cfg.attacker.seed), (7, 11))

    def test_overrides(s):
        cfg = ExperimentConfig.from_file(s.write("exp.yaml", s.YAML), out="elsewhere", workers=2)
        s.assertEqual((cfg.out, cfg.workers), ("elsewhere", 2))

    def test_bad_files(s):
        bad = {
            "a.yaml": "experiment:\n  colour: red\n",
            "b.yaml": "plots:\n  x: 1\n",
            "c.yaml": "experiment:\n  core_k: five\n",
            "d.yaml": "grid:\n  sampler: [best]\n",
            "e.yaml": "recommender:\n  layers: 3\n",
            "f.yaml": "experiment:\n  core_k: 2.5\n",
            "g.yaml": "attacker:\n  epochs: true\n",
            "h.yaml": "- experiment\n",
            "i.yaml": "grid: removal\n",
            "j.yaml": "experiment: {core_k: [\n",
        }
        for name, text in bad.items():
            with s.assertRaises(ConfigError, msg=name):
                ExperimentConfig.from_file(s.write(name, text))
        with s.assertRaises(FileNotFoundError):
            ExperimentConfig.from_file(s.dir / "missing.yaml")

    def test_validation(s):
        with s.assertRaises(ConfigError): ExperimentConfig.from_settings(strategies=())
        with s.assertRaises(ConfigError): ExperimentConfig.from_settings(ratios=(0.0,))
        with s.assertRaises(ConfigError): ExperimentConfig.from_settings(attack_folds=1)
        with s.assertRaises(ConfigError): ExperimentConfig.from_settings(holdout_fraction=1.0)

    def test_cell(s):
        cell = GridCell("weighted", "random", 0.2, "median")
        obf = cell.obfuscation(omega=0.25, seed=3)
        s.assertEqual((obf.omega, obf.seed, obf.aggregator), (0.25, 3, "median"))
        s.assertEqual(cell.label, obf.label)


#########################################################################################
## PREPARATION

class PrepareTest(TempDirMixin, SimpleTestCase):

    def test_slices(s):
        d, p = small_planted()
        data = prepare_dataset(d, p, fast_config(s.dir))
        s.assertEqual(pairs(data.trainval) | pairs(data.test), pairs(data.dataset))
        s.assertFalse(pairs(data.trainval) & pairs(data.test))
        s.assertEqual(pairs(data.train) | pairs(data.validation), pairs(data.trainval))
        s.assertTrue((data.test.profile_sizes() >= 1).all())
        stats = data.describe()
        s.assertEqual(stats['trainval'] + stats['test'], stats['interactions'])
        s.assertEqual(stats['group_F'] + stats['group_M'], stats['users'])
        s.assertEqual(len(data.save(s.dir / "data")), 15)

    def test_from_files(s):
        write_planted(s.dir / "data", users_per_group=15, n_items=60, signature=6, common=6, seed=0)
        cfg = fast_config(s.dir / "out", interactions=str(s.dir / "data" / "interactions.csv"),
                          attributes=str(s.dir / "data" / "attributes.csv"))
        data = prepare(cfg)
        s.assertEqual(pairs(data.dataset), pairs(prepare_dataset(*small_planted(), cfg).dataset))
        s.assertEqual(data.partition.labels, ("F", "M"))


#########################################################################################
## RUNNING

class ExperimentTest(TempDirMixin, SimpleTestCase):

    def setUp(s):
        super().setUp()
        d, p = small_planted(1)
        s.data = prepare_dataset(d, p, fast_config(s.dir))

    def test_run(s):
        cfg = fast_config(s.dir / "run", strategies=("removal", "imputation"), samplers=("sbsampling",))
        report = run_experiment(cfg, s.data)
        s.assertEqual([r.config for r in report.rows], [ORIGINAL, "removal-sbsampling-rho0.1-mean",
                                                        "imputation-sbsampling-rho0.1-mean"])
        s.assertTrue(report.ok)
        for row in report.rows[1:]:
            s.assertAlmostEqual(row.bacc_delta, row.bacc_mean - report.original.bacc_mean, places=12)
            s.assertEqual(len(row.bacc_folds), 2)
        s.assertEqual(report.rows[1].added, 0)
        s.assertEqual(report.rows[2].removed, 0)

        out = s.dir / "run"
        for name in ("report.tsv", "timings.tsv", "data/test.csv", "distributions/" + HISTOGRAM_FILE,
                     "distributions/" + SERIES_FILE, "original/model.txt",
                     "cells/removal-sbsampling-rho0.1-mean/audit.csv",
                     "cells/imputation-sbsampling-rho0.1-mean/obfuscated.csv",
                     "tradeoff/baseline.tsv", "tradeoff/strategy_removal.tsv", "tradeoff/sampler_sbsampling.tsv"):
            s.assertTrue((out / name).exists(), name)
        frame = pd.read_csv(out / "report.tsv", sep="\t", dtype=str, keep_default_na=False)
        s.assertEqual(tuple(frame.columns), REPORT_COLUMNS)
        s.assertNotIn("seconds", frame.columns)
        loaded = ExperimentReport.load(out)
        s.assertEqual(loaded.frame().astype(str).values.tolist(), report.frame().astype(str).values.tolist())

    def test_identity_cell(s):
        """a ratio too small to touch any profile reproduces the original metrics"""
        cfg = fast_config(s.dir / "run", ratios=(0.01,), samplers=("topstereo",))
        original = run_cell(s.data, cfg)
        row = run_cell(s.data, cfg, cfg.cells()[0])
        s.assertEqual((row.added, row.removed), (0, 0))
        s.assertEqual(row.ndcg, original.ndcg)
        s.assertEqual(row.bacc_folds, original.bacc_folds)

    def test_deterministic(s):
        """reruns, with and without a worker pool, write identical reports and test sets"""
        grid = dict(strategies=("removal", "weighted"), samplers=("sbsampling", "random"))
        run_experiment(fast_config(s.dir / "a", **grid), s.data)
        run_experiment(fast_config(s.dir / "b", workers=2, **grid), s.data)
        for name in ("report.tsv", "data/test.csv", "tradeoff/strategy_weighted.tsv"):
            s.assertEqual((s.dir / "a" / name).read_bytes(), (s.dir / "b" / name).read_bytes(), name)

    def test_failure_recorded(s):
        """stripping selected users down to one item leaves nothing to re-split"""
        cfg = fast_config(s.dir / "run", samplers=("topstereo",), ratios=(0.1, 0.95))
        with s.assertLogs("sbo.harness", level="ERROR"):
            report = run_experiment(cfg, s.data)
        s.assertEqual(len(report), len(cfg.cells()) + 1)
        s.assertEqual([r.config for r in report.failures], ["removal-topstereo-rho0.95-mean"])
        failed = report.failures[0]
        s.assertIn("SplitInfeasibleError", failed.error)
        s.assertIsNone(failed.bacc_delta)
        series = pd.read_csv(s.dir / "run" / "tradeoff" / "strategy_removal.tsv", sep="\t")
        s.assertEqual(series["label"].tolist(), ["removal-topstereo-rho0.1-mean"])
        s.assertEqual(ExperimentReport.load(s.dir / "run").failures[0].status, "failed")


#########################################################################################
## TRADE-OFF SERIES

class TradeoffTest(TempDirMixin, SimpleTestCase):

    def test_original_only(s):
        written = emit_tradeoff(report_of((ORIGINAL, "", "", 0.3, 0.8)), s.dir)
        s.assertEqual([p.name for p in written], ["baseline.tsv"])

    def test_points(s):
        report = report_of((ORIGINAL, "", "", 0.3, 0.8),
                           ("r1", "removal", "topstereo", 0.29, 0.7),
                           ("r2", "removal", "random", 0.28, 0.75),
                           ("i1", "imputation", "topstereo", 0.27, 0.72))
        written = emit_tradeoff(report, s.dir, by="strategy")
        s.assertEqual(sum(len(pd.read_csv(p, sep="\t")) for p in written if p.name != "baseline.tsv"), 3)
        by_sampler = emit_tradeoff(report, s.dir / "samplers", by="sampler")
        s.assertEqual(sorted(p.name for p in by_sampler),
                      ["baseline.tsv", "sampler_random.tsv", "sampler_topstereo.tsv"])
        baseline = pd.read_csv(s.dir / "baseline.tsv", sep="\t")
        s.assertEqual(baseline.values.tolist(), [[0.3, 0.8, ORIGINAL]])

    def test_errors(s):
        with s.assertRaises(ConfigError):
            emit_tradeoff(ExperimentReport([]), s.dir)
        with s.assertRaises(ConfigError):
            emit_tradeoff(report_of((ORIGINAL, "", "", 0.3, 0.8)), s.dir, by="ratio")


#########################################################################################
## END-TO-END ACCEPTANCE

@skipUnless(settings.SBO_ACCEPTANCE, "set SBO_ACCEPTANCE to run the end-to-end trade-off checks")
class AcceptanceTest(TempDirMixin, SimpleTestCase):
    """
    planted data: 2 groups x 150 users, 600 items, 40 signature + 40 common items per user

    the group signal sits in 2 to 8 core items per user, which the ranking puts first; 10% removal
    strips them from most selected users, 5% from fewer
    """

    def setUp(s):
        super().setUp()
        d, p = generate_planted(users_per_group=150, n_items=600, signature=40, common=40, seed=0)
        s.cfg = ExperimentConfig.from_settings(out=str(s.dir / "run"), strategies=("removal",),
                                               samplers=("sbsampling",), ratios=(0.05, 0.1))
        s.data = prepare_dataset(d, p, s.cfg)

    def test_removal_tradeoff(s):
        report = run_experiment(s.cfg, s.data)
        s.assertTrue(report.ok)
        original, light, strong = report.rows
        s.assertGreaterEqual(original.bacc_mean, 0.85)
        s.assertLessEqual(strong.bacc_delta, -0.05)
        s.assertLessEqual(original.ndcg - strong.ndcg, 0.03)
        s.assertLessEqual(-light.bacc_delta, -strong.bacc_delta + 0.02)

    def test_chance_floor(s):
        permuted = s.data.partition.permuted(99)
        result = run_attack_cv(s.data.trainval, permuted, s.cfg.attacker, s.cfg.attack_folds, s.cfg.attack_seed,
                               universe=s.data.dataset.n_items)
        s.assertAlmostEqual(result.mean, 0.5, delta=0.05)
