"""
experiment harness: filter -> split -> score -> obfuscate -> re-split -> recommend -> attack

- **prepare** loads and k-core filters the data, carves the per-user test set (test seed) and
    splits the rest into train and validation (validation seed)

- **run_cell** obfuscates the train+validation concatenation with one grid configuration,
    re-slices it with the validation seed, trains BPR-MF, measures NDCG@k on the untouched
    test set and runs the k-fold attack on the obfuscated data; the `original` row is the same
    pipeline without obfuscation

- **run_experiment** runs the `original` row and every grid cell (optionally on a thread pool),
    records failures instead of stopping, and writes the report, the timings, the trade-off
    series and all intermediate artifacts under the output directory

CONFIG FILE

    experiment:
      interactions: data/interactions.csv     # paths relative to the config file
      attributes: data/attributes.csv
      out: runs/planted
      core_k: 5
      test_seed: 2024
      valid_seed: 2025

    grid:                                     # every key takes a list (or a single value)
      strategy: [removal, imputation, weighted]
      sampler: [sbsampling, topstereo, random]
      ratio: [0.05, 0.1]
      aggregator: [mean]

    recommender:                              # any TrainConfig field
      epochs: 100

    attacker:                                 # any AttackConfig field
      hidden: 128
"""
import itertools
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import pandas as pd
import yaml
from django.conf import settings
from joblib import Parallel, delayed

from .attacker import AttackConfig, run_attack_cv
from .dataset import (load_interactions, load_user_attributes, k_core_filter, split_per_user, SplitSpec,
    save_dataset)
from .errors import ConfigError
from .obfuscation import ObfuscationConfig, Strategy, obfuscate_dataset
from .recommender import TrainConfig, train_bpr, evaluate_model
from .stereotype import StereotypeTable, user_scores, compute_gamma, emit_distributions

logger = logging.getLogger(__name__)

ORIGINAL = "original"
REPORT_FILE = "report.tsv"
TIMINGS_FILE = "timings.tsv"
REPORT_COLUMNS = ("config", "strategy", "sampler", "ratio", "omega", "aggregator", "status",
                  "bacc_mean", "bacc_folds", "bacc_delta", "ndcg", "selected", "added", "removed",
                  "obfuscation_seed", "test_seed", "valid_seed", "rec_seed", "attack_seed", "error")


##############################################################################################
## CONFIGURATION

@dataclass(frozen=True)
class GridCell:
    """one obfuscation setting of the grid"""
    strategy: str
    sampler: str
    ratio: float
    aggregator: str

    @property
    def label(self):
        return "{}-{}-rho{:g}-{}".format(self.strategy, self.sampler, self.ratio, self.aggregator)

    def obfuscation(self, omega=0.5, gamma_mode="mean", seed=0):
        return ObfuscationConfig(self.strategy, self.sampler, self.ratio, omega, self.aggregator, gamma_mode, seed)


@dataclass(frozen=True)
class ExperimentConfig:
    interactions: str = ""
    attributes: str = ""
    out: str = "runs"
    core_k: int = 5
    holdout_fraction: float = 0.2
    test_seed: int = 2024
    valid_seed: int = 2025
    strategies: tuple = ("removal",)
    samplers: tuple = ("sbsampling",)
    ratios: tuple = (0.1,)
    aggregators: tuple = ("mean",)
    omega: float = 0.5
    gamma_mode: str = "mean"
    obfuscation_seed: int = 42
    recommender: TrainConfig = field(default_factory=TrainConfig)
    attacker: AttackConfig = field(default_factory=AttackConfig)
    attack_folds: int = 5
    attack_seed: int = 13
    ndcg_k: int = 10
    workers: int = 1
    group_order: Optional[tuple] = None
    delimiter: Optional[str] = None

    def __post_init__(self):
        for name in ("strategies", "samplers", "ratios", "aggregators"):
            value = getattr(self, name)
            if isinstance(value, str) or not hasattr(value, "__iter__"): value = (value,)
            object.__setattr__(self, name, tuple(value))
        if not self.cells(): raise ConfigError("the obfuscation grid is empty")
        for cell in self.cells(): cell.obfuscation(self.omega, self.gamma_mode, self.obfuscation_seed)
        SplitSpec(self.holdout_fraction, self.test_seed)
        SplitSpec(self.holdout_fraction, self.valid_seed)
        if self.core_k < 1: raise ConfigError("core k must be >= 1, got {}".format(self.core_k))
        if self.attack_folds < 2: raise ConfigError("need at least 2 attack folds, got {}".format(self.attack_folds))
        if self.ndcg_k < 1: raise ConfigError("ndcg k must be >= 1, got {}".format(self.ndcg_k))
        if self.workers < 1: raise ConfigError("workers must be >= 1, got {}".format(self.workers))

    def cells(self):
        """the grid in definition order: strategy x sampler x ratio x aggregator"""
        return [GridCell(getattr(st, "value", st), getattr(sa, "value", sa), float(r), ag)
                for st, sa, r, ag in itertools.product(self.strategies, self.samplers, self.ratios, self.aggregators)]

    ##################################################################
    ## CONSTRUCTORS

    @classmethod
    def from_settings(cls, **overrides):
        """defaults from the SBO_* settings, a single-cell grid from SBO_OBFUSCATION"""
        data = settings.SBO_DATASET
        obf = settings.SBO_OBFUSCATION
        exp = settings.SBO_EXPERIMENT
        values = {
            'core_k': data['core_k'], 'holdout_fraction': data['holdout_fraction'],
            'test_seed': data['test_seed'], 'valid_seed': data['valid_seed'], 'delimiter': data.get('delimiter'),
            'strategies': (obf['strategy'],), 'samplers': (obf['sampler'],), 'ratios': (obf['ratio'],),
            'aggregators': (obf['aggregator'],), 'omega': obf['omega'], 'gamma_mode': obf['gamma_mode'],
            'obfuscation_seed': obf['seed'],
            'recommender': TrainConfig.from_settings(), 'attacker': AttackConfig.from_settings(),
            'attack_folds': exp['attack_folds'], 'attack_seed': exp['attack_seed'],
            'ndcg_k': exp['ndcg_k'], 'workers': exp['workers'],
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides):
        """
        reads the YAML experiment file (see the module docstring) on top of the settings defaults

        NOTE
        - unknown sections or keys and values of the wrong type are a `ConfigError`
        - relative `interactions`, `attributes` and `out` paths are taken relative to the file
        """
        path = Path(path)
        if not path.exists(): raise FileNotFoundError(str(path))
        try:
            with open(path, encoding="utf-8") as f: document = yaml.safe_load(f)
        except yaml.YAMLError as e: raise ConfigError("{}: {}".format(path.name, e))
        if document is None: document = {}
        if not isinstance(document, dict): raise ConfigError("{}: expected a mapping of sections".format(path.name))
        unknown = set(document) - set(SECTIONS)
        if unknown: raise ConfigError("unknown section(s) in {}: {}".format(path.name, ", ".join(sorted(map(str, unknown)))))

        values = {}
        scalars = {f.name: f.type for f in fields(cls)
                   if f.name not in ("strategies", "samplers", "ratios", "aggregators", "recommender", "attacker")}
        for key, value in _section(document, "experiment"):
            if key not in scalars: raise ConfigError("unknown key '{}' in experiment".format(key))
            if key in ("interactions", "attributes", "out"): values[key] = str(path.parent / _typed(value, str, key))
            elif key == "group_order": values[key] = tuple(_typed(v, str, key) for v in _as_list(value))
            elif key == "delimiter": values[key] = _typed(value, str, key)
            else: values[key] = _typed(value, scalars[key], key)

        for key, value in _section(document, "grid"):
            if key not in GRID_KEYS: raise ConfigError("unknown key '{}' in grid".format(key))
            name, kind = GRID_KEYS[key]
            values[name] = tuple(_typed(v, kind, key) for v in _as_list(value))

        base = cls.from_settings()
        values['recommender'] = _sub_config(document, "recommender", base.recommender)
        values['attacker'] = _sub_config(document, "attacker", base.attacker)
        values.update(overrides)
        return replace(base, **values)


SECTIONS = ("experiment", "grid", "recommender", "attacker")
GRID_KEYS = {'strategy': ('strategies', str), 'sampler': ('samplers', str),
             'ratio': ('ratios', float), 'aggregator': ('aggregators', str)}

def _section(document, name):
    section = document.get(name)
    if section is None: return []
    if not isinstance(section, dict): raise ConfigError("section '{}' must be a mapping".format(name))
    return list(section.items())

def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]

def _typed(value, kind, key):
    """checks a YAML value against a config field type; ints are accepted as floats"""
    if kind is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot (1e-4) as strings
            try: return float(value)
            except ValueError: pass
        elif isinstance(value, (int, float)) and not isinstance(value, bool): return float(value)
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool): return value
    elif kind is str:
        if isinstance(value, str): return value
    else: return value
    raise ConfigError("'{}' expects {}, got {!r}".format(key, kind.__name__, value))

def _sub_config(document, section, base):
    known = {f.name: f.type for f in fields(base)}
    values = {}
    for key, value in _section(document, section):
        if key not in known: raise ConfigError("unknown key '{}' in {}".format(key, section))
        values[key] = _typed(value, known[key], key)
    return replace(base, **values)


##############################################################################################
## PREPARATION

@dataclass
class PreparedData:
    """the filtered dataset, its partition and the three slices"""
    dataset: object
    partition: object
    trainval: object
    test: object
    train: object
    validation: object

    def describe(self):
        stats = self.dataset.describe()
        sizes = self.partition.sizes()
        stats.update({'group_' + label: size for label, size in zip(self.partition.labels, sizes)})
        stats.update({'trainval': len(self.trainval), 'test': len(self.test),
                      'train': len(self.train), 'validation': len(self.validation)})
        return stats

    def save(self, path, delimiter=","):
        path = Path(path)
        written = []
        for name in ("dataset", "trainval", "test", "train", "validation"):
            written += save_dataset(getattr(self, name), path / "{}.csv".format(name), delimiter)
        return written


def prepare_dataset(dataset, partition, cfg):
    """k-core filter plus the test and validation carves of an in-memory dataset"""
    filtered = k_core_filter(dataset, cfg.core_k)
    partition = partition.align(filtered)
    trainval, test = split_per_user(filtered, SplitSpec(cfg.holdout_fraction, cfg.test_seed))
    train, validation = split_per_user(trainval, SplitSpec(cfg.holdout_fraction, cfg.valid_seed))
    return PreparedData(filtered, partition, trainval, test, train, validation)

def prepare(cfg):
    """loads the configured files, then `prepare_dataset`"""
    raw = load_interactions(cfg.interactions, cfg.delimiter)
    partition = load_user_attributes(cfg.attributes, raw, cfg.delimiter, cfg.group_order)
    return prepare_dataset(raw, partition, cfg)


##############################################################################################
## REPORT

@dataclass
class ReportRow:
    config: str
    strategy: str = ""
    sampler: str = ""
    ratio: Optional[float] = None
    omega: Optional[float] = None
    aggregator: str = ""
    status: str = "ok"
    bacc_mean: Optional[float] = None
    bacc_folds: list = field(default_factory=list)
    bacc_delta: Optional[float] = None
    ndcg: Optional[float] = None
    selected: int = 0
    added: int = 0
    removed: int = 0
    obfuscation_seed: Optional[int] = None
    test_seed: Optional[int] = None
    valid_seed: Optional[int] = None
    rec_seed: Optional[int] = None
    attack_seed: Optional[int] = None
    error: str = ""
    seconds: float = 0.0

    @property
    def ok(self):
        return self.status == "ok"

    def as_record(self):
        """the report columns, formatted"""
        def num(v, fmt="{:.6f}"): return "" if v is None else fmt.format(v)
        return {
            'config': self.config, 'strategy': self.strategy, 'sampler': self.sampler,
            'ratio': num(self.ratio, "{:g}"), 'omega': num(self.omega, "{:g}"), 'aggregator': self.aggregator,
            'status': self.status, 'bacc_mean': num(self.bacc_mean),
            'bacc_folds': ";".join("skipped" if v is None else "{:.6f}".format(v) for v in self.bacc_folds),
            'bacc_delta': num(self.bacc_delta), 'ndcg': num(self.ndcg),
            'selected': self.selected, 'added': self.added, 'removed': self.removed,
            'obfuscation_seed': num(self.obfuscation_seed, "{}"), 'test_seed': num(self.test_seed, "{}"),
            'valid_seed': num(self.valid_seed, "{}"), 'rec_seed': num(self.rec_seed, "{}"),
            'attack_seed': num(self.attack_seed, "{}"), 'error': self.error.replace("\t", " ").replace("\n", " "),
        }


class ExperimentReport():
    """
    one row per configuration, the `original` row first

    `report.tsv` has the fixed header REPORT_COLUMNS and no wall-clock data; per-row seconds go
    to `timings.tsv`
    """

    def __init__(self, rows):
        self.rows = list(rows)

    def __len__(self):
        return len(self.rows)

    @property
    def original(self):
        for row in self.rows:
            if row.config == ORIGINAL: return row
        return None

    @property
    def failures(self):
        return [row for row in self.rows if not row.ok]

    @property
    def ok(self):
        return not self.failures

    def frame(self):
        return pd.DataFrame([row.as_record() for row in self.rows], columns=list(REPORT_COLUMNS))

    def save(self, path):
        """writes report.tsv and timings.tsv into directory `path`; returns both paths"""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(path / REPORT_FILE, sep="\t", index=False, lineterminator="\n")
        timings = pd.DataFrame({'config': [r.config for r in self.rows],
                                'seconds': ["{:.3f}".format(r.seconds) for r in self.rows]})
        timings.to_csv(path / TIMINGS_FILE, sep="\t", index=False, lineterminator="\n")
        return [path / REPORT_FILE, path / TIMINGS_FILE]

    @classmethod
    def load(cls, path):
        """reads a report.tsv (or the directory holding it)"""
        path = Path(path)
        if path.is_dir(): path = path / REPORT_FILE
        frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
        if tuple(frame.columns) != REPORT_COLUMNS: raise ConfigError("{} is not a report file".format(path))
        def num(v, kind=float): return kind(v) if v != "" else None
        rows = []
        for rec in frame.to_dict("records"):
            rows.append(ReportRow(
                config=rec['config'], strategy=rec['strategy'], sampler=rec['sampler'],
                ratio=num(rec['ratio']), omega=num(rec['omega']), aggregator=rec['aggregator'],
                status=rec['status'], bacc_mean=num(rec['bacc_mean']),
                bacc_folds=[None if v == "skipped" else float(v) for v in rec['bacc_folds'].split(";") if v],
                bacc_delta=num(rec['bacc_delta']), ndcg=num(rec['ndcg']),
                selected=int(rec['selected']), added=int(rec['added']), removed=int(rec['removed']),
                obfuscation_seed=num(rec['obfuscation_seed'], int), test_seed=num(rec['test_seed'], int),
                valid_seed=num(rec['valid_seed'], int), rec_seed=num(rec['rec_seed'], int),
                attack_seed=num(rec['attack_seed'], int), error=rec['error']))
        return cls(rows)


##############################################################################################
## RUNNING

def run_cell(data, cfg, cell=None, out=None):
    """
    runs the pipeline for one grid cell (`None` runs the `original` row)

    RETURNS
        ReportRow (status "ok"); exceptions propagate
    """
    started = time.perf_counter()
    row = ReportRow(ORIGINAL if cell is None else cell.label, test_seed=cfg.test_seed, valid_seed=cfg.valid_seed,
                    rec_seed=cfg.recommender.seed, attack_seed=cfg.attack_seed)
    target = Path(out) / ("original" if cell is None else "cells/" + cell.label) if out is not None else None

    if cell is None:
        released = data.trainval
    else:
        obf = cell.obfuscation(cfg.omega, cfg.gamma_mode, cfg.obfuscation_seed)
        table = StereotypeTable.from_dataset(data.trainval, data.partition)
        outcome = obfuscate_dataset(data.trainval, data.partition, table, obf)
        released = outcome.dataset
        summary = outcome.summary()
        row.strategy, row.sampler, row.ratio, row.aggregator = cell.strategy, cell.sampler, cell.ratio, cell.aggregator
        row.omega = cfg.omega if cell.strategy == Strategy.WEIGHTED.value else None
        row.obfuscation_seed = cfg.obfuscation_seed
        row.selected, row.added, row.removed = summary['selected'], summary['added'], summary['removed']
        if target is not None: outcome.save(target)

    train, validation = split_per_user(released, SplitSpec(cfg.holdout_fraction, cfg.valid_seed))
    model = train_bpr(train, validation, cfg.recommender)
    row.ndcg = evaluate_model(model, data.test, released, cfg.ndcg_k)
    attack = run_attack_cv(released, data.partition, cfg.attacker, cfg.attack_folds, cfg.attack_seed,
                           universe=data.dataset.n_items)
    row.bacc_mean, row.bacc_folds = attack.mean, list(attack.folds)
    if target is not None: model.save(target / "model.txt")
    row.seconds = time.perf_counter() - started
    logger.info("%s: ndcg@%d %.4f, balanced accuracy %.4f (%.1fs)", row.config, cfg.ndcg_k, row.ndcg,
                row.bacc_mean, row.seconds)
    return row

def _guarded(data, cfg, cell, out):
    try:
        return run_cell(data, cfg, cell, out)
    except Exception as e:
        label = ORIGINAL if cell is None else cell.label
        logger.error("%s failed: %s", label, e)
        row = ReportRow(label, status="failed", error="{}: {}".format(type(e).__name__, e))
        if cell is not None:
            row.strategy, row.sampler, row.ratio, row.aggregator = cell.strategy, cell.sampler, cell.ratio, cell.aggregator
        return row

def run_experiment(cfg, data=None):
    """
    runs the `original` row and every grid cell; `data` (a `PreparedData`) skips loading

    RETURNS
        ExperimentReport; rows ordered as the grid, failures recorded as rows
    """
    if data is None: data = prepare(cfg)
    out = Path(cfg.out)
    data.save(out / "data")

    table = StereotypeTable.from_dataset(data.trainval, data.partition)
    scores = user_scores(data.trainval, data.partition, table, cfg.aggregators[0])
    emit_distributions(table, scores, out / "distributions", compute_gamma(scores, cfg.gamma_mode), data.partition)

    jobs = [None] + cfg.cells()
    if cfg.workers > 1:
        rows = Parallel(n_jobs=cfg.workers, prefer="threads")(delayed(_guarded)(data, cfg, c, out) for c in jobs)
    else:
        rows = [_guarded(data, cfg, c, out) for c in jobs]

    report = ExperimentReport(rows)
    original = report.original
    if original.ok:
        for row in report.rows[1:]:
            if row.ok: row.bacc_delta = row.bacc_mean - original.bacc_mean
    report.save(out)
    emit_tradeoff(report, out / "tradeoff", by="strategy")
    emit_tradeoff(report, out / "tradeoff", by="sampler")
    logger.info("experiment finished: %d row(s), %d failure(s), report in %s", len(report), len(report.failures), out)
    return report


##############################################################################################
## TRADE-OFF SERIES

TRADEOFF_COLUMNS = ("ndcg", "bacc", "label")

def emit_tradeoff(report, path, by="strategy"):
    """
    writes one series per strategy (or sampler) with the (NDCG, BAcc, label) points of the
    successful grid rows, plus `baseline.tsv` holding the `original` row's values

    RETURNS
        list of written paths
    """
    if by not in ("strategy", "sampler"): raise ConfigError("series are grouped by strategy or sampler, not '{}'".format(by))
    if not len(report): raise ConfigError("cannot emit trade-off series of an empty report")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = []

    original = report.original
    if original is not None and original.ok:
        baseline = pd.DataFrame([(original.ndcg, original.bacc_mean, ORIGINAL)], columns=list(TRADEOFF_COLUMNS))
        baseline.to_csv(path / "baseline.tsv", sep="\t", index=False, lineterminator="\n", float_format="%.6f")
        written.append(path / "baseline.tsv")

    series = {}
    for row in report.rows:
        if row.config == ORIGINAL or not row.ok: continue
        series.setdefault(getattr(row, by), []).append((row.ndcg, row.bacc_mean, row.config))
    for key, points in series.items():
        target = path / "{}_{}.tsv".format(by, key)
        pd.DataFrame(points, columns=list(TRADEOFF_COLUMNS)).to_csv(
            target, sep="\t", index=False, lineterminator="\n", float_format="%.6f")
        written.append(target)
    return written
