"""
command views for the obfuscation toolkit


This module mirrors, for command lines, what Django provides for http requests

- **Response Objects** encapsulate the outcome of a subcommand: a text, the files it wrote
    (artifacts), optional structured data and an `ok` flag

- **View Objects** are the workhorse objects that take an argument vector, and that return a
    response object; the first token is the subcommand, it is dispatched to `run_<subcommand>`

EXAMPLE
    python manage.py sbo synth --out data/planted
    python manage.py sbo prepare data/planted/interactions.csv data/planted/attributes.csv --out data/prepared
    python manage.py sbo obfuscate data/prepared/trainval.csv data/planted/attributes.csv --out runs/obf --ratio 0.1
    python manage.py sbo attack runs/obf/obfuscated.csv data/planted/attributes.csv --folds 5
    python manage.py sbo experiment experiment.yaml --out runs/grid

SETTINGS

    defaults come from the SBO_DATASET, SBO_OBFUSCATION, SBO_RECOMMENDER, SBO_ATTACKER and
    SBO_EXPERIMENT dicts in settings; every flag overrides its setting

COPYRIGHT & LICENSE

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
__version__="1.0"
__version_dt__="2026-10-01"
__license__="MIT License"


from django.conf import settings

import argparse
import json
from pathlib import Path

import pandas as pd

from .attacker import AttackConfig, run_attack_cv
from .dataset import (load_interactions, load_user_attributes, load_saved_dataset, idmap_paths,
    k_core_filter, save_partition)
from .harness import ExperimentConfig, prepare_dataset, run_experiment
from .obfuscation import ObfuscationConfig, obfuscate_dataset
from .recommender import TrainConfig, train_bpr, evaluate_model
from .stereotype import StereotypeTable, user_scores, compute_gamma, emit_distributions
from .synthetic import write_planted


##############################################################################################
## SUNDRY HELPER FUNCTIONS AND OBJECTS

## ARGUMENT PARSER
class _ArgumentParser(argparse.ArgumentParser):
    """
    subclasses the argument parser to suppress the error message

    see http://stackoverflow.com/questions/18651705/argparse-unit-tests-suppress-the-help-message
    """
    def error(s, message):
        s._error = message
        raise SystemExit(message)

    def print_help(s, file=None):
        s._error = s.format_help()
        raise SystemExit()

def _load(path, delimiter=None):
    """a dataset written by `save_dataset` keeps its catalogs, anything else is read plainly"""
    if all(p.exists() for p in idmap_paths(path)): return load_saved_dataset(path, delimiter)
    return load_interactions(path, delimiter)

def _fmt(stats):
    """dict -> aligned `key: value` lines"""
    width = max(len(k) for k in stats) if stats else 0
    return "\n".join("{}: {}".format(k.ljust(width), "{:.6g}".format(v) if isinstance(v, float) else v)
                     for k, v in stats.items())

def _overrides(clargs, names):
    """the flags that were given, as keyword overrides"""
    return {n: getattr(clargs, n) for n in names if getattr(clargs, n, None) is not None}


###################################################################################################
## RESPONSE SECTION
###################################################################################################

##############################################################################################
## ARTIFACT
class Artifact():
    """a file written by a subcommand"""

    def __init__(s, path, kind=None):
        s.path = str(path)
        if kind == None: kind = Path(path).suffix.lstrip(".") or "file"
        s.kind = kind

    def as_dict(s):
        return {"path": s.path, "kind": s.kind}


##############################################################################################
## COMMAND RESPONSE
class CommandResponse():
    """
    a command response

    NOTE
    - the `artifacts` parameter can either be one item of type Artifact (or a path), or a list
    - `ok=False` marks a failed command; the management command turns it into exit status 1
    """

    def __init__(s, response_text, artifacts=None, ok=None, data=None):
        s.response_text = response_text
        s.artifacts = []
        if artifacts == None: artifacts = []
        s.add(artifacts)
        if ok == None: ok = True
        s.ok = ok
        if data == None: data = {}
        s.data = data

    def add(s, artifacts):
        """
        adds one or more artifact(s) to the response
        """
        if isinstance(artifacts, (Artifact, str, Path)): artifacts = [artifacts]
        s.artifacts.extend(a if isinstance(a, Artifact) else Artifact(a) for a in artifacts)

    ## AS DICT
    def as_dict(s):
        """
        returns the response as a python dict
        """
        dct = {}
        dct['ok'] = s.ok
        dct['artifacts'] = [a.as_dict() for a in s.artifacts]
        dct['data'] = s.data
        dct['text'] = str(s.response_text)
        return dct

    ## AS JSON
    def as_json(s):
        """
        returns the response as a json string
        """
        return json.dumps(s.as_dict(), default=str)

    def __str__(s):
        lines = [str(s.response_text)]
        lines += ["wrote {}".format(a.path) for a in s.artifacts]
        return "\n".join(lines)


## COMMAND RESPONSE TEXT
class CommandResponseText(CommandResponse):
    """implements a command response with text only"""
    def __init__(s, response_text, ok=None):
        return super().__init__(response_text, None, ok)


###################################################################################################
## VIEW SECTION
###################################################################################################

##############################################################################################
## COMMAND VIEW BASE OBJECT
class CommandViewBase():
    """
    base class for the equivalent of a Django view object, but for argument vectors

    - it is instantiated with the argument vector (without the program name)

    - the main entry is the `dispatch` function which interprets the first token as subcommand;
        it then runs a method called `run_<subcommand>` (hyphens become underscores) provided
        that it is available; otherwise it runs the method called `unknown_command`

    - all `run_xxx` functions are given a fresh `parser` as argument, augmented with a `run`
        method that parses the rest of the argument vector; the parse result carries `.error`
        and `.errmsg`; tokens the subcommand did not declare are an error
    """

    def __init__(s, argv):
        s.argv = [str(a) for a in argv]

    ############################################################
    ## DISPATCH
    def dispatch(s):
        """main entrance point"""
        try: subcommand = s.argv[0]
        except IndexError: subcommand = "help"
        parser = s._parser(s.argv[1:], subcommand)
        try: run_subcommand = getattr(s, 'run_'+subcommand.lower().replace('-', '_'))
        except AttributeError: return s.unknown_command(subcommand, parser)
        return run_subcommand(parser)

    ############################################################
    ## ALIAS
    @classmethod
    def alias(cls, alias, original):
        """
        creates an alias for a `run_` method

        USAGE
            class MyView(CommandViewBase):
                def run_foo(s, ...):
                    ...
            MyView.alias('f', 'foo')
        """
        setattr(cls, 'run_'+alias, getattr(cls, 'run_'+original))

    ############################################################
    ## RUN COMMANDS
    def unknown_command(s, subcommand, parser):
        """default handler for unknown (sub)command"""
        return CommandResponseText("unknown subcommand '{}'; try 'help'".format(subcommand), ok=False)

    def run_help(s, parser):
        """handler for the help command (derived classes should overwrite)"""
        return CommandResponseText("help functionality is not currently implemented")

    ############################################################
    ## PARSING METHODS
    def _parser(s, remainder, prog=None):
        """
        returns a fresh `argparse` parser object, augmented with the `run` method
        """
        parser = _ArgumentParser(prog=prog)
        parser.add_argument('--json', action='store_true', help="print the response as json")
        def run():
            return s.parse(parser, remainder)
        parser.run = run
        return parser

    def parse(s, parser, remainder):
        """runs the parser on the remainder (a list of tokens)

        EXAMPLE
            parser.add_argument("--seed", type=int)
            parse_obj = parser.run()
            parse_obj.error # True or False
            parse_obj.errmsg # only if .error == True; also for undeclared arguments
        """
        try:
            parse_obj = parser.parse_args(list(remainder))
            parse_obj.error = False
        except SystemExit:
            parse_obj = argparse.Namespace(error=True, errmsg=getattr(parser, '_error', ''))
        return parse_obj


###################################################################################################
## OBFUSCATION TOOLKIT VIEW
###################################################################################################

HELP = """subcommands:
  stats INTERACTIONS ATTRIBUTES         dataset and stereotypicality statistics
  prepare INTERACTIONS ATTRIBUTES       k-core filter, test and validation splits
  obfuscate INTERACTIONS ATTRIBUTES     stereotypicality-based obfuscation
  train-rec TRAIN VALIDATION [TEST]     BPR-MF training and NDCG evaluation
  attack INTERACTIONS ATTRIBUTES        k-fold attribute-inference attack
  experiment CONFIG                     full grid experiment
  synth                                 planted-stereotype dataset
  version                               library version
add --help to any subcommand for its flags, --json for a json response"""

def _error(clargs):
    return CommandResponseText("error: {}".format(clargs.errmsg), ok=False)


class SboCommandView(CommandViewBase):
    """the `sbo` management command"""

    def _data_args(s, parser, attributes=True):
        parser.add_argument('interactions')
        if attributes: parser.add_argument('attributes')
        parser.add_argument('--delimiter', default=None)
        parser.add_argument('--group-order', nargs=2, default=None, metavar=('FIRST', 'SECOND'))

    def _load_pair(s, clargs):
        dataset = _load(clargs.interactions, clargs.delimiter)
        partition = load_user_attributes(clargs.attributes, dataset, clargs.delimiter, clargs.group_order)
        return dataset, partition

    ############################################################
    ## STATS
    def run_stats(s, parser):
        """dataset statistics, ister summary and optional distribution files"""
        s._data_args(parser)
        parser.add_argument('--core-k', type=int, default=None)
        parser.add_argument('--aggregator', default=settings.SBO_OBFUSCATION['aggregator'])
        parser.add_argument('--gamma-mode', default=settings.SBO_OBFUSCATION['gamma_mode'])
        parser.add_argument('--bins', type=int, default=20)
        parser.add_argument('--shared-only', action='store_true')
        parser.add_argument('--out', default=None)
        clargs = parser.run()
        if clargs.error: return _error(clargs)

        dataset, partition = s._load_pair(clargs)
        if clargs.core_k: dataset = k_core_filter(dataset, clargs.core_k)
        partition = partition.align(dataset)
        table = StereotypeTable.from_dataset(dataset, partition)
        scores = user_scores(dataset, partition, table, clargs.aggregator)
        gamma = compute_gamma(scores, clargs.gamma_mode)

        stats = dataset.describe()
        stats.update({"group " + l: n for l, n in zip(partition.labels, partition.sizes())})
        stats.update({"ister " + k: v for k, v in table.summary().items()})
        stats["gamma"] = gamma
        stats["selected users"] = int((scores >= gamma).sum())
        response = CommandResponse(_fmt(stats), data=stats)
        if clargs.out:
            response.add(emit_distributions(table, scores, clargs.out, gamma, partition, clargs.bins, clargs.shared_only))
        return response

    ############################################################
    ## PREPARE
    def run_prepare(s, parser):
        """k-core filter plus test and validation carves, written with their id maps"""
        s._data_args(parser)
        parser.add_argument('--out', required=True)
        parser.add_argument('--core-k', type=int, default=None)
        parser.add_argument('--holdout-fraction', type=float, default=None)
        parser.add_argument('--test-seed', type=int, default=None)
        parser.add_argument('--valid-seed', type=int, default=None)
        clargs = parser.run()
        if clargs.error: return _error(clargs)

        cfg = ExperimentConfig.from_settings(**_overrides(clargs, ('core_k', 'holdout_fraction', 'test_seed', 'valid_seed')))
        dataset, partition = s._load_pair(clargs)
        data = prepare_dataset(dataset, partition, cfg)
        written = data.save(clargs.out)
        written.append(save_partition(data.partition, Path(clargs.out) / "attributes.csv"))
        stats = data.describe()
        return CommandResponse(_fmt(stats), written, data=stats)

    ############################################################
    ## OBFUSCATE
    def run_obfuscate(s, parser):
        """obfuscates a dataset; writes the result (with id maps) and the audit"""
        s._data_args(parser)
        parser.add_argument('--out', required=True)
        parser.add_argument('--strategy', default=None)
        parser.add_argument('--sampler', default=None)
        parser.add_argument('--ratio', type=float, default=None)
        parser.add_argument('--omega', type=float, default=None)
        parser.add_argument('--aggregator', default=None)
        parser.add_argument('--gamma-mode', default=None)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--workers', type=int, default=settings.SBO_EXPERIMENT['workers'])
        clargs = parser.run()
        if clargs.error: return _error(clargs)

        cfg = ObfuscationConfig.from_settings(**_overrides(clargs,
            ('strategy', 'sampler', 'ratio', 'omega', 'aggregator', 'gamma_mode', 'seed')))
        dataset, partition = s._load_pair(clargs)
        table = StereotypeTable.from_dataset(dataset, partition)
        outcome = obfuscate_dataset(dataset, partition, table, cfg, clargs.workers)
        summary = outcome.summary()
        return CommandResponse("{}\n{}".format(cfg.label, _fmt(summary)), outcome.save(clargs.out), data=summary)

    ############################################################
    ## TRAIN RECOMMENDER
    def run_train_rec(s, parser):
        """trains BPR-MF; evaluates NDCG@k on the test slice if one is given"""
        parser.add_argument('train')
        parser.add_argument('validation')
        parser.add_argument('test', nargs='?', default=None)
        parser.add_argument('--delimiter', default=None)
        parser.add_argument('--out', default=None, help="checkpoint file")
        parser.add_argument('--epochs', type=int, default=None)
        parser.add_argument('--learning-rate', type=float, default=None)
        parser.add_argument('--batch-size', type=int, default=None)
        parser.add_argument('--patience', type=int, default=None)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--dim', type=int, default=None)
        parser.add_argument('--reg', type=float, default=None)
        parser.add_argument('--k', type=int, default=None)
        clargs = parser.run()
        if clargs.error: return _error(clargs)

        cfg = TrainConfig.from_settings(**_overrides(clargs,
            ('epochs', 'learning_rate', 'batch_size', 'patience', 'seed', 'dim', 'reg', 'k')))
        train = _load(clargs.train, clargs.delimiter)
        validation = _load(clargs.validation, clargs.delimiter)
        model = train_bpr(train, validation, cfg)
        stats = {"users": model.n_users, "items": model.n_items, "dim": model.dim}
        if clargs.test:
            stats["ndcg@{}".format(cfg.k)] = evaluate_model(model, _load(clargs.test, clargs.delimiter),
                                                            train.union(validation), cfg.k)
        response = CommandResponse(_fmt(stats), data=stats)
        if clargs.out: response.add(model.save(clargs.out))
        return response

    ############################################################
    ## ATTACK
    def run_attack(s, parser):
        """k-fold attacker; prints per-fold and mean balanced accuracy"""
        s._data_args(parser)
        parser.add_argument('--folds', type=int, default=settings.SBO_EXPERIMENT['attack_folds'])
        parser.add_argument('--fold-seed', type=int, default=settings.SBO_EXPERIMENT['attack_seed'])
        parser.add_argument('--hidden', type=int, default=None)
        parser.add_argument('--epochs', type=int, default=None)
        parser.add_argument('--batch-size', type=int, default=None)
        parser.add_argument('--learning-rate', type=float, default=None)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--universe', type=int, default=None)
        parser.add_argument('--workers', type=int, default=settings.SBO_EXPERIMENT['workers'])
        parser.add_argument('--out', default=None, help="results file")
        clargs = parser.run()
        if clargs.error: return _error(clargs)

        cfg = AttackConfig.from_settings(**_overrides(clargs, ('hidden', 'epochs', 'batch_size', 'learning_rate', 'seed')))
        dataset, partition = s._load_pair(clargs)
        result = run_attack_cv(dataset, partition, cfg, clargs.folds, clargs.fold_seed, clargs.universe, clargs.workers)
        lines = ["fold {}: {}".format(i, "skipped" if v is None else "{:.6f}".format(v)) for i, v in enumerate(result.folds)]
        lines.append("mean balanced accuracy: {:.6f}".format(result.mean))
        response = CommandResponse("\n".join(lines), data=result.as_dict())
        if clargs.out:
            out = Path(clargs.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            pd.DataFrame({
                "dataset": [clargs.interactions], "folds": [clargs.folds], "bacc_mean": ["{:.6f}".format(result.mean)],
                "bacc_folds": [";".join("skipped" if v is None else "{:.6f}".format(v) for v in result.folds)],
            }).to_csv(out, sep="\t", index=False, lineterminator="\n")
            response.add(out)
        return response

    ############################################################
    ## EXPERIMENT
    def run_experiment(s, parser):
        """runs a grid experiment from a config file"""
        parser.add_argument('config')
        parser.add_argument('--out', default=None)
        parser.add_argument('--workers', type=int, default=None)
        clargs = parser.run()
        if clargs.error: return _error(clargs)

        cfg = ExperimentConfig.from_file(clargs.config, **_overrides(clargs, ('out', 'workers')))
        report = run_experiment(cfg)
        lines = ["{}\t{}\t{}\t{}".format(r.config, r.status,
                                         "" if r.ndcg is None else "ndcg {:.4f}".format(r.ndcg),
                                         "" if r.bacc_mean is None else "bacc {:.4f}".format(r.bacc_mean))
                 for r in report.rows]
        if not report.ok: lines.append("{} configuration(s) failed".format(len(report.failures)))
        out = Path(cfg.out)
        return CommandResponse("\n".join(lines), [out / "report.tsv", out / "timings.tsv"], ok=report.ok,
                               data={"rows": len(report), "failures": len(report.failures)})

    ############################################################
    ## SYNTH
    def run_synth(s, parser):
        """writes a planted-stereotype dataset"""
        parser.add_argument('--out', required=True)
        parser.add_argument('--users-per-group', type=int, default=150)
        parser.add_argument('--items', type=int, default=600)
        parser.add_argument('--signature', type=int, default=40)
        parser.add_argument('--common', type=int, default=40)
        parser.add_argument('--core', type=int, default=None)
        parser.add_argument('--exclusive', type=int, nargs=2, default=None, metavar=('LOW', 'HIGH'))
        parser.add_argument('--signature-pool', type=int, default=None)
        parser.add_argument('--crossover', type=float, default=0.45)
        parser.add_argument('--seed', type=int, default=0)
        clargs = parser.run()
        if clargs.error: return _error(clargs)

        written = write_planted(clargs.out, users_per_group=clargs.users_per_group, n_items=clargs.items,
                                signature=clargs.signature, common=clargs.common, seed=clargs.seed,
                                core=clargs.core, exclusive=clargs.exclusive, signature_pool=clargs.signature_pool,
                                crossover=clargs.crossover)
        return CommandResponse("planted dataset: {} users per group, {} items".format(
            clargs.users_per_group, clargs.items), written)

    ############################################################
    ## VERSION AND HELP
    def run_version(s, parser):
        clargs = parser.run()
        if clargs.error: return _error(clargs)
        return CommandResponseText("sbo library version {}".format(__version__))

    def run_help(s, parser):
        return CommandResponseText(HELP)

SboCommandView.alias("h", "help")
SboCommandView.alias("v", "version")
SboCommandView.alias("exp", "experiment")
