"""
testing code for `commands.py` and the `sbo` management command

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
from django.test import SimpleTestCase
from django.core.management import call_command
from django.core.management.base import CommandError

import json
from io import StringIO

import pandas as pd

from . import commands
from .harness import REPORT_COLUMNS
from .tests_dataset import TempDirMixin

COMMANDS_VERSION = "1.0"

#########################################################################################
## SUNDRY HELPER FUNCTIONS AND OBJECTS

## COMMAND VIEW EXAMPLE
class CommandViewExample(commands.CommandViewBase):
    """an example for a command view object (for testing)"""

    def run_echo(s, parser):
        """a simple echo handler (returns the remainder)"""
        parser.add_argument('words', nargs='*')
        parser.add_argument('--uppercase', '-u', action='count')
        parse_obj = parser.run()
        if parse_obj.error: return commands.CommandResponseText(parse_obj.errmsg, ok=False)
        out = "-".join(parse_obj.words)
        if parse_obj.uppercase: out=out.upper()
        return commands.CommandResponseText("you said: {}".format(out))

    def run_version(s, parser):
        return commands.CommandResponseText("example version {}".format(commands.__version__))

CommandViewExample.alias("v", "version")
CommandViewExample.alias("e", "echo")


def sbo(*argv):
    """runs the management command, returns its output"""
    out = StringIO()
    call_command('sbo', *[str(a) for a in argv], stdout=out)
    return out.getvalue()


#########################################################################################
## COMMAND OBJECTS TEST
class CommandObjectsTest(SimpleTestCase):
    """testing the command objects without running any pipeline"""

    ####################################################################
    ## TEST VERSION
    def test_version(s):
        """ensure the version number is correct"""
        s.assertEqual(commands.__version__, COMMANDS_VERSION)
        response = commands.SboCommandView(["version"]).dispatch()
        s.assertEqual(response.response_text, "sbo library version {}".format(COMMANDS_VERSION))

    ####################################################################
    ## TEST DISPATCH
    def test_dispatch(s):
        """testing dispatch, aliases and unknown subcommands"""
        s.assertEqual(CommandViewExample(["echo", "a", "b"]).dispatch().response_text, "you said: a-b")
        s.assertEqual(CommandViewExample(["e", "a", "b", "-u"]).dispatch().response_text, "you said: A-B")
        s.assertEqual(CommandViewExample(["v"]).dispatch().response_text, "example version 1.0")
        s.assertEqual(CommandViewExample([]).dispatch().response_text, "help functionality is not currently implemented")

        response = CommandViewExample(["frobnicate"]).dispatch()
        s.assertFalse(response.ok)
        s.assertIn("frobnicate", response.response_text)

    def test_hyphens(s):
        s.assertEqual(commands.SboCommandView(["train-rec", "--help"]).dispatch().ok, False)
        s.assertIn("--learning-rate", commands.SboCommandView(["train-rec", "--help"]).dispatch().response_text)

    ####################################################################
    ## TEST UNDECLARED ARGUMENTS
    def test_undeclared_args(s):
        """tokens a subcommand does not declare fail the command"""
        response = CommandViewExample(["echo", "a", "--colour", "red"]).dispatch()
        s.assertFalse(response.ok)
        s.assertIn("--colour", response.response_text)
        response = commands.SboCommandView(["obfuscate", "a.csv", "b.csv", "extra", "--out", "x"]).dispatch()
        s.assertFalse(response.ok)
        s.assertIn("unrecognized arguments: extra", response.response_text)
        response = commands.SboCommandView(["version", "now"]).dispatch()
        s.assertFalse(response.ok)
        s.assertIn("now", response.response_text)

    ####################################################################
    ## TEST PARSE ERRORS
    def test_parse_error(s):
        response = commands.SboCommandView(["stats"]).dispatch()
        s.assertFalse(response.ok)
        s.assertTrue(response.response_text.startswith("error:"))
        response = commands.SboCommandView(["synth", "--out", "x", "--items", "many"]).dispatch()
        s.assertFalse(response.ok)
        s.assertIn("--items", response.response_text)

    ####################################################################
    ## TEST HELP
    def test_help(s):
        for argv in ([], ["help"], ["h"]):
            response = commands.SboCommandView(argv).dispatch()
            s.assertEqual(response.response_text, commands.HELP)
            s.assertTrue(response.ok)

    ####################################################################
    ## TEST RESPONSES
    def test_responses(s):
        r = commands.CommandResponse("done", "runs/a/report.tsv", data={'rows': 3})
        r.add([commands.Artifact("runs/a/model.txt", "checkpoint"), "runs/a/data"])
        s.assertEqual([a.kind for a in r.artifacts], ["tsv", "checkpoint", "file"])
        dct = r.as_dict()
        s.assertEqual(dct['ok'], True)
        s.assertEqual(dct['data'], {'rows': 3})
        s.assertEqual(dct['text'], "done")
        s.assertEqual(json.loads(r.as_json()), dct)
        s.assertEqual(str(r).splitlines(), ["done", "wrote runs/a/report.tsv", "wrote runs/a/model.txt", "wrote runs/a/data"])

        t = commands.CommandResponseText("nope", ok=False)
        s.assertEqual(t.as_dict(), {'ok': False, 'artifacts': [], 'data': {}, 'text': "nope"})


#########################################################################################
## MANAGEMENT COMMAND TEST
class ManagementCommandTest(TempDirMixin, SimpleTestCase):
    """runs the subcommands end to end on a small planted dataset"""

    def setUp(s):
        super().setUp()
        s.data = s.dir / "data"
        sbo("synth", "--out", s.data, "--users-per-group", 15, "--items", 60, "--signature", 6, "--common", 6)
        s.interactions = s.data / "interactions.csv"
        s.attributes = s.data / "attributes.csv"

    def test_synth(s):
        for name in ("interactions.csv", "interactions.users.csv", "interactions.items.csv", "attributes.csv"):
            s.assertTrue((s.data / name).exists(), name)

    def test_stats(s):
        output = sbo("stats", s.interactions, s.attributes, "--out", s.dir / "dist", "--json")
        response = json.loads(output)
        s.assertTrue(response['ok'])
        s.assertEqual(response['data']['users'], 30)
        s.assertEqual(response['data']['group F'], 15)
        s.assertEqual(len(response['artifacts']), 2)

    def test_pipeline(s):
        """prepare, obfuscate, train-rec and attack, each reading what the previous one wrote"""
        prepared = s.dir / "prepared"
        sbo("prepare", s.interactions, s.attributes, "--out", prepared, "--core-k", 2)
        for name in ("dataset.csv", "trainval.csv", "test.csv", "train.csv", "validation.csv", "attributes.csv"):
            s.assertTrue((prepared / name).exists(), name)

        obf = s.dir / "obf"
        output = sbo("obfuscate", prepared / "trainval.csv", prepared / "attributes.csv", "--out", obf,
                     "--strategy", "weighted", "--sampler", "topstereo", "--ratio", 0.2, "--seed", 3)
        s.assertIn("weighted-topstereo-rho0.2-mean", output)
        audit = pd.read_csv(obf / "audit.csv", keep_default_na=False)
        s.assertEqual(len(audit), 30)

        output = sbo("train-rec", prepared / "train.csv", prepared / "validation.csv", prepared / "test.csv",
                     "--epochs", 2, "--dim", 4, "--out", s.dir / "model.txt", "--json")
        response = json.loads(output)
        s.assertIn("ndcg@10", response['data'])
        s.assertTrue((s.dir / "model.txt").exists())

        results = s.dir / "attack.tsv"
        sbo("attack", obf / "obfuscated.csv", prepared / "attributes.csv", "--folds", 2, "--epochs", 2,
            "--hidden", 4, "--out", results)
        frame = pd.read_csv(results, sep="\t", dtype=str)
        s.assertEqual(list(frame.columns), ["dataset", "folds", "bacc_mean", "bacc_folds"])
        s.assertEqual(len(frame["bacc_folds"][0].split(";")), 2)
        s.assertEqual((len(frame), frame["folds"][0], frame["dataset"][0]), (1, "2", str(obf / "obfuscated.csv")))
        s.assertRegex(frame["bacc_mean"][0], r"^[01]\.\d{6}$")

    def write_experiment(s, ratios):
        return s.write("exp.yaml", "\n".join([
            "experiment:",
            "  interactions: data/interactions.csv",
            "  attributes: data/attributes.csv",
            "  out: runs/grid",
            "  core_k: 2",
            "  attack_folds: 2",
            "grid:",
            "  sampler: topstereo",
            "  ratio: [{}]".format(ratios),
            "recommender:",
            "  epochs: 2",
            "  dim: 4",
            "attacker:",
            "  epochs: 2",
            "  hidden: 4",
        ]) + "\n")

    def test_experiment(s):
        output = sbo("exp", s.write_experiment("0.1"), "--json")
        response = json.loads(output)
        s.assertEqual(response['data'], {'rows': 2, 'failures': 0})
        frame = pd.read_csv(s.dir / "runs" / "grid" / "report.tsv", sep="\t", dtype=str, keep_default_na=False)
        s.assertEqual(tuple(frame.columns), REPORT_COLUMNS)
        s.assertEqual(frame["config"].tolist(), ["original", "removal-topstereo-rho0.1-mean"])

    def test_experiment_failure(s):
        """a failed grid cell makes the command fail after the report is written"""
        with s.assertRaises(CommandError):
            sbo("experiment", s.write_experiment("0.1, 0.95"))
        frame = pd.read_csv(s.dir / "runs" / "grid" / "report.tsv", sep="\t", dtype=str, keep_default_na=False)
        s.assertEqual(frame["status"].tolist(), ["ok", "ok", "failed"])

    def test_errors(s):
        with s.assertRaises(CommandError):
            sbo("stats", s.dir / "missing.csv", s.attributes)
        with s.assertRaises(CommandError):
            sbo("obfuscate", s.interactions, s.attributes, "--out", s.dir / "o", "--ratio", 0)
        with s.assertRaises(CommandError):
            sbo("frobnicate")
