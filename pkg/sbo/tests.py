"""
testing code for a specific installation

NOTE
the tests here check that the settings file carries every SBO_* dict the library reads and
that the management command is reachable; they should be adapted if the settings are moved

Licensed under the MIT License <https://opensource.org/licenses/MIT>.
"""
from django.test import SimpleTestCase
from django.conf import settings
from django.core.management import call_command, get_commands

from io import StringIO

from .attacker import AttackConfig
from .harness import ExperimentConfig
from .obfuscation import ObfuscationConfig
from .recommender import TrainConfig


#########################################################################################
## INSTALLATION TEST

class InstallationTest(SimpleTestCase):

    ####################################################################
    ## TEST SETTINGS
    def test_settings(s):
        """ensures that the SBO settings are defined in the settings file"""
        for key in ('core_k', 'holdout_fraction', 'test_seed', 'valid_seed'):
            s.assertIn(key, settings.SBO_DATASET)
        for key in ('strategy', 'sampler', 'ratio', 'omega', 'aggregator', 'gamma_mode', 'seed'):
            s.assertIn(key, settings.SBO_OBFUSCATION)
        for key in ('workers', 'attack_folds', 'attack_seed', 'ndcg_k'):
            s.assertIn(key, settings.SBO_EXPERIMENT)
        s.assertNotEqual(settings.SBO_DATASET['test_seed'], settings.SBO_DATASET['valid_seed'])

    def test_settings_valid(s):
        """every default builds a valid configuration"""
        ObfuscationConfig.from_settings()
        TrainConfig.from_settings()
        AttackConfig.from_settings()
        cfg = ExperimentConfig.from_settings()
        s.assertEqual(cfg.recommender.k, cfg.ndcg_k)

    def test_overridden_settings(s):
        with s.settings(SBO_OBFUSCATION=dict(settings.SBO_OBFUSCATION, ratio=0.05)):
            s.assertEqual(ObfuscationConfig.from_settings().ratio, 0.05)

    ####################################################################
    ## TEST COMMAND
    def test_command(s):
        """the `sbo` management command is installed (if this fails, check INSTALLED_APPS)"""
        s.assertEqual(get_commands().get('sbo'), 'sbo')
        out = StringIO()
        call_command('sbo', 'version', stdout=out)
        s.assertIn("sbo library version", out.getvalue())
