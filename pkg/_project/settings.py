"""
minimal settings file for the obfuscation toolkit - it is not a web project, so there is
no url configuration, no middleware and no database
"""
import os

###################################################
## GENERAL SETTINGS

BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SECRET_KEY = 'sbo-local-only-not-a-web-deployment'
DEBUG = False
ALLOWED_HOSTS = []

def environ(key):
    """returns True if the key exists in os.environ[] and it is not false'ish"""
    if not key in os.environ.keys(): return False
    if os.environ[key] and os.environ[key] != '0': return True
    return False

def environ_int(key, default):
    """returns os.environ[key] as int, or default if unset or not a number"""
    try: return int(os.environ[key])
    except (KeyError, ValueError): return default


INSTALLED_APPS = [
    'sbo',
]

DATABASES = {}
USE_TZ = True


###################################################
## LOGGING

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)-7s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'sbo': {
            'handlers': ['console'],
            'level': os.environ.get('SBO_LOG_LEVEL', 'INFO').upper(),
            'propagate': False,
        },
    },
}


###################################################
## SBO-SPECIFIC SETTINGS

SBO_DATASET = {
    # delimiter of interaction / attribute files; None means sniff from the header row
    'delimiter': None,
    'core_k': 5,
    'holdout_fraction': 0.2,
    'test_seed': 2024,
    # validation carve and the re-slice after obfuscation share this seed
    'valid_seed': 2025,
}

SBO_OBFUSCATION = {
    'strategy': 'removal',          # imputation | removal | weighted
    'sampler': 'sbsampling',        # sbsampling | topstereo | random
    'ratio': 0.1,
    'omega': 0.5,
    'aggregator': 'mean',           # user score: mean | median of signed item scores
    'gamma_mode': 'mean',           # threshold: mean | median of user scores
    'seed': 42,
}

SBO_RECOMMENDER = {
    'epochs': 100,
    'learning_rate': 0.001,
    'batch_size': 512,
    'patience': 10,
    'seed': 7,
    'dim': 64,
    'reg': 1e-4,
    'init_std': 0.01,
    'k': 10,
}

SBO_ATTACKER = {
    'hidden': 128,
    'epochs': 50,
    'batch_size': 64,
    'learning_rate': 0.001,
    'seed': 11,
    'class_weight': 'inverse',      # inverse | none
    'activation': 'relu',           # relu | tanh
    'init_std': 0.01,
}

SBO_EXPERIMENT = {
    'workers': environ_int('SBO_WORKERS', 1),
    'attack_folds': 5,
    'attack_seed': 13,
    'ndcg_k': 10,
}

# the long-running end-to-end acceptance tests only run if this is set
SBO_ACCEPTANCE = environ('SBO_ACCEPTANCE')
