from pathlib import Path
from dotenv import load_dotenv
import os

from django.core.exceptions import ImproperlyConfigured

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Nothing here signs sessions or cookies; the key only satisfies Django.
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'dtop-offline-toolkit')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'kernels',
    'encoder',
    'pooling',
    'descriptors',
    'retrieval',
    'sampler',
    'analysis',
    'toolkit',
]

# Batch tooling only: descriptors, weights and reports live in files.
DATABASES = {}

USE_I18N = False

USE_TZ = True

TIME_ZONE = 'UTC'


# ---------------------------------------------------------------------
# DTOP TOOLKIT
# ---------------------------------------------------------------------
DTOP = {
    # default number of worker threads for `extract`
    'THREADS': int(os.environ.get('DTOP_THREADS', '1')),
    # number of random rankings the selftest feeds the AP oracle
    'SELFTEST_AP_TRIALS': 1000,
}


# ---------------------------------------------------------------------
# LOGGING
# ---------------------------------------------------------------------
LOG_LEVELS = {
    'error': 'ERROR',
    'info': 'INFO',
    'debug': 'DEBUG',
}

DTOP_LOG = os.environ.get('DTOP_LOG', 'info').strip().lower()
if DTOP_LOG not in LOG_LEVELS:
    raise ImproperlyConfigured(
        f"DTOP_LOG must be one of {', '.join(LOG_LEVELS)}, got {DTOP_LOG!r}"
    )

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVELS[DTOP_LOG],
    },
}
