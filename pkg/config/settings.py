"""
Django settings for the negcorr-sched project.

The project has no web surface: Django provides settings, management
commands, the test runner and the experiment ledger.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
from decouple import config
import dj_database_url

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='django-insecure-negcorr-sched-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'scheduling',
]


# Database (experiment ledger)
# Use DATABASE_URL when provided, SQLite next to the project otherwise

DATABASE_URL = config('DATABASE_URL', default=None)

if DATABASE_URL:
    DATABASES = {
        'default': dj_database_url.parse(DATABASE_URL)
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': BASE_DIR / 'db.sqlite3',
        }
    }

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

USE_TZ = True
TIME_ZONE = 'UTC'


# Logging goes to stderr so stdout and --out files carry only primary output

LOG_LEVEL = config('LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'scheduling': {
            'handlers': ['stderr'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}


# Solver and experiment defaults (CLI flags override)

NEGCORR_SCHED_THREADS = config('NEGCORR_SCHED_THREADS', default=1, cast=int)

SDP_TOL = config('SDP_TOL', default=1e-6, cast=float)
SDP_MAX_ITERS = config('SDP_MAX_ITERS', default=20000, cast=int)
SDP_RHO = config('SDP_RHO', default=1.0, cast=float)

CP_MAX_ITERS = config('CP_MAX_ITERS', default=50000, cast=int)

BRUTE_FORCE_CAP = config('BRUTE_FORCE_CAP', default=10**7, cast=int)
