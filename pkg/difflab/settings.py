"""
Django settings for difflab project.

The project has no database and no HTTP surface; Django provides the
management-command CLI, settings and logging configuration.
"""

from pathlib import Path
import os
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv()  # Load environment variables from .env file
SECRET_KEY = os.getenv('SECRET_KEY', 'difflab-local-only')

DEBUG = os.getenv('DEBUG', 'False').lower() in ['true', '1']


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',

    # Third party apps
    'rest_framework',  # serializers validate run configs

    # My apps
    'sampling',
    'experiments',
]

# No persistence: every experiment writes plain CSV.
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'


# Schedule constants c0, c1 (beta_1 = T^-c0, plateau c1 ln T / T)
DIFFLAB_C0 = float(os.getenv('DIFFLAB_C0', 2))
DIFFLAB_C1 = float(os.getenv('DIFFLAB_C1', 4))

# Harness
DIFFLAB_THREADS = int(os.getenv('DIFFLAB_THREADS', 1))
DIFFLAB_BLOCK_SIZE = int(os.getenv('DIFFLAB_BLOCK_SIZE', 4096))
DIFFLAB_TOOL_VERSION = os.getenv('DIFFLAB_TOOL_VERSION', '1.0.0')


# Logging goes to stderr so CSV written to stdout stays clean.
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'sampling': {
            'handlers': ['console'],
            'level': os.getenv('DIFFLAB_LOG_LEVEL', 'INFO'),
        },
        'experiments': {
            'handlers': ['console'],
            'level': os.getenv('DIFFLAB_LOG_LEVEL', 'INFO'),
        },
    },
}
