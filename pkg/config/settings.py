import os
from dotenv import load_dotenv

# Only load the .env file outside production runs (i.e., we are in a local environment)
if os.environ.get("TREEBOOST_ENV") != "production":
    load_dotenv()

# Logging Configuration
LOG_LEVEL = os.getenv('TREEBOOST_LOG_LEVEL', 'INFO').upper()

# Worker Configuration
WORKERS = int(os.getenv('TREEBOOST_WORKERS', '0')) or (os.cpu_count() or 1)

# Randomness Configuration
DEFAULT_SEED = int(os.getenv('TREEBOOST_SEED', '0'))

# Run ledger (SQLAlchemy URL); unset disables recording
RUNS_DATABASE_URL = os.getenv('TREEBOOST_RUNS_DATABASE_URL')

# Optional benchmark data (preprocessed CSVs such as arem_train.csv / arem_test.csv)
BENCHMARK_DIR = os.getenv('TREEBOOST_BENCHMARK_DIR', 'data')

IS_PRODUCTION = os.environ.get("TREEBOOST_ENV", "") == "production"
