import logging
import os

from dotenv import load_dotenv

# Load package-specific .env first (rio/.env), then fall back to defaults
try:
    _here_env = os.path.join(os.path.dirname(__file__), ".env")
    if os.path.exists(_here_env):
        load_dotenv(_here_env)
    else:
        load_dotenv()
except Exception:
    load_dotenv()

OUTPUT_DIR = os.getenv("RIO_OUTPUT_DIR", "runs")
LOG_LEVEL = os.getenv("RIO_LOG_LEVEL", "INFO")
DEFAULT_SEED = int(os.getenv("RIO_SEED", "0"))
API_PORT = int(os.getenv("RIO_API_PORT", "8000"))

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    """Configure the root logger once for CLI and server entry points."""
    logging.basicConfig(level=(level or LOG_LEVEL).upper(), format=LOG_FORMAT)
