import logging
import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def create_app(log_level: Optional[str] = None):
    """Configure logging from DVDF_LOG_LEVEL and return the CLI parser."""
    level = (log_level or os.getenv('DVDF_LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)

    from .cli import build_parser
    return build_parser()
