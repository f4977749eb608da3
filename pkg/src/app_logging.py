"""
Logging setup shared by every module.

All loggers hang below the ``GraphemeCTC`` logger. When a run directory
is known the full DEBUG trace goes to ``run_dir/app.log``.
"""

import logging
import sys
from pathlib import Path
from typing import Optional

ROOT_LOGGER = 'GraphemeCTC'
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Return the project logger, or a child of it for ``name``."""
    if not name:
        return logging.getLogger(ROOT_LOGGER)
    short = name.split('.')[-1]
    return logging.getLogger(f'{ROOT_LOGGER}.{short}')


def setup_logging(run_dir: Optional[str] = None, level: str = 'INFO') -> logging.Logger:
    """
    Install the console handler and, if ``run_dir`` is given, the file handler.

    Calling it again only adds what is missing (no duplicated handlers).
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    if not any(getattr(h, '_gctc_console', False) for h in logger.handlers):
        console = logging.StreamHandler(sys.stderr)
        console.setLevel(getattr(logging, level.upper(), logging.INFO))
        console.setFormatter(logging.Formatter('%(message)s'))
        console._gctc_console = True
        logger.addHandler(console)

    if run_dir is not None:
        log_file = Path(run_dir) / 'app.log'
        known = [getattr(h, 'baseFilename', None) for h in logger.handlers]
        if str(log_file.resolve()) not in known:
            try:
                log_file.parent.mkdir(parents=True, exist_ok=True)
                fh = logging.FileHandler(str(log_file), encoding='utf-8')
                fh.setFormatter(logging.Formatter(LOG_FORMAT))
                fh.setLevel(logging.DEBUG)
                logger.addHandler(fh)
            except OSError as e:
                print(f'Warning: could not initialize log file {log_file}: {e}')
        logger.debug(f'Logging initialized, run_dir={run_dir}')

    return logger
