# utils/logger.py
import logging
from logging.handlers import RotatingFileHandler
import os
from pathlib import Path


def setup_logging(config):
    """
    Set up all loggers with a single configuration function
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(config.get_log_level())

    # Console handler for all logs (once, even if this module is reloaded)
    if not any(getattr(h, '_kinetic_uq', False) for h in root_logger.handlers):
        console_handler = logging.StreamHandler()
        console_handler.setLevel(config.get_log_level())
        console_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
        console_handler._kinetic_uq = True
        root_logger.addHandler(console_handler)

    log_dir = config.LOG_DIR
    if config.LOG_TO_FILE:
        Path(log_dir).mkdir(parents=True, exist_ok=True)

    loggers = {
        'main': {
            'name': 'kinetic_uq',
            'file': os.path.join(log_dir, config.LOG_FILE or "kinetic_uq.log"),
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        },
        'failures': {
            'name': 'solver_failures',
            'file': os.path.join(log_dir, "solver_failures.log"),
            'format': '%(asctime)s - SOLVER FAILURE - %(message)s'
        },
        'results': {
            'name': 'run_results',
            'file': os.path.join(log_dir, "run_results.log"),
            'format': '%(asctime)s - RUN RESULT - %(message)s'
        }
    }

    configured_loggers = {}
    for key, cfg in loggers.items():
        logger = logging.getLogger(cfg['name'])
        logger.setLevel(config.get_log_level())

        if config.LOG_TO_FILE and not logger.handlers:
            file_handler = RotatingFileHandler(
                cfg['file'],
                maxBytes=10*1024*1024,  # 10MB
                backupCount=5
            )
            file_handler.setLevel(config.get_log_level())
            file_handler.setFormatter(logging.Formatter(cfg['format']))
            logger.addHandler(file_handler)

        configured_loggers[key] = logger

    return configured_loggers

# Import configuration
from utils.config import Config

# Initialize all loggers at once
loggers = setup_logging(Config)

# Export the loggers for use in the application
logger = loggers['main']
solver_failures_logger = loggers['failures']
results_logger = loggers['results']
