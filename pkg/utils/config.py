# utils/config.py
import os
import logging
from typing import Any, Dict, Optional
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    """
    Runtime settings for kinetic-uq.
    Loaded from environment variables (optionally through a .env file). Scenario
    parameters live in the INI files under SCENARIO_DIR, not here.
    """

    # Log settings
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_DIR = os.getenv("LOG_DIR", "logs")
    LOG_FILE = os.getenv("LOG_FILE", "kinetic_uq.log")
    LOG_TO_FILE = os.getenv("LOG_TO_FILE", "true").lower() == "true"

    # Worker pool for node/sample sweeps (0 = available parallelism)
    KINETIC_UQ_THREADS = int(os.getenv("KINETIC_UQ_THREADS", "0"))

    # Locations
    SCENARIO_DIR = os.getenv("SCENARIO_DIR", os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios"))
    OUTPUT_DIR = os.getenv("OUTPUT_DIR", "output")

    # Numerics defaults
    DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "2024"))
    CFL_SAFETY = float(os.getenv("CFL_SAFETY", "1.0"))
    FLOAT_DIGITS = int(os.getenv("FLOAT_DIGITS", "17"))

    @classmethod
    def validate(cls) -> Dict[str, str]:
        """
        Validate the environment settings.

        Returns:
            dict: Dictionary of invalid configuration items
        """
        errors = {}

        if cls.LOG_LEVEL.upper() not in ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]:
            errors["LOG_LEVEL"] = f"Unknown log level '{cls.LOG_LEVEL}'"
        if cls.KINETIC_UQ_THREADS < 0:
            errors["KINETIC_UQ_THREADS"] = "Thread count must be 0 (auto) or positive"
        if cls.CFL_SAFETY <= 0 or cls.CFL_SAFETY > 1:
            errors["CFL_SAFETY"] = "CFL safety factor must be in (0, 1]"
        if cls.FLOAT_DIGITS < 1 or cls.FLOAT_DIGITS > 17:
            errors["FLOAT_DIGITS"] = "Significant digits must be between 1 and 17"
        if not os.path.isdir(cls.SCENARIO_DIR):
            errors["SCENARIO_DIR"] = f"Scenario directory {cls.SCENARIO_DIR} not found"

        return errors

    @classmethod
    def get_log_level(cls) -> int:
        """
        Get the logging level from the configuration.

        Returns:
            int: Logging level constant
        """
        levels = {
            "DEBUG": logging.DEBUG,
            "INFO": logging.INFO,
            "WARNING": logging.WARNING,
            "ERROR": logging.ERROR,
            "CRITICAL": logging.CRITICAL
        }
        return levels.get(cls.LOG_LEVEL.upper(), logging.INFO)

    @classmethod
    def resolve_threads(cls, requested: Optional[int] = None) -> int:
        """
        Pick the worker count: CLI flag first, then KINETIC_UQ_THREADS, then cpu count.

        Args:
            requested (int, optional): Value of --threads

        Returns:
            int: Number of workers, at least 1
        """
        if requested is not None and requested > 0:
            return requested
        if cls.KINETIC_UQ_THREADS > 0:
            return cls.KINETIC_UQ_THREADS
        return max(1, os.cpu_count() or 1)

    @classmethod
    def as_dict(cls) -> Dict[str, Any]:
        """
        Return the configuration as a dictionary.

        Returns:
            dict: Configuration as a dictionary
        """
        return {
            key: value for key, value in cls.__dict__.items()
            if key.isupper() and not key.startswith('_')
        }
