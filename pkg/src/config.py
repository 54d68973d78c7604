"""Configuration for the space atom laser simulator."""
import logging
import os
from pathlib import Path

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()

PACKAGE_ROOT = Path(__file__).resolve().parent.parent
VERSION = "1.0.0"


class Config:
    # Output
    OUTPUT_DIR = os.getenv("LASER_OUTPUT_DIR", "./runs")

    # Parallelism (scan processes and FFT workers)
    THREADS = os.getenv("LASER_THREADS", "1")
    FFT_WORKERS = os.getenv("LASER_FFT_WORKERS", "1")

    # Logging
    LOG_LEVEL = os.getenv("LASER_LOG_LEVEL", "INFO")

    # Default presets
    SPECIES = os.getenv("LASER_SPECIES", "rb87")
    SEQUENCE = os.getenv("LASER_SEQUENCE", "model-sequence")
    GRID = os.getenv("LASER_GRID", "desk-reduced")

    # Shipped data
    DATA_DIR = Path(os.getenv("LASER_DATA_DIR", str(PACKAGE_ROOT / "data")))
    SPECIES_DIR = DATA_DIR / "species"
    SEQUENCE_DIR = DATA_DIR / "sequences"
    CONFIG_DIR = DATA_DIR / "configs"

    # Preflight thresholds for the "much greater than" conditions
    SHARP_RESONANCE_MIN_RATIO = 10.0
    STATE_SELECTIVITY_MIN_RATIO = 5.0
    RWA_MIN_RATIO = 1.0e3
    NYQUIST_SAFETY = 4.0

    _fft_workers = None

    @classmethod
    def threads(cls) -> int:
        return cls._positive_int("LASER_THREADS", cls.THREADS)

    @classmethod
    def fft_workers(cls) -> int:
        """Parsed once; every FFT asks for it."""
        if cls._fft_workers is None:
            cls._fft_workers = cls._positive_int("LASER_FFT_WORKERS", cls.FFT_WORKERS)
        return cls._fft_workers

    @staticmethod
    def _positive_int(name, raw):
        try:
            value = int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be an integer, got {raw!r}")
        if value < 1:
            raise ConfigError(f"{name} must be >= 1, got {value}")
        return value

    @classmethod
    def validate(cls):
        cls.threads()
        cls._fft_workers = None
        cls.fft_workers()
        if logging.getLevelName(str(cls.LOG_LEVEL).upper()) not in (
            logging.DEBUG, logging.INFO, logging.WARNING, logging.ERROR, logging.CRITICAL
        ):
            raise ConfigError(f"LASER_LOG_LEVEL not recognised: {cls.LOG_LEVEL!r}")
        if not cls.DATA_DIR.exists():
            raise ConfigError(f"Data directory not found: {cls.DATA_DIR}")
