"""Reproducible experiment runner with TOML configs and CSV/JSON artifacts."""

from .config import RunConfig, build_problem, load_config
from .main import build_parser, main
from .verify import run_suite

__all__ = ["RunConfig", "build_parser", "build_problem", "load_config", "main",
           "run_suite"]
