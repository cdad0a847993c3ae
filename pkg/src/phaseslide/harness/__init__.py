"""Configuration, file formats, workflows and the command line."""
from .config import ConfigError, RunConfig, builtin_scenario, parse_config, parse_config_text
from .workflow import prepare_certificate, simulate, sweep

__all__ = [
    "ConfigError",
    "RunConfig",
    "builtin_scenario",
    "parse_config",
    "parse_config_text",
    "prepare_certificate",
    "simulate",
    "sweep",
]
