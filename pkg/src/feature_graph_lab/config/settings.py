"""Workspace directories and JSON configuration with defaults."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

from platformdirs import user_data_dir

WORKSPACE_ENV = "FGLAB_WORKSPACE"


def get_workspace_dir() -> Path:
    """Get the workspace root (``FGLAB_WORKSPACE`` or the platform data directory)."""
    return Path(os.environ.get(WORKSPACE_ENV, user_data_dir("feature-graph-lab")))


def get_datasets_dir() -> Path:
    return get_workspace_dir() / "datasets"


def get_graphs_dir() -> Path:
    return get_workspace_dir() / "graphs"


def get_runs_dir() -> Path:
    """Get the directory holding record stores and checkpoints."""
    return get_workspace_dir() / "runs"


def get_reports_dir() -> Path:
    return get_workspace_dir() / "reports"


def get_plans_dir() -> Path:
    return get_workspace_dir() / "plans"


def get_config_file() -> Path:
    """Get the config file path."""
    return get_workspace_dir() / "config.json"


def load_config() -> dict[str, Any]:
    """Load configuration from file."""
    config: dict[str, Any] = {}
    config_file = get_config_file()
    if config_file.exists():
        with open(config_file, encoding="utf-8") as f:
            config = json.load(f)
    return config


def save_config(config: dict[str, Any]) -> None:
    """Save configuration to file."""
    config_file = get_config_file()
    config_file.parent.mkdir(parents=True, exist_ok=True)
    with open(config_file, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2)


def ensure_dirs() -> None:
    """Ensure all workspace directories exist."""
    for directory in (get_datasets_dir(), get_graphs_dir(), get_runs_dir(), get_reports_dir(), get_plans_dir()):
        directory.mkdir(parents=True, exist_ok=True)


# Training defaults
DEFAULT_TRAINING_CONFIG = {
    "batch_size": 256,
    "max_epochs": 200,
    "patience": 30,
    "lr": 1e-2,
    "plateau_factor": 0.5,
    "plateau_patience": 10,
    "plateau_threshold": 1e-4,
    "min_lr": 1e-5,
}

DEFAULT_SWEEP_CONFIG = {
    "workers": 1,
    "arc_cap": 20000,  # message-passing arcs per graph
    "max_attempts": 20000,  # rejection-sampling draws per quota
    "replicates": 5,
}

DEFAULT_MDL_CONFIG = {
    "trials": 50,
    "d_max": 8,
    "n": 2000,
    "noise_scale": 0.1,
    "max_select_d": 5,
}


def _section(name: str, defaults: dict[str, Any]) -> dict[str, Any]:
    config = load_config()
    return {**defaults, **config.get(name, {})}


def get_training_defaults() -> dict[str, Any]:
    """Get training defaults merged with the ``training`` section of config.json."""
    return _section("training", DEFAULT_TRAINING_CONFIG)


def get_sweep_config() -> dict[str, Any]:
    """Get sweep configuration with defaults."""
    return _section("sweep", DEFAULT_SWEEP_CONFIG)


def get_mdl_config() -> dict[str, Any]:
    """Get MDL verification configuration with defaults."""
    return _section("mdl", DEFAULT_MDL_CONFIG)
