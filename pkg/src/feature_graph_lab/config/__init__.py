"""Configuration module for feature-graph-lab."""

from .settings import (
    ensure_dirs,
    get_config_file,
    get_datasets_dir,
    get_graphs_dir,
    get_mdl_config,
    get_plans_dir,
    get_reports_dir,
    get_runs_dir,
    get_sweep_config,
    get_training_defaults,
    get_workspace_dir,
    load_config,
    save_config,
)
from .recipes import RECIPES, match_recipe

__all__ = [
    "ensure_dirs",
    "get_config_file",
    "get_datasets_dir",
    "get_graphs_dir",
    "get_plans_dir",
    "get_reports_dir",
    "get_runs_dir",
    "get_workspace_dir",
    "load_config",
    "save_config",
    "get_training_defaults",
    "get_sweep_config",
    "get_mdl_config",
    "RECIPES",
    "match_recipe",
]
