"""
Configuration de CSNet
"""

from .config_manager import (
    ConfigManager, RunConfig, PruneConfig, DataConfig, AnalysisConfig, LoggingConfig,
    apply_overrides, resolved_dict, parse_split, config_manager,
)

__all__ = [
    'ConfigManager', 'RunConfig', 'PruneConfig', 'DataConfig', 'AnalysisConfig', 'LoggingConfig',
    'apply_overrides', 'resolved_dict', 'parse_split', 'config_manager',
]
