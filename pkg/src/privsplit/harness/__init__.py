"""Operational shell: synthetic data plus the CLI workflows built on it."""

from .config import RunConfig, config_from_dict, load_config
from .data import DatasetSpec, SyntheticDataset, generate_dataset, load_dataset, save_dataset

__all__ = ["DatasetSpec", "RunConfig", "SyntheticDataset", "config_from_dict", "generate_dataset",
           "load_config", "load_dataset", "save_dataset"]
