"""Synthetic tasks, training, auditing and the command line."""

from .audit import AuditReport, audit, with_coordinate_leak
from .data import Sample, SyntheticTask, gen_dataset, load_dataset, save_dataset
from .model import EgnModel, GnModel, ModelConfig, build_model, load_model, save_model
from .train import TrainConfig, evaluate, train
