"""Desk-scale simulator of multimodal federated learning with adversarial
alignment, gated feature fusion and similarity-weighted ensemble distillation."""

from .config import Ablations, DataConfig, RunConfig, Roster
from .protocol import run

__all__ = ["Ablations", "DataConfig", "RunConfig", "Roster", "run"]
__version__ = "0.1.0"
