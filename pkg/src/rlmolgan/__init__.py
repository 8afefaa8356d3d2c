"""Adversarial reinforcement-learning generation of SMILES molecules."""

from .chem import canonical, canonicalize, parse, parse_smiles, tokenize, write_smiles
from .config import Config, load_config
from .evalkit import metrics
from .trainer import Trainer

__version__ = "0.1.0"

__all__ = [
    "Config", "Trainer", "canonical", "canonicalize", "load_config", "metrics",
    "parse", "parse_smiles", "tokenize", "write_smiles",
]
