"""Desk-scale multi-scale audio-visual pretraining.

Synthetic paired corpus with controllable multi-scale correspondence,
multi-scale contrastive alignment, conditional diffusion generation, and a
full retrieval/generation evaluation suite behind one config-driven CLI.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config  # noqa: F401
from .metrics import EvalReport  # noqa: F401
