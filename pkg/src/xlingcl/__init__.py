"""Desk-scale lab for cross-lingual contrastive training of a toy
dual-encoder retriever: three training objectives with exact gradients,
deterministic training, retrieval evaluation, and margin-based bitext
mining over synthetic multilingual corpora."""

from .backend import active_backend

__all__ = ["active_backend"]
__version__ = "0.1.0"
