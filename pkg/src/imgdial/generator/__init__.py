"""Visual-knowledge-grounded response generator."""

from .config import GeneratorConfig
from .decoding import generate, teacher_forced_distributions, teacher_forced_nll
from .export import export_attention, load_attention, save_attention
from .inputs import (
    Batch, InputBatch, build_attention_mask, build_decode_inputs, build_inputs,
    build_teacher_forced_inputs, collate, n_masked,
)
from .losses import loss_terms, mcp_loss, mrp_loss, ordered_mcp_nll, total_loss
from .model import COUNTERS, DecodingHead, GeneratorModel, vkb_distribution
from .training import load_generator, new_model, save_generator, train_generator

__all__ = [
    "Batch", "COUNTERS", "DecodingHead", "GeneratorConfig", "GeneratorModel", "InputBatch",
    "build_attention_mask", "build_decode_inputs", "build_inputs", "build_teacher_forced_inputs",
    "collate", "export_attention", "generate", "load_attention", "load_generator", "loss_terms",
    "mcp_loss", "mrp_loss", "n_masked", "new_model", "ordered_mcp_nll", "save_attention",
    "save_generator", "teacher_forced_distributions", "teacher_forced_nll", "total_loss",
    "train_generator", "vkb_distribution",
]
