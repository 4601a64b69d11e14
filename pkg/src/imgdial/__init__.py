"""Image-grounded response generation without paired image-dialog data.

Text-to-image retrieval pairs each dialog with an image, whose detected
regions and concept tags condition a transformer response generator.
"""

from .corpus import (
    Dialog, ImageRecord, Quadruple, SyntheticWorld, Tokenizer, build_vocabulary,
    generate_synthetic_world, load_quadruples, make_quadruple, mentioned_concepts,
    read_dialogs, tag_cooccurrence, tokenize, write_dialogs,
)
from .detector import RegionSet, RegionShapeError, load_regions, synthetic_detect, write_regions
from .kernels import BACKEND
from .matching import brute_force_assignment, solve_assignment
from .metrics import EvalReport, bleu1, distinct_n, embedding_scores, evaluate, perplexity, rougeL
from .mips import VectorIndex
from .retriever import (
    Retriever, TowerConfig, build_query, encode_image, encode_text, hinge_loss, recall_at_1,
    relevance, train_retriever,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dialog", "EvalReport", "ImageRecord", "Quadruple", "RegionSet", "RegionShapeError",
    "Retriever", "SyntheticWorld", "Tokenizer", "TowerConfig", "VectorIndex", "bleu1",
    "brute_force_assignment", "build_query", "build_vocabulary", "distinct_n", "embedding_scores",
    "encode_image", "encode_text", "evaluate", "generate_synthetic_world", "hinge_loss",
    "load_quadruples", "load_regions", "make_quadruple", "mentioned_concepts", "perplexity",
    "read_dialogs", "recall_at_1", "relevance", "rougeL", "solve_assignment", "synthetic_detect",
    "tag_cooccurrence", "tokenize", "train_retriever", "write_dialogs", "write_regions",
]
