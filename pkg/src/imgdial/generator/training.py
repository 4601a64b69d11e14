"""Training loop and checkpoint I/O for the generator."""

from __future__ import annotations

import logging

import numpy as np
import torch

from .._io import read_record, write_record
from .config import GeneratorConfig
from .inputs import build_inputs, collate
from .losses import loss_terms
from .model import GeneratorModel

log = logging.getLogger(__name__)

MAGIC = b"MGEN"
VERSION = 1


def new_model(cfg, tokenizer, concept_vocab=None, dtype=torch.float32):
    """Randomly initialized generator (seeded by ``cfg.seed``) sized to the tokenizer."""
    if cfg.vocab_size != len(tokenizer):
        cfg = GeneratorConfig(**{**cfg.to_dict(), "vocab_size": len(tokenizer)})
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = GeneratorModel(cfg).to(dtype)
    if concept_vocab:
        model.set_concept_vocabulary(tokenizer.id_of(t) for t in concept_vocab)
    return model


def train_generator(quadruples, tokenizer, cfg, concept_vocab=None, model=None,
                    checkpoint_path=None, dtype=torch.float32, callback=None):
    """Optimize MCP + MRP with Adam over shuffled mini-batches.

    Masks are redrawn every time an example is visited. Runs ``cfg.max_steps``
    steps when positive, otherwise ``cfg.epochs`` epochs. Returns the model
    and the per-step loss (summed objective divided by batch size).
    """
    quadruples = list(quadruples)
    if not quadruples:
        raise ValueError("empty training set")
    if model is None:
        model = new_model(cfg, tokenizer, concept_vocab, dtype)
    cfg = model.cfg
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    curve = []
    step = 0
    epoch = 0
    total_steps = cfg.max_steps if cfg.max_steps > 0 else None
    model.train()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        while True:
            order = rng.permutation(len(quadruples))
            for start in range(0, len(order), cfg.batch_size):
                chunk = [quadruples[i] for i in order[start:start + cfg.batch_size]]
                batch = collate([build_inputs(q, tokenizer, cfg, rng) for q in chunk],
                                tokenizer.pad_id, dtype=model.dtype)
                mcp, mrp = loss_terms(batch, model)
                loss = (mcp + mrp) / batch.size
                opt.zero_grad()
                loss.backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                opt.step()
                curve.append(loss.item())
                step += 1
                if callback is not None:
                    callback(step, curve[-1], mcp.item() / batch.size, mrp.item() / batch.size)
                if total_steps is not None and step >= total_steps:
                    break
            epoch += 1
            log.info("generator epoch %d step %d loss %.4f", epoch, step, curve[-1])
            if checkpoint_path is not None:
                save_generator(model, tokenizer, checkpoint_path)
            if total_steps is not None and step >= total_steps:
                break
            if total_steps is None and epoch >= cfg.epochs:
                break
    model.eval()
    return model, curve


def save_generator(model, tokenizer, path):
    header = {"config": model.cfg.to_dict(), "tokenizer_hash": tokenizer.hash,
              "dtype": str(model.dtype).replace("torch.", "")}
    write_record(path, MAGIC, VERSION, header, model.state_dict())


def load_generator(path, tokenizer):
    header, state = read_record(path, MAGIC, VERSION)
    if header["tokenizer_hash"] != tokenizer.hash:
        raise ValueError(f"{path}: checkpoint was trained with a different vocabulary")
    cfg = GeneratorConfig(**header["config"])
    model = GeneratorModel(cfg).to(getattr(torch, header.get("dtype", "float32")))
    model.load_state_dict(state)
    model.eval()
    return model
