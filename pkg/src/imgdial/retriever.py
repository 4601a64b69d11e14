"""Two-tower text-to-image matcher.

Text tower: mean of token embeddings followed by an MLP head. Image tower:
mean of region features followed by an MLP head. Both heads end in L2
normalization, so relevance is a plain inner product and retrieval is MIPS.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ._io import read_record, write_record
from .corpus import Dialog, SEP

log = logging.getLogger(__name__)

MAGIC = b"MRT1"
VERSION = 1


@dataclass
class TowerConfig:
    text_encoder_dim: int = 64
    image_encoder_dim: int = 64
    projection_dims: tuple = (512,)
    margin: float = 0.5
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    weight_decay: float = 0.0
    freeze_encoders: bool = True
    seed: int = 0

    def __post_init__(self):
        self.projection_dims = tuple(int(x) for x in self.projection_dims)
        if not self.projection_dims:
            raise ValueError("projection_dims must be non-empty")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    @classmethod
    def full_scale(cls, **overrides):
        """Full-scale settings: three-layer (1024, 1024, 512) heads, 20 epochs."""
        kw = dict(text_encoder_dim=768 * 4, image_encoder_dim=2048,
                  projection_dims=(1024, 1024, 512), epochs=20)
        kw.update(overrides)
        return cls(**kw)

    @property
    def out_dim(self):
        return self.projection_dims[-1]


def mlp(in_dim, dims):
    layers = []
    for i, d in enumerate(dims):
        layers.append(nn.Linear(in_dim, d))
        if i < len(dims) - 1:
            layers.append(nn.ReLU())
        in_dim = d
    return nn.Sequential(*layers)


class TextTower(nn.Module):
    def __init__(self, vocab_size, cfg, pad_id):
        super().__init__()
        self.pad_id = pad_id
        self.embed = nn.Embedding(vocab_size, cfg.text_encoder_dim, padding_idx=pad_id)
        nn.init.normal_(self.embed.weight, std=1.0)
        with torch.no_grad():
            self.embed.weight[pad_id].zero_()
        self.embed.weight.requires_grad_(not cfg.freeze_encoders)
        self.head = mlp(cfg.text_encoder_dim, cfg.projection_dims)

    def encode(self, ids):
        """(B, T) padded ids -> (B, text_encoder_dim) mean of non-pad embeddings."""
        mask = (ids != self.pad_id).unsqueeze(-1).to(self.embed.weight.dtype)
        summed = (self.embed(ids) * mask).sum(1)
        return summed / mask.sum(1).clamp(min=1.0)

    def forward(self, ids):
        return F.normalize(self.head(self.encode(ids)), dim=-1)


class ImageTower(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.head = mlp(cfg.image_encoder_dim, cfg.projection_dims)

    def forward(self, global_feats):
        return F.normalize(self.head(global_feats), dim=-1)


def relevance(t, v):
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if t.shape != v.shape:
        raise ValueError(f"dimension mismatch: {t.shape} vs {v.shape}")
    return float(np.dot(t, v))


def hinge_loss(s_pos, s_negs, M):
    """Sum over negatives of max(0, M - s_pos + s_neg)."""
    if len(s_negs) == 0:
        raise ValueError("need at least one negative score")
    return float(sum(max(0.0, M - s_pos + s) for s in s_negs))


def in_batch_hinge_loss(text_emb, image_emb, margin):
    """Mean over positives of the hinge loss against the other in-batch images."""
    scores = text_emb @ image_emb.T
    pos = scores.diagonal().unsqueeze(1)
    terms = (margin - pos + scores).clamp(min=0)
    off_diag = ~torch.eye(scores.shape[0], dtype=torch.bool, device=scores.device)
    return (terms * off_diag).sum(1).mean()


def build_query(d, mode):
    """Training queries use context and response; inference queries use the context only."""
    if mode == "train":
        parts = list(d.context) + [d.response]
    elif mode == "infer":
        parts = list(d.context)
    else:
        raise ValueError(f"unknown query mode: {mode}")
    return f" {SEP} ".join(parts)


class Retriever(nn.Module):
    def __init__(self, tokenizer, cfg):
        super().__init__()
        self.cfg = cfg
        self.tokenizer = tokenizer
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.text = TextTower(len(tokenizer), cfg, tokenizer.pad_id)
            self.image = ImageTower(cfg)

    @property
    def dtype(self):
        return self.image.head[0].weight.dtype

    def _pad(self, texts):
        ids = [self.tokenizer.encode(t) for t in texts]
        for t, x in zip(texts, ids):
            if not x:
                raise ValueError("empty query")
        width = max(len(x) for x in ids)
        out = torch.full((len(ids), width), self.tokenizer.pad_id, dtype=torch.long)
        for i, x in enumerate(ids):
            out[i, : len(x)] = torch.tensor(x)
        return out

    def _feats(self, images):
        feats = [img.global_feature() if hasattr(img, "global_feature") else np.asarray(img).mean(0)
                 for img in images]
        return torch.tensor(np.stack(feats), dtype=self.dtype)

    def text_embeddings(self, texts):
        return self.text(self._pad(list(texts)))

    def image_embeddings(self, images):
        return self.image(self._feats(list(images)))

    @torch.no_grad()
    def encode_texts(self, texts):
        return self.text_embeddings(texts).double().numpy()

    @torch.no_grad()
    def encode_images(self, images):
        return self.image_embeddings(images).double().numpy()

    def save(self, path):
        header = {"config": asdict(self.cfg), "tokenizer_hash": self.tokenizer.hash}
        write_record(path, MAGIC, VERSION, header, self.state_dict())

    @classmethod
    def load(cls, path, tokenizer):
        header, state = read_record(path, MAGIC, VERSION)
        if header["tokenizer_hash"] != tokenizer.hash:
            raise ValueError(f"{path}: checkpoint was trained with a different vocabulary")
        model = cls(tokenizer, TowerConfig(**header["config"]))
        model.load_state_dict(state)
        if list(state.values())[0].dtype == torch.float64:
            model.double()
        model.text.embed.weight.requires_grad_(not model.cfg.freeze_encoders)
        model.eval()
        return model


def encode_text(T, retriever):
    if not T or not T.strip():
        raise ValueError("empty query")
    return retriever.encode_texts([T])[0]


def encode_image(V, retriever):
    return retriever.encode_images([V])[0]


def _as_text(x):
    return build_query(x, "train") if isinstance(x, Dialog) else x


def train_retriever(pairs, tokenizer, config=None, callback=None):
    """Fit both projection heads (and the token embeddings unless frozen).

    ``pairs`` are ``(dialog_or_text, image)`` tuples; each positive uses the
    other images of its mini-batch as negatives. Returns the model and the
    per-epoch mean loss.
    """
    cfg = config or TowerConfig()
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs for in-batch negatives")
    model = Retriever(tokenizer, cfg)
    texts = [_as_text(t) for t, _ in pairs]
    text_ids = model._pad(texts)
    feats = model._feats([img for _, img in pairs])
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    gen = torch.Generator().manual_seed(cfg.seed)
    curve = []
    model.train()
    for epoch in range(cfg.epochs):
        perm = torch.randperm(len(pairs), generator=gen)
        total, batches = 0.0, 0
        for start in range(0, len(pairs), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            t = model.text(text_ids[idx])
            v = model.image(feats[idx])
            loss = in_batch_hinge_loss(t, v, cfg.margin)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        curve.append(total / max(batches, 1))
        log.info("retriever epoch %d loss %.4f", epoch + 1, curve[-1])
        if callback is not None:
            callback(epoch, curve[-1])
    model.eval()
    return model, curve


def recall_at_1(retriever, queries, images, truth):
    """Fraction of queries whose top-1 image (by inner product) is ``truth[i]``."""
    from .mips import VectorIndex

    emb = retriever.encode_images(images)
    index = VectorIndex(emb.shape[1]).add_many([img.image_id for img in images], emb).freeze()
    results = index.batch_search(retriever.encode_texts(queries), 1)
    hits = sum(r[0][0] == t for r, t in zip(results, truth))
    return hits / len(truth)
