"""Attention-weight export for plotting region attention of response tokens."""

from __future__ import annotations

import json

import torch

from .inputs import collate


@torch.no_grad()
def export_attention(model, ex, layer, head, pad_id, tokens=None, decimals=6):
    """Post-softmax weights of one head, response rows x region (O) columns."""
    cfg = model.cfg
    if not 0 <= layer < cfg.layers:
        raise IndexError(f"layer {layer} out of range [0, {cfg.layers})")
    if not 0 <= head < cfg.heads:
        raise IndexError(f"head {head} out of range [0, {cfg.heads})")
    batch = collate([ex], pad_id, dtype=model.dtype)
    _, attn = model(batch, return_attention=True)
    K = ex.lengths[0]
    r0 = ex.response_start
    rows = list(range(r0, r0 + ex.lengths[3]))
    w = attn[layer][0, head, r0:r0 + ex.lengths[3], :K].double()
    out = {
        "layer": int(layer),
        "head": int(head),
        "rows": rows,
        "boxes": [] if ex.boxes is None else [[round(float(x), decimals) for x in b] for b in ex.boxes],
        "weights": [[round(float(x), decimals) for x in row] for row in w.tolist()],
    }
    if tokens is not None:
        out["tokens"] = list(tokens)
    return out


def save_attention(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)


def load_attention(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
