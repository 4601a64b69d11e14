"""Mask-append decoding and gold-prefix (teacher-forced) distributions."""

from __future__ import annotations

import numpy as np
import torch

from .inputs import build_decode_inputs, build_teacher_forced_inputs, collate


@torch.no_grad()
def step_distribution(model, regions, context, prefix, tok):
    """Distribution over the vocabulary at a [MASK] appended after ``prefix``."""
    ex = build_decode_inputs(regions, context, prefix, tok, model.cfg)
    batch = collate([ex], tok.pad_id, dtype=model.dtype)
    hidden = model(batch)
    return torch.softmax(model.response_logits(hidden, batch), dim=-1)[0]


@torch.no_grad()
def generate(model, q, tok, decode="greedy", max_len=None, seed=0, temperature=1.0, top_k=0):
    """Decode a response for the regions and context of ``q``.

    Each step appends [MASK] after [BOS] and the tokens produced so far, runs
    the full model, and picks a token from the distribution at the [MASK].
    Stops at [EOS] or ``max_len``. Returns ``(token_ids, distributions)``
    without [BOS]/[EOS].
    """
    cfg = model.cfg
    max_len = cfg.max_response_len if max_len is None else max_len
    if max_len > cfg.max_response_len:
        raise ValueError(f"max_len {max_len} exceeds max_response_len {cfg.max_response_len}")
    if decode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode: {decode}")
    gen = torch.Generator().manual_seed(seed)
    out, dists = [], []
    for _ in range(max_len):
        p = step_distribution(model, q.regions, q.context, out, tok)
        dists.append(p.double().numpy())
        if decode == "greedy":
            nxt = int(torch.argmax(p))
        else:
            logits = torch.log(p.double()) / max(temperature, 1e-8)
            if top_k and top_k < logits.numel():
                kth = torch.topk(logits, top_k).values[-1]
                logits = logits.masked_fill(logits < kth, float("-inf"))
            nxt = int(torch.multinomial(torch.softmax(logits, -1), 1, generator=gen))
        if nxt == tok.eos_id:
            break
        out.append(nxt)
    return out, dists


@torch.no_grad()
def teacher_forced_distributions(model, quadruples, tok, batch_size=64):
    """Per-example (n_targets, V) distributions for ``w1..wn, [EOS]`` given gold prefixes."""
    quadruples = list(quadruples)
    out = []
    for start in range(0, len(quadruples), batch_size):
        exs = [build_teacher_forced_inputs(q, tok, model.cfg)
               for q in quadruples[start:start + batch_size]]
        batch = collate(exs, tok.pad_id, dtype=model.dtype)
        hidden = model(batch)
        probs = torch.softmax(model.response_logits(hidden, batch), dim=-1)
        off = batch.mrp_offsets
        for b in range(batch.size):
            out.append(probs[off[b]:off[b + 1]])
    return out


def teacher_forced_nll(model, quadruples, tok, batch_size=64):
    """(total NLL, token count) over all response targets, with gold prefixes."""
    quadruples = list(quadruples)
    nll, count = 0.0, 0
    for q, probs in zip(quadruples, teacher_forced_distributions(model, quadruples, tok, batch_size)):
        targets = build_teacher_forced_inputs(q, tok, model.cfg).mrp_targets
        p = probs.double()[torch.arange(len(targets)), torch.as_tensor(targets)]
        nll -= float(torch.log(p).sum())
        count += len(targets)
    return nll, count
