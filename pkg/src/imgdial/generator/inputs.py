"""Sequence construction for the generator: the (O, Q, C, R) layout, id
streams, the hybrid attention mask, masking for both training objectives,
and collation into padded tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

SEG_O, SEG_Q, SEG_C, SEG_R = 0, 1, 2, 3


def build_attention_mask(lengths):
    """Boolean (N, N) mask, rows are queries and columns keys.

    Every position sees all of O, Q and C; response positions additionally
    see the response up to and including themselves.
    """
    n_o, n_q, n_c, n_r = (int(x) for x in lengths)
    if min(n_o, n_q, n_c, n_r) < 0:
        raise ValueError("lengths must be non-negative")
    b = n_o + n_q + n_c
    n = b + n_r
    mask = np.zeros((n, n), dtype=bool)
    mask[:, :b] = True
    mask[b:, b:] = np.tri(n_r, dtype=bool)
    return mask


@dataclass
class InputBatch:
    """One example laid out as O | Q | C | R.

    ``kind`` is ``"train"`` (masked objectives), ``"decode"`` (response block
    ends in a single [MASK] whose distribution is read) or ``"teacher"``
    (one extra [MASK] slot per response target, see
    :func:`build_teacher_forced_inputs`).
    """

    token_ids: np.ndarray
    turn_ids: np.ndarray
    position_ids: np.ndarray
    segment_ids: np.ndarray
    object_features: np.ndarray
    attention_mask: np.ndarray
    concept_ids: np.ndarray
    mcp_positions: np.ndarray
    mcp_targets: np.ndarray
    mrp_positions: np.ndarray
    mrp_targets: np.ndarray
    lengths: tuple
    kind: str = "train"
    boxes: np.ndarray | None = None

    @property
    def N(self):
        return len(self.token_ids)

    @property
    def response_start(self):
        return self.lengths[0] + self.lengths[1] + self.lengths[2]


def n_masked(rate, length):
    """floor(rate * length) with a floor of 1 (for non-empty spans)."""
    if length <= 0:
        return 0
    return max(1, int(math.floor(rate * length + 1e-9)))


def _context_block(context, tok, cfg):
    """Flatten utterances as ``u1 [SEP] u2 [SEP] ...``; turns count back from the last."""
    T = len(context)
    ids, turns = [], []
    for k, utt in enumerate(context):
        ids.extend(list(utt) + [tok.sep_id])
        turns.extend([T - k] * (len(utt) + 1))
    if len(ids) > cfg.max_context_len:
        ids = ids[-cfg.max_context_len:]
        turns = turns[-cfg.max_context_len:]
    turns = [min(t, cfg.max_turns) for t in turns]
    return ids, turns


def _check_regions(regions, cfg):
    if regions.K != cfg.region_len:
        raise ValueError(f"{regions.image_id}: {regions.K} regions, model expects {cfg.region_len}")
    if regions.d_obj != cfg.d_obj:
        raise ValueError(f"{regions.image_id}: feature dim {regions.d_obj}, model expects {cfg.d_obj}")
    if not np.all(np.isfinite(regions.features)):
        raise ValueError(f"{regions.image_id}: non-finite region features")


def concept_token_ids(regions, tok):
    return np.asarray([tok.id_of(c) for c in regions.concepts], dtype=np.int64)


def _assemble(regions, context, r_tokens, tok, cfg):
    _check_regions(regions, cfg)
    K = regions.K
    c_ids, c_turns = _context_block(context, tok, cfg)
    first_turn = c_turns[0] if c_turns else 1
    q_ids = concept_token_ids(regions, tok)
    tokens = np.concatenate([
        np.full(K, tok.region_id), q_ids, np.asarray(c_ids, dtype=np.int64),
        np.asarray(r_tokens, dtype=np.int64),
    ]).astype(np.int64)
    lengths = (K, K, len(c_ids), len(r_tokens))
    turns = np.concatenate([
        np.full(2 * K, first_turn), np.asarray(c_turns, dtype=np.int64), np.zeros(len(r_tokens)),
    ]).astype(np.int64)
    segments = np.repeat([SEG_O, SEG_Q, SEG_C, SEG_R], lengths).astype(np.int64)
    positions = np.arange(len(tokens), dtype=np.int64)
    return tokens, turns, positions, segments, lengths, q_ids


def _response_block(response, tok, cfg):
    return [tok.bos_id] + list(response)[: cfg.max_response_len] + [tok.eos_id]


def build_inputs(q, tok, cfg, rng=None, mask=True):
    """Training view of a quadruple with concept and response masking applied.

    ``rng`` is a ``numpy.random.Generator``; with ``mask=False`` no tokens
    are hidden and the objective lists are empty.
    """
    if len(q.response) == 0:
        raise ValueError(f"{q.dialog_id}: empty response")
    r_tokens = _response_block(q.response, tok, cfg)
    tokens, turns, positions, segments, lengths, q_ids = _assemble(
        q.regions, q.context, r_tokens, tok, cfg)
    K = lengths[0]
    empty = np.zeros(0, dtype=np.int64)
    mcp_pos = mcp_tgt = mrp_pos = mrp_tgt = empty
    if mask:
        rng = rng if rng is not None else np.random.default_rng()
        m = n_masked(cfg.mcp_rate, K)
        mcp_pos = np.sort(rng.choice(K, size=m, replace=False)) + K
        mcp_tgt = tokens[mcp_pos].copy()
        r0 = K + K + lengths[2]
        maskable = len(r_tokens) - 1  # every response slot except [BOS]
        m = n_masked(cfg.mrp_rate, maskable)
        mrp_pos = np.sort(rng.choice(maskable, size=m, replace=False)) + r0 + 1
        mrp_tgt = tokens[mrp_pos].copy()
        tokens = tokens.copy()
        tokens[mcp_pos] = tok.mask_id
        tokens[mrp_pos] = tok.mask_id
    return InputBatch(
        token_ids=tokens, turn_ids=turns, position_ids=positions, segment_ids=segments,
        object_features=np.asarray(q.regions.features), attention_mask=build_attention_mask(lengths),
        concept_ids=q_ids, mcp_positions=mcp_pos, mcp_targets=mcp_tgt,
        mrp_positions=mrp_pos, mrp_targets=mrp_tgt, lengths=lengths, kind="train",
        boxes=q.regions.boxes,
    )


def build_decode_inputs(regions, context, prefix, tok, cfg):
    """O | Q | C | [BOS] prefix [MASK]; the distribution is read at the final [MASK]."""
    r_tokens = [tok.bos_id] + list(prefix) + [tok.mask_id]
    tokens, turns, positions, segments, lengths, q_ids = _assemble(
        regions, context, r_tokens, tok, cfg)
    if len(tokens) > cfg.max_positions:
        raise ValueError("decoding ran past the position table")
    last = np.asarray([len(tokens) - 1], dtype=np.int64)
    empty = np.zeros(0, dtype=np.int64)
    return InputBatch(
        token_ids=tokens, turn_ids=turns, position_ids=positions, segment_ids=segments,
        object_features=np.asarray(regions.features), attention_mask=build_attention_mask(lengths),
        concept_ids=q_ids, mcp_positions=empty, mcp_targets=empty,
        mrp_positions=last, mrp_targets=np.full(1, -1, dtype=np.int64), lengths=lengths,
        kind="decode", boxes=regions.boxes,
    )


def build_teacher_forced_inputs(q, tok, cfg):
    """Gold-prefix predictions for every response target in one sequence.

    Layout: O | Q | C | [BOS] w1..wn | M1..M(n+1). Slot ``Mt`` is a [MASK]
    carrying the position id of response index ``t``; it sees O, Q, C, the
    gold tokens left of index ``t`` and itself, which is exactly what the
    trailing [MASK] sees at decoding step ``t``. Targets are ``w1..wn, [EOS]``.
    """
    r_full = _response_block(q.response, tok, cfg)
    gold = r_full[:-1]
    targets = np.asarray(r_full[1:], dtype=np.int64)
    tokens, turns, positions, segments, lengths, q_ids = _assemble(
        q.regions, q.context, gold, tok, cfg)
    K, _, n_c, n_gold = lengths
    b = 2 * K + n_c
    n_slots = len(targets)
    n = len(tokens) + n_slots
    mask = np.zeros((n, n), dtype=bool)
    mask[:, :b] = True
    mask[b:b + n_gold, b:b + n_gold] = np.tri(n_gold, dtype=bool)
    slots = np.arange(b + n_gold, n)
    for t, row in enumerate(slots, start=1):
        mask[row, b:b + t] = True
        mask[row, row] = True
    return InputBatch(
        token_ids=np.concatenate([tokens, np.full(n_slots, tok.mask_id)]).astype(np.int64),
        turn_ids=np.concatenate([turns, np.zeros(n_slots, dtype=np.int64)]),
        position_ids=np.concatenate([positions, b + np.arange(1, n_slots + 1)]).astype(np.int64),
        segment_ids=np.concatenate([segments, np.full(n_slots, SEG_R)]).astype(np.int64),
        object_features=np.asarray(q.regions.features), attention_mask=mask,
        concept_ids=q_ids, mcp_positions=np.zeros(0, dtype=np.int64),
        mcp_targets=np.zeros(0, dtype=np.int64), mrp_positions=slots.astype(np.int64),
        mrp_targets=targets, lengths=lengths, kind="teacher", boxes=q.regions.boxes,
    )


@dataclass
class Batch:
    """Padded tensors for a list of InputBatch examples.

    Objective positions are flattened across the batch; ``*_offsets[b]`` to
    ``*_offsets[b + 1]`` delimit example ``b``.
    """

    token_ids: torch.Tensor
    turn_ids: torch.Tensor
    position_ids: torch.Tensor
    segment_ids: torch.Tensor
    object_features: torch.Tensor
    attention_mask: torch.Tensor
    concept_ids: torch.Tensor
    mcp_batch: torch.Tensor
    mcp_positions: torch.Tensor
    mcp_targets: torch.Tensor
    mcp_offsets: list
    mrp_batch: torch.Tensor
    mrp_positions: torch.Tensor
    mrp_targets: torch.Tensor
    mrp_offsets: list
    region_len: int

    @property
    def size(self):
        return self.token_ids.shape[0]


def collate(examples, pad_id, dtype=torch.float32):
    if not examples:
        raise ValueError("empty batch")
    K = examples[0].lengths[0]
    if any(ex.lengths[0] != K for ex in examples):
        raise ValueError("all examples in a batch need the same region count")
    B = len(examples)
    N = max(ex.N for ex in examples)
    tok = torch.full((B, N), pad_id, dtype=torch.long)
    turn = torch.zeros((B, N), dtype=torch.long)
    pos = torch.zeros((B, N), dtype=torch.long)
    seg = torch.zeros((B, N), dtype=torch.long)
    att = torch.zeros((B, N, N), dtype=torch.bool)
    # padding rows attend to themselves only so softmax stays finite
    att[:, torch.arange(N), torch.arange(N)] = True
    for b, ex in enumerate(examples):
        n = ex.N
        tok[b, :n] = torch.from_numpy(ex.token_ids)
        turn[b, :n] = torch.from_numpy(ex.turn_ids)
        pos[b, :n] = torch.from_numpy(ex.position_ids)
        seg[b, :n] = torch.from_numpy(ex.segment_ids)
        att[b, :n, :n] = torch.from_numpy(ex.attention_mask)
    feats = torch.tensor(np.stack([ex.object_features for ex in examples]), dtype=dtype)
    concepts = torch.tensor(np.stack([ex.concept_ids for ex in examples]), dtype=torch.long)

    def flat(name_pos, name_tgt):
        bidx, p, t, offsets = [], [], [], [0]
        for b, ex in enumerate(examples):
            ps = getattr(ex, name_pos)
            bidx.extend([b] * len(ps))
            p.extend(ps.tolist())
            t.extend(getattr(ex, name_tgt).tolist())
            offsets.append(len(p))
        as_long = lambda x: torch.tensor(x, dtype=torch.long)  # noqa: E731
        return as_long(bidx), as_long(p), as_long(t), offsets

    mcp = flat("mcp_positions", "mcp_targets")
    mrp = flat("mrp_positions", "mrp_targets")
    return Batch(tok, turn, pos, seg, feats, att, concepts, *mcp, *mrp, region_len=K)
