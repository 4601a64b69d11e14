"""Unified transformer over (O, Q, C, R) with a vocabulary head and the
visual knowledge bias."""

from __future__ import annotations

import math
from collections import Counter

import torch
import torch.nn as nn

COUNTERS = Counter()


class SelfAttention(nn.Module):
    def __init__(self, hidden, heads, dropout):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.out = nn.Linear(hidden, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        B, N, D = x.shape
        q, k, v = self.qkv(x).view(B, N, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~mask[:, None], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        ctx = (self.drop(probs) @ v).transpose(1, 2).reshape(B, N, D)
        return self.out(ctx), probs


class TransformerLayer(nn.Module):
    """Post-LN block: attention, residual, norm, GELU feed-forward, residual, norm."""

    def __init__(self, hidden, heads, ffn_mult, dropout):
        super().__init__()
        self.attn = SelfAttention(hidden, heads, dropout)
        self.ln1 = nn.LayerNorm(hidden)
        self.ffn = nn.Sequential(
            nn.Linear(hidden, ffn_mult * hidden), nn.GELU(), nn.Linear(ffn_mult * hidden, hidden))
        self.ln2 = nn.LayerNorm(hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        a, probs = self.attn(x, mask)
        x = self.ln1(x + self.drop(a))
        x = self.ln2(x + self.drop(self.ffn(x)))
        return x, probs


class DecodingHead(nn.Module):
    """``W e + b`` over the vocabulary plus the bias projection ``F_q``."""

    def __init__(self, hidden, vocab_size):
        super().__init__()
        self.proj = nn.Linear(hidden, vocab_size)
        self.vkb = nn.Linear(hidden, vocab_size)

    def logits(self, e_r):
        return self.proj(e_r)

    def concept_bias(self, e_q_avg, concept_mask):
        """Bias from pooled concept states, zeroed outside the concept vocabulary."""
        return self.vkb(e_q_avg) * concept_mask.to(e_q_avg.dtype)


def concept_vocab_mask(concept_ids, vocab_size):
    """(B, K) ids -> (B, V) boolean membership."""
    mask = torch.zeros(concept_ids.shape[0], vocab_size, dtype=torch.bool, device=concept_ids.device)
    return mask.scatter(1, concept_ids, True)


def vkb_distribution(e_r, E_q, concept_ids, head, vkb_enabled=True):
    """Output distribution for one response state.

    ``softmax(W e_r + b + mask(F_q(mean(E_q))))``; with VKB disabled, or with
    no concept states, the plain ``softmax(W e_r + b)``.
    """
    logits = head.logits(e_r)
    if vkb_enabled:
        concept_ids = torch.as_tensor(concept_ids, dtype=torch.long).reshape(-1)
        if E_q.shape[0] == 0 or concept_ids.numel() == 0:
            COUNTERS["vkb_fallback"] += 1
        else:
            cmask = torch.zeros(logits.shape[-1], dtype=torch.bool)
            cmask[concept_ids] = True
            logits = logits + head.concept_bias(E_q.mean(0), cmask)
    return torch.softmax(logits, dim=-1)


class GeneratorModel(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        if cfg.vocab_size < 1:
            raise ValueError("vocab_size must be set")
        self.cfg = cfg
        D = cfg.hidden
        self.token_emb = nn.Embedding(cfg.vocab_size, D)
        self.object_proj = nn.Linear(cfg.d_obj, D)
        self.turn_emb = nn.Embedding(cfg.max_turns + 1, D)
        self.pos_emb = nn.Embedding(cfg.max_positions, D)
        self.seg_emb = nn.Embedding(4, D)
        self.emb_ln = nn.LayerNorm(D)
        self.emb_drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(
            TransformerLayer(D, cfg.heads, cfg.ffn_mult, cfg.dropout) for _ in range(cfg.layers))
        self.head = DecodingHead(D, cfg.vocab_size)
        self.register_buffer("global_concepts", torch.zeros(cfg.vocab_size, dtype=torch.bool))
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, (nn.Linear, nn.Embedding)):
                nn.init.normal_(m.weight, std=self.cfg.init_std)
                if isinstance(m, nn.Linear) and m.bias is not None:
                    nn.init.zeros_(m.bias)

    def set_concept_vocabulary(self, ids):
        """Token ids treated as visual concepts when ``vkb_scope == "global"``."""
        self.global_concepts.zero_()
        self.global_concepts[torch.as_tensor(list(ids), dtype=torch.long)] = True

    @property
    def dtype(self):
        return self.token_emb.weight.dtype

    def embed(self, batch):
        K = batch.region_len
        tok = self.token_emb(batch.token_ids)
        obj = self.object_proj(batch.object_features.to(self.dtype))
        x = torch.cat([obj, tok[:, K:]], dim=1)
        x = x + self.turn_emb(batch.turn_ids) + self.pos_emb(batch.position_ids) + self.seg_emb(batch.segment_ids)
        return self.emb_drop(self.emb_ln(x))

    def forward(self, batch, return_attention=False):
        x = self.embed(batch)
        attn = []
        for layer in self.layers:
            x, probs = layer(x, batch.attention_mask)
            if return_attention:
                attn.append(probs)
        return (x, attn) if return_attention else x

    def concept_logits(self, hidden, batch):
        return self.head.logits(hidden[batch.mcp_batch, batch.mcp_positions])

    def vkb_bias(self, hidden, batch):
        """(B, V) per-example bias, or None when VKB is off."""
        if not self.cfg.vkb_enabled:
            return None
        K = batch.region_len
        e_q = hidden[:, K:2 * K].mean(1)
        if self.cfg.vkb_scope == "global":
            if not bool(self.global_concepts.any()):
                COUNTERS["vkb_fallback"] += 1
                return None
            cmask = self.global_concepts.unsqueeze(0).expand(hidden.shape[0], -1)
        else:
            cmask = concept_vocab_mask(batch.concept_ids, self.cfg.vocab_size)
        return self.head.concept_bias(e_q, cmask)

    def response_logits(self, hidden, batch):
        logits = self.head.logits(hidden[batch.mrp_batch, batch.mrp_positions])
        bias = self.vkb_bias(hidden, batch)
        if bias is not None:
            logits = logits + bias[batch.mrp_batch]
        return logits

