"""Training objectives: Hungarian-matched concept prediction, masked response
prediction, and their unweighted sum."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from ..matching import solve_assignment
from .model import COUNTERS


def concept_cost(concept_logits, targets):
    """c[i, j] = -log h_i(q_j): prediction i scored against target j."""
    logp = F.log_softmax(concept_logits, dim=-1)
    return -logp[:, targets]


def mcp_loss(concept_logits, mcp_targets):
    """Masked-concept NLL under the optimal prediction-to-target matching.

    The matching is solved on detached costs; gradients flow through the
    selected log-probabilities only.
    """
    n = int(mcp_targets.numel())
    if n == 0:
        COUNTERS["mcp_empty"] += 1
        return concept_logits.sum() * 0.0
    if concept_logits.shape[0] != n:
        raise ValueError("need one prediction per masked concept")
    cost = concept_cost(concept_logits, mcp_targets)
    perm, _ = solve_assignment(cost.detach().double().cpu().numpy())
    return cost[torch.arange(n), torch.as_tensor(perm)].sum()


def ordered_mcp_nll(concept_logits, mcp_targets):
    """Masked-concept NLL with prediction i tied to target i (no matching)."""
    return concept_cost(concept_logits, mcp_targets).diagonal().sum()


def mrp_loss(response_logits, mrp_targets):
    """Summed NLL over masked response positions."""
    return F.cross_entropy(response_logits, mrp_targets, reduction="sum")


def loss_terms(batch, model):
    """(mcp, mrp) summed over the batch."""
    hidden = model(batch)
    mrp = mrp_loss(model.response_logits(hidden, batch), batch.mrp_targets)
    if not model.cfg.use_mcp:
        return hidden.new_zeros(()), mrp
    logits = model.concept_logits(hidden, batch)
    off = batch.mcp_offsets
    mcp = hidden.new_zeros(())
    for b in range(batch.size):
        mcp = mcp + mcp_loss(logits[off[b]:off[b + 1]], batch.mcp_targets[off[b]:off[b + 1]])
    return mcp, mrp


def total_loss(batch, model):
    mcp, mrp = loss_terms(batch, model)
    return mcp + mrp
