import math

import numpy as np
import pytest
import torch

from conftest import make_tokenizer, random_quadruple, tiny_model
from imgdial.generator import (
    build_decode_inputs, collate, generate, teacher_forced_distributions, teacher_forced_nll,
)
from imgdial.generator.decoding import step_distribution


@pytest.fixture(scope="module")
def setup():
    tok = make_tokenizer(50)
    return tok, tiny_model(tok, K=4, seed=7)


def full_forward_distribution(model, q, prefix, tok):
    """Oracle: hand-rolled forward of O|Q|C|[BOS] prefix [MASK] and softmax at the end."""
    ex = build_decode_inputs(q.regions, q.context, prefix, tok, model.cfg)
    batch = collate([ex], tok.pad_id, dtype=model.dtype)
    with torch.no_grad():
        h = model(batch)[0, -1]
        logits = model.head.logits(h)
        K = model.cfg.region_len
        e_q = model(batch)[0, K:2 * K].mean(0)
        bias = model.head.vkb(e_q)
        keep = torch.zeros(len(tok), dtype=torch.bool)
        keep[torch.as_tensor(ex.concept_ids)] = True
        logits = logits + bias * keep
    return torch.softmax(logits, -1)


def test_step_distribution_valid(setup):
    tok, model = setup
    q = random_quadruple(tok, np.random.default_rng(0))
    p = step_distribution(model, q.regions, q.context, [12, 13], tok)
    assert p.shape == (len(tok),)
    assert abs(p.sum().item() - 1) < 1e-6 and (p >= 0).all()
    assert torch.allclose(p, full_forward_distribution(model, q, [12, 13], tok), atol=1e-12)


def test_incremental_matches_teacher_forced(setup):
    tok, model = setup
    rng = np.random.default_rng(1)
    for i in range(20):
        q = random_quadruple(tok, rng, resp_len=(1, 8), dialog_id=f"d{i}")
        tf = teacher_forced_distributions(model, [q], tok)[0]
        assert tf.shape == (len(q.response) + 1, len(tok))
        for t in range(len(q.response) + 1):
            inc = step_distribution(model, q.regions, q.context, list(q.response[:t]), tok)
            assert (inc - tf[t]).abs().max().item() < 1e-5


def test_teacher_forced_batching_is_invisible(setup):
    tok, model = setup
    rng = np.random.default_rng(2)
    qs = [random_quadruple(tok, rng, dialog_id=f"d{i}") for i in range(5)]
    together = teacher_forced_distributions(model, qs, tok, batch_size=5)
    alone = [teacher_forced_distributions(model, [q], tok)[0] for q in qs]
    for a, b in zip(together, alone):
        assert torch.allclose(a, b, atol=1e-12)


def test_nll_matches_per_position_loop(setup):
    tok, model = setup
    rng = np.random.default_rng(3)
    qs = [random_quadruple(tok, rng, dialog_id=f"d{i}") for i in range(4)]
    nll, count = teacher_forced_nll(model, qs, tok)
    want, n = 0.0, 0
    for q in qs:
        targets = list(q.response) + [tok.eos_id]
        for t, y in enumerate(targets):
            p = step_distribution(model, q.regions, q.context, list(q.response[:t]), tok)
            want -= math.log(p[y].item())
            n += 1
    assert count == n
    assert nll == pytest.approx(want, rel=1e-9)


def test_greedy_deterministic_and_argmax(setup):
    tok, model = setup
    q = random_quadruple(tok, np.random.default_rng(4))
    a, da = generate(model, q, tok, max_len=6)
    b, _ = generate(model, q, tok, max_len=6)
    assert a == b
    assert len(a) <= 6
    for t, p in enumerate(da[:len(a)]):
        assert a[t] == int(np.argmax(p))
    assert tok.eos_id not in a and tok.bos_id not in a


def test_greedy_stops_at_eos(setup):
    tok, model = setup
    q = random_quadruple(tok, np.random.default_rng(5))
    with torch.no_grad():
        saved = model.head.proj.bias.clone()
        model.head.proj.bias[tok.eos_id] = 1e3
    try:
        out, dists = generate(model, q, tok, max_len=6)
    finally:
        with torch.no_grad():
            model.head.proj.bias.copy_(saved)
    assert out == [] and len(dists) == 1


def test_sampling_seeded(setup):
    tok, model = setup
    q = random_quadruple(tok, np.random.default_rng(6))
    a, _ = generate(model, q, tok, decode="sample", seed=3, max_len=8, temperature=2.0)
    b, _ = generate(model, q, tok, decode="sample", seed=3, max_len=8, temperature=2.0)
    assert a == b
    outs = {tuple(generate(model, q, tok, decode="sample", seed=s, max_len=8, temperature=5.0)[0])
            for s in range(6)}
    assert len(outs) > 1


def test_top_k_restricts_support(setup):
    tok, model = setup
    q = random_quadruple(tok, np.random.default_rng(7))
    for s in range(5):
        out, dists = generate(model, q, tok, decode="sample", seed=s, max_len=4, top_k=2, temperature=3.0)
        for t, tokn in enumerate(out):
            top2 = np.argsort(-dists[t])[:2]
            assert tokn in top2


def test_decode_errors(setup):
    tok, model = setup
    q = random_quadruple(tok, np.random.default_rng(8))
    with pytest.raises(ValueError):
        generate(model, q, tok, max_len=model.cfg.max_response_len + 1)
    with pytest.raises(ValueError):
        generate(model, q, tok, decode="beam")
