"""Acceptance suite: one PASS/FAIL line per criterion, collected and printed
in the terminal summary (see conftest.py)."""

import json
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE, make_tokenizer, random_quadruple, synthetic_quadruples, tiny_model
from imgdial import cli, kernels
from imgdial.corpus import build_vocabulary, generate_synthetic_world
from imgdial.generator import (
    GeneratorConfig, build_attention_mask, build_inputs, collate, generate, mcp_loss,
    ordered_mcp_nll, teacher_forced_distributions, train_generator,
    vkb_distribution,
)
from imgdial.generator.decoding import step_distribution
from imgdial.generator.model import concept_vocab_mask
from imgdial.matching import brute_force_assignment, solve_assignment, total_cost
from imgdial.metrics import METRIC_KEYS, bleu1, distinct_n, embedding_scores, perplexity, rougeL
from imgdial.mips import VectorIndex
from imgdial.retriever import TowerConfig, build_query, recall_at_1, train_retriever

from test_generator_inputs import analytic_mask
from test_generator_losses import finite_difference_check
from test_generator_model import example_from_lengths, run


def record(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}"
    ACCEPTANCE.append((n, line))
    print(line)
    assert ok, line


def test_01_assignment_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for n in range(2, 7):
        for _ in range(100):
            c = rng.standard_normal((n, n))
            perm, cost = solve_assignment(c)
            _, best = brute_force_assignment(c)
            worst = max(worst, abs(cost - best), abs(total_cost(c, perm) - best))
    big = rng.random((64, 64))
    t0 = time.perf_counter()
    solve_assignment(big)
    dt = time.perf_counter() - t0
    record(1, "assignment oracle", worst <= 1e-9 and dt < 1.0,
           f"max |cost - brute| = {worst:.2e} (tol 1e-9), n=64 in {dt * 1e3:.1f} ms (< 1 s), "
           f"backend {kernels.BACKEND}")


def test_02_mips_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10_000, 128))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    ids = [f"img{i:05d}" for i in rng.permutation(10_000)]
    index = VectorIndex(128).add_many(ids, x).freeze()
    q = rng.standard_normal((100, 128))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    m = index.matrix.astype(np.float64)
    rank = np.argsort(np.argsort(np.array(index.ids)))
    mismatched, nn_mismatch = 0, 0
    for qi, res in zip(q, index.batch_search(q, 10)):
        s = m @ qi
        oracle = np.lexsort((rank, -s))[:10]
        if [r[0] for r in res] != [index.ids[i] for i in oracle]:
            mismatched += 1
        nn = int(np.argmin(((m - qi) ** 2).sum(1)))
        if index.ids[nn] != res[0][0]:
            nn_mismatch += 1
    dt = time.perf_counter() - t0
    record(2, "MIPS exactness", mismatched == 0 and nn_mismatch == 0 and dt < 30,
           f"{mismatched}/100 top-10 mismatches vs scan, {nn_mismatch}/100 NN != IP argmax, "
           f"{dt:.1f} s (< 30 s)")


def test_03_retrieval_sanity():
    t0 = time.perf_counter()
    world = generate_synthetic_world(40, 250, 250, d_obj=64, K=4, seed=0, noise=0.05)
    train, test = world.dialogs[:200], world.dialogs[200:]
    tok = build_vocabulary(train, world.concepts)
    pairs = [(dl, world.image(world.pairing[dl.id]).regions) for dl in train]
    model, _ = train_retriever(pairs, tok, TowerConfig(seed=0))
    images = [img.regions for img in world.images]
    r = recall_at_1(model, [build_query(dl, "infer") for dl in test], images,
                    [world.pairing[dl.id] for dl in test])
    dt = time.perf_counter() - t0
    record(3, "retrieval sanity", r >= 0.9 and dt < 300,
           f"held-out recall@1 = {r:.2f} (>= 0.9) over {len(images)} images, {dt:.1f} s (< 300 s)")


def test_04_mask_soundness():
    tok = make_tokenizer(50)
    rng = np.random.default_rng(0)
    models = {K: tiny_model(tok, K=K, seed=K) for K in (1, 2, 3, 4)}
    rule_bad, worst, checked = 0, 0.0, 0
    for _ in range(50):
        K = int(rng.integers(1, 5))
        lengths = (K, K, int(rng.integers(0, 6)), int(rng.integers(1, 6)))
        if not np.array_equal(build_attention_mask(lengths), analytic_mask(lengths)):
            rule_bad += 1
        ex = example_from_lengths(lengths, tok, rng)
        h0, _ = run(models[K], ex, tok)
        for j in range(ex.N):
            blind = ~ex.attention_mask[:, j]
            if not blind.any():
                continue
            tokens = ex.token_ids.copy()
            tokens[j] = (tokens[j] + 1 - 7) % (len(tok) - 7) + 7
            ex2 = type(ex)(**{**ex.__dict__, "token_ids": tokens})
            h1, _ = run(models[K], ex2, tok)
            worst = max(worst, (h1[blind] - h0[blind]).abs().max().item())
            checked += 1
    record(4, "mask soundness", rule_bad == 0 and worst < 1e-9,
           f"{rule_bad}/50 masks differ from the rule, max |delta| = {worst:.1e} (< 1e-9) "
           f"over {checked} perturbations")


def test_05_gradient_check():
    t0 = time.perf_counter()
    tok = make_tokenizer(50)
    model = tiny_model(tok, K=4, layers=2, hidden=16, heads=2, vkb_enabled=True)
    model.cfg.max_context_len = 6
    rng = np.random.default_rng(3)
    ex = build_inputs(random_quadruple(tok, rng, K=4, d_obj=8), tok, model.cfg, rng)
    batch = collate([ex], tok.pad_id, dtype=torch.float64)
    err = finite_difference_check(model, batch)
    dt = time.perf_counter() - t0
    record(5, "gradient check", err < 1e-4 and dt < 120,
           f"max per-tensor relative error = {err:.1e} (< 1e-4), {dt:.1f} s (< 120 s)")


def test_06_hungarian_dominance():
    tok = make_tokenizer(50)
    model = tiny_model(tok, K=8)
    rng = np.random.default_rng(0)
    violations, strict = 0, 0
    for _ in range(100):
        exs = [build_inputs(random_quadruple(tok, rng, K=8, d_obj=8), tok, model.cfg, rng)
               for _ in range(2)]
        batch = collate(exs, tok.pad_id, dtype=torch.float64)
        with torch.no_grad():
            logits = model.concept_logits(model(batch), batch)
        off = batch.mcp_offsets
        for b in range(batch.size):
            sl = slice(off[b], off[b + 1])
            if mcp_loss(logits[sl], batch.mcp_targets[sl]) > ordered_mcp_nll(logits[sl], batch.mcp_targets[sl]) + 1e-12:
                violations += 1
    swapped = torch.full((2, 50), -5.0, dtype=torch.float64)
    swapped[0, 11] = 5.0
    swapped[1, 10] = 5.0
    t = torch.tensor([10, 11])
    a, b = mcp_loss(swapped, t).item(), ordered_mcp_nll(swapped, t).item()
    strict = a < b
    record(6, "Hungarian dominance", violations == 0 and strict,
           f"{violations} violations over 100 batches, swapped example {a:.3f} < {b:.3f}")


def test_07_vkb_locality():
    tok = make_tokenizer(50)
    model = tiny_model(tok)
    V, D = len(tok), model.cfg.hidden
    gen = torch.Generator().manual_seed(0)
    nonzero, sum_err = 0, 0.0
    for _ in range(50):
        e_r = torch.randn(D, dtype=torch.float64, generator=gen)
        E_q = torch.randn(4, D, dtype=torch.float64, generator=gen)
        concepts = torch.randint(7, V, (4,), generator=gen)
        keep = concept_vocab_mask(concepts[None], V)[0]
        delta = model.head.concept_bias(E_q.mean(0), keep)
        nonzero += int((delta[~keep] != 0).sum())
        with_vkb = model.head.logits(e_r) + delta
        without = model.head.logits(e_r)
        nonzero += int(((with_vkb - without)[~keep] != 0).sum())
        p = vkb_distribution(e_r, E_q, concepts, model.head)
        sum_err = max(sum_err, abs(p.sum().item() - 1))
    rng = np.random.default_rng(0)
    for i in range(20):
        q = random_quadruple(tok, rng, dialog_id=f"d{i}")
        p = step_distribution(model, q.regions, q.context, list(q.response[:1]), tok)
        sum_err = max(sum_err, abs(p.sum().item() - 1))
    record(7, "VKB locality", nonzero == 0 and sum_err <= 1e-6,
           f"{nonzero} nonzero non-concept logit deltas (== 0), max |sum - 1| = {sum_err:.1e} (<= 1e-6)")


def test_08_overfit_run():
    t0 = time.perf_counter()
    tok, quads, _ = synthetic_quadruples(n=32, K=8, d_obj=16, n_concepts=30, bag=3, seed=0)
    cfg = GeneratorConfig(vocab_size=len(tok), layers=2, hidden=64, heads=4, region_len=8, d_obj=16,
                          lr=1e-3, batch_size=32, max_steps=500, seed=0)
    model, _ = train_generator(quads, tok, cfg)
    ppl = perplexity(model, quads, tok)
    exact = sum(generate(model, q, tok, max_len=cfg.max_response_len)[0] == list(q.response)
                for q in quads) / len(quads)
    dt = time.perf_counter() - t0
    record(8, "overfit run", ppl < 1.5 and exact >= 0.9 and dt < 600,
           f"training PPL = {ppl:.4f} (< 1.5), exact greedy = {exact:.0%} (>= 90%), "
           f"{dt:.1f} s (< 600 s)")


def test_09_decoding_consistency():
    tok = make_tokenizer(50)
    model = tiny_model(tok, seed=7)
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(20):
        q = random_quadruple(tok, rng, resp_len=(1, 8), dialog_id=f"d{i}")
        tf = teacher_forced_distributions(model, [q], tok)[0]
        t = int(rng.integers(0, len(q.response) + 1))
        inc = step_distribution(model, q.regions, q.context, list(q.response[:t]), tok)
        worst = max(worst, (inc - tf[t]).abs().max().item())
    record(9, "decoding consistency", worst < 1e-5,
           f"max |incremental - teacher-forced| = {worst:.1e} (< 1e-5) on 20 prefixes")


def test_10_metric_unit_values():
    hyps = ["a b c", "d e f g"]
    b, r = bleu1(hyps, hyps), rougeL(hyps, hyps)
    d1 = distinct_n(["a a b"], 1)
    rng = np.random.default_rng(0)
    emb = {w: rng.standard_normal(8) for w in "abcdefg"}
    es = embedding_scores(hyps, hyps, emb)
    tok = make_tokenizer(50)
    model = tiny_model(tok)
    with torch.no_grad():
        for lin in (model.head.proj, model.head.vkb):
            lin.weight.zero_()
            lin.bias.zero_()
    qs = [random_quadruple(tok, rng, dialog_id=f"d{i}") for i in range(3)]
    ppl = perplexity(model, qs, tok)
    ok = (b == 1.0 and r == 1.0 and abs(d1 - 2 / 3) < 1e-12 and abs(ppl - 50) < 1e-9
          and all(abs(s - 1) < 1e-9 for s in es))
    record(10, "metric unit values", ok,
           f"BLEU-1 {b}, Rouge-L {r}, Dist-1 {d1:.4f} (2/3), uniform PPL {ppl:.6f} (|V|=50), "
           f"embedding {tuple(round(s, 6) for s in es)}")


PIPELINE = (["synth"], ["train-retriever"], ["build-index"], ["retrieve", "--split", "train"],
            ["retrieve", "--split", "test"], ["train-generator"], ["evaluate"])
ARTIFACTS = ("dialogs", "dialogs_test", "regions", "tags", "ground_truth", "vocab", "retriever",
             "index", "quadruples", "quadruples_test", "generator", "report")


@pytest.mark.slow
def test_11_end_to_end(tmp_path):
    t0 = time.perf_counter()
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = []
    for w in dirs:
        for step in PIPELINE:
            codes.append(cli.main(step + ["--workdir", str(w), "--seed", "0"]))
    dt = time.perf_counter() - t0
    differ = [name for name in ARTIFACTS
              if (dirs[0] / cli.FILES[name]).read_bytes() != (dirs[1] / cli.FILES[name]).read_bytes()]
    report = json.loads((dirs[0] / "report.json").read_text())
    complete = all(k in report and np.isfinite(report[k]) for k in METRIC_KEYS)
    summary = ", ".join(f"{k} {report.get(k, float('nan')):.3f}" for k in METRIC_KEYS)
    record(11, "end-to-end CLI", set(codes) == {0} and not differ and complete and dt < 900,
           f"exit codes {sorted(set(codes))}, artifacts differing between seeded runs: {differ or 'none'}, "
           f"report complete: {complete} ({summary}), two runs in {dt:.0f} s (each < 900 s)")
