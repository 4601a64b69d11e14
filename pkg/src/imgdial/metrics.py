"""Automatic response metrics: perplexity, BLEU-1, Rouge-L, Distinct-n and
the embedding-based relevance scores (average, extrema, greedy)."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .corpus import SPECIAL_TOKENS

METRIC_KEYS = ("ppl", "bleu1", "rougeL", "dist1", "dist2", "emb_average", "emb_extrema", "emb_greedy")


@dataclass
class EvalReport:
    ppl: float
    bleu1: float
    rougeL: float
    dist1: float
    dist2: float
    emb_average: float
    emb_extrema: float
    emb_greedy: float
    n_examples: int

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def pretty(self):
        rows = [f"{'examples':<12}{self.n_examples:>10d}"]
        rows += [f"{k:<12}{getattr(self, k):>10.4f}" for k in METRIC_KEYS]
        return "\n".join(rows)


def _words(s):
    return s.split() if isinstance(s, str) else list(s)


def _check_pairs(hypotheses, references):
    if len(hypotheses) != len(references):
        raise ValueError(f"length mismatch: {len(hypotheses)} hypotheses, {len(references)} references")
    if not hypotheses:
        raise ValueError("no hypotheses")


def perplexity(model, quadruples, tokenizer):
    """exp(mean NLL per response token), gold prefixes, no masking noise."""
    from .generator import teacher_forced_nll

    quadruples = list(quadruples)
    if not quadruples:
        raise ValueError("empty evaluation set")
    nll, count = teacher_forced_nll(model, quadruples, tokenizer)
    return math.exp(nll / count)


def bleu1(hypotheses, references):
    """Corpus BLEU-1: clipped unigram precision times the brevity penalty."""
    _check_pairs(hypotheses, references)
    matched = hyp_len = ref_len = 0
    for h, r in zip(hypotheses, references):
        h, r = _words(h), _words(r)
        rc = Counter(r)
        matched += sum(min(c, rc[w]) for w, c in Counter(h).items())
        hyp_len += len(h)
        ref_len += len(r)
    if hyp_len == 0 or matched == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * matched / hyp_len


def sentence_bleu1(hypothesis, reference):
    """Sentence BLEU-1 with add-one smoothing on the precision."""
    h, r = _words(hypothesis), _words(reference)
    rc = Counter(r)
    matched = sum(min(c, rc[w]) for w, c in Counter(h).items())
    precision = (matched + 1) / (len(h) + 1)
    bp = 1.0 if len(h) > len(r) else math.exp(1.0 - len(r) / max(len(h), 1))
    return bp * precision


def _as_ints(a, b):
    table = {}
    ai = [table.setdefault(w, len(table)) for w in a]
    bi = [table.setdefault(w, len(table)) for w in b]
    return np.asarray(ai, dtype=np.int64), np.asarray(bi, dtype=np.int64)


def rouge_l(hypothesis, reference, beta=1.0):
    h, r = _words(hypothesis), _words(reference)
    if not h or not r:
        return 0.0
    lcs = kernels.lcs_length(*_as_ints(h, r))
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(h), lcs / len(r)
    return (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p)


def rougeL(hypotheses, references, beta=1.0):
    """Mean sentence-level Rouge-L F-score (LCS based)."""
    _check_pairs(hypotheses, references)
    return sum(rouge_l(h, r, beta) for h, r in zip(hypotheses, references)) / len(hypotheses)


def distinct_n(hypotheses, n, denominator="words"):
    """Distinct n-grams across the corpus over total words (or total n-grams)."""
    if not hypotheses:
        raise ValueError("no hypotheses")
    grams = set()
    words = n_grams = 0
    for h in hypotheses:
        w = _words(h)
        words += len(w)
        for i in range(len(w) - n + 1):
            grams.add(tuple(w[i:i + n]))
            n_grams += 1
    denom = words if denominator == "words" else n_grams
    return len(grams) / denom if denom else 0.0


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _vectors(sentence, lookup):
    vs = [lookup(w) for w in _words(sentence)]
    vs = [v for v in vs if v is not None]
    return np.stack(vs) if vs else None


def _greedy_one_way(x, y):
    xn = x / np.linalg.norm(x, axis=1, keepdims=True).clip(1e-12)
    yn = y / np.linalg.norm(y, axis=1, keepdims=True).clip(1e-12)
    return float((xn @ yn.T).max(axis=1).mean())


def _extrema(x):
    idx = np.abs(x).argmax(axis=0)
    return x[idx, np.arange(x.shape[1])]


def embedding_scores(hypotheses, references, word_embeddings):
    """(average, extrema, greedy) cosine scores averaged over sentence pairs.

    ``word_embeddings`` is a mapping word -> vector or a callable returning a
    vector or None. Unknown words are skipped; a pair where either side has no
    known words scores 0.
    """
    _check_pairs(hypotheses, references)
    if callable(word_embeddings):
        lookup = word_embeddings
    else:
        lookup = lambda w: None if w not in word_embeddings else np.asarray(word_embeddings[w], dtype=np.float64)  # noqa: E731
    avg = ext = gre = 0.0
    for h, r in zip(hypotheses, references):
        x, y = _vectors(h, lookup), _vectors(r, lookup)
        if x is None or y is None:
            continue
        avg += _cos(x.mean(0), y.mean(0))
        ext += _cos(_extrema(x), _extrema(y))
        gre += 0.5 * (_greedy_one_way(x, y) + _greedy_one_way(y, x))
    n = len(hypotheses)
    return avg / n, ext / n, gre / n


def token_embedding_lookup(model, tokenizer):
    """Word -> generator input embedding, skipping specials and unknown words."""
    table = model.token_emb.weight.detach().double().numpy()
    first_word = len(SPECIAL_TOKENS)

    def lookup(w):
        i = tokenizer.ids.get(w)
        return None if i is None or i < first_word else table[i]

    return lookup


def evaluate(model, quadruples, tokenizer, decode="greedy", max_len=None, seed=0):
    """Generate for every quadruple and score against its gold response.

    Returns ``(EvalReport, hypotheses)``.
    """
    from .generator import generate

    quadruples = list(quadruples)
    if not quadruples:
        raise ValueError("empty evaluation set")
    hyps, refs = [], []
    for q in quadruples:
        out, _ = generate(model, q, tokenizer, decode=decode, max_len=max_len, seed=seed)
        hyps.append(tokenizer.decode(out))
        refs.append(tokenizer.decode(q.response))
    avg, ext, gre = embedding_scores(hyps, refs, token_embedding_lookup(model, tokenizer))
    report = EvalReport(
        ppl=perplexity(model, quadruples, tokenizer),
        bleu1=bleu1(hyps, refs),
        rougeL=rougeL(hyps, refs),
        dist1=distinct_n(hyps, 1),
        dist2=distinct_n(hyps, 2),
        emb_average=avg,
        emb_extrema=ext,
        emb_greedy=gre,
        n_examples=len(quadruples),
    )
    return report, hyps
