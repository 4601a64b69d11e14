import numpy as np
import pytest
import torch

from imgdial import kernels
from imgdial.corpus import SPECIAL_TOKENS, Quadruple, Tokenizer
from imgdial.detector import RegionSet
from imgdial.generator import GeneratorConfig, new_model

torch.set_num_threads(1)


def make_tokenizer(size):
    """Specials followed by filler words w0, w1, ... up to ``size`` entries."""
    n_words = size - len(SPECIAL_TOKENS)
    return Tokenizer(list(SPECIAL_TOKENS) + [f"w{i}" for i in range(n_words)])


def first_word(tok):
    return len(SPECIAL_TOKENS)


def random_quadruple(tok, rng, K=4, d_obj=8, n_utts=None, utt_len=(1, 4), resp_len=(1, 5),
                     concept_pool=10, dialog_id="d0"):
    """A random quadruple over the filler words of ``tok``."""
    lo = first_word(tok)
    pool = [tok.tokens[lo + i] for i in range(concept_pool)]
    concepts = tuple(pool[int(i)] for i in rng.integers(0, len(pool), size=K))
    regions = RegionSet(f"img-{dialog_id}", rng.standard_normal((K, d_obj)), concepts,
                        boxes=rng.random((K, 4)))
    n_utts = n_utts or int(rng.integers(1, 4))
    words = np.arange(lo, len(tok))
    context = tuple(
        tuple(int(x) for x in rng.choice(words, size=int(rng.integers(*utt_len, endpoint=True))))
        for _ in range(n_utts))
    response = tuple(int(x) for x in rng.choice(words, size=int(rng.integers(*resp_len, endpoint=True))))
    return Quadruple(dialog_id, regions.image_id, regions, context, response)


def tiny_model(tok, K=4, d_obj=8, layers=2, hidden=16, heads=2, dtype=torch.float64, seed=0, **kw):
    cfg = GeneratorConfig(vocab_size=len(tok), layers=layers, hidden=hidden, heads=heads,
                          region_len=K, d_obj=d_obj, max_context_len=32, max_response_len=12,
                          seed=seed, **kw)
    model = new_model(cfg, tok, dtype=dtype)
    # larger weights than the training init so outputs depend visibly on inputs
    with torch.no_grad(), torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed + 1)
        for p in model.parameters():
            if p.dim() > 1:
                p.normal_(0.0, 0.3)
            else:
                p.add_(0.1 * torch.randn_like(p))
    model.eval()
    return model


@pytest.fixture
def tok50():
    return make_tokenizer(50)


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    return kernels.backends()[request.param]


def synthetic_quadruples(n=32, K=8, d_obj=16, n_concepts=30, bag=3, seed=0):
    """Tokenizer and quadruples from a small synthetic world and its detections."""
    from imgdial.corpus import build_vocabulary, generate_synthetic_world, make_quadruple
    from imgdial.detector import synthetic_detect

    world = generate_synthetic_world(n_concepts, n, n, d_obj=d_obj, K=bag, seed=seed)
    tok = build_vocabulary(world.dialogs, world.concepts)
    regions = {img.image_id: synthetic_detect(img, world, K=K, seed=seed) for img in world.images}
    quads = [make_quadruple(d, regions[world.pairing[d.id]], tok) for d in world.dialogs]
    return tok, quads, world


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
