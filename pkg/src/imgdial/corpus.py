"""Dialogs, images, quadruples, the whitespace tokenizer and the synthetic world."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .detector import RegionSet, normalize_tag

log = logging.getLogger(__name__)

BOS, EOS, MASK, PAD, REGION, SEP, UNK = (
    "[BOS]", "[EOS]", "[MASK]", "[PAD]", "[REGION]", "[SEP]", "[UNK]",
)
SPECIAL_TOKENS = tuple(sorted([BOS, EOS, MASK, PAD, REGION, SEP, UNK]))


@dataclass(frozen=True)
class Dialog:
    id: str
    context: tuple
    response: str

    def __post_init__(self):
        ctx = tuple(" ".join(u.split()) for u in self.context)
        if not ctx:
            raise ValueError(f"dialog {self.id}: empty context")
        if any(not u for u in ctx):
            raise ValueError(f"dialog {self.id}: empty utterance in context")
        resp = " ".join(self.response.split())
        if not resp:
            raise ValueError(f"dialog {self.id}: empty response")
        object.__setattr__(self, "context", ctx)
        object.__setattr__(self, "response", resp)

    def to_json(self):
        return {"id": self.id, "context": list(self.context), "response": self.response}

    @classmethod
    def from_json(cls, rec):
        return cls(str(rec["id"]), tuple(rec["context"]), rec["response"])


class Tokenizer:
    """Lowercased whitespace tokenizer over a fixed vocabulary.

    Special tokens occupy the lowest ids and are matched verbatim, before
    lowercasing, so ``"[SEP]"`` in a query stays a separator.
    """

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}
        self.unk_id = self.ids[UNK]
        self.pad_id = self.ids[PAD]
        self.mask_id = self.ids[MASK]
        self.bos_id = self.ids[BOS]
        self.eos_id = self.ids[EOS]
        self.sep_id = self.ids[SEP]
        self.region_id = self.ids[REGION]

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Tokenizer) and self.tokens == other.tokens

    def __contains__(self, token):
        return token in self.ids

    def split(self, text):
        return [t if t in SPECIAL_TOKENS else t.lower() for t in text.split()]

    def encode(self, text):
        return [self.ids.get(t, self.unk_id) for t in self.split(text)]

    def decode(self, ids):
        return " ".join(self.tokens[int(i)] for i in ids)

    def id_of(self, token):
        return self.ids.get(token, self.unk_id)

    @property
    def hash(self):
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocabulary(dialogs, tags, min_count=1):
    """Specials, then all tags, then corpus tokens seen ``min_count`` times; each block sorted."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    dialogs = list(dialogs)
    tags = {normalize_tag(t) for t in tags}
    if not dialogs:
        raise ValueError("empty corpus")
    counts = Counter()
    for d in dialogs:
        texts = d.context + (d.response,) if isinstance(d, Dialog) else (d,)
        for text in texts:
            counts.update(t.lower() for t in text.split() if t not in SPECIAL_TOKENS)
    if not counts:
        raise ValueError("empty corpus")
    tag_block = sorted(tags - set(SPECIAL_TOKENS))
    seen = set(SPECIAL_TOKENS) | set(tag_block)
    corpus_block = sorted(t for t, c in counts.items() if c >= min_count and t not in seen)
    return Tokenizer(list(SPECIAL_TOKENS) + tag_block + corpus_block)


def tokenize(text, tokenizer):
    return tokenizer.encode(text)


@dataclass(frozen=True, eq=False)
class ImageRecord:
    image_id: str
    regions: RegionSet

    def global_feature(self):
        return self.regions.global_feature()


@dataclass(frozen=True)
class Quadruple:
    """One generator example: regions (O, Q), tokenized context C and response R."""

    dialog_id: str
    image_id: str
    regions: RegionSet
    context: tuple
    response: tuple
    unk_concepts: int = 0

    def __post_init__(self):
        if self.regions.K <= 0:
            raise ValueError("quadruple needs at least one region")


def make_quadruple(dialog, regions, tokenizer):
    unk = sum(1 for c in regions.concepts if c not in tokenizer)
    if unk:
        log.warning("%s: %d concept tags map to [UNK]", regions.image_id, unk)
    return Quadruple(
        dialog_id=dialog.id,
        image_id=regions.image_id,
        regions=regions,
        context=tuple(tuple(tokenizer.encode(u)) for u in dialog.context),
        response=tuple(tokenizer.encode(dialog.response)),
        unk_concepts=unk,
    )


# --- file formats -----------------------------------------------------------


def write_dialogs(path, dialogs):
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogs:
            fh.write(json.dumps(d.to_json()) + "\n")


def read_dialogs(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Dialog.from_json(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def write_pairs(path, pairs, extra=None):
    """Write ``quadruples.jsonl`` style ``{"dialog_id", "image_id"}`` records."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, (dialog_id, image_id) in enumerate(pairs):
            rec = {"dialog_id": dialog_id, "image_id": image_id}
            if extra is not None:
                rec.update(extra[i])
            fh.write(json.dumps(rec) + "\n")


def read_pairs(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(rec)
    return out


def load_quadruples(pairs_path, dialogs, regions, tokenizer):
    """Join a pairing file with dialogs and regions into quadruples."""
    by_id = {d.id: d for d in dialogs}
    out = []
    for lineno, rec in enumerate(read_pairs(pairs_path), 1):
        try:
            d = by_id[rec["dialog_id"]]
            rs = regions[rec["image_id"]]
        except KeyError as exc:
            raise ValueError(f"{pairs_path}:{lineno}: unknown id {exc}") from None
        out.append(make_quadruple(d, rs, tokenizer))
    return out


# --- synthetic world -------------------------------------------------------

CONCEPT_NAMES = (
    "pizza", "table", "dog", "cat", "car", "person", "truck", "bus", "traffic light",
    "umbrella", "clock", "bed", "book", "pot plant", "beach", "swan", "ball", "snow",
    "tree", "bench", "bicycle", "boat", "cake", "chair", "cup", "donut", "horse",
    "kite", "laptop", "phone", "sandwich", "sink", "surfboard", "teddy bear", "train",
    "vase", "banana", "bird", "bottle", "bowl", "broccoli", "couch", "elephant",
    "giraffe", "guitar", "hat", "lamp", "mountain", "pillow", "river", "sheep",
    "shoe", "sofa", "sunset", "melon", "tennis racket", "toilet", "window", "zebra",
    "apple", "orange", "carrot", "fence", "flower", "grass", "road", "sign", "wave",
)

_UTTERANCE_TEMPLATES = {
    1: (
        "i saw a {0} today",
        "do you like the {0}",
        "there is a {0} over there",
        "my friend has a {0}",
        "that {0} looks great",
        "have you ever seen a {0} like that",
    ),
    2: (
        "i saw a {0} next to the {1}",
        "the {0} and the {1} are my favorite",
        "there was a {0} near a {1} yesterday",
        "we talked about the {0} and the {1}",
    ),
    3: (
        "a {0} a {1} and a {2} were all there",
        "i remember the {0} the {1} and the {2}",
        "we found a {0} with a {1} and a {2}",
    ),
}

_RESPONSE_TEMPLATES = (
    "the {0} is the best in the world",
    "i love that {0} so much",
    "that {0} reminds me of home",
    "i have never seen a {0} and a {1} together",
    "the {0} next to the {1} is so cool",
)


@dataclass
class SyntheticWorld:
    concepts: tuple
    latents: np.ndarray
    images: list
    dialogs: list
    pairing: dict
    image_concepts: dict
    planted_pair: tuple | None = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {c: i for i, c in enumerate(self.concepts)}

    def latent(self, concept):
        return self.latents[self._index[concept]]

    def image(self, image_id):
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise KeyError(image_id)


def _concept_names(n):
    names = [normalize_tag(c) for c in CONCEPT_NAMES[:n]]
    names += [f"concept_{i}" for i in range(len(names), n)]
    return tuple(names)


def _fill(template, words):
    return template.format(*words)


def _make_dialog(dialog_id, bag, rng):
    """Context covers every concept of the bag; the response mentions one or two."""
    bag = list(bag)
    n_utt = int(rng.integers(2, 5))
    order = [bag[i] for i in rng.permutation(len(bag))]
    chunks = [[] for _ in range(n_utt)]
    for i, c in enumerate(order):
        chunks[i % n_utt].append(c)
    context = []
    for chunk in chunks:
        chunk = chunk[:3] or [order[int(rng.integers(len(order)))]]
        templates = _UTTERANCE_TEMPLATES[len(chunk)]
        context.append(_fill(templates[int(rng.integers(len(templates)))], chunk))
    k = 1 if len(bag) == 1 else int(rng.integers(1, 3))
    picks = [bag[i] for i in rng.choice(len(bag), size=k, replace=False)]
    pool = [t for t in _RESPONSE_TEMPLATES if t.count("{") == k]
    response = _fill(pool[int(rng.integers(len(pool)))], picks)
    return Dialog(dialog_id, tuple(context), response)


def generate_synthetic_world(n_concepts, n_images, n_dialogs, d_obj, K, seed,
                             noise=0.05, planted_rate=0.1, id_prefix=""):
    """A deterministic toy world of concepts, images and templated dialogs.

    Each concept has a latent vector; an image is a bag of K distinct concepts
    whose region features are the latents plus isotropic noise. Dialog ``i``
    is written about image ``i % n_images``. A fraction ``planted_rate`` of the
    images contains the first two concepts together, so they co-occur far more
    often than any other pair.
    """
    if min(n_concepts, n_images, n_dialogs, d_obj, K) < 1:
        raise ValueError("all sizes must be >= 1")
    if K > n_concepts:
        raise ValueError(f"K={K} exceeds n_concepts={n_concepts}")
    rng = np.random.default_rng(seed)
    names = _concept_names(n_concepts)
    latents = rng.standard_normal((n_concepts, d_obj))
    planted = (names[0], names[1]) if K >= 2 and n_concepts >= 3 else None

    bags = []
    seen = set()
    for i in range(n_images):
        for _attempt in range(1000):
            if planted is not None and rng.random() < planted_rate:
                rest = rng.choice(np.arange(2, n_concepts), size=K - 2, replace=False)
                bag = [0, 1] + sorted(int(x) for x in rest)
            else:
                bag = sorted(int(x) for x in rng.choice(n_concepts, size=K, replace=False))
            key = tuple(sorted(bag))
            if key not in seen:
                break
        else:
            raise ValueError("cannot draw enough distinct concept bags; increase n_concepts")
        seen.add(key)
        bags.append(bag)

    images = []
    image_concepts = {}
    for i, bag in enumerate(bags):
        image_id = f"{id_prefix}img{i:05d}"
        concepts = tuple(names[c] for c in bag)
        feats = latents[bag] + (noise * rng.standard_normal((K, d_obj)) if noise > 0 else 0.0)
        images.append(ImageRecord(image_id, RegionSet(image_id, feats, concepts)))
        image_concepts[image_id] = concepts

    dialogs = []
    pairing = {}
    for j in range(n_dialogs):
        img = images[j % n_images]
        d = _make_dialog(f"{id_prefix}dlg{j:05d}", image_concepts[img.image_id], rng)
        dialogs.append(d)
        pairing[d.id] = img.image_id
    return SyntheticWorld(names, latents, images, dialogs, pairing, image_concepts, planted)


def mentioned_concepts(dialog, concepts):
    """Distinct known concepts mentioned anywhere in the dialog, in first-mention order."""
    known = set(concepts)
    out = []
    for text in dialog.context + (dialog.response,):
        for tok in text.lower().split():
            if tok in known and tok not in out:
                out.append(tok)
    return out


def tag_cooccurrence(records, anchor, top_n=None, known_tags=None):
    """Count images where ``anchor`` appears together with each other tag.

    Sorted by count descending, then tag name. ``known_tags`` defaults to the
    tags present in ``records``.
    """
    anchor = normalize_tag(anchor)
    bags = [set(r.regions.concepts if hasattr(r, "regions") else r.concepts) for r in records]
    known = {normalize_tag(t) for t in known_tags} if known_tags is not None else set().union(*bags) if bags else set()
    if anchor not in known:
        raise KeyError(f"unknown tag: {anchor}")
    counts = Counter()
    for bag in bags:
        if anchor in bag:
            counts.update(t for t in bag if t != anchor)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked if top_n is None else ranked[:top_n]
