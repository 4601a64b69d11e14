"""Command-line pipeline: synth, train-retriever, build-index, retrieve,
train-generator, generate, evaluate, export-attention, chat.

Every subcommand reads a flat ``key = value`` config file (``--config``),
then applies command-line flags on top. Paths default to files inside
``workdir``. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, fields

import numpy as np
import torch

from . import corpus, detector
from ._io import CheckpointError
from .mips import IndexFormatError, VectorIndex
from .retriever import Retriever, TowerConfig, build_query, train_retriever

log = logging.getLogger("imgdial")

FILES = {
    "dialogs": "dialogs.jsonl",
    "dialogs_test": "dialogs_test.jsonl",
    "regions": "regions.jsonl",
    "tags": "tags.txt",
    "ground_truth": "ground_truth.jsonl",
    "vocab": "vocab.txt",
    "retriever": "retriever.ckpt",
    "index": "index.midx",
    "quadruples": "quadruples.jsonl",
    "quadruples_test": "quadruples_test.jsonl",
    "generator": "generator.ckpt",
    "predictions": "predictions.jsonl",
    "report": "report.json",
    "attention": "attention.json",
}


class UsageError(Exception):
    pass


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline in one flat record."""

    workdir: str = "run"
    seed: int = 0
    # synthetic world
    n_concepts: int = 40
    n_images: int = 250
    n_dialogs: int = 250
    n_test: int = 50
    concepts_per_image: int = 4
    d_obj: int = detector.SYNTHETIC_OBJ_DIM
    k: int = detector.DEFAULT_REGIONS
    world_noise: float = 0.05
    detector_noise: float = 0.0
    # retriever
    text_encoder_dim: int = 64
    projection_dims: str = "512"
    margin: float = 0.5
    retriever_lr: float = 1e-3
    retriever_epochs: int = 100
    retriever_batch_size: int = 64
    freeze_encoders: bool = True
    # generator
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    max_context_len: int = 110
    max_response_len: int = 40
    mcp_rate: float = 0.15
    mrp_rate: float = 0.70
    use_mcp: bool = True
    vkb_enabled: bool = True
    vkb_scope: str = "instance"
    generator_lr: float = 1e-3
    generator_batch_size: int = 32
    generator_epochs: int = 80
    generator_max_steps: int = 0
    # decoding
    decode: str = "greedy"
    max_len: int = 20
    temperature: float = 1.0
    top_k_sampling: int = 0

    def path(self, name):
        return os.path.join(self.workdir, FILES[name])

    def tower_config(self, image_dim):
        return TowerConfig(
            text_encoder_dim=self.text_encoder_dim,
            image_encoder_dim=image_dim,
            projection_dims=tuple(int(x) for x in self.projection_dims.replace(",", " ").split()),
            margin=self.margin, lr=self.retriever_lr, epochs=self.retriever_epochs,
            batch_size=self.retriever_batch_size, freeze_encoders=self.freeze_encoders,
            seed=self.seed)

    def generator_config(self, vocab_size, region_len, d_obj):
        from .generator import GeneratorConfig

        return GeneratorConfig(
            vocab_size=vocab_size, layers=self.layers, hidden=self.hidden, heads=self.heads,
            max_context_len=self.max_context_len, max_response_len=self.max_response_len,
            region_len=region_len, d_obj=d_obj, mcp_rate=self.mcp_rate, mrp_rate=self.mrp_rate,
            use_mcp=self.use_mcp, vkb_enabled=self.vkb_enabled, vkb_scope=self.vkb_scope,
            lr=self.generator_lr, batch_size=self.generator_batch_size,
            epochs=self.generator_epochs, max_steps=self.generator_max_steps, seed=self.seed)

    # --- file format ---

    def to_text(self):
        lines = ["# imgdial pipeline config: key = value, one per line"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, source="<config>"):
        return cls(**parse_config(text, source))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), path)

    def updated(self, **kw):
        return dataclasses.replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name, raw):
    kind = _TYPES[name]
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"{name}: not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def parse_config(text, source="<config>"):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    return out


# --- helpers ----------------------------------------------------------------


def _seed_everything(seed):
    torch.manual_seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.set_num_threads(1)


def _require(*paths):
    for p in paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing required file: {p}")


def _guard_outputs(paths, force):
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not force:
        raise UsageError(f"output exists (use --force to overwrite): {', '.join(existing)}")


def _read_ground_truth(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _load_vocab(cfg):
    _require(cfg.path("vocab"))
    return corpus.Tokenizer.load(cfg.path("vocab"))


def _region_shape(regions):
    first = next(iter(regions.values()))
    return first.K, first.d_obj


def _load_quadruples(pairs_path, dialogs_path, regions_path, tok):
    _require(pairs_path, dialogs_path, regions_path)
    return corpus.load_quadruples(pairs_path, corpus.read_dialogs(dialogs_path),
                                  detector.load_regions(regions_path), tok)


def reply(model, regions, context, tok, cfg):
    """Decode one response; the code path shared by ``generate`` and ``chat``."""
    from .generator import generate

    prompt = corpus.Quadruple("", regions.image_id, regions,
                              tuple(tuple(tok.encode(u)) for u in context), ())
    out, _ = generate(model, prompt, tok, decode=cfg.decode, max_len=cfg.max_len, seed=cfg.seed,
                      temperature=cfg.temperature, top_k=cfg.top_k_sampling)
    return tok.decode(out)


# --- subcommands --------------------------------------------------------------


def cmd_synth(cfg, args):
    os.makedirs(cfg.workdir, exist_ok=True)
    outs = [cfg.path(n) for n in ("dialogs", "dialogs_test", "regions", "tags", "ground_truth")]
    _guard_outputs(outs, args.force)
    if not 0 <= cfg.n_test < cfg.n_dialogs:
        raise UsageError("n_test must be in [0, n_dialogs)")
    world = corpus.generate_synthetic_world(
        cfg.n_concepts, cfg.n_images, cfg.n_dialogs, cfg.d_obj, cfg.concepts_per_image,
        cfg.seed, noise=cfg.world_noise)
    regions = [detector.synthetic_detect(img, world, K=cfg.k, noise=cfg.detector_noise, seed=cfg.seed)
               for img in world.images]
    n_train = cfg.n_dialogs - cfg.n_test
    train, test = world.dialogs[:n_train], world.dialogs[n_train:]
    corpus.write_dialogs(cfg.path("dialogs"), train)
    corpus.write_dialogs(cfg.path("dialogs_test"), test)
    detector.write_regions(cfg.path("regions"), regions)
    detector.write_tags(cfg.path("tags"), world.concepts)
    with open(cfg.path("ground_truth"), "w", encoding="utf-8") as fh:
        for split, ds in (("train", train), ("test", test)):
            for d in ds:
                fh.write(json.dumps({"dialog_id": d.id, "image_id": world.pairing[d.id],
                                     "split": split}) + "\n")
    log.info("synth: %d train / %d test dialogs, %d images, K=%d", len(train), len(test),
             len(regions), cfg.k)
    return 0


def cmd_train_retriever(cfg, args):
    dialogs_path = args.dialogs or cfg.path("dialogs")
    regions_path = args.regions or cfg.path("regions")
    gt_path = args.ground_truth or cfg.path("ground_truth")
    out = args.out or cfg.path("retriever")
    _require(dialogs_path, regions_path, gt_path)
    _guard_outputs([out], args.force)
    dialogs = corpus.read_dialogs(dialogs_path)
    regions = detector.load_regions(regions_path)
    tags_path = cfg.path("tags")
    tags = detector.read_tags(tags_path) if os.path.exists(tags_path) else []
    if os.path.exists(cfg.path("vocab")):
        tok = corpus.Tokenizer.load(cfg.path("vocab"))
    else:
        tags = tags or sorted({c for rs in regions.values() for c in rs.concepts})
        tok = corpus.build_vocabulary(dialogs, tags)
        tok.save(cfg.path("vocab"))
    truth = {r["dialog_id"]: r["image_id"] for r in _read_ground_truth(gt_path)}
    pairs = []
    for d in dialogs:
        if d.id not in truth:
            raise ValueError(f"{gt_path}: no image for dialog {d.id}")
        if truth[d.id] not in regions:
            raise ValueError(f"{gt_path}: unknown image {truth[d.id]} for dialog {d.id}")
        pairs.append((d, regions[truth[d.id]]))
    _, d_obj = _region_shape(regions)
    model, curve = train_retriever(pairs, tok, cfg.tower_config(d_obj))
    model.save(out)
    log.info("train-retriever: %d pairs, final loss %.4f -> %s", len(pairs), curve[-1], out)
    return 0


def cmd_build_index(cfg, args):
    regions_path = args.regions or cfg.path("regions")
    ckpt = args.checkpoint or cfg.path("retriever")
    out = args.out or cfg.path("index")
    _require(regions_path, ckpt)
    _guard_outputs([out], args.force)
    tok = _load_vocab(cfg)
    model = Retriever.load(ckpt, tok)
    regions = detector.load_regions(regions_path)
    ids = sorted(regions)
    emb = model.encode_images([regions[i] for i in ids]).astype(np.float32)
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    index = VectorIndex(emb.shape[1]).add_many(ids, emb).freeze()
    index.save(out)
    log.info("build-index: %d images -> %s", len(index), out)
    return 0


def cmd_retrieve(cfg, args):
    split = args.split
    dialogs_path = args.dialogs or cfg.path("dialogs" if split == "train" else "dialogs_test")
    ckpt = args.checkpoint or cfg.path("retriever")
    index_path = args.index or cfg.path("index")
    out = args.out or cfg.path("quadruples" if split == "train" else "quadruples_test")
    audit = args.audit or out + ".queries.jsonl"
    _require(dialogs_path, ckpt, index_path)
    _guard_outputs([out, audit], args.force)
    tok = _load_vocab(cfg)
    model = Retriever.load(ckpt, tok)
    index = VectorIndex.load(index_path)
    dialogs = corpus.read_dialogs(dialogs_path)
    mode = "train" if split == "train" else "infer"
    queries = [build_query(d, mode) for d in dialogs]
    pairs, extra = [], []
    if dialogs:
        results = index.batch_search(model.encode_texts(queries), args.top_k)
        for d, res in zip(dialogs, results):
            pairs.append((d.id, res[0][0]))
            rec = {"score": round(float(res[0][1]), 6)}
            if args.top_k > 1:
                rec["alternatives"] = [[i, round(float(s), 6)] for i, s in res[1:]]
            extra.append(rec)
    corpus.write_pairs(out, pairs, extra)
    with open(audit, "w", encoding="utf-8") as fh:
        for d, q in zip(dialogs, queries):
            fh.write(json.dumps({"dialog_id": d.id, "mode": mode, "query": q}) + "\n")
    log.info("retrieve: %d dialogs (%s queries) -> %s", len(dialogs), mode, out)
    return 0


def cmd_train_generator(cfg, args):
    out = args.out or cfg.path("generator")
    _guard_outputs([out], args.force)
    from .generator import train_generator

    tok = _load_vocab(cfg)
    quads = _load_quadruples(args.quadruples or cfg.path("quadruples"),
                             args.dialogs or cfg.path("dialogs"),
                             args.regions or cfg.path("regions"), tok)
    if not quads:
        raise ValueError("no training quadruples")
    K, d_obj = quads[0].regions.K, quads[0].regions.d_obj
    gcfg = cfg.generator_config(len(tok), K, d_obj)
    tags_path = cfg.path("tags")
    concept_vocab = [t for t in detector.read_tags(tags_path) if t in tok] if os.path.exists(tags_path) else None
    _, curve = train_generator(quads, tok, gcfg, concept_vocab=concept_vocab, checkpoint_path=out)
    log.info("train-generator: %d quadruples, %d steps, final loss %.4f -> %s",
             len(quads), len(curve), curve[-1], out)
    return 0


def _load_generator(cfg, args, tok):
    from .generator import load_generator

    ckpt = args.checkpoint or cfg.path("generator")
    _require(ckpt)
    return load_generator(ckpt, tok)


def cmd_generate(cfg, args):
    out = args.out or cfg.path("predictions")
    _guard_outputs([out], args.force)
    tok = _load_vocab(cfg)
    model = _load_generator(cfg, args, tok)
    pairs_path = args.quadruples or cfg.path("quadruples_test")
    dialogs_path = args.dialogs or cfg.path("dialogs_test")
    regions_path = args.regions or cfg.path("regions")
    _require(pairs_path, dialogs_path, regions_path)
    dialogs = {d.id: d for d in corpus.read_dialogs(dialogs_path)}
    regions = detector.load_regions(regions_path)
    with open(out, "w", encoding="utf-8") as fh:
        for lineno, rec in enumerate(corpus.read_pairs(pairs_path), 1):
            try:
                d, rs = dialogs[rec["dialog_id"]], regions[rec["image_id"]]
            except KeyError as exc:
                raise ValueError(f"{pairs_path}:{lineno}: unknown id {exc}") from None
            text = reply(model, rs, d.context, tok, cfg)
            fh.write(json.dumps({"dialog_id": d.id, "image_id": rs.image_id, "response": text}) + "\n")
    log.info("generate: -> %s", out)
    return 0


def cmd_evaluate(cfg, args):
    from .metrics import evaluate

    out = args.out or cfg.path("report")
    _guard_outputs([out], args.force)
    tok = _load_vocab(cfg)
    model = _load_generator(cfg, args, tok)
    quads = _load_quadruples(args.quadruples or cfg.path("quadruples_test"),
                             args.dialogs or cfg.path("dialogs_test"),
                             args.regions or cfg.path("regions"), tok)
    report, _ = evaluate(model, quads, tok, decode=cfg.decode, max_len=cfg.max_len, seed=cfg.seed)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(report.pretty())
    return 0


def cmd_export_attention(cfg, args):
    from .generator import build_decode_inputs, export_attention, save_attention

    out = args.out or cfg.path("attention")
    _guard_outputs([out], args.force)
    tok = _load_vocab(cfg)
    model = _load_generator(cfg, args, tok)
    quads = _load_quadruples(args.quadruples or cfg.path("quadruples_test"),
                             args.dialogs or cfg.path("dialogs_test"),
                             args.regions or cfg.path("regions"), tok)
    if not 0 <= args.example < len(quads):
        raise UsageError(f"--example {args.example} out of range [0, {len(quads)})")
    if not 0 <= args.layer < model.cfg.layers:
        raise UsageError(f"--layer {args.layer} out of range [0, {model.cfg.layers})")
    if not 0 <= args.head < model.cfg.heads:
        raise UsageError(f"--head {args.head} out of range [0, {model.cfg.heads})")
    q = quads[args.example]
    text = reply(model, q.regions, _context_texts(q, tok), tok, cfg)
    prefix = tok.encode(text)
    ex = build_decode_inputs(q.regions, q.context, prefix, tok, model.cfg)
    tokens = [corpus.BOS] + tok.split(text) + [corpus.MASK]
    data = export_attention(model, ex, args.layer, args.head, tok.pad_id, tokens=tokens)
    data["image_id"] = q.image_id
    data["dialog_id"] = q.dialog_id
    save_attention(out, data)
    log.info("export-attention: layer %d head %d -> %s", args.layer, args.head, out)
    return 0


def _context_texts(q, tok):
    return [tok.decode(u) for u in q.context]


def cmd_chat(cfg, args, stdin=None, stdout=None):
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    tok = _load_vocab(cfg)
    model = _load_generator(cfg, args, tok)
    ret_path = args.retriever or cfg.path("retriever")
    index_path = args.index or cfg.path("index")
    regions_path = args.regions or cfg.path("regions")
    _require(ret_path, index_path, regions_path)
    retriever = Retriever.load(ret_path, tok)
    index = VectorIndex.load(index_path)
    regions = detector.load_regions(regions_path)
    context = []
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        if line == "/quit":
            break
        context.append(line)
        query = build_query(corpus.Dialog("chat", tuple(context), "-"), "infer")
        image_id = index.search_top_k(retriever.encode_texts([query])[0], 1)[0][0]
        rs = regions[image_id]
        print(f"image: {image_id}", file=stdout)
        print(f"concepts: {' '.join(sorted(set(rs.concepts)))}", file=stdout)
        text = reply(model, rs, context, tok, cfg)
        print(f"bot: {text}", file=stdout)
        stdout.flush()
        context.append(text)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train-retriever": cmd_train_retriever,
    "build-index": cmd_build_index,
    "retrieve": cmd_retrieve,
    "train-generator": cmd_train_generator,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "export-attention": cmd_export_attention,
    "chat": cmd_chat,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--workdir", help="directory holding the pipeline artifacts")
    common.add_argument("--seed", type=int)
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--out", help="output path")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="imgdial", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic world")
    p.add_argument("--k", type=int, help="detections per image (default 36)")
    p.add_argument("--n-images", type=int)
    p.add_argument("--n-dialogs", type=int)
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("train-retriever", parents=[common], help="fit the two-tower matcher")
    p.add_argument("--dialogs")
    p.add_argument("--regions")
    p.add_argument("--ground-truth")

    p = sub.add_parser("build-index", parents=[common], help="embed all images into an index")
    p.add_argument("--regions")
    p.add_argument("--checkpoint")

    p = sub.add_parser("retrieve", parents=[common], help="pair dialogs with images")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--dialogs")
    p.add_argument("--checkpoint")
    p.add_argument("--index")
    p.add_argument("--top-k", type=int, default=1)
    p.add_argument("--audit", help="query audit log (default: <out>.queries.jsonl)")

    for name, help_ in (("train-generator", "fit the response generator"),
                        ("generate", "decode responses"),
                        ("evaluate", "score generated responses"),
                        ("export-attention", "dump region attention of one example")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--quadruples")
        p.add_argument("--dialogs")
        p.add_argument("--regions")
        if name != "train-generator":
            p.add_argument("--checkpoint")
        if name in ("generate", "evaluate"):
            p.add_argument("--decode", choices=("greedy", "sample"))
        if name == "export-attention":
            p.add_argument("--example", type=int, default=0)
            p.add_argument("--layer", type=int, default=0)
            p.add_argument("--head", type=int, default=0)

    p = sub.add_parser("chat", parents=[common], help="interactive demo")
    p.add_argument("--checkpoint")
    p.add_argument("--retriever")
    p.add_argument("--index")
    p.add_argument("--regions")
    return parser


def resolve_config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = parse_config("\n".join(args.set), "--set")
    for flag, key in (("workdir", "workdir"), ("seed", "seed"), ("k", "k"), ("n_images", "n_images"),
                      ("n_dialogs", "n_dialogs"), ("n_test", "n_test"), ("decode", "decode")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    return cfg.updated(**overrides)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("imgdial: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.config:
            _require(args.config)
        cfg = resolve_config(args)
        _seed_everything(cfg.seed)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, CheckpointError, IndexFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
