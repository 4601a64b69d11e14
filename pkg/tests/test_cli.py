import io
import json
import os

import pytest

from imgdial import cli
from imgdial.cli import PipelineConfig, main, parse_config
from imgdial.corpus import Dialog, write_dialogs, write_pairs
from imgdial.detector import load_regions
from imgdial.metrics import METRIC_KEYS

SMALL = """
n_concepts = 20
n_images = 40
n_dialogs = 40
n_test = 10
k = 8
d_obj = 16
world_noise = 0.0
retriever_epochs = 60
retriever_batch_size = 16
layers = 1
hidden = 16
heads = 2
generator_max_steps = 15
generator_batch_size = 8
max_len = 6
"""


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    conf = root / "small.conf"
    conf.write_text(SMALL)
    w = root / "run"
    common = ["--config", conf, "--workdir", w]
    for step in (["synth"], ["train-retriever"], ["build-index"], ["retrieve", "--split", "train"],
                 ["retrieve", "--split", "test", "--top-k", "3"], ["train-generator"]):
        assert run(*step, *common) == 0, step
    return root, w, common


def read_jsonl(path):
    return [json.loads(line) for line in open(path) if line.strip()]


def test_config_round_trip():
    cfg = PipelineConfig(seed=5, decode="sample", freeze_encoders=False, margin=0.25,
                         projection_dims="64 32")
    assert PipelineConfig.from_text(cfg.to_text()) == cfg


def test_config_errors():
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("nope = 1")
    with pytest.raises(ValueError, match=":1:"):
        parse_config("seed = abc")
    with pytest.raises(ValueError, match="expected"):
        parse_config("seed 3")
    with pytest.raises(ValueError):
        parse_config("use_mcp = maybe")


def test_defaults_follow_full_scale_region_count():
    assert PipelineConfig().k == 36


def test_flags_override_file(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("seed = 3\nk = 5\n")
    args = cli.build_parser().parse_args(["synth", "--config", str(conf), "--seed", "9"])
    cfg = cli.resolve_config(args)
    assert cfg.seed == 9 and cfg.k == 5
    args = cli.build_parser().parse_args(["synth", "--config", str(conf), "--set", "k=7"])
    assert cli.resolve_config(args).k == 7


def test_synth_files_and_force(tmp_path):
    w = tmp_path / "w"
    assert run("synth", "--workdir", w, "--n-images", 5, "--n-dialogs", 5, "--n-test", 1) == 0
    for name in ("dialogs.jsonl", "regions.jsonl", "tags.txt", "ground_truth.jsonl"):
        assert (w / name).stat().st_size > 0
    regions = load_regions(w / "regions.jsonl")
    assert {rs.K for rs in regions.values()} == {36}
    assert run("synth", "--workdir", w, "--n-images", 5, "--n-dialogs", 5, "--n-test", 1) == 1
    assert run("synth", "--workdir", w, "--n-images", 5, "--n-dialogs", 5, "--n-test", 1, "--force") == 0


def test_synth_seed_determinism(tmp_path):
    outs = []
    for name in ("a", "b"):
        assert run("synth", "--workdir", tmp_path / name, "--seed", 7, "--n-images", 6,
                   "--n-dialogs", 6, "--n-test", 2, "--k", 4) == 0
        outs.append({f: (tmp_path / name / f).read_bytes() for f in os.listdir(tmp_path / name)})
    assert outs[0] == outs[1]


def test_exit_codes(tmp_path, capsys):
    assert run("bogus") == 1
    assert main([]) == 1
    assert run("retrieve", "--split", "dev") == 1
    assert run("build-index", "--workdir", tmp_path) == 2
    assert "missing required file" in capsys.readouterr().err
    bad = tmp_path / "bad.conf"
    bad.write_text("nope = 1\n")
    assert run("synth", "--config", bad, "--workdir", tmp_path) == 2


def test_retrieve_train_matches_ground_truth(pipeline):
    _, w, _ = pipeline
    truth = {r["dialog_id"]: r["image_id"] for r in read_jsonl(w / "ground_truth.jsonl")}
    got = read_jsonl(w / "quadruples.jsonl")
    assert len(got) == 30
    assert sum(truth[r["dialog_id"]] == r["image_id"] for r in got) / len(got) >= 0.9


def test_test_split_uses_context_only_queries(pipeline):
    _, w, _ = pipeline
    dialogs = {r["id"]: r for r in read_jsonl(w / "dialogs_test.jsonl")}
    audit = read_jsonl(w / "quadruples_test.jsonl.queries.jsonl")
    assert len(audit) == 10
    for rec in audit:
        d = dialogs[rec["dialog_id"]]
        assert rec["mode"] == "infer"
        assert rec["query"] == " [SEP] ".join(d["context"])
        assert d["response"] not in rec["query"].split(" [SEP] ")
    train_audit = read_jsonl(w / "quadruples.jsonl.queries.jsonl")
    assert all(r["mode"] == "train" for r in train_audit)
    alts = read_jsonl(w / "quadruples_test.jsonl")
    assert all(len(r["alternatives"]) == 2 for r in alts)


def test_retrieve_empty_dialog_file(pipeline, tmp_path):
    _, _, common = pipeline
    (tmp_path / "empty.jsonl").write_text("")
    out = tmp_path / "q.jsonl"
    assert run("retrieve", *common, "--dialogs", tmp_path / "empty.jsonl", "--out", out) == 0
    assert out.read_text() == ""


def test_retrieve_missing_index(pipeline, tmp_path):
    _, _, common = pipeline
    assert run("retrieve", *common, "--index", tmp_path / "none.midx", "--out", tmp_path / "x") == 2


def test_generate_greedy_twice_identical(pipeline, tmp_path):
    _, _, common = pipeline
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("generate", *common, "--out", a) == 0
    assert run("generate", *common, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_jsonl(a)) == 10


def test_evaluate_report(pipeline, tmp_path, capsys):
    _, _, common = pipeline
    out = tmp_path / "report.json"
    assert run("evaluate", *common, "--out", out) == 0
    data = json.loads(out.read_text())
    assert set(METRIC_KEYS) <= set(data)
    printed = capsys.readouterr().out
    assert all(k in printed for k in METRIC_KEYS)


def test_export_attention(pipeline, tmp_path):
    _, _, common = pipeline
    out = tmp_path / "att.json"
    assert run("export-attention", *common, "--out", out, "--layer", 0, "--head", 1) == 0
    data = json.loads(out.read_text())
    assert {"layer", "head", "rows", "boxes", "weights"} <= set(data)
    assert all(len(row) == 8 for row in data["weights"])
    assert run("export-attention", *common, "--out", tmp_path / "x.json", "--layer", 5) == 1
    assert run("export-attention", *common, "--out", tmp_path / "y.json", "--example", 99) == 1


def test_chat_matches_generate_and_quits(pipeline, tmp_path, monkeypatch, capsys):
    _, w, common = pipeline
    line = read_jsonl(w / "dialogs_test.jsonl")[0]["context"][0]
    monkeypatch.setattr("sys.stdin", io.StringIO(line + "\n/quit\nnever read\n"))
    assert run("chat", *common) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("image: ")
    assert out[1].startswith("concepts: ")
    assert out[2].startswith("bot: ")
    assert len(out) == 3
    image_id = out[0].split(": ", 1)[1]
    reply = out[2].split(": ", 1)[1]

    write_dialogs(tmp_path / "d.jsonl", [Dialog("c0", (line,), "unused")])
    write_pairs(tmp_path / "p.jsonl", [("c0", image_id)])
    pred = tmp_path / "pred.jsonl"
    assert run("generate", *common, "--dialogs", tmp_path / "d.jsonl",
               "--quadruples", tmp_path / "p.jsonl", "--out", pred) == 0
    assert read_jsonl(pred)[0]["response"] == reply


def test_chat_missing_artifacts(tmp_path):
    assert run("chat", "--workdir", tmp_path) == 2
