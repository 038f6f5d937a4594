import json
import subprocess
import sys

import pytest

from suqa.cli import main, random_recall_baseline
from suqa.config import RunConfig
from suqa.errors import InvalidArgument
from suqa.remote import StubServer
from suqa.rewards import ELEMENT_NAMES

FAST = {
    "model": {"emb_dim": 8, "hidden_dim": 8, "conv_layers": 1, "kernel": 3},
    "supervised": {"epochs": 2, "batch_size": 8},
    "rl": {"max_explanation_tokens": 24},
    "rl_run": {"steps": 4, "batch_size": 4, "eval_every": 2},
}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "fast.json").write_text(json.dumps(FAST))
    assert run("gen-synthetic", "--out-dir", d / "data", "--n", 40, "--seed", 5) == 0
    assert run("train", "--mode", "supervised", "--config", d / "fast.json",
               "--train", d / "data/train.json", "--dev", d / "data/dev.json", "--out-dir", d / "sup") == 0
    return d


def read(path):
    return json.loads(path.read_text())


# ----------------------------------------------------------- gen-synthetic


def test_gen_synthetic_deterministic(tmp_path):
    assert run("gen-synthetic", "--out-dir", tmp_path / "a", "--n", 20, "--seed", 1) == 0
    assert run("gen-synthetic", "--out-dir", tmp_path / "b", "--n", 20, "--seed", 1) == 0
    for name in ("train", "dev", "test"):
        assert (tmp_path / "a" / f"{name}.json").read_bytes() == (tmp_path / "b" / f"{name}.json").read_bytes()
    data = read(tmp_path / "a/train.json")
    assert len(data["instances"]) == 16
    assert data["provenance"]["config"]["synthetic"]["rng_seed"] == 1
    assert data["provenance"]["split"] == "train"


def test_gen_synthetic_zero(tmp_path):
    assert run("gen-synthetic", "--out-dir", tmp_path, "--n", 0) == 0
    assert all(read(tmp_path / f"{n}.json")["instances"] == [] for n in ("train", "dev", "test"))


def test_gen_synthetic_bad_seed_type(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("gen-synthetic", "--out-dir", tmp_path, "--seed", "abc")
    assert exc.value.code == 2


def test_bad_config_value_type(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"synthetic": {"rng_seed": "7"}}))
    assert run("gen-synthetic", "--config", tmp_path / "c.json", "--out-dir", tmp_path) == 2
    assert "synthetic.rng_seed" in capsys.readouterr().err


# ---------------------------------------------------------------- config


def test_config_rejects_unknown_section_and_key():
    with pytest.raises(InvalidArgument):
        RunConfig.from_dict({"optimiser": {}})
    with pytest.raises(InvalidArgument):
        RunConfig.from_dict({"rl": {"lambda": 0.1}})
    with pytest.raises(InvalidArgument):
        RunConfig.from_dict({"rl": {"lambda_ml": True}})
    with pytest.raises(InvalidArgument):
        RunConfig.from_dict({"oracle": {"kind": "remote"}})


def test_config_round_trip_and_digest():
    cfg = RunConfig.from_dict({"rl": {"lambda_ml": 1}, "oracle": None})
    assert cfg.rl.lambda_ml == 1 and cfg.oracle is None
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict() and again.digest() == cfg.digest()
    assert RunConfig().digest() != cfg.digest()


def test_eval_oracle_defaults_to_training_oracle():
    cfg = RunConfig.from_dict({"oracle": {"kind": "span_matcher"}})
    assert cfg.resolved_eval_oracle.kind == "span_matcher"
    cfg = RunConfig.from_dict({"eval_oracle": {"kind": "synthetic_rule"}})
    assert cfg.resolved_eval_oracle.kind == "synthetic_rule"


# ------------------------------------------------------------------ ranker


def test_random_recall_baseline():
    assert random_recall_baseline(10, 2, 3) == pytest.approx(8 / 120)
    assert random_recall_baseline(10, 2, 10) == 1.0
    assert random_recall_baseline(10, 4, 3) == 0.0


def test_rank_train_and_eval(work, capsys):
    d = work
    assert run("rank", "train", "--train", d / "data/train.json", "--out", d / "ranker.json") == 0
    assert run("rank", "eval", "--corpus", d / "data/dev.json", "--ranker", d / "ranker.json", "--out", d / "r.json") == 0
    report = read(d / "r.json")
    assert report["k"] == 3 and report["random_baseline"] == pytest.approx(8 / 120)
    assert 0.0 <= report["recall_at_k"] <= 1.0


# ------------------------------------------------------------------- train


def test_supervised_artifacts(work):
    d = work / "sup"
    assert (d / "model.npz").exists() and (d / "train_log.jsonl").exists()
    metrics = read(d / "metrics.json")
    assert metrics["mode"] == "supervised"
    assert set(metrics["dev"]["elements"]) == set(ELEMENT_NAMES) and len(ELEMENT_NAMES) == 9


def test_rl_from_supervised(work):
    d = work
    assert run("train", "--mode", "joint", "--config", d / "fast.json", "--init", d / "sup/model.npz",
               "--train", d / "data/train.json", "--dev", d / "data/dev.json", "--out-dir", d / "rl") == 0
    assert (d / "rl/model.npz").read_bytes() != (d / "sup/model.npz").read_bytes()
    metrics = read(d / "rl/metrics.json")
    summary = metrics["train_summary"]
    assert set(summary["mean_elements_sampled"]) == set(ELEMENT_NAMES)
    assert set(summary["mean_elements_greedy"]) == set(ELEMENT_NAMES)
    assert metrics["provenance"]["command"] == "train --mode joint"
    log = [json.loads(line) for line in (d / "rl/train_log.jsonl").read_text().splitlines()]
    assert [e["step"] for e in log] == [1, 2, 3, 4]
    assert "valid" in log[1]


def test_rl_without_oracle_is_invalid_state(work, capsys):
    d = work
    code = run("train", "--mode", "rl", "--oracle", "none", "--config", d / "fast.json",
               "--train", d / "data/train.json", "--dev", d / "data/dev.json", "--out-dir", d / "x")
    assert code == 4
    assert "oracle" in capsys.readouterr().err


def test_rl_with_unreachable_remote_oracle(work):
    d = work
    code = run("train", "--mode", "rl", "--oracle", "remote", "--oracle-endpoint", "http://127.0.0.1:9/",
               "--config", d / "fast.json", "--train", d / "data/train.json", "--dev", d / "data/dev.json",
               "--out-dir", d / "x")
    assert code == 5


def test_supervised_without_gold(tmp_path, work):
    data = read(work / "data/train.json")
    for rec in data["instances"]:
        rec.pop("gold_explanation", None)
    (tmp_path / "bare.json").write_text(json.dumps(data))
    code = run("train", "--mode", "supervised", "--config", work / "fast.json",
               "--train", tmp_path / "bare.json", "--dev", work / "data/dev.json", "--out-dir", tmp_path / "o")
    assert code == 2


# -------------------------------------------------------------------- eval


def test_eval_gold_passthrough(work, capsys):
    d = work
    assert run("eval", "--corpus", d / "data/test.json", "--source", "gold_xp", "--eval-oracle", "synthetic_rule",
               "--out-dir", d / "ev_gold") == 0
    err = capsys.readouterr().err
    assert "no sufficiency judgements supplied" in err
    report = read(d / "ev_gold/report.json")
    assert report["corpus"]["mean_f1"] == 1.0 and report["corpus"]["mean_rg2"] == 1.0
    assert "xf1" not in report["corpus"]
    assert report["notices"] == ["no sufficiency judgements supplied; suf and xf1 omitted"]
    preds = read(d / "ev_gold/predictions.json")["predictions"]
    assert {"id", "explanation", "answer", "rewards", "metrics"} <= set(preds[0])


def test_eval_model_with_judgements(work):
    d = work
    corpus = read(d / "data/test.json")["instances"]
    judgements = []
    for i, rec in enumerate(corpus):
        for w in range(3):
            label = "yes" if (i + w) % 2 == 0 else "no"
            judgements.append({"id": rec["_id"], "worker_id": f"w{w}", "label": label, "worker_answer": ""})
    (d / "judge.json").write_text(json.dumps(judgements))
    assert run("eval", "--corpus", d / "data/test.json", "--checkpoint", d / "sup/model.npz",
               "--judgements", d / "judge.json", "--out-dir", d / "ev_model") == 0
    report = read(d / "ev_model/report.json")
    corpus_m = report["corpus"]
    assert corpus_m["xf1"] <= corpus_m["mean_f1"] + 1e-12
    m = report["sufficiency_matrix"]
    assert sum(sum(r.values()) for r in m.values()) == corpus_m["n"]
    assert set(corpus_m["elements"]) == set(ELEMENT_NAMES)


def test_eval_empty_corpus(tmp_path, work):
    (tmp_path / "empty.json").write_text(json.dumps({"instances": []}))
    assert run("eval", "--corpus", tmp_path / "empty.json", "--source", "gold_xp", "--out-dir", tmp_path) == 2


def test_eval_vocab_mismatch(tmp_path, work):
    rec = {
        "_id": "alien",
        "question": "Which zorblat does qwix frobnicate ?",
        "answer": "glorp",
        "context": [["Qwix", ["Qwix frobnicates glorp zorblats daily ."]], ["Zed", ["Zed vorpals snark blit ."]]],
        "supporting_facts": [["Qwix", 0]],
    }
    (tmp_path / "alien.json").write_text(json.dumps([rec]))
    code = run("eval", "--corpus", tmp_path / "alien.json", "--checkpoint", work / "sup/model.npz", "--out-dir", tmp_path)
    assert code == 4


def test_eval_missing_file(tmp_path):
    assert run("eval", "--corpus", tmp_path / "nope.json", "--source", "gold_xp", "--out-dir", tmp_path) == 2


def test_eval_with_remote_oracle(work):
    d = work
    with StubServer(answer_fn=lambda q, ctx: "nobody") as srv:
        code = run("eval", "--corpus", d / "data/test.json", "--source", "gold_xp", "--eval-oracle", "remote",
                   "--oracle-endpoint", srv.url, "--out-dir", d / "ev_remote")
    assert code == 0
    assert read(d / "ev_remote/report.json")["corpus"]["mean_f1"] == 0.0


# ------------------------------------------------------------------- score


def test_score_records(tmp_path):
    records = [
        {"id": "a", "question": "Who lives in Paris?", "paragraphs": ["Alice lives in Paris . Bob lives in Rome ."],
         "explanation": "Alice lives in Paris .", "gold_answer": "Alice", "gold_explanation": "Alice lives in Paris ."},
        {"id": "b", "question": "Who lives in Rome?", "paragraphs": "Alice lives in Paris . Bob lives in Rome .",
         "explanation": "Bob is in Rome .", "gold_answer": "Bob", "suf": 1},
    ]
    (tmp_path / "in.jsonl").write_text("\n".join(json.dumps(r) for r in records))
    assert run("score", "--input", tmp_path / "in.jsonl", "--eval-oracle", "span_matcher", "--out", tmp_path / "o.json") == 0
    out = read(tmp_path / "o.json")
    rows = {r["id"]: r for r in out["per_instance"]}
    assert rows["a"]["cm"] == pytest.approx(12 / 6) and rows["a"]["rg2"] == 1.0
    assert rows["a"]["answer"] == "alice" and rows["b"]["answer"] == "bob"
    assert set(rows["b"]["rewards"]) >= set(ELEMENT_NAMES)


def test_score_missing_field(tmp_path):
    (tmp_path / "in.json").write_text(json.dumps([{"question": "q ?"}]))
    assert run("score", "--input", tmp_path / "in.json") == 2


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "suqa.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen-synthetic", "rank", "train", "eval", "score", "serve-stub"):
        assert cmd in out.stdout
