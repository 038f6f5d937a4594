"""Command-line entry point: ``suqa <command> ...``.

Every JSON artifact carries a ``provenance`` block with the resolved
config, its hash and a content hash of the input files. Output paths and
timestamps are deliberately left out so identical runs give identical bytes.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from suqa import __version__, remote
from suqa.config import RunConfig, hash_files
from suqa.corpus import (
    annotate_subset,
    generate_synthetic,
    load_corpus,
    split_corpus,
)
from suqa.errors import InvalidArgument, InvalidState, SuqaError
from suqa.explainer.model import ExplainerModel
from suqa.explainer.training import (
    build_vocab,
    evaluate_explainer,
    train_rl,
    train_supervised,
    training_examples,
)
from suqa.metrics import (
    MetricsReport,
    SufficiencyJudgement,
    aggregate_sufficiency,
    answer_f1,
    conciseness_metrics,
    rouge2,
)
from suqa.oracles import make_oracle
from suqa.pipeline import (
    PipelineConfig,
    attach_sufficiency,
    metrics_report,
    run_corpus,
    sufficiency_correctness_matrix,
)
from suqa.ranker import RankerModel, recall_at_k, train_ranker
from suqa.rewards import ELEMENT_NAMES, RewardEngine, ScorerHandle
from suqa.textkit import tokenize

logger = logging.getLogger("suqa")

# Share of corpus tokens a checkpoint may fail to know before eval refuses to run.
MAX_UNKNOWN_RATE = 0.2


# ------------------------------------------------------------------ helpers


def _to_json(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _to_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_json(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dump_json(obj: Any, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(_to_json(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def provenance(cfg: RunConfig, command: str, inputs: Sequence[str | Path] = ()) -> dict:
    return {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "inputs_sha256": hash_files(inputs) if inputs else None,
        "suqa_version": __version__,
    }


def _notice(msg: str) -> None:
    print(f"notice: {msg}", file=sys.stderr)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "oracle", None) is not None:
        if args.oracle == "none":
            cfg = dataclasses.replace(cfg, oracle=None)
        else:
            cfg = dataclasses.replace(cfg, oracle=None).override(
                "oracle", kind=args.oracle, endpoint=getattr(args, "oracle_endpoint", None)
            )
    if getattr(args, "eval_oracle", None) is not None:
        cfg = dataclasses.replace(cfg, eval_oracle=None).override(
            "eval_oracle", kind=args.eval_oracle, endpoint=getattr(args, "oracle_endpoint", None)
        )
    if getattr(args, "acceptability_endpoint", None) is not None:
        cfg = dataclasses.replace(cfg, acceptability_endpoint=args.acceptability_endpoint)
    return cfg


def _oracle_from(ocfg):
    return make_oracle(ocfg.kind, ocfg.endpoint, ocfg.timeout)


def _engine(cfg: RunConfig, ocfg) -> RewardEngine:
    return RewardEngine(
        _oracle_from(ocfg),
        acceptability=ScorerHandle("acceptability", cfg.acceptability_endpoint),
        config=cfg.rl,
        max_workers=cfg.pipeline.max_workers,
    )


def _probe_remote(ocfg) -> None:
    """Fail at startup, not mid-training, when a remote oracle is unreachable."""
    if ocfg.kind == "remote":
        remote.request_answer(ocfg.endpoint, "probe ?", "probe .", ocfg.timeout)


def _load_nonempty(path: str) -> list:
    instances = load_corpus(path)
    if not instances:
        raise InvalidArgument(f"{path}: corpus is empty")
    return instances


# ----------------------------------------------------------------- commands


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cfg = cfg.override("synthetic", n_instances=args.n, rng_seed=args.seed, pronoun_rate=args.pronoun_rate)
    instances = generate_synthetic(cfg.synthetic)
    splits = dict(zip(("train", "dev", "test"), split_corpus(instances, cfg.data.split_fractions)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg, "gen-synthetic")
    for name, part in splits.items():
        dump_json({"provenance": {**prov, "split": name}, "instances": [i.to_record() for i in part]}, out / f"{name}.json")
        print(f"{name}: {len(part)} instances -> {out / f'{name}.json'}")
    return 0


def cmd_rank_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args).override("ranker", k=args.k)
    instances = _load_nonempty(args.train)
    model = train_ranker(instances, cfg.ranker)
    record = {**model.to_dict(), "provenance": provenance(cfg, "rank train", [args.train])}
    dump_json(record, args.out)
    recall = recall_at_k(model, instances, cfg.ranker.k)
    print(f"trained on {len(instances)} questions; train recall@{cfg.ranker.k} = {recall:.4f}")
    return 0


def random_recall_baseline(n_paragraphs: int, n_gold: int, k: int) -> float:
    """Chance that a uniformly random k-subset contains every gold paragraph."""
    if n_gold > k or n_paragraphs < k:
        return 0.0 if n_gold > k else 1.0
    return math.comb(n_paragraphs - n_gold, k - n_gold) / math.comb(n_paragraphs, k)


def cmd_rank_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args).override("ranker", k=args.k)
    instances = _load_nonempty(args.corpus)
    model = RankerModel.load(args.ranker)
    k = cfg.ranker.k
    baseline = float(np.mean([random_recall_baseline(len(i.paragraphs), len(i.supporting_indices()), k) for i in instances]))
    report = {
        "n": len(instances),
        "k": k,
        "recall_at_k": recall_at_k(model, instances, k),
        "random_baseline": baseline,
        "provenance": provenance(cfg, "rank eval", [args.corpus, args.ranker]),
    }
    if args.out:
        dump_json(report, args.out)
    print(json.dumps({k_: report[k_] for k_ in ("n", "k", "recall_at_k", "random_baseline")}, sort_keys=True))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    mode = args.mode
    needs_oracle = mode in ("rl", "joint")
    if needs_oracle and cfg.oracle is None:
        raise InvalidState(f"--mode {mode} needs an answer oracle; configure one or pass --oracle")
    if needs_oracle:
        _probe_remote(cfg.oracle)
    train = _load_nonempty(args.train)
    dev = _load_nonempty(args.dev)
    inputs = [args.train, args.dev] + ([args.init] if args.init else [])

    if args.init:
        model = ExplainerModel.load(args.init)
    else:
        model = ExplainerModel(build_vocab(train + dev), cfg.model)
    max_len = model.config.max_input_len
    annotated = annotate_subset(train, cfg.data.annotate_fraction, cfg.data.annotate_seed)
    seed = cfg.supervised.seed
    n_dis = cfg.supervised.n_train_distractors
    examples = training_examples(annotated, model.vocab, max_len, seed=seed, n_distractors=n_dis)
    dev_examples = training_examples(dev, model.vocab, max_len, seed=seed + 1, n_distractors=n_dis)
    engine = _engine(cfg, cfg.oracle) if cfg.oracle is not None else None

    if mode == "supervised":
        sup = [e for e in examples if e.gold_ids is not None]
        if not sup:
            raise InvalidArgument(f"supervised mode needs gold explanations; none of the {len(train)} training instances has one")
        valid = [e for e in dev_examples if e.gold_ids is not None]
        if not valid:
            raise InvalidArgument("supervised mode needs gold explanations on the dev split for validation")
        logger.info("supervised training on %d of %d instances", len(sup), len(train))
        model, log = train_supervised(model, sup, valid, cfg.supervised)
    else:
        rl_cfg = cfg.rl if mode == "joint" else dataclasses.replace(cfg.rl, lambda_ml=0.0)
        limit = rl_cfg.max_explanation_tokens

        def validate(m: ExplainerModel) -> float:
            return evaluate_explainer(m, dev_examples, engine, limit)["mean_reward"]

        model, log = train_rl(model, examples, engine, rl_cfg, cfg.rl_run, validate=validate)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg, f"train --mode {mode}", inputs)
    model.save(out / "model.npz", extra={"provenance": prov, "mode": mode})
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(_to_json(entry), sort_keys=True) + "\n")

    dev_report = evaluate_explainer(model, dev_examples, engine, cfg.rl.max_explanation_tokens)
    report = {"mode": mode, "dev": dev_report, "train_summary": _summarize_log(log), "provenance": prov}
    dump_json(report, out / "metrics.json")
    print(json.dumps(_to_json({"mode": mode, **{k: v for k, v in dev_report.items() if k != "elements"}}), sort_keys=True))
    return 0


def _summarize_log(log: list[dict]) -> dict:
    """Means over the whole run of losses, rewards and per-elemental rewards."""
    out: dict[str, Any] = {"steps": len(log)}
    for key in ("loss", "loss_ml", "loss_rl", "reward_sampled", "reward_greedy"):
        vals = [e[key] for e in log if e.get(key) is not None]
        if vals:
            out[f"mean_{key}"] = float(np.mean(vals))
    for which in ("elements_sampled", "elements_greedy"):
        rows = [e[which] for e in log if which in e]
        if rows:
            out[f"mean_{which}"] = {k: float(np.mean([r[k] for r in rows])) for k in ELEMENT_NAMES}
    return out


def unknown_rate(model: ExplainerModel, instances) -> float:
    total = unk = 0
    for inst in instances:
        for p in inst.paragraphs:
            ids, n_unk = model.vocab.encode(tokenize(p.text()))
            total += len(ids)
            unk += n_unk
    return unk / total if total else 0.0


def load_judgements(path: str, instances) -> dict[str, int]:
    """Judgement file: JSON array of {id, worker_id, label, worker_answer}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise InvalidArgument(f"{path}: expected a JSON array of judgements")
    gold = {i.id: i.gold_answer for i in instances}
    grouped: dict[str, list[SufficiencyJudgement]] = {}
    for rec in raw:
        try:
            qid = rec["id"]
            j = SufficiencyJudgement(str(rec["worker_id"]), rec["label"], rec.get("worker_answer", ""), gold[qid])
        except KeyError as exc:
            raise InvalidArgument(f"{path}: judgement {rec!r} is missing {exc} or names an unknown id") from exc
        grouped.setdefault(qid, []).append(j)
    return {qid: aggregate_sufficiency(js) for qid, js in sorted(grouped.items())}


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    pcfg = dataclasses.replace(
        cfg.pipeline,
        explanation_source=args.source or cfg.pipeline.explanation_source,
        k=args.k or cfg.pipeline.k,
    )
    PipelineConfig(**dataclasses.asdict(pcfg))  # re-validate after overrides
    cfg = dataclasses.replace(cfg, pipeline=pcfg)
    instances = _load_nonempty(args.corpus)
    inputs = [args.corpus]
    explainer = None
    if pcfg.explanation_source == "model":
        if not args.checkpoint:
            raise InvalidArgument("--checkpoint is required unless --source is gold_xp or gold_sf")
        explainer = ExplainerModel.load(args.checkpoint)
        rate = unknown_rate(explainer, instances)
        if rate > MAX_UNKNOWN_RATE:
            raise InvalidState(
                f"checkpoint vocabulary does not match the corpus: {rate:.0%} of paragraph tokens are unknown"
            )
        inputs.append(args.checkpoint)
    ranker = None
    if args.ranker:
        ranker = RankerModel.load(args.ranker)
        inputs.append(args.ranker)
    ocfg = cfg.resolved_eval_oracle
    if ocfg is None:
        raise InvalidState("evaluation needs an answer oracle")
    engine = _engine(cfg, ocfg)
    results = run_corpus(instances, ranker, explainer, engine.oracle, pcfg, engine)

    notices = []
    matrix = None
    if args.judgements:
        labels = load_judgements(args.judgements, instances)
        inputs.append(args.judgements)
        attach_sufficiency(results, labels)
        ok = [r for r in results if r.error is None]
        if {r.id for r in ok} == set(labels):
            matrix = sufficiency_correctness_matrix(ok, labels)
        else:
            notices.append("sufficiency labels do not cover every evaluated instance; xf1 omitted")
    else:
        notices.append("no sufficiency judgements supplied; suf and xf1 omitted")
    for n in notices:
        _notice(n)

    report = metrics_report(results).to_dict()
    scored = [r.reward_breakdown for r in results if r.reward_breakdown is not None]
    if scored:
        report["corpus"]["mean_reward"] = float(np.mean([b.combined for b in scored]))
        report["corpus"]["elements"] = {k: float(np.mean([b.elements()[k] for b in scored])) for k in ELEMENT_NAMES}
    report["corpus"]["n_errors"] = sum(r.error is not None for r in results)
    if matrix is not None:
        report["sufficiency_matrix"] = matrix
    report["notices"] = notices
    report["explanation_source"] = pcfg.explanation_source
    prov = provenance(cfg, "eval", inputs)
    report["provenance"] = prov
    out = Path(args.out_dir)
    dump_json(report, out / "report.json")
    dump_json({"provenance": prov, "predictions": [r.to_record() for r in results]}, out / "predictions.json")
    print(json.dumps(_to_json(report["corpus"]), sort_keys=True))
    return 0


def _read_records(path: str) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        try:
            data = [json.loads(line) for line in text.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: neither a JSON array nor JSON lines ({exc})") from exc
    if isinstance(data, dict):
        data = [data]
    return data


def score_record(rec: dict, engine: RewardEngine | None) -> dict:
    """Metrics (and rewards, given a gold answer) for one explanation."""
    try:
        question = rec["question"]
        paragraphs = rec["paragraphs"]
        explanation = rec["explanation"]
    except KeyError as exc:
        raise InvalidArgument(f"record {rec.get('id')!r} is missing {exc}") from exc
    if isinstance(paragraphs, str):
        paragraphs = [paragraphs]
    c = tokenize(" ".join(paragraphs), "paragraph")
    e = tokenize(explanation, "explanation")
    row: dict[str, Any] = {"id": rec.get("id")}
    try:
        row.update(conciseness_metrics(e, c))
    except SuqaError:
        row.update(cm=None, abs=None)
    gold_xp = rec.get("gold_explanation")
    if gold_xp is not None:
        ref = gold_xp if isinstance(gold_xp, str) else " ".join(gold_xp)
        row["rg2"] = rouge2(e, tokenize(ref, "explanation"))
    gold = rec.get("gold_answer")
    if gold is not None and engine is not None:
        b = engine.score(question, tokenize(question, "question"), c, e, gold, float(rec.get("seq_logprob", 0.0)))
        row["answer"] = b.predicted_answer
        row.update(answer_f1(b.predicted_answer, gold))
        row["rewards"] = b.to_dict()
        if "suf" in rec:
            row["suf"] = int(rec["suf"])
    return row


def cmd_score(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    records = _read_records(args.input)
    if not records:
        raise InvalidArgument(f"{args.input}: no records to score")
    ocfg = cfg.resolved_eval_oracle
    engine = _engine(cfg, ocfg) if ocfg is not None else None
    rows = [score_record(r, engine) for r in records]
    metric_rows = [{k: v for k, v in r.items() if k != "rewards"} for r in rows]
    corpus = MetricsReport.from_rows(metric_rows).corpus
    rewards = [r["rewards"]["combined"] for r in rows if "rewards" in r]
    if rewards:
        corpus["mean_reward"] = float(np.mean(rewards))
    report = {"corpus": corpus, "per_instance": rows, "provenance": provenance(cfg, "score", [args.input])}
    if args.out:
        dump_json(report, args.out)
    print(json.dumps(_to_json(corpus), sort_keys=True))
    return 0


def cmd_serve_stub(args: argparse.Namespace) -> int:
    answer_fn = (lambda q, t: args.answer) if args.answer is not None else None
    server = remote.StubServer(args.host, args.port, score_fn=lambda text: args.score, answer_fn=answer_fn)
    print(f"serving on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="suqa", description="Concise question-focused explanations: data, training, evaluation.")
    p.add_argument("--version", action="version", version=f"suqa {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, oracle=True):
        sp.add_argument("--config", help="JSON RunConfig file; missing sections take defaults")
        if oracle:
            sp.add_argument("--oracle", choices=("synthetic_rule", "span_matcher", "remote", "none"), help="training-time answer oracle")
            sp.add_argument("--eval-oracle", choices=("synthetic_rule", "span_matcher", "remote"), help="evaluation-time answer oracle")
            sp.add_argument("--oracle-endpoint", help="URL of a remote oracle")
            sp.add_argument("--acceptability-endpoint", help="URL of a remote acceptability scorer (default: builtin)")

    g = sub.add_parser("gen-synthetic", help="write train/dev/test splits of the synthetic two-hop corpus")
    common(g, oracle=False)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n", type=int, help="number of instances (overrides synthetic.n_instances)")
    g.add_argument("--seed", type=int, help="overrides synthetic.rng_seed")
    g.add_argument("--pronoun-rate", type=float)
    g.set_defaults(func=cmd_gen_synthetic)

    r = sub.add_parser("rank", help="train or evaluate the paragraph ranker")
    rsub = r.add_subparsers(dest="rank_command", required=True)
    rt = rsub.add_parser("train")
    common(rt, oracle=False)
    rt.add_argument("--train", required=True)
    rt.add_argument("--out", required=True)
    rt.add_argument("--k", type=int)
    rt.set_defaults(func=cmd_rank_train)
    re_ = rsub.add_parser("eval")
    common(re_, oracle=False)
    re_.add_argument("--corpus", required=True)
    re_.add_argument("--ranker", required=True)
    re_.add_argument("--k", type=int)
    re_.add_argument("--out")
    re_.set_defaults(func=cmd_rank_eval)

    t = sub.add_parser("train", help="train the explainer")
    common(t)
    t.add_argument("--mode", choices=("supervised", "rl", "joint"), required=True)
    t.add_argument("--train", required=True)
    t.add_argument("--dev", required=True)
    t.add_argument("--init", help="checkpoint to start from (e.g. the supervised one)")
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run the pipeline and write a metrics report and predictions")
    common(e)
    e.add_argument("--corpus", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--ranker")
    e.add_argument("--k", type=int)
    e.add_argument("--source", choices=("model", "gold_xp", "gold_sf"), help="score the model's or the gold explanations")
    e.add_argument("--judgements", help="JSON array of sufficiency judgements")
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", help="score given (question, paragraphs, explanation) records without a model")
    common(s)
    s.add_argument("--input", required=True, help="JSON array or JSON lines")
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    st = sub.add_parser("serve-stub", help="local oracle/scorer server speaking the remote protocol")
    st.add_argument("--host", default="127.0.0.1")
    st.add_argument("--port", type=int, default=8765)
    st.add_argument("--score", type=float, default=1.0, help="acceptability score to return")
    st.add_argument("--answer", help="fixed answer (default: the span matcher)")
    st.set_defaults(func=cmd_serve_stub)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SuqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InvalidArgument.exit_code


if __name__ == "__main__":
    sys.exit(main())
