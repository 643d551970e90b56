"""Command-line front end covering the full lifecycle.

Subcommands: gen-corpus, store, query, unlearn, probe, audit-verify,
train, eval, run-loop. All output is machine-parseable line-delimited
JSON; exit status is nonzero on error or tamper detection. A lock file
ensures one process owns a store directory at a time.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .audit import verify_lines
from .config import RunConfig, load_config
from .corpus import Provenance, split_items, to_dataset
from .evaluation import (
    LoopScenario,
    memory_accuracy,
    memory_baselines,
    mia,
    model_item_losses,
    run_agent_loop,
)
from .graph import ForgetRequest
from .protocol import AgentState, backflow_probe, run_protocol
from .store import FILE_HEADERS, MemoryStore
from .training import Dataset, ModelState, model_accuracy, pretrain, train_unlearn

MODEL_HEADER = "memscrub-model v1"
PROVENANCE_HEADER = "memscrub-provenance v1"
CONFIG_HEADER = "# memscrub config v1"


def _emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


@contextlib.contextmanager
def store_lock(store_dir: Path):
    store_dir.mkdir(parents=True, exist_ok=True)
    lock_path = store_dir / "lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise SystemExit(f"store {store_dir} is locked by another process "
                         f"(remove {lock_path} if stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# Store-directory helpers
# ---------------------------------------------------------------------------

def _write_lines(path: Path, header, lines) -> None:
    body = ([header] if header else []) + list(lines)
    path.write_text("\n".join(body) + "\n", encoding="utf-8")


def _read_lines(path: Path, header=None) -> list:
    lines = path.read_text(encoding="utf-8").splitlines()
    if header is not None:
        if not lines or lines[0] != header:
            raise SystemExit(f"{path}: missing or wrong version header")
        return lines[1:]
    return lines


def save_model(store_dir: Path, model: ModelState) -> None:
    line = json.dumps(model.to_record(), sort_keys=True, separators=(",", ":"))
    _write_lines(store_dir / "model.jsonl", MODEL_HEADER, [line])


def load_model(store_dir: Path) -> ModelState:
    (line,) = _read_lines(store_dir / "model.jsonl", MODEL_HEADER)
    return ModelState.from_record(json.loads(line))


def save_config_snapshot(store_dir: Path, cfg: RunConfig) -> None:
    lines = [CONFIG_HEADER]
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'none' if value is None else value}")
    (store_dir / "config.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _resolve_config(args) -> RunConfig:
    overrides = {
        key: getattr(args, key, None)
        for key in ("seed", "epochs", "lambda_f", "temperature", "tau", "top_k")
    }
    path = getattr(args, "config", None)
    store_dir = getattr(args, "store", None)
    if path is None and store_dir is not None:
        snapshot = Path(store_dir) / "config.cfg"
        if snapshot.exists():
            path = snapshot
    return load_config(path, overrides)


def _load_store_context(store_dir: Path, cfg: RunConfig):
    store = MemoryStore.load(store_dir, settings=cfg.retrieval_settings())
    model = load_model(store_dir)
    items = corpus_mod.corpus_from_lines(_read_lines(store_dir / "corpus.jsonl"))
    prov = Provenance.from_lines(_read_lines(store_dir / "provenance.jsonl", PROVENANCE_HEADER))
    agent = AgentState(store=store, model=model, feature_dim=cfg.feature_dim,
                       confidence_threshold=cfg.confidence_threshold)
    return agent, items, prov


def _save_store_context(store_dir: Path, agent: AgentState) -> None:
    agent.store.save(store_dir)
    save_model(store_dir, agent.model)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    cfg = _resolve_config(args)
    items = corpus_mod.generate_corpus(
        seed=cfg.seed, n_topics=cfg.n_topics, items_per_topic=cfg.items_per_topic,
        forget_fraction=cfg.forget_fraction, holdout_per_topic=cfg.holdout_per_topic,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_lines(out, None, corpus_mod.corpus_lines(items))
    _emit({"command": "gen-corpus", "items": len(items), "out": str(args.out)})
    return 0


def cmd_store(args) -> int:
    cfg = _resolve_config(args)
    store_dir = Path(args.store)
    items = corpus_mod.corpus_from_lines(_read_lines(Path(args.corpus)))
    with store_lock(store_dir):
        store = MemoryStore(settings=cfg.retrieval_settings())
        prov = corpus_mod.populate_store(store, items)
        model = ModelState.init(cfg.feature_dim, cfg.hidden_dim, len(corpus_mod.CHOICES),
                                seed=cfg.seed, ref_seed=cfg.seed + 7919)
        trained = split_items(items, "forget") + split_items(items, "retain")
        pretrain(to_dataset(trained, cfg.feature_dim), model, cfg.pretrain_config())
        store.save(store_dir)
        save_model(store_dir, model)
        _write_lines(store_dir / "corpus.jsonl", None, corpus_mod.corpus_lines(items))
        _write_lines(store_dir / "provenance.jsonl", PROVENANCE_HEADER, prov.to_lines())
        save_config_snapshot(store_dir, cfg)
    _emit({
        "command": "store",
        "nodes": len(store.graph.nodes),
        "train_acc": model_accuracy(model, to_dataset(trained, cfg.feature_dim)),
    })
    return 0


def cmd_query(args) -> int:
    cfg = _resolve_config(args)
    agent, _, _ = _load_store_context(Path(args.store), cfg)
    hits = agent.store.search(args.text, top_k=args.top_k)
    for hit in hits:
        _emit({
            "id": hit.node_id,
            "sem_score": hit.sem_score,
            "kw_score": hit.kw_score,
            "combined": hit.combined,
            "content": agent.store.content(hit.node_id),
        })
    if not hits:
        _emit({"command": "query", "hits": 0})
    return 0


def _read_request(path: Path) -> ForgetRequest:
    rec = json.loads(Path(path).read_text(encoding="utf-8"))
    if "request_id" not in rec or "targets" not in rec:
        raise SystemExit(f"{path}: request file needs 'request_id' and 'targets'")
    return ForgetRequest.of(rec["request_id"], rec["targets"])


def cmd_unlearn(args) -> int:
    cfg = _resolve_config(args)
    store_dir = Path(args.store)
    request = _read_request(Path(args.request))
    with store_lock(store_dir):
        agent, items, _ = _load_store_context(store_dir, cfg)
        retain = to_dataset(split_items(items, "retain"), cfg.feature_dim)
        report = run_protocol(agent, request, retain, cfg.unlearn_config())
        _save_store_context(store_dir, agent)
        metrics_dir = store_dir / "metrics"
        metrics_dir.mkdir(exist_ok=True)
        _write_lines(
            metrics_dir / f"unlearn_{request.request_id}.jsonl", None,
            [json.dumps(m, sort_keys=True, separators=(",", ":")) for m in report.training],
        )
    _emit({"command": "unlearn", **report.to_record()})
    return 0


def cmd_probe(args) -> int:
    cfg = _resolve_config(args)
    agent, items, prov = _load_store_context(Path(args.store), cfg)
    item_id = prov.node_to_item.get(args.id)
    item = next((it for it in items if it.item_id == item_id), None)
    if item is None:
        raise SystemExit(f"node {args.id} does not map to a corpus item")
    result = backflow_probe(agent, item.question, item.answer_text)
    _emit({
        "command": "probe",
        "id": args.id,
        "reexposed": result.reexposed,
        "channel": result.channel.value,
        "regenerated": result.regenerated,
    })
    return 0


def cmd_audit_verify(args) -> int:
    path = Path(args.store) / "audit.jsonl"
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != FILE_HEADERS["audit.jsonl"]:
        _emit({"command": "audit-verify", "ok": False, "first_bad_index": 0,
               "reason": "bad header"})
        return 1
    result = verify_lines(lines[1:])
    _emit({"command": "audit-verify", "ok": result.ok,
           "first_bad_index": result.first_bad_index, "records": len(lines) - 1})
    return 0 if result.ok else 1


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    store_dir = Path(args.store)
    with store_lock(store_dir):
        agent, items, _ = _load_store_context(store_dir, cfg)
        retain = to_dataset(split_items(items, "retain"), cfg.feature_dim)
        forget = to_dataset(split_items(items, "forget"), cfg.feature_dim)
        history = train_unlearn(retain, forget, agent.model, cfg.unlearn_config())
        save_model(store_dir, agent.model)
        metrics_dir = store_dir / "metrics"
        metrics_dir.mkdir(exist_ok=True)
        _write_lines(metrics_dir / "train.jsonl", None,
                     [json.dumps(m, sort_keys=True, separators=(",", ":")) for m in history])
    for m in history:
        _emit(m)
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    store_dir = Path(args.store)
    agent, items, prov = _load_store_context(store_dir, cfg)
    forget = split_items(items, "forget")
    holdout = split_items(items, "forget_holdout")
    retain = split_items(items, "retain")
    test = split_items(items, "test")

    forget_ds = to_dataset(forget, cfg.feature_dim)
    retain_ds = to_dataset(retain, cfg.feature_dim)
    test_ds = to_dataset(test, cfg.feature_dim)
    holdout_ds = to_dataset(holdout, cfg.feature_dim)

    param_mia = mia(model_item_losses(agent.model, forget_ds),
                    model_item_losses(agent.model, holdout_ds))
    rows = [{
        "method": "parameter_model",
        "forget_acc": model_accuracy(agent.model, forget_ds),
        "retain_acc": model_accuracy(agent.model, retain_ds),
        "test_acc": model_accuracy(agent.model, test_ds),
        "mia_auc": param_mia.auc,
        "mia_score": param_mia.score,
    }]
    mem = memory_accuracy(agent, forget, retain)
    rows.append({"method": "memory_grounded", **mem})
    if not args.skip_baselines:
        for report in memory_baselines(agent.store, prov, items, agent.model,
                                       feature_dim=cfg.feature_dim):
            rows.append(report.to_record())

    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in rows]
    metrics_dir = store_dir / "metrics"
    metrics_dir.mkdir(exist_ok=True)
    _write_lines(metrics_dir / "eval.jsonl", None, lines)
    for line in lines:
        sys.stdout.write(line + "\n")
    return 0


def cmd_run_loop(args) -> int:
    cfg = _resolve_config(args)
    items = corpus_mod.generate_corpus(
        seed=cfg.seed, n_topics=cfg.n_topics, items_per_topic=cfg.items_per_topic,
        forget_fraction=cfg.forget_fraction, holdout_per_topic=cfg.holdout_per_topic,
    )
    store = MemoryStore(settings=cfg.retrieval_settings())
    scenario = LoopScenario(
        forget_items=split_items(items, "forget"),
        retain_items=split_items(items, "retain"),
    )
    timeline = run_agent_loop(store, scenario)
    for stage in timeline.stages:
        _emit({
            "stage": stage.stage,
            "label": stage.label,
            "forget_hit_rate": stage.forget_hit_rate,
            "retain_hit_rate": stage.retain_hit_rate,
        })
    _emit({
        "summary_updates": timeline.summary_updates,
        "cleanup_ratio": timeline.cleanup_ratio,
    })
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memscrub")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="flat key=value config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--epochs", type=int, default=None)
    common.add_argument("--lambda-f", dest="lambda_f", type=float, default=None)
    common.add_argument("--temperature", type=float, default=None)
    common.add_argument("--tau", type=int, default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[common])
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("store", parents=[common])
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--store", type=Path, required=True)
    p.set_defaults(func=cmd_store)

    p = sub.add_parser("query", parents=[common])
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("unlearn", parents=[common])
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--request", type=Path, required=True)
    p.set_defaults(func=cmd_unlearn)

    p = sub.add_parser("probe", parents=[common])
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--id", type=int, required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("audit-verify", parents=[common])
    p.add_argument("--store", type=Path, required=True)
    p.set_defaults(func=cmd_audit_verify)

    p = sub.add_parser("train", parents=[common])
    p.add_argument("--store", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common])
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--skip-baselines", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run-loop", parents=[common])
    p.set_defaults(func=cmd_run_loop)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
