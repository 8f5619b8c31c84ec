"""Command-line entry point.

Subcommands: ingest, train, simulate, evaluate, report.  Experiment specs are
JSON or TOML documents mapping onto :class:`~dedsi.evaluation.ExperimentSpec`;
the DEDSI_SEED environment variable overrides the seed everywhere, and all
paths are resolved relative to --workdir.
"""

import argparse
import csv
import json
import os
import pickle
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import _kernels
from .corpus import ingest_orcas, save_corpus, select_documents
from .evaluation import (ExperimentSpec, emit_report, read_metrics_csv,
                         run_experiment)
from .gossip import run_simulation, save_sim_manifest
from .seeding import derive
from .training import Checkpoint, save_checkpoint, train_epochs, top1_accuracy
from .vocab import build_vocab


def _load_spec(path) -> ExperimentSpec:
    with open(path, "rb") as fh:
        raw = fh.read()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        data = tomllib.loads(raw.decode())
    else:
        data = json.loads(raw.decode())
    data = _apply_env_seed(data)
    return ExperimentSpec.from_dict(data)


def _apply_env_seed(data: dict) -> dict:
    env = os.environ.get("DEDSI_SEED")
    if env is not None:
        data = dict(data)
        data["seed"] = int(env)
    return data


def _write_run_manifest(out_dir, command, spec_hash, seed, files):
    manifest = {
        "command": command,
        "spec_hash": spec_hash,
        "seed": seed,
        "versions": {"dedsi": __version__, "numpy": np.__version__,
                     "kernel_backend": _kernels.BACKEND},
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "files": sorted(os.path.relpath(f, out_dir) for f in files),
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return path


def cmd_ingest(args) -> int:
    seed = int(os.environ.get("DEDSI_SEED", args.seed))
    corpus = ingest_orcas(args.input, max_docs=args.max_docs,
                          min_queries_per_doc=args.min_queries)
    if args.docs is not None:
        corpus = select_documents(corpus, args.docs, args.min_queries,
                                  seed=derive(seed, "select"))
    corpus.manifest["seed"] = seed
    files = save_corpus(corpus, args.output)
    _write_run_manifest(args.output, "ingest", "", seed, files)
    print(f"ingested {corpus.num_docs} documents "
          f"({sum(len(q) for q in corpus.docs.values())} pairs) "
          f"-> {args.output}")
    return 0


def cmd_train(args) -> int:
    spec = _load_spec(args.spec)
    out = args.out
    os.makedirs(out, exist_ok=True)
    files = []
    if spec.experiment == "content_oblivious":
        records, extras = run_experiment(spec)
        files += emit_report(records, out, extras,
                             spec_hash=spec.spec_hash(), seed=spec.seed)
    elif spec.experiment == "fit":
        files += _single_fit(spec, out)
    else:
        raise ValueError(
            f"train handles 'content_oblivious' or 'fit' specs, got "
            f"{spec.experiment!r}; use `dedsi evaluate` for the others")
    _write_run_manifest(out, "train", spec.spec_hash(), spec.seed, files)
    print(f"train: wrote {len(files)} files -> {out}")
    return 0


def _single_fit(spec: ExperimentSpec, out):
    from .corpus import SplitSpec, make_splits
    from .evaluation import build_corpus
    corpus = build_corpus(spec)
    train, val, test = make_splits(corpus, SplitSpec(*spec.split))
    vocab = build_vocab(corpus, train_pairs=train)
    model = spec.new_model(vocab, "fit")
    cfg = spec.train_config("fit")
    cfg.metrics_path = os.path.join(out, "epochs.csv")
    ckpt = train_epochs(model, train, val, cfg)
    ckpt_path = os.path.join(out, "checkpoint.npz")
    save_checkpoint(ckpt, ckpt_path)
    best = ckpt.restore()
    summary = {"val_accuracy": ckpt.val_accuracy, "epoch": ckpt.epoch,
               "test_top1": top1_accuracy(best, test) if test else None}
    spath = os.path.join(out, "fit_summary.json")
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    return [cfg.metrics_path, ckpt_path, spath]


def cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    out = args.out
    os.makedirs(out, exist_ok=True)
    state_path = os.path.join(out, "engine_state.pkl")
    if args.resume and os.path.exists(state_path):
        with open(state_path, "rb") as fh:
            engine = pickle.load(fh)
        print(f"resumed at round {engine.rounds}")
    else:
        from .evaluation import prepare_simulation
        engine, _ = prepare_simulation(spec)

    def progress(rounds, batches):
        print(f"round {rounds}: {batches} batches trained", flush=True)
        if args.checkpoint_every and rounds % args.checkpoint_every == 0:
            _dump_engine(engine, state_path)

    result = run_simulation(engine, progress=progress)
    files = [save_sim_manifest(engine, out)]
    loss_path = os.path.join(out, "loss_traces.csv")
    with open(loss_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["peer_id", "batch_idx", "loss"])
        for pid, trace in result.loss_traces.items():
            for i, loss in enumerate(trace):
                w.writerow([pid, i, repr(loss)])
    files.append(loss_path)
    stats_path = os.path.join(out, "message_stats.json")
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(result.stats(), fh, sort_keys=True, indent=2)
    files.append(stats_path)
    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    for peer in engine.peers:
        ckpt = Checkpoint(params=peer.model.snapshot(),
                          vocab=peer.model.vocab,
                          epoch=peer.batches_done, val_accuracy=-1.0,
                          config_hash=spec.spec_hash(),
                          model_config=peer.model.config())
        path = os.path.join(ckpt_dir, f"peer{peer.peer_id}.npz")
        save_checkpoint(ckpt, path)
        files.append(path)
    if os.path.exists(state_path):
        os.remove(state_path)
    _write_run_manifest(out, "simulate", spec.spec_hash(), spec.seed, files)
    print(f"simulation done after {engine.rounds} rounds, "
          f"{engine.messages_sent} messages -> {out}")
    return 0


def _dump_engine(engine, path):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        pickle.dump(engine, fh)
    os.replace(tmp, path)


def cmd_evaluate(args) -> int:
    spec = _load_spec(args.spec)
    records, extras = run_experiment(spec)
    files = emit_report(records, args.out, extras,
                        spec_hash=spec.spec_hash(), seed=spec.seed)
    _write_run_manifest(args.out, "evaluate", spec.spec_hash(), spec.seed,
                        files)
    print(f"evaluate[{spec.experiment}]: {len(records)} records -> {args.out}")
    return 0


def cmd_report(args) -> int:
    records = read_metrics_csv(os.path.join(args.metrics, "metrics.csv"))
    for r in records:
        shard = "" if r.shard is None else f" shard={r.shard}"
        pool = "" if r.pool is None else f" pool={r.pool}"
        print(f"{r.arm}{shard}{pool} k={r.k}: "
              f"{r.accuracy:.4f} ({r.support} queries)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dedsi",
        description="Sharded generative retrieval lab: data prep, training, "
                    "gossip simulation, evaluation, reporting.")
    parser.add_argument("--workdir", default=".",
                        help="resolve all paths relative to this directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a click-log TSV into a corpus")
    p.add_argument("--input", required=True, help="TSV path (2 or 4 columns)")
    p.add_argument("--output", default="corpus", help="output directory")
    p.add_argument("--docs", type=int, default=None,
                   help="sample this many qualifying documents")
    p.add_argument("--min-queries", type=int, default=1,
                   help="minimum distinct queries per kept document")
    p.add_argument("--max-docs", type=int, default=None,
                   help="cap on distinct documents tracked while streaming")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="run a training spec")
    p.add_argument("--spec", required=True, help="JSON or TOML spec file")
    p.add_argument("--out", default="train_out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run a gossip training simulation")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="sim_out")
    p.add_argument("--resume", action="store_true",
                   help="continue from a saved engine state")
    p.add_argument("--checkpoint-every", type=int, default=500,
                   help="save resumable state every N rounds (0 disables)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="run an experiment spec end to end")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print a metrics directory")
    p.add_argument("--metrics", required=True,
                   help="directory containing metrics.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workdir != ".":
            os.chdir(args.workdir)
        return args.func(args)
    except Exception as exc:  # uniform nonzero-exit contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
