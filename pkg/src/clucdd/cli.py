"""Command-line entry point: ``clucdd <subcommand> ...``.

Exit codes: 0 on success, 1 when a run fails (bad data, training blow-up),
2 for usage and configuration errors (missing files, bad flags).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from importlib.resources import files
from pathlib import Path

from clucdd.corpus import (
    load_reply_annotated,
    load_session_labeled,
    read_dialogues,
    session_histogram,
    split_corpus,
    window_dialogues,
    write_dialogues,
)
from clucdd.exceptions import ClucddError, ConfigError, ValidationError
from clucdd.inference import K_SOURCES, predict_sessions
from clucdd.metrics import evaluate_corpus
from clucdd.synth import SynthConfig, generate_splits
from clucdd.trainer import ENV_PREFIX, TrainConfig, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("clucdd")

METHODS = ("kmeans", "gmm", "dbscan", "ap")
# column layouts are shipped with the package so tests can validate against them
CSV_COLUMNS = {
    name: tuple(cols)
    for name, cols in json.loads(files("clucdd").joinpath("schemas/csv_columns.json").read_text()).items()
}


class UsageError(ConfigError):
    pass


# --- helpers -------------------------------------------------------------

def _existing(path, kind="file") -> Path:
    p = Path(path)
    if kind == "file" and not p.is_file():
        raise UsageError(f"no such file: {p}")
    if kind == "dir" and not p.is_dir():
        raise UsageError(f"no such directory: {p}")
    return p


def _float_list(text) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise UsageError("grid is empty")
    return values


def _int_list(text) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of integers: {text!r}") from None
    if not values:
        raise UsageError("grid is empty")
    return values


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(rows, columns, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else _cell(row[c]) for c in columns])


def _cell(value):
    return repr(value) if isinstance(value, float) else value


def _cluster_params(args) -> dict:
    if args.method == "dbscan":
        return {"eps": args.eps, "min_pts": args.min_pts}
    if args.method == "ap":
        return {"damping": args.damping}
    return {}


def _resolve_config(args) -> TrainConfig:
    file_values = {}
    if getattr(args, "config", None):
        try:
            file_values = json.loads(_existing(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON ({exc.msg})") from None
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
    overrides = {
        "seed": args.seed,
        "epochs": getattr(args, "epochs", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "batch_size": getattr(args, "batch_size", None),
        "margin": getattr(args, "margin", None),
        "gamma": getattr(args, "gamma", None),
        "dim": getattr(args, "dim", None),
        "k_max": getattr(args, "k_max", None),
        "variant": getattr(args, "variant", None),
        "freeze_encoder": True if getattr(args, "freeze_encoder", False) else None,
    }
    config = TrainConfig.resolve(file_values, overrides=overrides)
    env_keys = sorted(k for k in os.environ if k.startswith(ENV_PREFIX))
    logger.info(
        "config (flag > env > file > default): file=%s env=%s flags=%s -> %s",
        args.config if getattr(args, "config", None) else None,
        env_keys,
        sorted(k for k, v in overrides.items() if v is not None),
        json.dumps(config.to_dict(), sort_keys=True),
    )
    return config


def _load_split(data_dir: Path, name: str, required=True):
    path = data_dir / f"{name}.jsonl"
    if not path.is_file():
        if required:
            raise UsageError(f"missing {name}.jsonl in {data_dir}")
        return None
    return load_session_labeled(path)


# --- subcommands ---------------------------------------------------------

def cmd_ingest(args):
    src = _existing(args.input)
    if args.format == "session":
        dialogues = load_session_labeled(src)
    else:
        dialogues = load_reply_annotated(src)
    window = args.window if args.window is not None else (50 if args.format == "reply" else 0)
    if window:
        dialogues = [w for d in dialogues for w in window_dialogues(d, window)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if args.split:
        fractions = _float_list(args.split)
        if len(fractions) != 3:
            raise UsageError("--split needs three fractions: train,dev,test")
        parts = split_corpus(dialogues, tuple(fractions), seed=args.seed)
        for name, part in zip(("train", "dev", "test"), parts):
            write_dialogues(part, out / f"{name}.jsonl")
            files[f"{name}.jsonl"] = len(part)
    else:
        write_dialogues(dialogues, out / "dialogues.jsonl")
        files["dialogues.jsonl"] = len(dialogues)
    manifest = {
        "source": src.name,
        "format": args.format,
        "window": window,
        "seed": args.seed,
        "dialogues": len(dialogues),
        "utterances": sum(d.n for d in dialogues),
        "k_histogram": session_histogram(dialogues),
        "files": files,
    }
    _write_json(manifest, out / "manifest.json")
    logger.info("ingested %d dialogues into %s", len(dialogues), out)


def cmd_synth(args):
    cfg = SynthConfig(
        dialogues=0,
        n_min=args.n_min, n_max=args.n_max,
        k_min=args.k_min, k_max=args.k_max,
        vocab_per_session=args.vocab_per_session,
        noise_rate=args.noise_rate,
        n_topics=args.n_topics,
        burstiness=args.burstiness,
        ambiguous_rate=args.ambiguous_rate,
        seed=args.seed,
    )
    splits = generate_splits(cfg, args.train, args.dev, args.test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, part in zip(("train", "dev", "test"), splits):
        write_dialogues(part, out / f"{name}.jsonl")
        files[f"{name}.jsonl"] = len(part)
    everything = [d for part in splits for d in part]
    _write_json(
        {
            "source": "synth",
            "format": "session",
            "window": 0,
            "seed": args.seed,
            "dialogues": len(everything),
            "utterances": sum(d.n for d in everything),
            "k_histogram": session_histogram(everything),
            "files": files,
            "generator": cfg.to_dict(),
        },
        out / "manifest.json",
    )


def cmd_train(args):
    data = _existing(args.data, "dir")
    config = _resolve_config(args)
    train_set = _load_split(data, "train")
    dev_set = _load_split(data, "dev", required=False)
    if args.embeddings:
        _existing(args.embeddings)
    result = train(train_set, config, dev_set, embeddings=args.embeddings)
    save_checkpoint(result.state, args.out, model=result.best)
    log_path = args.log or f"{args.out}.log.json"
    _write_json({"best_epoch": result.best_epoch, "config": config.to_dict(), "epochs": result.log}, log_path)
    logger.info("saved best-dev model (epoch %d) to %s", result.best_epoch, args.out)


def _load_model(args):
    state = load_checkpoint(_existing(args.ckpt), embeddings=args.embeddings)
    return state.model


def cmd_disentangle(args):
    model = _load_model(args)
    dialogues = read_dialogues(_existing(args.data))
    if args.k_source == "given" and args.k is None and args.method in ("kmeans", "gmm"):
        raise UsageError("--k-source given needs --k")
    labelings = predict_sessions(
        model, dialogues, method=args.method, k_source=args.k_source, k=args.k,
        seed=args.seed, **_cluster_params(args),
    )
    lines = [
        json.dumps({"dialogue_id": d.dialogue_id, "labels": list(lab.labels)})
        for d, lab in zip(dialogues, labelings)
    ]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_predictions(path) -> dict:
    preds = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                preds[str(rec["dialogue_id"])] = [int(v) for v in rec["labels"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ValidationError(f"{path}:{lineno}: malformed prediction record") from None
    return preds


def cmd_evaluate(args):
    gold = load_session_labeled(_existing(args.gold))
    preds = _read_predictions(_existing(args.pred))
    missing = [d.dialogue_id for d in gold if d.dialogue_id not in preds]
    if missing:
        raise ValidationError(f"no prediction for dialogue {missing[0]!r} ({len(missing)} missing)")
    report = evaluate_corpus(
        [(d.labeling, preds[d.dialogue_id]) for d in gold],
        [d.dialogue_id for d in gold],
    )
    _write_json(report.to_json(), args.out)
    if args.csv:
        rows = [{"dialogue_id": did, **scores} for did, scores in zip(report.dialogue_ids, report.per_dialogue)]
        rows.append({"dialogue_id": "__corpus__", **report.summary()})
        _write_csv(rows, CSV_COLUMNS["evaluate"], args.csv)
    print(json.dumps(report.summary(), sort_keys=True))


def cmd_sweep_margin(args):
    data = _existing(args.data, "dir")
    grid = _float_list(args.margins)
    unique = sorted(set(grid))
    if len(unique) != len(grid):
        logger.warning("duplicate margins in grid dropped: %s", args.margins)
    base = _resolve_config(args)
    train_set = _load_split(data, "train")
    eval_set = _load_split(data, args.eval_split)
    rows = []
    for m in unique:
        cfg = TrainConfig.from_dict({**base.to_dict(), "margin": m})
        result = train(train_set, cfg, _load_split(data, "dev", required=False), embeddings=args.embeddings)
        preds = predict_sessions(result.best, eval_set, k_source=args.k_source, seed=cfg.seed)
        report = evaluate_corpus([(d.labeling, p) for d, p in zip(eval_set, preds)])
        rows.append({"margin": m, **report.summary()})
        logger.info("margin %g: shen_f %.4f", m, report.shen_f)
    _write_csv(rows, CSV_COLUMNS["sweep-margin"], args.out)


def cmd_sweep_sessions(args):
    data = _existing(args.data, "dir")
    ks = sorted(set(_int_list(args.ks)))
    base = _resolve_config(args)
    train_set = _load_split(data, "train")
    dev_set = _load_split(data, "dev", required=False) or []
    eval_set = _load_split(data, args.eval_split)
    rows = []
    for k in ks:
        tr = [d for d in train_set if d.k == k]
        ev = [d for d in eval_set if d.k == k]
        row = {"k": k, "train_dialogues": len(tr), "eval_dialogues": len(ev)}
        if not tr or not ev:
            logger.warning("no dialogues with k=%d in %s; emitting a null row", k, "train" if not tr else args.eval_split)
            rows.append(row)
            continue
        dv = [d for d in dev_set if d.k == k] or None
        result = train(tr, base, dv, embeddings=args.embeddings)
        preds = predict_sessions(result.best, ev, k_source=args.k_source, seed=base.seed)
        row.update(evaluate_corpus([(d.labeling, p) for d, p in zip(ev, preds)]).summary())
        rows.append(row)
    _write_csv(rows, CSV_COLUMNS["sweep-sessions"], args.out)


def cmd_compare_clustering(args):
    model = _load_model(args)
    dialogues = load_session_labeled(_existing(args.data))
    settings = {
        "kmeans": {"k_source": args.k_source, "n_init": 10, "max_iter": 300},
        "gmm": {"k_source": args.k_source, "max_iter": 100},
        "dbscan": {"eps": args.eps, "min_pts": args.min_pts},
        "ap": {"damping": args.damping, "max_iter": 200, "convergence_window": 15, "preference": "median"},
    }
    params = {"dbscan": {"eps": args.eps, "min_pts": args.min_pts}, "ap": {"damping": args.damping}}
    rows = []
    for method in METHODS:
        preds = predict_sessions(
            model, dialogues, method=method, k_source=args.k_source, k=args.k,
            seed=args.seed, **params.get(method, {}),
        )
        report = evaluate_corpus([(d.labeling, p) for d, p in zip(dialogues, preds)])
        rows.append({"method": method, **report.summary(), **settings[method]})
    _write_csv(rows, CSV_COLUMNS["compare-clustering"], args.out)


# --- parser --------------------------------------------------------------

def _add_training_flags(p):
    p.add_argument("--data", required=True, help="directory with train.jsonl, dev.jsonl, test.jsonl")
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--variant", choices=("full", "no_bilstm", "no_sff"))
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--embeddings", help="precomputed utterance vectors (JSONL)")


def _add_cluster_flags(p, method=True):
    if method:
        p.add_argument("--method", choices=METHODS, default="kmeans")
    p.add_argument("--k-source", choices=K_SOURCES, default="head")
    p.add_argument("--k", type=int)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--min-pts", type=int, default=3)
    p.add_argument("--damping", type=float, default=0.9)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clucdd", description="Dialogue disentanglement toolkit")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert chat logs into canonical dialogue files")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=("session", "reply"))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--window", type=int, help="utterances per dialogue; 0 disables (default 50 for reply logs)")
    p.add_argument("--split", help="train,dev,test fractions, e.g. 0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic entangled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=300)
    p.add_argument("--dev", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--n-min", type=int, default=20)
    p.add_argument("--n-max", type=int, default=50)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--vocab-per-session", type=int, default=8)
    p.add_argument("--noise-rate", type=float, default=0.1)
    p.add_argument("--n-topics", type=int, default=4)
    p.add_argument("--burstiness", type=float, default=0.0)
    p.add_argument("--ambiguous-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_training_flags(p)
    p.add_argument("--margin", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch log (default <out>.log.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("disentangle", help="predict sessions with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings")
    _add_cluster_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output JSONL (default stdout)")
    p.set_defaults(func=cmd_disentangle)

    p = sub.add_parser("evaluate", help="score predictions against gold sessions")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--csv", help="optional per-dialogue CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-margin", help="metrics as a function of the contrastive margin")
    _add_training_flags(p)
    p.add_argument("--margins", default="0.5,0.75,1.0,1.25")
    p.add_argument("--eval-split", choices=("dev", "test"), default="dev")
    p.add_argument("--k-source", choices=("gold", "head"), default="head")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_sweep_margin)

    p = sub.add_parser("sweep-sessions", help="metrics per gold session count")
    _add_training_flags(p)
    p.add_argument("--margin", type=float)
    p.add_argument("--ks", default="2,3,4")
    p.add_argument("--eval-split", choices=("dev", "test"), default="test")
    p.add_argument("--k-source", choices=("gold", "head"), default="head")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_sweep_sessions)

    p = sub.add_parser("compare-clustering", help="all four clustering methods on one checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="labeled dialogue file")
    p.add_argument("--embeddings")
    _add_cluster_flags(p, method=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_compare_clustering)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"clucdd: error: {exc}", file=sys.stderr)
        return 2
    except (ClucddError, OSError) as exc:
        print(f"clucdd: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
