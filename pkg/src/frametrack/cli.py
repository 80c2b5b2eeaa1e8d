"""Command-line interface.

Subcommands: stats, synth, train, eval, predict, lesion, config. All
commands are batch-style and deterministic given their inputs and seeds;
artifacts land in a run directory with a manifest recording the config
hash, seeds, backend, and git revision.

Exit codes: 0 success; 2 missing/invalid input (corpus, config, generation
spec); 3 checkpoint/dictionary mismatch; 4 training divergence; 1
unexpected failure. FRAMETRACK_LOG sets the log level; FRAMETRACK_BACKEND
selects the kernel backend (compiled/python).
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import subprocess
import sys

from . import __version__, kernels
from .corpus import CorpusError, corpus_stats, load_corpus
from .encoding import LESION_LABELS, LESIONS, ConfigError, Dictionaries
from .model import CheckpointMismatch, ModelConfig, load_model, predict
from .synth import GenSpec, write_corpus
from .training import (TrainConfig, TrainingDiverged, aggregate, lesion_study,
                       make_folds, run_experiment, run_fold)

log = logging.getLogger("frametrack")


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _git_revision():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=10)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except OSError:
        return "unknown"


def default_config():
    return {"model": ModelConfig().to_dict(), "training": TrainConfig().to_dict()}


def _coerce(value, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, (tuple, list)):
        return tuple(v for v in value.split(",") if v)
    return value


def load_config(path, overrides=()):
    """Layered config: file (JSON, or TOML for .toml) plus --set overrides."""
    base = default_config()
    if path is not None:
        if str(path).endswith(".toml"):
            import tomllib

            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        else:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        unknown = set(raw) - {"model", "training"}
        if unknown:
            raise ConfigError(f"{path}: unknown config section(s): {sorted(unknown)}")
        for section in ("model", "training"):
            for key, value in (raw.get(section) or {}).items():
                if key not in base[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
                base[section][key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in base or parts[1] not in base[parts[0]]:
            raise ConfigError(f"--set: unknown config key {dotted!r}")
        base[parts[0]][parts[1]] = _coerce(value, base[parts[0]][parts[1]])
    model_cfg = ModelConfig.from_dict({**base["model"],
                                       "lesions": tuple(base["model"].get("lesions", ()))})
    train_cfg = TrainConfig.from_dict(base["training"])
    return model_cfg, train_cfg


def _load_corpus_arg(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"corpus file not found: {path}")
    return load_corpus(path)


# ---------------------------------------------------------------------------
# commands


def cmd_stats(args):
    stats = corpus_stats(_load_corpus_arg(args.corpus))
    print(stats.to_table())
    if args.json:
        _write_json(args.json, stats.to_dict())
    return 0


def cmd_synth(args):
    spec = GenSpec.from_file(args.genspec)
    n = write_corpus(spec, args.out, seed=args.seed)
    print(f"wrote {n} dialogues to {args.out}")
    return 0


def cmd_train(args):
    cfg, tcfg = load_config(args.config, args.set or ())
    dialogues = _load_corpus_arg(args.corpus)
    os.makedirs(args.out_dir, exist_ok=True)
    log.info("training %d folds on %d dialogues (backend=%s)",
             tcfg.folds, len(dialogues), kernels.backend_name())
    report, fold_spec = run_experiment(dialogues, cfg, tcfg, out_dir=args.out_dir)
    manifest = {
        "version": __version__,
        "command": "train",
        "config": {"model": cfg.to_dict(), "training": tcfg.to_dict()},
        "config_hash": hashlib.sha256(
            _canonical({"model": cfg.to_dict(), "training": tcfg.to_dict()}).encode()).hexdigest(),
        "corpus": {"path": os.path.abspath(args.corpus), "dialogues": len(dialogues)},
        "seed": tcfg.seed,
        "backend": kernels.backend_name(),
        "git_revision": _git_revision(),
    }
    _write_json(os.path.join(args.out_dir, "manifest.json"), manifest)
    _write_json(os.path.join(args.out_dir, "folds.json"),
                {"n_folds": fold_spec.n_folds, "seed": fold_spec.seed,
                 "assignments": fold_spec.assignments,
                 "val_ids": {str(k): list(v) for k, v in fold_spec.val_ids.items()}})
    _write_json(os.path.join(args.out_dir, "metrics.json"), report.to_dict())
    with open(os.path.join(args.out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    print(report.to_table())
    return 0


def _load_fold(fold_dir, expect_hash=True):
    dicts = Dictionaries.load(os.path.join(fold_dir, "dicts.json"))
    params, cfg, meta = load_model(os.path.join(fold_dir, "checkpoint.ftk"),
                                   dicts.content_hash() if expect_hash else None)
    return dicts, params, cfg, meta


def cmd_eval(args):
    from .training import (act_accuracy, evaluate_baseline, evaluate_model,
                           slot_accuracy)

    dialogues = _load_corpus_arg(args.corpus)
    by_id = {d.id: d for d in dialogues}
    with open(os.path.join(args.run_dir, "folds.json"), encoding="utf-8") as fh:
        folds = json.load(fh)
    from .training import FoldOutcome

    outcomes = []
    for fold in range(folds["n_folds"]):
        fold_dir = os.path.join(args.run_dir, f"fold_{fold:02d}")
        dicts, params, cfg, _ = _load_fold(fold_dir)
        test_ids = sorted(i for i, f in folds["assignments"].items() if f == fold)
        missing = [i for i in test_ids if i not in by_id]
        if missing:
            raise CorpusError(f"fold {fold}: dialogues {missing[:3]}... not in corpus")
        test = [by_id[i] for i in test_ids]
        records = evaluate_model(test, dicts, cfg, params)
        brecords = evaluate_baseline(test)
        sacc, nt = slot_accuracy(records)
        aacc, na = act_accuracy(records)
        outcomes.append(FoldOutcome(fold, sacc, aacc, slot_accuracy(brecords)[0],
                                    act_accuracy(brecords)[0], nt, na, 0, 0,
                                    records, brecords))
    report = aggregate(outcomes)
    print(report.to_table())
    if args.json:
        _write_json(args.json, report.to_dict())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    return 0


def cmd_predict(args):
    from .corpus import gold_plan  # noqa: F401  (kept close: predict consumes encodings only)
    from .encoding import encode_turn

    dialogues = _load_corpus_arg(args.corpus)
    dicts, params, cfg, _ = _load_fold(args.fold_dir)
    out = []
    for d in dialogues:
        for t in d.user_turns:
            enc = encode_turn(d, t, dicts, gamma=cfg.gamma, norm=cfg.similarity_norm,
                              lesions=cfg.lesions)
            out.append(predict(enc, cfg, params).to_dict())
    payload = {"predictions": out}
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def cmd_lesion(args):
    cfg, tcfg = load_config(args.config, args.set or ())
    dialogues = _load_corpus_arg(args.corpus)
    table = lesion_study(dialogues, cfg, tcfg)
    full = table["full"]
    print(f"full model: slot-based {full['slot_accuracy']:.1f}, "
          f"act-based {full['act_accuracy']:.1f}")
    header = ["{:>10}".format("")] + [f"{LESION_LABELS[n]:>10}" for n in LESIONS]
    print("".join(header))
    for metric, key in (("Slot-based", "slot_accuracy"), ("Act-based", "act_accuracy")):
        row = [f"{metric:>10}"] + [f"{table['lesions'][n][key]:>10.1f}" for n in LESIONS]
        print("".join(row))
    if args.out:
        _write_json(args.out, table)
    return 0


def cmd_config(args):
    if args.dump_defaults:
        print(json.dumps(default_config(), sort_keys=True, indent=2))
        return 0
    print("nothing to do; try --dump-defaults", file=sys.stderr)
    return 2


def build_parser():
    p = argparse.ArgumentParser(prog="frametrack",
                                description="Frame reference tracking for goal-oriented dialogue")
    p.add_argument("--version", action="version", version=f"frametrack {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", help="corpus statistics / ingestion validation")
    s.add_argument("corpus")
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(fn=cmd_stats)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("genspec", help="generation spec JSON (class mixture weights etc.)")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train the tracker over all folds")
    s.add_argument("corpus")
    s.add_argument("--config", help="config file (JSON or TOML)")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a training run directory")
    s.add_argument("corpus")
    s.add_argument("--run-dir", required=True)
    s.add_argument("--json")
    s.add_argument("--csv")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("predict", help="per-turn predictions from one fold checkpoint")
    s.add_argument("corpus")
    s.add_argument("--fold-dir", required=True, help="fold directory (checkpoint.ftk + dicts.json)")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("lesion", help="input-removal study (retrains per input)")
    s.add_argument("corpus")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--out", help="write the lesion table as JSON")
    s.set_defaults(fn=cmd_lesion)

    s = sub.add_parser("config", help="configuration helpers")
    s.add_argument("--dump-defaults", action="store_true")
    s.set_defaults(fn=cmd_config)
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("FRAMETRACK_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, CorpusError, ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
