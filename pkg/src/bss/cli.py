"""Command-line interface: ``bss gen-data | train | score | compare | replay``.

Every command resolves its settings as built-in defaults < ``--config`` JSON
< explicit flags, writes ``manifest.json`` into its output directory before
doing any work, and can be re-run from that manifest with ``bss replay``.

Exit codes: 0 on success, 2 on usage errors (the message names the flag),
1 on I/O or data errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Optional

from . import __version__, mmnet
from .datagen import SynthConfig, generate, load_jsonl, save_jsonl
from .errors import BSSError, InputError
from .evalkit import roc_auc
from .measurer import evaluate_balance_scores, write_scores_csv
from .scheduler import canonical_scheduler
from .trainer import COMPARE_COLUMNS, TrainConfig, compare_runs, prepare, train

MANIFEST_FORMAT = "bss-manifest"
MANIFEST_VERSION = 1
CURVE_METRICS = ("train_loss", "test_acc", "test_map", "test_macro_f1")


class UsageError(Exception):
    """Bad flag value; reported through argparse with exit code 2."""


# -- small helpers ----------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: not valid JSON ({e})") from None


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"1,4,9"`` or the inclusive range ``"1..10"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use a..b or a,b,c") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _config_from_file(path, key) -> dict:
    """Config JSON, or a manifest from which ``params[key]`` is taken."""
    blob = read_json(path)
    if blob.get("format") == MANIFEST_FORMAT:
        params = blob.get("params", {})
        if key not in params:
            raise InputError(f"{path}: manifest of '{blob.get('command')}' has no {key} section")
        return dict(params[key])
    return blob


def _resolve(cls, file_cfg: dict, args, names):
    """defaults < file < flags; InputError from the dataclass becomes a usage
    error naming the flag it concerns."""
    known = {f.name for f in fields(cls)}
    unknown = set(file_cfg) - known
    if unknown:
        raise UsageError(f"--config: unknown keys {sorted(unknown)}")
    merged = dict(file_cfg)
    for name in names:
        if hasattr(args, name):
            merged[name] = getattr(args, name)
    try:
        return cls(**merged)
    except InputError as e:
        msg = str(e)
        first = msg.split()[0] if msg else ""
        where = _flag(first) if first in known else "--config"
        raise UsageError(f"{where}: {msg}") from None


def _data_paths(data, train_file=None, test_file=None):
    d = Path(data) if data else None
    train_path = Path(train_file) if train_file else (d / "train.jsonl" if d else None)
    test_path = Path(test_file) if test_file else (d / "test.jsonl" if d else None)
    return train_path, test_path


def _input_record(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    return {"path": str(path.resolve()), "sha256": sha256_file(path)}


def _manifest(command, params, inputs, out: Path, outputs, seed) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "params": params,
        "inputs": inputs,
        "out": str(out.resolve()),
        "outputs": [str((out / name).resolve()) for name in outputs],
    }


# -- commands ---------------------------------------------------------------

def run_gen_data(params: dict, out: Path) -> dict:
    cfg = SynthConfig(**params["synth"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["train.jsonl", "test.jsonl", "manifest.json"]
    manifest = _manifest("gen-data", {"synth": cfg.to_dict()}, {}, out, outputs, cfg.seed)
    write_json(out / "manifest.json", manifest)
    train_set, test_set = generate(cfg)
    save_jsonl(train_set, out / "train.jsonl")
    save_jsonl(test_set, out / "test.jsonl")
    return manifest


def _write_run(out: Path, model, hist, elapsed=None):
    (out / "history.json").write_text(hist.to_json() + "\n")
    write_json(out / "metrics.json", {"summary": hist.summary(), "final": hist.epochs[-1]})
    if model is not None:
        mmnet.save_checkpoint(model, out / "model.json")
    timing = {"epoch_seconds": hist.wall_times}
    if elapsed is not None:
        timing["total_seconds"] = elapsed
    write_json(out / "timing.json", timing)


def run_train(params: dict, out: Path) -> dict:
    cfg = TrainConfig.from_dict(params["config"])
    inputs = {"train": _input_record(params["train"]), "test": _input_record(params["test"])}
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["manifest.json", "history.json", "metrics.json", "model.json", "timing.json"]
    params = {**params, "config": cfg.to_dict()}
    manifest = _manifest("train", params, inputs, out, outputs, cfg.seed)
    write_json(out / "manifest.json", manifest)
    train_set, test_set = load_jsonl(params["train"]), load_jsonl(params["test"])
    start = time.perf_counter()
    model, hist = train(train_set, test_set, cfg)
    _write_run(out, model, hist, time.perf_counter() - start)
    return manifest


def run_score(params: dict, out: Path) -> dict:
    cfg = TrainConfig.from_dict(params["config"])
    inputs = {"data": _input_record(params["data"])}
    if params.get("checkpoint"):
        inputs["checkpoint"] = _input_record(params["checkpoint"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["manifest.json", "scores.csv", "score_summary.json"]
    params = {**params, "config": cfg.to_dict()}
    manifest = _manifest("score", params, inputs, out, outputs, cfg.seed)
    write_json(out / "manifest.json", manifest)

    dataset = load_jsonl(params["data"])
    if params.get("checkpoint"):
        model = mmnet.load_checkpoint(params["checkpoint"])
        if model.dims != dataset.dims or model.classes != dataset.classes:
            raise InputError("checkpoint does not match the dataset's dims or classes")
        records = evaluate_balance_scores(model, dataset, cfg.criterion, cfg.alpha, cfg.grad_scope)
        source = "checkpoint"
    else:
        records = prepare(dataset, cfg).records
        source = f"fresh init + {cfg.warmup_epochs} warm-up epoch(s)"
    write_scores_csv(records, out / "scores.csv")

    auc = None
    if dataset.balanced is not None:
        auc = roc_auc([r.score for r in records], dataset.balanced)
    summary = {
        "criterion": cfg.criterion,
        "model": source,
        "n": len(records),
        "n_ground_truth_imbalanced": None if dataset.balanced is None
        else int((~dataset.balanced).sum()),
        "auc": auc,
    }
    write_json(out / "score_summary.json", summary)
    return manifest


def run_compare(params: dict, out: Path) -> dict:
    cfg = TrainConfig.from_dict(params["config"])
    inputs = {"train": _input_record(params["train"]), "test": _input_record(params["test"])}
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["manifest.json", "compare.csv", "summary.json", "curves.csv", "runs"]
    params = {**params, "config": cfg.to_dict()}
    manifest = _manifest("compare", params, inputs, out, outputs, params["seeds"])
    write_json(out / "manifest.json", manifest)

    train_set, test_set = load_jsonl(params["train"]), load_jsonl(params["test"])
    result = compare_runs(train_set, test_set, cfg, params["schedulers"], params["seeds"],
                          workers=params.get("workers", 1))

    with open(out / "compare.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=COMPARE_COLUMNS)
        w.writeheader()
        w.writerows(result.rows)
    write_json(out / "summary.json", result.summary())
    with open(out / "curves.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "metric", "scheduler", "seed", "value"])
        for (name, seed), hist in result.histories.items():
            for rec in hist.epochs:
                for metric in CURVE_METRICS:
                    w.writerow([rec["epoch"], metric, name, seed, repr(rec[metric])])
    for (name, seed), hist in result.histories.items():
        run_dir = out / "runs" / f"{name}-seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_run(run_dir, None, hist)
    return manifest


COMMANDS = {
    "gen-data": run_gen_data,
    "train": run_train,
    "score": run_score,
    "compare": run_compare,
}


def run_replay(manifest_path, out: Optional[Path] = None, check_inputs=True) -> dict:
    blob = read_json(manifest_path)
    if blob.get("format") != MANIFEST_FORMAT:
        raise InputError(f"{manifest_path}: not a bss manifest")
    command = blob.get("command")
    if command not in COMMANDS:
        raise InputError(f"{manifest_path}: unknown command {command!r}")
    if check_inputs:
        for name, rec in blob.get("inputs", {}).items():
            if not Path(rec["path"]).is_file():
                raise FileNotFoundError(f"input '{name}' missing: {rec['path']}")
            if sha256_file(rec["path"]) != rec["sha256"]:
                raise InputError(f"input '{name}' changed since the manifest was written: {rec['path']}")
    target = Path(out) if out is not None else Path(blob["out"])
    return COMMANDS[command](blob["params"], target)


# -- argument parsing -------------------------------------------------------

SYNTH_FLAGS = {
    "classes": dict(type=int, help="number of classes"),
    "dims": dict(type=_int_list, help="per-modality feature dims, comma-separated"),
    "n": dict(type=int, help="total samples before the train/test split"),
    "sigma": dict(type=_float_list, help="per-modality noise std, comma-separated"),
    "rho": dict(type=float, help="fraction of training samples with one corrupted modality"),
    "corruption": dict(choices=["cross-class", "pure-noise"], help="corruption mode"),
    "seed": dict(type=int, help="generator seed"),
    "split": dict(type=float, help="training fraction"),
}

TRAIN_FLAGS = {
    "scheduler": dict(choices=["vanilla", "bss-h", "heuristic", "anti", "anti-cl", "bss-l", "learning"],
                      help="training-order scheduler"),
    "criterion": dict(type=str, help="balance criterion, e.g. predsim-loss or featsim-gradmag"),
    "alpha": dict(type=float, help="uni-modal loss weight"),
    "beta": dict(type=float, help="EMA factor of the learning scheduler"),
    "lambda0": dict(type=float, help="initial data fraction of the pacing function"),
    "t_grow": dict(type=int, help="epoch at which the full data becomes available"),
    "interval": dict(type=int, help="re-scoring interval E of the learning scheduler"),
    "pacing": dict(type=str, help="root, root-P, linear, geometric, baby-step or baby-step-B"),
    "lr": dict(type=float, help="SGD learning rate"),
    "momentum": dict(type=float, help="SGD momentum"),
    "weight_decay": dict(type=float, help="L2 weight decay"),
    "batch_size": dict(type=int, help="minibatch size"),
    "epochs": dict(type=int, help="training epochs T"),
    "warmup_epochs": dict(type=int, help="warm-up epochs W before scoring"),
    "seed": dict(type=int, help="training seed"),
    "hidden": dict(type=int, help="encoder hidden width"),
    "embed": dict(type=int, help="encoder output width"),
    "grad_scope": dict(choices=list(mmnet.GRAD_SCOPES), help="parameters entering the gradient-magnitude criterion"),
    "detach_uni": dict(action=argparse.BooleanOptionalAction,
                       help="stop uni-modal head gradients at the encoders"),
    "subset_size": dict(type=int, help="learning scheduler: samples drawn per epoch (default all)"),
    "fusion_weights": dict(type=_float_list, help="late-fusion weights w0,w1,...,wm"),
    "lr_decay": dict(type=float, help="multiply lr by this on a loss plateau (default off)"),
    "lr_patience": dict(type=int, help="plateau patience in epochs"),
    "lr_threshold": dict(type=float, help="relative improvement that resets the patience"),
    "min_lr": dict(type=float, help="lower bound for the decayed learning rate"),
}


def _add_flags(parser, table, cls, only=None):
    defaults = {f.name: f.default for f in fields(cls)}
    for name, spec in table.items():
        if only is not None and name not in only:
            continue
        spec = dict(spec)
        default = defaults[name]
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default)
        spec["help"] = f"{spec['help']} (default: {default})"
        parser.add_argument(_flag(name), dest=name, default=argparse.SUPPRESS, **spec)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bss", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic two-split dataset")
    p.add_argument("--config", help="JSON with generator settings, or a gen-data manifest")
    p.add_argument("--out", required=True, help="output directory")
    _add_flags(p, SYNTH_FLAGS, SynthConfig)

    def data_flags(q):
        q.add_argument("--data", help="directory holding train.jsonl and test.jsonl")
        q.add_argument("--train", dest="train_file", help="training split (overrides --data)")
        q.add_argument("--test", dest="test_file", help="test split (overrides --data)")

    p = sub.add_parser("train", help="train one model with one scheduler")
    data_flags(p)
    p.add_argument("--config", help="JSON with training settings, or a train manifest")
    p.add_argument("--out", help="output directory (default: runs/<scheduler>-seed<seed>)")
    _add_flags(p, TRAIN_FLAGS, TrainConfig)

    p = sub.add_parser("score", help="score every sample of a dataset with the measurer")
    p.add_argument("--data", required=True, help="dataset file, or a directory (uses train.jsonl)")
    p.add_argument("--checkpoint", help="model checkpoint to score with "
                   "(default: fresh init plus --warmup-epochs of training)")
    p.add_argument("--config", help="JSON with training settings, or a manifest")
    p.add_argument("--out", required=True, help="output directory")
    _add_flags(p, TRAIN_FLAGS, TrainConfig,
               only={"criterion", "alpha", "lr", "momentum", "weight_decay", "batch_size",
                     "warmup_epochs", "seed", "hidden", "embed", "grad_scope", "detach_uni"})

    p = sub.add_parser("compare", help="run several schedulers over several seeds")
    data_flags(p)
    p.add_argument("--schedulers", default="vanilla,bss-h,anti,bss-l",
                   help="comma-separated schedulers (default: vanilla,bss-h,anti,bss-l)")
    p.add_argument("--seeds", type=parse_seeds, default=[0],
                   help="training seeds as a..b (inclusive) or a,b,c (default: 0)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes (default: 1)")
    p.add_argument("--config", help="JSON with training settings, or a manifest")
    p.add_argument("--out", required=True, help="output directory")
    _add_flags(p, TRAIN_FLAGS, TrainConfig)

    p = sub.add_parser("replay", help="re-run a command from its manifest.json")
    p.add_argument("manifest", help="path to manifest.json")
    p.add_argument("--out", help="output directory (default: the manifest's own)")
    return parser


def _train_config(args, skip=()) -> TrainConfig:
    file_cfg = _config_from_file(args.config, "config") if args.config else {}
    names = [n for n in TRAIN_FLAGS if n not in skip]
    return _resolve(TrainConfig, file_cfg, args, names)


def _need_data(args):
    train_path, test_path = _data_paths(args.data, args.train_file, args.test_file)
    if train_path is None or test_path is None:
        raise UsageError("--data: give a data directory or both --train and --test")
    return str(train_path), str(test_path)


def dispatch(args) -> dict:
    if args.command == "gen-data":
        file_cfg = _config_from_file(args.config, "synth") if args.config else {}
        cfg = _resolve(SynthConfig, file_cfg, args, SYNTH_FLAGS)
        return run_gen_data({"synth": cfg.to_dict()}, Path(args.out))

    if args.command == "train":
        train_path, test_path = _need_data(args)
        cfg = _train_config(args)
        out = Path(args.out) if args.out else Path("runs") / f"{cfg.scheduler}-seed{cfg.seed}"
        return run_train({"train": train_path, "test": test_path, "config": cfg.to_dict()}, out)

    if args.command == "score":
        data = Path(args.data)
        if data.is_dir():
            data = data / "train.jsonl"
        cfg = _train_config(args)
        params = {"data": str(data), "checkpoint": args.checkpoint, "config": cfg.to_dict()}
        return run_score(params, Path(args.out))

    if args.command == "compare":
        train_path, test_path = _need_data(args)
        cfg = _train_config(args, skip=("scheduler",))
        names = [s.strip() for s in args.schedulers.split(",") if s.strip()]
        try:
            names = [canonical_scheduler(s) for s in names]
        except InputError as e:
            raise UsageError(f"--schedulers: {e}") from None
        if not names:
            raise UsageError("--schedulers: need at least one scheduler")
        if not args.seeds:
            raise UsageError("--seeds: need at least one seed")
        if args.workers < 1:
            raise UsageError("--workers: must be >= 1")
        params = {"train": train_path, "test": test_path, "config": cfg.to_dict(),
                  "schedulers": names, "seeds": args.seeds, "workers": args.workers}
        return run_compare(params, Path(args.out))

    if args.command == "replay":
        return run_replay(args.manifest, Path(args.out) if args.out else None)
    raise UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        manifest = dispatch(args)
    except UsageError as e:
        parser.error(str(e))
    except (BSSError, OSError) as e:
        print(f"bss {args.command}: error: {e}", file=sys.stderr)
        return 1
    print(manifest["out"])
    return 0
