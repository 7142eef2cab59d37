"""Training loop with balance-aware sequence scheduling.

A run goes:

1. initialise the model and train ``warmup_epochs`` epochs in uniform random
   order (0 reproduces scoring the freshly initialised model);
2. score every training sample once with the measurer;
3. for each epoch build a plan with the selected scheduler, walk it in order
   in minibatches of ``batch_size`` (one SGD step each) and evaluate the test
   set with late fusion.

The learning-based scheduler re-scores the training set every ``interval``
epochs (the pre-training scores serve as the first evaluation) and folds
the result into its moving average. The heuristic scheduler never re-scores.

Randomness comes from three child seeds of ``config.seed``: model init,
warm-up order, and epoch plans. Steps 1-2 use no plan randomness, so runs
that differ only in scheduler start from the same warmed-up model and the
same scores.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import mmnet, scheduler as sched
from .datagen import Dataset
from .errors import InputError
from .evalkit import LogitBundle, metric_report
from .measurer import CriterionKind, evaluate_balance_scores, rank_by_balance, scores_of
from .numkit import child_seeds, make_rng


@dataclass
class TrainConfig:
    scheduler: str = "vanilla"
    criterion: str = "predsim-loss"
    alpha: float = 0.2
    beta: float = 0.6
    lambda0: float = 0.1
    t_grow: int = 40
    interval: int = 5
    pacing: str = "root"
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 60
    warmup_epochs: int = 1
    seed: int = 0
    hidden: int = 32
    embed: int = 16
    grad_scope: str = "heads"
    detach_uni: bool = False
    subset_size: Optional[int] = None
    fusion_weights: Optional[list] = None
    # decay-on-plateau; lr_decay=None keeps the learning rate fixed
    lr_decay: Optional[float] = None
    lr_patience: int = 5
    lr_threshold: float = 1e-3
    min_lr: float = 1e-4

    def __post_init__(self):
        self.scheduler = sched.canonical_scheduler(self.scheduler)
        self.criterion = CriterionKind.parse(self.criterion).value
        self.pacing = sched.Pacing.parse(self.pacing).label
        self.validate()

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise InputError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 < self.lambda0 <= 1.0:
            raise InputError(f"lambda0 must lie in (0, 1], got {self.lambda0}")
        for name in ("t_grow", "interval", "batch_size", "epochs", "hidden", "embed"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.warmup_epochs < 0:
            raise InputError("warmup_epochs must be >= 0")
        if self.lr <= 0:
            raise InputError(f"lr must be > 0, got {self.lr}")
        if self.lr_decay is not None and not 0.0 < self.lr_decay < 1.0:
            raise InputError(f"lr_decay must lie in (0, 1), got {self.lr_decay}")
        if self.lr_patience < 0 or self.lr_threshold < 0 or self.min_lr < 0:
            raise InputError("lr_patience, lr_threshold and min_lr must be >= 0")
        if self.grad_scope not in mmnet.GRAD_SCOPES:
            raise InputError(f"grad_scope must be one of {mmnet.GRAD_SCOPES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Preparation:
    """Warmed-up model and its balance scores; shared by runs of one seed."""

    model: mmnet.ModelState
    records: list
    warmup: list


@dataclass
class RunHistory:
    config: dict
    p1_epoch: int
    warmup: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    rescore_epochs: list = field(default_factory=list)
    # wall-clock seconds per epoch; kept out of to_json() so histories of
    # identical runs stay byte-identical
    wall_times: list = field(default_factory=list)

    def summary(self) -> dict:
        p1 = self.epochs[self.p1_epoch]
        last = self.epochs[-1]
        return {
            "p1_epoch": self.p1_epoch,
            "p1_acc": p1["test_acc"],
            "final_acc": last["test_acc"],
            "final_map": last["test_map"],
            "final_macro_f1": last["test_macro_f1"],
        }

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "p1_epoch": self.p1_epoch,
            "warmup": self.warmup,
            "epochs": self.epochs,
            "rescore_epochs": self.rescore_epochs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def check_consistency(train_set: Dataset, test_set: Optional[Dataset], config: TrainConfig):
    if len(train_set) == 0:
        raise InputError("training set is empty")
    if test_set is not None:
        if len(test_set) == 0:
            raise InputError("test set is empty")
        if test_set.dims != train_set.dims or test_set.classes != train_set.classes:
            raise InputError("train and test sets disagree on dims or classes")
    if config.batch_size > len(train_set):
        raise InputError(
            f"batch_size {config.batch_size} exceeds training set size {len(train_set)}"
        )
    if config.subset_size is not None and not 1 <= config.subset_size <= len(train_set):
        raise InputError(f"subset_size must lie in [1, {len(train_set)}]")
    if config.fusion_weights is not None and len(config.fusion_weights) != 1 + train_set.n_modalities:
        raise InputError("fusion_weights needs one weight for the fused head plus one per modality")


class PlateauDecay:
    """Multiply the learning rate by ``factor`` once the monitored loss has not
    improved by a relative ``threshold`` for more than ``patience`` epochs."""

    def __init__(self, lr, factor, patience, threshold, min_lr):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, loss: float) -> float:
        if self.factor is None:
            return self.lr
        if loss < self.best * (1.0 - self.threshold):
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience and self.lr > self.min_lr:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr


def run_epoch(model, dataset: Dataset, indices, config: TrainConfig, lr=None) -> float:
    """SGD over ``indices`` in order, ``batch_size`` at a time; mean sample loss."""
    lr = config.lr if lr is None else lr
    total, count = 0.0, 0
    bs = config.batch_size
    for start in range(0, len(indices), bs):
        batch = indices[start:start + bs]
        xs = [x[batch] for x in dataset.features]
        loss, grads = mmnet.loss_and_grads(
            model, xs, dataset.labels[batch], config.alpha, config.detach_uni
        )
        mmnet.sgd_step(model, grads, lr, config.momentum, config.weight_decay)
        total += loss * len(batch)
        count += len(batch)
    return total / count


def evaluate(model, dataset: Dataset, weights=None) -> dict:
    trace = mmnet.forward(model, dataset.features)
    bundle = LogitBundle(trace.fused_logits, trace.uni_logits, weights)
    return metric_report(bundle, dataset.labels, dataset.classes)


def dataset_loss(model, dataset: Dataset, alpha: float) -> float:
    trace = mmnet.forward(model, dataset.features)
    return float(mmnet.total_loss(trace, dataset.labels, alpha).mean())


def score_training_set(model, train_set: Dataset, config: TrainConfig):
    return evaluate_balance_scores(
        model, train_set, config.criterion, config.alpha, config.grad_scope
    )


def prepare(train_set: Dataset, config: TrainConfig) -> Preparation:
    """Initialise, warm up and score. Depends on the seed, not the scheduler."""
    init_seed, warm_seed, _ = child_seeds(config.seed, 3)
    model = mmnet.init_model(train_set.dims, config.hidden, config.embed,
                             train_set.classes, make_rng(init_seed))
    rng = make_rng(warm_seed)
    warmup = []
    for w in range(config.warmup_epochs):
        loss = run_epoch(model, train_set, rng.permutation(len(train_set)), config)
        warmup.append({"epoch": w, "train_loss": loss})
    return Preparation(model, score_training_set(model, train_set, config), warmup)


def train(train_set: Dataset, test_set: Dataset, config: TrainConfig,
          prep: Optional[Preparation] = None):
    """Run one training job; returns ``(model, history)``.

    ``prep`` lets several schedulers reuse one warm-up and scoring pass; it is
    copied, never mutated.
    """
    config.validate()
    check_consistency(train_set, test_set, config)
    if prep is None:
        prep = prepare(train_set, config)
    model = prep.model.copy()
    records = prep.records
    n = len(train_set)
    plan_rng = make_rng(child_seeds(config.seed, 3)[2])
    pacing = sched.Pacing.parse(config.pacing)

    p1 = min(sched.full_data_epoch(pacing, config.lambda0, config.t_grow), config.epochs - 1)
    history = RunHistory(config.to_dict(), p1, warmup=list(prep.warmup))

    heuristic = learning = None
    if config.scheduler in ("heuristic", "anti"):
        heuristic = sched.HeuristicState(
            rank_by_balance(records), config.lambda0, config.t_grow, pacing
        )
    elif config.scheduler == "learning":
        learning = sched.LearningState(config.interval, config.beta)

    decay = PlateauDecay(config.lr, config.lr_decay, config.lr_patience,
                         config.lr_threshold, config.min_lr)
    lr = config.lr

    for t in range(config.epochs):
        start = time.perf_counter()
        extra = {}
        if heuristic is not None:
            plan = sched.heuristic_epoch_plan(heuristic, t, plan_rng,
                                              anti=config.scheduler == "anti")
            extra["lambda"] = plan.lam
        elif learning is not None:
            if sched.is_update_epoch(learning, t):
                if t > 0:
                    records = score_training_set(model, train_set, config)
                history.rescore_epochs.append(t)
                learning = sched.ema_update(learning, scores_of(records), t)
            probs = sched.sampling_probabilities(learning)
            plan = sched.learning_epoch_plan(probs, plan_rng, t, config.subset_size)
            extra["k"] = learning.k
            extra["prob_entropy"] = sched.entropy(probs)
            extra["prob_max"] = float(probs.max())
        else:
            plan = sched.vanilla_epoch_plan(n, t, plan_rng)

        loss = run_epoch(model, train_set, plan.indices, config, lr)
        report = evaluate(model, test_set, config.fusion_weights)
        record = {
            "epoch": t,
            "plan_size": len(plan),
            "lr": lr,
            "train_loss": loss,
            "test_acc": report["acc"],
            "test_map": report["map"],
            "test_macro_f1": report["macro_f1"],
            "test_uni_acc": report["per_modality"]["acc"],
            "test_fusion_head_acc": report["fusion_head_acc"],
        }
        if config.lr_decay is not None:
            record["full_train_loss"] = dataset_loss(model, train_set, config.alpha)
            # the loss stalls while the curriculum withholds data, so plateaus
            # only count once every scheduler sees the full training set
            if t >= p1:
                lr = decay.step(record["full_train_loss"])
        record.update(extra)
        history.epochs.append(record)
        history.wall_times.append(time.perf_counter() - start)
    return model, history


# -- multi-run comparison ---------------------------------------------------

COMPARE_COLUMNS = ("scheduler", "seed", "p1_acc", "final_acc", "final_map", "final_macro_f1")


@dataclass
class Comparison:
    rows: list
    histories: dict

    def summary(self) -> dict:
        """Per-scheduler mean and (population) std of every metric column."""
        out = {}
        for name in dict.fromkeys(r["scheduler"] for r in self.rows):
            sub = [r for r in self.rows if r["scheduler"] == name]
            stats = {"runs": len(sub)}
            for col in COMPARE_COLUMNS[2:]:
                vals = np.array([r[col] for r in sub], dtype=np.float64)
                stats[col] = {"mean": float(vals.mean()), "std": float(vals.std())}
            out[name] = stats
        return out


def _runs_for_seed(args):
    train_set, test_set, base, schedulers, seed = args
    base_cfg = TrainConfig.from_dict({**base, "seed": seed})
    prep = prepare(train_set, base_cfg)
    out = []
    for name in schedulers:
        cfg = TrainConfig.from_dict({**base, "seed": seed, "scheduler": name})
        _, hist = train(train_set, test_set, cfg, prep)
        out.append((name, seed, hist))
    return out


def compare_runs(train_set: Dataset, test_set: Dataset, base_config: TrainConfig,
                 schedulers, seeds, workers: int = 1) -> Comparison:
    """Train every scheduler on every seed over the same data split.

    Runs for one seed share a single warm-up and scoring pass. With
    ``workers > 1`` seeds run in separate processes; results are merged in
    (seed, scheduler) order regardless.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise InputError("need at least one seed")
    schedulers = [sched.canonical_scheduler(s) for s in schedulers]
    if not schedulers:
        raise InputError("need at least one scheduler")
    base = base_config.to_dict()
    jobs = [(train_set, test_set, base, schedulers, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_runs_for_seed, jobs))
    else:
        results = [_runs_for_seed(j) for j in jobs]

    histories = {}
    for batch in results:
        for name, seed, hist in batch:
            histories[(name, seed)] = hist
    rows = []
    for name in schedulers:
        for seed in seeds:
            rows.append({"scheduler": name, "seed": seed, **_row_metrics(histories[(name, seed)])})
    return Comparison(rows, histories)


def _row_metrics(hist: RunHistory) -> dict:
    s = hist.summary()
    return {k: s[k] for k in COMPARE_COLUMNS[2:]}
