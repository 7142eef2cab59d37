"""Training-sequence schedulers.

Heuristic: rank samples once (most balanced first), then each epoch expose
the prefix of length ``ceil(lambda(t) * n)`` in random order, where
``lambda`` is a pacing function growing from ``lambda0`` to 1 over
``t_grow`` epochs.

Learning-based: keep an exponential moving average of balance scores,
refreshed every ``interval`` epochs, turn it into sampling probabilities
with a softmax, and order the whole epoch by weighted sampling without
replacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import InputError
from .numkit import Rng, softmax, weighted_sample_without_replacement

SCHEDULERS = ("vanilla", "heuristic", "anti", "learning")
SCHEDULER_ALIASES = {"bss-h": "heuristic", "bss-l": "learning", "anti-cl": "anti"}


def canonical_scheduler(name: str) -> str:
    key = str(name).lower()
    key = SCHEDULER_ALIASES.get(key, key)
    if key not in SCHEDULERS:
        choices = ", ".join(list(SCHEDULERS) + list(SCHEDULER_ALIASES))
        raise InputError(f"unknown scheduler {name!r} (choose from {choices})")
    return key


@dataclass(frozen=True)
class Pacing:
    """A pacing function family.

    ``name`` is one of ``baby-step``, ``linear``, ``root``, ``root-p`` or
    ``geometric``. ``bins`` is used by baby-step, ``power`` by root-p.
    """

    name: str = "root"
    bins: int = 5
    power: int = 2

    def __post_init__(self):
        if self.name not in ("baby-step", "linear", "root", "root-p", "geometric"):
            raise InputError(f"unknown pacing {self.name!r}")
        if self.bins < 1:
            raise InputError("baby-step needs bins >= 1")
        if self.name == "root-p" and self.power not in (3, 5):
            raise InputError("root-p power must be 3 or 5")

    @property
    def label(self) -> str:
        if self.name == "root-p":
            return f"root-{self.power}"
        if self.name == "baby-step" and self.bins != Pacing.bins:
            return f"baby-step-{self.bins}"
        return self.name

    @classmethod
    def parse(cls, text) -> "Pacing":
        """Accepts ``root``, ``root-3``, ``root-5``, ``linear``, ``geometric``,
        ``baby-step`` or ``baby-step-<bins>``."""
        if isinstance(text, cls):
            return text
        t = str(text).lower().replace("_", "-")
        if t in ("root-3", "root-5"):
            return cls("root-p", power=int(t[-1]))
        if t in ("babystep", "baby-step"):
            return cls("baby-step")
        if t.startswith("baby-step-"):
            try:
                return cls("baby-step", bins=int(t.rsplit("-", 1)[1]))
            except ValueError:
                pass
        if t in ("linear", "root", "geometric"):
            return cls(t)
        raise InputError(f"unknown pacing {text!r}")


ALL_PACINGS = (
    Pacing("baby-step"),
    Pacing("linear"),
    Pacing("root"),
    Pacing("root-p", power=3),
    Pacing("root-p", power=5),
    Pacing("geometric"),
)


def pacing_lambda(pacing, t: float, lambda0=0.1, t_grow=40) -> float:
    """Fraction of the ranked data available at epoch ``t``, in (0, 1].

    Every family reaches exactly 1.0 at ``t_grow`` and stays there.
    """
    pacing = Pacing.parse(pacing)
    if not 0.0 < lambda0 <= 1.0:
        raise InputError(f"lambda0 must lie in (0, 1], got {lambda0}")
    if t_grow < 1:
        raise InputError(f"t_grow must be >= 1, got {t_grow}")
    if t < 0:
        raise InputError(f"epoch must be >= 0, got {t}")
    if t >= t_grow:
        return 1.0
    x = t / t_grow
    name = pacing.name
    if name == "root":
        val = math.sqrt((1.0 - lambda0**2) * x + lambda0**2)
    elif name == "root-p":
        p = pacing.power
        val = ((1.0 - lambda0**p) * x + lambda0**p) ** (1.0 / p)
    elif name == "linear":
        val = lambda0 + (1.0 - lambda0) * x
    elif name == "geometric":
        val = lambda0 ** (1.0 - x)
    else:
        B = pacing.bins
        val = (math.floor(t * B / t_grow) + 1) / B
    return min(1.0, val)


def full_data_epoch(pacing, lambda0=0.1, t_grow=40) -> int:
    """First integer epoch at which ``pacing_lambda`` equals 1."""
    t = 0
    while pacing_lambda(pacing, t, lambda0, t_grow) < 1.0:
        t += 1
    return t


@dataclass(frozen=True)
class EpochPlan:
    epoch: int
    indices: np.ndarray
    scheduler: str
    lam: Optional[float] = None

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class HeuristicState:
    ranked: np.ndarray
    lambda0: float = 0.1
    t_grow: int = 40
    pacing: Pacing = Pacing()

    def __post_init__(self):
        r = np.asarray(self.ranked)
        if not np.array_equal(np.sort(r), np.arange(len(r))):
            raise InputError("ranked indices must be a permutation of 0..n-1")
        if not 0.0 < self.lambda0 <= 1.0:
            raise InputError(f"lambda0 must lie in (0, 1], got {self.lambda0}")
        if self.t_grow < 1:
            raise InputError(f"t_grow must be >= 1, got {self.t_grow}")


def prefix_size(lam: float, n: int) -> int:
    # tolerance so that e.g. 0.1 * 30 = 3.0000000000000004 does not round up to 4
    k = math.ceil(lam * n - 1e-9)
    return max(1, min(n, k))


def heuristic_epoch_plan(state: HeuristicState, t: int, rng: Rng, anti=False) -> EpochPlan:
    """Shuffled prefix of the ranking (of the reversed ranking when ``anti``)."""
    lam = pacing_lambda(state.pacing, t, state.lambda0, state.t_grow)
    order = np.asarray(state.ranked)
    if anti:
        order = order[::-1]
    chosen = order[: prefix_size(lam, len(order))].copy()
    rng.shuffle(chosen)
    return EpochPlan(t, chosen, "anti" if anti else "heuristic", lam)


def vanilla_epoch_plan(n: int, t: int, rng: Rng) -> EpochPlan:
    return EpochPlan(t, rng.permutation(n), "vanilla")


@dataclass(frozen=True)
class LearningState:
    """EMA state. ``k`` counts the updates applied so far."""

    interval: int = 5
    beta: float = 0.6
    s_upd: Optional[np.ndarray] = None
    k: int = 0

    def __post_init__(self):
        if self.interval < 1:
            raise InputError(f"interval must be >= 1, got {self.interval}")
        if not 0.0 <= self.beta <= 1.0:
            raise InputError(f"beta must lie in [0, 1], got {self.beta}")


def is_update_epoch(state: LearningState, t: int) -> bool:
    return t % state.interval == 0


def ema_update(state: LearningState, current_scores, t: int) -> LearningState:
    """Fold ``current_scores`` into the EMA if ``t`` is an update epoch.

    The first update copies the scores; later ones compute
    ``(1 - beta) * s_upd + beta * current``.
    """
    if not is_update_epoch(state, t):
        return state
    cur = np.asarray(current_scores, dtype=np.float64)
    if state.k == 0 or state.s_upd is None:
        new = cur.copy()
    else:
        if cur.shape != state.s_upd.shape:
            raise InputError(f"got {cur.shape} scores for {state.s_upd.shape} samples")
        new = (1.0 - state.beta) * state.s_upd + state.beta * cur
    return replace(state, s_upd=new, k=state.k + 1)


def sampling_probabilities(state: LearningState) -> np.ndarray:
    if state.s_upd is None:
        raise InputError("no scores yet; call ema_update first")
    return softmax(state.s_upd)


def learning_epoch_plan(probs, rng: Rng, t=0, subset_size=None) -> EpochPlan:
    """Order the epoch by drawing samples without replacement with ``probs``.

    ``subset_size`` truncates the ordering to its first draws.
    """
    order = weighted_sample_without_replacement(probs, rng)
    if subset_size is not None:
        if not 1 <= subset_size <= len(order):
            raise InputError(f"subset_size must lie in [1, {len(order)}]")
        order = order[:subset_size]
    return EpochPlan(t, order, "learning")


def entropy(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))
