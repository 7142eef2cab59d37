"""Synthetic multi-modal data with planted modality imbalance, plus JSONL I/O.

Each class has one Gaussian prototype per modality. A clean sample of class
``y`` draws modality ``j`` as ``prototype[j][y] + sigma_j * noise``. A fixed
fraction of *training* samples is corrupted in exactly one modality, either
by borrowing another class's prototype (``cross-class``) or by replacing the
features with noise (``pure-noise``). Corrupted samples carry
``balanced=False``; the test split is always clean.

JSONL layout: a header object, then one object per sample::

    {"format": "bss-jsonl", "version": 1, "classes": 6, "modalities": 2,
     "dims": [16, 16], "n": 1600}
    {"id": 0, "label": 3, "balanced": true, "mods": [[...], [...]]}
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, InputError, ParseError
from .numkit import make_rng

JSONL_FORMAT = "bss-jsonl"
JSONL_VERSION = 1
CORRUPTION_MODES = ("cross-class", "pure-noise")


@dataclass
class SynthConfig:
    classes: int = 6
    dims: tuple = (16, 16)
    n: int = 2000
    sigma: tuple = (0.3, 1.0)
    rho: float = 0.3
    corruption: str = "cross-class"
    seed: int = 0
    split: float = 0.8

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.sigma = tuple(float(s) for s in self.sigma)
        self.validate()

    def validate(self):
        if self.classes < 2:
            raise InputError("need at least 2 classes")
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise InputError("need >= 2 modalities with dims >= 1")
        if len(self.sigma) != len(self.dims):
            raise InputError(f"got {len(self.sigma)} noise levels for {len(self.dims)} modalities")
        if min(self.sigma) <= 0:
            raise InputError("noise levels must be > 0")
        if not 0.0 <= self.rho <= 1.0:
            raise InputError(f"rho must lie in [0, 1], got {self.rho}")
        if self.corruption not in CORRUPTION_MODES:
            raise InputError(f"corruption must be one of {CORRUPTION_MODES}")
        if not 0.0 < self.split < 1.0:
            raise InputError(f"split must lie in (0, 1), got {self.split}")
        n_train = self.n_train
        if n_train < 1 or n_train >= self.n:
            raise InputError(f"split {self.split} of n={self.n} leaves an empty partition")

    @property
    def n_train(self) -> int:
        return int(round(self.split * self.n))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["sigma"] = list(self.sigma)
        return d


@dataclass
class MultiModalSample:
    mods: list
    label: int
    balanced: Optional[bool]
    id: int


@dataclass(eq=False)
class Dataset:
    """Column-oriented dataset: one ``(n, d_j)`` array per modality."""

    features: list
    labels: np.ndarray
    classes: int
    balanced: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None
    # generation bookkeeping, not serialized: corrupted modality or -1
    corrupted_modality: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.features = [np.asarray(x, dtype=np.float64) for x in self.features]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.balanced is not None:
            self.balanced = np.asarray(self.balanced, dtype=bool)
        for x in self.features:
            if x.ndim != 2 or x.shape[0] != n:
                raise InputError("every modality needs one row per label")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> MultiModalSample:
        bal = None if self.balanced is None else bool(self.balanced[i])
        return MultiModalSample([x[i] for x in self.features], int(self.labels[i]), bal, int(self.ids[i]))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.classes, self.dims) != (other.classes, other.dims):
            return False
        if (self.balanced is None) != (other.balanced is None):
            return False
        same = np.array_equal(self.labels, other.labels) and np.array_equal(self.ids, other.ids)
        same = same and all(np.array_equal(a, b) for a, b in zip(self.features, other.features))
        if self.balanced is not None:
            same = same and np.array_equal(self.balanced, other.balanced)
        return bool(same)

    @property
    def dims(self) -> tuple:
        return tuple(x.shape[1] for x in self.features)

    @property
    def n_modalities(self) -> int:
        return len(self.features)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            [x[idx] for x in self.features],
            self.labels[idx],
            self.classes,
            None if self.balanced is None else self.balanced[idx],
            self.ids[idx],
            None if self.corrupted_modality is None else self.corrupted_modality[idx],
        )


def generate(config: SynthConfig) -> tuple[Dataset, Dataset]:
    """Draw a (train, test) pair; fully determined by ``config.seed``."""
    config.validate()
    rng = make_rng(config.seed)
    c, m, n = config.classes, len(config.dims), config.n
    protos = [rng.standard_normal((c, d)) for d in config.dims]
    labels = rng.integers(0, c, size=n)
    feats = [
        protos[j][labels] + config.sigma[j] * rng.standard_normal((n, d))
        for j, d in enumerate(config.dims)
    ]

    n_train = config.n_train
    n_bad = math.floor(config.rho * n_train)
    corrupted = np.full(n, -1, dtype=np.int64)
    bad_rows = np.sort(rng.choice(n_train, size=n_bad, replace=False))
    for i in bad_rows:
        j = int(rng.integers(m))
        d = config.dims[j]
        if config.corruption == "cross-class":
            wrong = (labels[i] + rng.integers(1, c)) % c
            feats[j][i] = protos[j][wrong] + config.sigma[j] * rng.standard_normal(d)
        else:
            # match the marginal spread of clean features
            feats[j][i] = math.sqrt(1.0 + config.sigma[j] ** 2) * rng.standard_normal(d)
        corrupted[i] = j

    balanced = corrupted < 0
    ids = np.arange(n)
    train = Dataset([x[:n_train] for x in feats], labels[:n_train], c,
                    balanced[:n_train], ids[:n_train], corrupted[:n_train])
    test = Dataset([x[n_train:] for x in feats], labels[n_train:], c,
                   balanced[n_train:], ids[n_train:], corrupted[n_train:])
    return train, test


def save_jsonl(dataset: Dataset, path) -> None:
    header = {
        "format": JSONL_FORMAT,
        "version": JSONL_VERSION,
        "classes": int(dataset.classes),
        "modalities": dataset.n_modalities,
        "dims": list(dataset.dims),
        "n": len(dataset),
    }
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for i in range(len(dataset)):
            row = {
                "id": int(dataset.ids[i]),
                "label": int(dataset.labels[i]),
                "balanced": None if dataset.balanced is None else bool(dataset.balanced[i]),
                "mods": [x[i].tolist() for x in dataset.features],
            }
            f.write(json.dumps(row) + "\n")


def _require(obj, key, lineno):
    if key not in obj:
        raise ParseError(f"missing {key!r} field", line=lineno)
    return obj[key]


def load_jsonl(path) -> Dataset:
    path = Path(path)
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("format") != JSONL_FORMAT:
        raise FormatError("not a bss-jsonl dataset header", line=1)
    if header.get("version") != JSONL_VERSION:
        raise FormatError(f"unsupported version {header.get('version')!r}", line=1)
    classes = int(_require(header, "classes", 1))
    dims = [int(d) for d in _require(header, "dims", 1)]
    m = int(_require(header, "modalities", 1))
    if m != len(dims):
        raise FormatError("header modality count disagrees with dims", line=1)

    rows = [[] for _ in range(m)]
    labels, ids, flags = [], [], []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line=lineno)
        label = _require(obj, "label", lineno)
        mods = _require(obj, "mods", lineno)
        ident = _require(obj, "id", lineno)
        if not isinstance(label, int) or isinstance(label, bool):
            raise ParseError("label must be an integer", line=lineno)
        if not 0 <= label < classes:
            raise FormatError(f"label {label} outside 0..{classes - 1}", line=lineno)
        if not isinstance(mods, list) or len(mods) != m:
            got = len(mods) if isinstance(mods, list) else type(mods).__name__
            raise FormatError(f"expected {m} modality arrays, got {got}", line=lineno)
        for j, vec in enumerate(mods):
            if not isinstance(vec, list) or len(vec) != dims[j]:
                raise FormatError(f"modality {j} must have {dims[j]} values", line=lineno)
            rows[j].append(vec)
        labels.append(label)
        ids.append(int(ident))
        flags.append(obj.get("balanced"))

    n = len(labels)
    if "n" in header and int(header["n"]) != n:
        raise FormatError(f"header declares {header['n']} samples, found {n}")
    if any(f is None for f in flags):
        if not all(f is None for f in flags):
            raise FormatError("balanced flag must be present on all rows or none")
        balanced = None
    else:
        balanced = np.array(flags, dtype=bool)
    feats = [np.array(r, dtype=np.float64).reshape(n, dims[j]) for j, r in enumerate(rows)]
    return Dataset(feats, np.array(labels, dtype=np.int64), classes, balanced,
                   np.array(ids, dtype=np.int64))
