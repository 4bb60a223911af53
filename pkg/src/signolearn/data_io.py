"""Data ingestion, positivity scaling, splits, and model persistence.

Signomials need strictly positive inputs, so features are min-max scaled
into a positive interval (default [1, 10]) before training. Splits are
stratified and fully determined by their seed. Persisted models are JSON
with an explicit schema version, written atomically.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ClassTooSmallError,
    CorruptModelError,
    DataFormatError,
    SchemaVersionError,
)

MODEL_SCHEMA_VERSION = 1


@dataclass
class Dataset:
    """Feature matrix plus target vector and naming metadata."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    class_names: list[str] | None = None  # None for regression targets

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def m(self) -> int:
        return int(self.X.shape[1])

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            X=self.X[idx],
            y=self.y[idx],
            feature_names=list(self.feature_names),
            class_names=None if self.class_names is None else list(self.class_names),
        )


# --- scaling -----------------------------------------------------------------


class Scaler:
    """Min-max scaler into [lo, hi] with optional named preprocessing steps.

    Steps run before the min-max stage, in order. Supported steps:
    'log' (ln(x + 1e-6)) and 'standardize' (per-feature z-score). Unseen data
    is clamped into [lo, hi] after scaling; a feature that was constant at
    fit time maps to lo.
    """

    _LOG_SHIFT = 1e-6

    def __init__(self, lo: float = 1.0, hi: float = 10.0, steps: Sequence[str] = ()):
        if not lo < hi:
            raise DataFormatError(f"scaler needs lo < hi, got [{lo}, {hi}]")
        if lo <= 0:
            raise DataFormatError(f"scaler lower bound must be positive, got {lo}")
        for s in steps:
            if s not in ("log", "standardize"):
                raise DataFormatError(f"unknown preprocessing step {s!r}")
        self.lo = float(lo)
        self.hi = float(hi)
        self.steps = list(steps)
        self.step_params: list[dict] = []
        self.mins: np.ndarray | None = None
        self.maxs: np.ndarray | None = None

    def _apply_steps(self, X: np.ndarray, fitting: bool) -> np.ndarray:
        out = X
        for i, step in enumerate(self.steps):
            if step == "log":
                shifted = out + self._LOG_SHIFT
                if np.any(shifted <= 0):
                    j = int(np.argwhere(shifted <= 0)[0][1])
                    raise DataFormatError(
                        f"log step needs values > {-self._LOG_SHIFT}; column {j} violates it"
                    )
                out = np.log(shifted)
                if fitting:
                    self.step_params.append({})
            elif step == "standardize":
                if fitting:
                    mean = out.mean(axis=0)
                    std = out.std(axis=0)
                    std = np.where(std == 0, 1.0, std)
                    self.step_params.append({"mean": mean.tolist(), "std": std.tolist()})
                params = self.step_params[i]
                out = (out - np.asarray(params["mean"])) / np.asarray(params["std"])
        return out

    def fit(self, X: np.ndarray) -> "Scaler":
        X = np.asarray(X, dtype=float)
        self.step_params = []
        staged = self._apply_steps(X, fitting=True)
        self.mins = staged.min(axis=0)
        self.maxs = staged.max(axis=0)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.mins is None:
            raise DataFormatError("scaler used before fit")
        X = np.asarray(X, dtype=float)
        staged = self._apply_steps(X, fitting=False)
        span = self.maxs - self.mins
        scaled = np.where(
            span == 0,
            self.lo,
            self.lo + (self.hi - self.lo) * (staged - self.mins) / np.where(span == 0, 1.0, span),
        )
        return np.clip(scaled, self.lo, self.hi)

    def fit_transform(self, X: np.ndarray) -> np.ndarray:
        return self.fit(X).transform(X)

    def to_dict(self) -> dict:
        return {
            "lo": self.lo,
            "hi": self.hi,
            "steps": list(self.steps),
            "stepParams": self.step_params,
            "mins": None if self.mins is None else self.mins.tolist(),
            "maxs": None if self.maxs is None else self.maxs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        sc = cls(lo=data["lo"], hi=data["hi"], steps=data.get("steps", []))
        sc.step_params = list(data.get("stepParams", []))
        if data.get("mins") is not None:
            sc.mins = np.asarray(data["mins"], dtype=float)
            sc.maxs = np.asarray(data["maxs"], dtype=float)
        return sc


# --- splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    val_fraction: float = 0.0  # fraction of the training side, carved after test
    seed: int = 0


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _take_per_class(fraction, rng, pool_by_class):
    taken, remaining = [], {}
    for c, pool in pool_by_class.items():
        if len(pool) < 2:
            raise ClassTooSmallError(
                f"class {c} has {len(pool)} sample(s); need at least 2 to split"
            )
        n_take = _round_half_up(fraction * len(pool))
        n_take = min(max(n_take, 1), len(pool) - 1)
        order = rng.permutation(len(pool))
        taken.extend(pool[order[:n_take]])
        remaining[c] = pool[order[n_take:]]
    return np.array(sorted(taken), dtype=int), remaining


def split(
    data: Dataset, spec: SplitSpec
) -> tuple[Dataset, Dataset] | tuple[Dataset, Dataset, Dataset]:
    """Seeded holdout split; stratified when the target is categorical.

    Returns (train, test), or (train, test, val) when spec.val_fraction > 0.
    Per-class test counts stay within one sample of the exact proportion and
    every class lands on both sides.
    """
    if not 0 < spec.test_fraction < 1:
        raise DataFormatError(f"test fraction must be in (0, 1), got {spec.test_fraction}")
    rng = np.random.default_rng(spec.seed)
    if data.class_names is not None:
        classes = np.unique(data.y)
        pools = {int(c): np.flatnonzero(data.y == c) for c in classes}
        test_idx, rest = _take_per_class(spec.test_fraction, rng, pools)
        if spec.val_fraction > 0:
            val_idx, rest = _take_per_class(spec.val_fraction, rng, rest)
            train_idx = np.array(sorted(np.concatenate(list(rest.values()))), dtype=int)
            return data.subset(train_idx), data.subset(test_idx), data.subset(val_idx)
        train_idx = np.array(sorted(np.concatenate(list(rest.values()))), dtype=int)
        return data.subset(train_idx), data.subset(test_idx)

    # regression target: plain shuffled split
    order = rng.permutation(data.n)
    n_test = min(max(_round_half_up(spec.test_fraction * data.n), 1), data.n - 1)
    test_idx = np.sort(order[:n_test])
    rest = order[n_test:]
    if spec.val_fraction > 0:
        n_val = min(max(_round_half_up(spec.val_fraction * len(rest)), 1), len(rest) - 1)
        val_idx = np.sort(rest[:n_val])
        train_idx = np.sort(rest[n_val:])
        return data.subset(train_idx), data.subset(test_idx), data.subset(val_idx)
    return data.subset(np.sort(rest)), data.subset(test_idx)


# --- CSV ---------------------------------------------------------------------


def load_csv(path: str, target: str, task: str = "classify") -> Dataset:
    """Load a headered CSV into a Dataset.

    All non-target columns become float features. Classification targets are
    label-encoded in order of first appearance; regression targets must parse
    as floats.
    """
    if task not in ("classify", "regress"):
        raise DataFormatError(f"unknown task {task!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataFormatError(f"{path}: duplicate column names in header")
        if target not in header:
            raise DataFormatError(f"{path}: no column named {target!r}")
        t_pos = header.index(target)
        feature_names = [h for i, h in enumerate(header) if i != t_pos]

        rows, raw_targets = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {line_no} has {len(row)} fields, expected {len(header)}"
                )
            feats = []
            for i, cell in enumerate(row):
                if i == t_pos:
                    continue
                cell = cell.strip()
                if not cell:
                    raise DataFormatError(
                        f"{path}: row {line_no} column {header[i]!r} is empty"
                    )
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: column {header[i]!r} is not numeric "
                        f"(row {line_no}: {cell!r})"
                    ) from None
                if not math.isfinite(v):
                    raise DataFormatError(
                        f"{path}: column {header[i]!r} has non-finite value at row {line_no}"
                    )
                feats.append(v)
            rows.append(feats)
            raw_targets.append(row[t_pos].strip())

    if not rows:
        raise DataFormatError(f"{path}: no data rows")

    X = np.array(rows, dtype=float)
    if task == "classify":
        seen: dict[str, int] = {}
        for t in raw_targets:
            if t not in seen:
                seen[t] = len(seen)
        y = np.array([seen[t] for t in raw_targets], dtype=int)
        class_names = list(seen)
        return Dataset(X=X, y=y, feature_names=feature_names, class_names=class_names)
    try:
        y = np.array([float(t) for t in raw_targets], dtype=float)
    except ValueError:
        bad = next(t for t in raw_targets if not _is_float(t))
        raise DataFormatError(
            f"{path}: regression target {target!r} has non-numeric value {bad!r}"
        ) from None
    if not np.all(np.isfinite(y)):
        raise DataFormatError(f"{path}: regression target {target!r} has non-finite values")
    return Dataset(X=X, y=y, feature_names=feature_names, class_names=None)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


# --- persistence -------------------------------------------------------------


def write_json_atomic(payload: dict, path: str) -> None:
    """Serialize deterministically (sorted keys) and rename into place."""
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(payload: dict, path: str) -> None:
    """Write a model payload as versioned JSON (atomic temp-then-rename)."""
    body = dict(payload)
    body["version"] = MODEL_SCHEMA_VERSION
    write_json_atomic(body, path)


def load_model(path: str) -> dict:
    """Read a versioned model payload, validating schema version."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict) or "version" not in data:
        raise CorruptModelError(f"{path}: missing schema version")
    if data["version"] != MODEL_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema version {data['version']!r}, supported: {MODEL_SCHEMA_VERSION}"
        )
    return data
