"""Signomial expressions: weighted sums of power-law terms.

A signomial over m positive inputs is

    z(x) = sum_k alpha_k * prod_j x_j ** beta_kj

with real coefficients alpha_k and real exponents beta_kj. Evaluation runs in
the log domain, sign(alpha_k) * exp(ln|alpha_k| + sum_j beta_kj * ln x_j), so
large positive and negative exponents are handled symmetrically; a term whose
log-magnitude exceeds LOG_MAGNITUDE_LIMIT raises OverflowLimitError instead of
silently producing inf.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    NameCountMismatchError,
    NonPositiveInputError,
    OverflowLimitError,
)

# exp() overflows float64 a little above 709; stop short of it.
LOG_MAGNITUDE_LIMIT = 700.0

DEFAULT_SNAP_TOLERANCE = 0.02
DEFAULT_COEF_PRUNE_THRESHOLD = 1e-4
DEFAULT_EXPONENT_ZERO_THRESHOLD = 5e-3
DEFAULT_EXPONENT_TOLERANCE = 0.02
DEFAULT_COEF_RELATIVE_TOLERANCE = 0.05

# Preferred rational exponents p/q with q <= 6 and |p| <= 12, deduplicated.
_MAX_DENOMINATOR = 6
_MAX_NUMERATOR = 12


def _build_snap_table() -> list[tuple[float, int, int]]:
    best: dict[Fraction, tuple[int, int]] = {}
    for q in range(1, _MAX_DENOMINATOR + 1):
        for p in range(-_MAX_NUMERATOR, _MAX_NUMERATOR + 1):
            frac = Fraction(p, q)
            key = (q, abs(p))
            if frac not in best or key < (best[frac][1], abs(best[frac][0])):
                best[frac] = (p, q)
    table = [(float(f), p, q) for f, (p, q) in best.items()]
    table.sort()
    return table


_SNAP_TABLE = _build_snap_table()
_SNAP_VALUES = [v for v, _, _ in _SNAP_TABLE]


@dataclass(frozen=True)
class Term:
    """One power-law term: coefficient and one exponent per feature."""

    alpha: float
    beta: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))


@dataclass(frozen=True)
class ScoreBreakdown:
    """Evaluation result: the total and the value of every term."""

    total: float
    per_term: tuple[float, ...]


class Signomial:
    """An ordered list of terms over a fixed number of features."""

    def __init__(self, terms: Iterable[Term | tuple], m: int | None = None):
        parsed: list[Term] = []
        for t in terms:
            if not isinstance(t, Term):
                alpha, beta = t
                t = Term(alpha, tuple(beta))
            parsed.append(t)
        if m is None:
            if not parsed:
                raise DimensionMismatchError(
                    "empty signomial needs an explicit feature count m"
                )
            m = len(parsed[0].beta)
        m = int(m)
        if m < 1:
            raise DimensionMismatchError(f"feature count must be >= 1, got {m}")
        for i, t in enumerate(parsed):
            if len(t.beta) != m:
                raise DimensionMismatchError(
                    f"term {i} has {len(t.beta)} exponents, expected {m}"
                )
        self._terms = tuple(parsed)
        self._m = m
        self._alphas = np.array([t.alpha for t in parsed], dtype=float)
        self._betas = (
            np.array([t.beta for t in parsed], dtype=float)
            if parsed
            else np.zeros((0, m))
        )

    @property
    def m(self) -> int:
        return self._m

    @property
    def num_terms(self) -> int:
        return len(self._terms)

    @property
    def terms(self) -> tuple[Term, ...]:
        return self._terms

    @property
    def alphas(self) -> np.ndarray:
        return self._alphas.copy()

    @property
    def betas(self) -> np.ndarray:
        return self._betas.copy()

    @classmethod
    def from_arrays(cls, alphas, betas) -> "Signomial":
        alphas = np.asarray(alphas, dtype=float)
        betas = np.asarray(betas, dtype=float)
        if betas.ndim != 2 or alphas.shape != (betas.shape[0],):
            raise DimensionMismatchError(
                f"need alphas (K,) and betas (K, m); got {alphas.shape} and {betas.shape}"
            )
        terms = [Term(a, tuple(b)) for a, b in zip(alphas, betas)]
        return cls(terms, m=betas.shape[1])

    def to_dict(self) -> dict:
        return {
            "m": self._m,
            "terms": [
                {"alpha": t.alpha, "beta": list(t.beta)} for t in self._terms
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Signomial":
        try:
            m = int(data["m"])
            terms = [Term(t["alpha"], tuple(t["beta"])) for t in data["terms"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DimensionMismatchError(f"malformed signomial payload: {exc}") from exc
        return cls(terms, m=m)

    def __repr__(self) -> str:
        return f"Signomial({self.num_terms} terms, m={self._m})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Signomial)
            and self._m == other._m
            and self._terms == other._terms
        )

    def __hash__(self):
        return hash((self._m, self._terms))


def _check_positive_input(x, m: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (m,):
        raise DimensionMismatchError(f"input has shape {arr.shape}, expected ({m},)")
    bad = ~np.isfinite(arr) | (arr <= 0)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise NonPositiveInputError(
            f"input coordinate {j} is {arr[j]!r}; all inputs must be finite and > 0"
        )
    return arr


def _log_magnitudes(s: Signomial, log_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (monomial log-values, per-term log-magnitudes)."""
    mono_log = s._betas @ log_x if s.num_terms else np.zeros(0)
    with np.errstate(divide="ignore"):
        log_abs_alpha = np.log(np.abs(s._alphas))
    return mono_log, log_abs_alpha + mono_log


def _guard_overflow(log_mag: np.ndarray, what: str) -> None:
    if log_mag.size and np.max(log_mag) > LOG_MAGNITUDE_LIMIT:
        k = int(np.argmax(log_mag))
        raise OverflowLimitError(
            f"{what} log-magnitude {log_mag[k]:.1f} of term {k} exceeds "
            f"{LOG_MAGNITUDE_LIMIT:.0f}",
            term_index=k,
        )


def evaluate(s: Signomial, x) -> ScoreBreakdown:
    """Evaluate s at a positive input, returning total and per-term values."""
    arr = _check_positive_input(x, s.m)
    log_x = np.log(arr)
    _, log_mag = _log_magnitudes(s, log_x)
    _guard_overflow(log_mag, "term")
    per_term = np.sign(s._alphas) * np.exp(log_mag)
    return ScoreBreakdown(
        total=float(np.sum(per_term)), per_term=tuple(float(v) for v in per_term)
    )


def evaluate_batch(s: Signomial, X) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate s at every row of X. Returns (totals (N,), per-term (N, K))."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != s.m:
        raise DimensionMismatchError(f"X has shape {arr.shape}, expected (N, {s.m})")
    bad = ~np.isfinite(arr) | (arr <= 0)
    if np.any(bad):
        i, j = map(int, np.argwhere(bad)[0])
        raise NonPositiveInputError(
            f"X[{i}, {j}] is {arr[i, j]!r}; all inputs must be finite and > 0"
        )
    if s.num_terms == 0:
        return np.zeros(arr.shape[0]), np.zeros((arr.shape[0], 0))
    log_x = np.log(arr)
    with np.errstate(divide="ignore"):
        log_abs_alpha = np.log(np.abs(s._alphas))
    log_mag = log_x @ s._betas.T + log_abs_alpha
    if np.max(log_mag) > LOG_MAGNITUDE_LIMIT:
        i, k = map(int, np.unravel_index(np.argmax(log_mag), log_mag.shape))
        raise OverflowLimitError(
            f"term {k} overflows at row {i} (log-magnitude {log_mag[i, k]:.1f})",
            term_index=k,
        )
    per_term = np.sign(s._alphas) * np.exp(log_mag)
    return per_term.sum(axis=1), per_term


def gradient(s: Signomial, x) -> tuple[np.ndarray, np.ndarray]:
    """Parameter gradient of z(x): (d/dalpha (K,), d/dbeta (K, m)).

    d z / d alpha_k is the bare monomial value, computed without dividing by
    alpha_k so it stays defined when a coefficient is exactly zero.
    d z / d beta_kj = per_term_k * ln x_j.
    """
    arr = _check_positive_input(x, s.m)
    log_x = np.log(arr)
    mono_log, log_mag = _log_magnitudes(s, log_x)
    _guard_overflow(log_mag, "term")
    _guard_overflow(mono_log, "monomial")
    d_alpha = np.exp(mono_log)
    per_term = np.sign(s._alphas) * np.exp(log_mag)
    d_beta = np.outer(per_term, log_x)
    return d_alpha, d_beta


def snap_exponent(value: float, tolerance: float = DEFAULT_SNAP_TOLERANCE) -> float:
    """Snap an exponent to the nearest preferred rational p/q (q <= 6, |p| <= 12)
    when it lies within tolerance; otherwise return it unchanged.

    Ties prefer the smaller denominator, then the smaller |numerator|.
    """
    idx = bisect_left(_SNAP_VALUES, value)
    best_key: tuple[float, int, int] | None = None
    snapped = float(value)
    for v, p, q in _SNAP_TABLE[max(0, idx - 1) : idx + 2]:
        d = abs(value - v)
        if d <= tolerance:
            key = (d, q, abs(p))
            if best_key is None or key < best_key:
                best_key = key
                snapped = v
    return snapped


@dataclass(frozen=True)
class CanonicalForm:
    """A signomial in canonical shape: snapped, pruned, merged, sorted."""

    terms: tuple[Term, ...]
    m: int

    def to_signomial(self) -> Signomial:
        return Signomial(list(self.terms), m=self.m)

    @property
    def num_terms(self) -> int:
        return len(self.terms)


def canonicalize(
    s: Signomial,
    snap_tolerance: float = DEFAULT_SNAP_TOLERANCE,
    prune_threshold: float = DEFAULT_COEF_PRUNE_THRESHOLD,
    exponent_zero_threshold: float = DEFAULT_EXPONENT_ZERO_THRESHOLD,
) -> CanonicalForm:
    """Reduce a signomial to canonical form.

    Exponents below exponent_zero_threshold in magnitude become 0, remaining
    exponents snap to nearby preferred rationals, terms with |alpha| below
    prune_threshold are dropped, terms with identical exponent vectors merge,
    and the result is sorted by exponent vector then by descending coefficient.
    """
    merged: dict[tuple[float, ...], float] = {}
    for t in s.terms:
        if abs(t.alpha) < prune_threshold:
            continue
        beta = tuple(
            snap_exponent(0.0 if abs(b) < exponent_zero_threshold else b, snap_tolerance)
            for b in t.beta
        )
        merged[beta] = merged.get(beta, 0.0) + t.alpha
    kept = [
        Term(alpha, beta)
        for beta, alpha in merged.items()
        if abs(alpha) >= prune_threshold
    ]
    kept.sort(key=lambda t: (t.beta, -t.alpha))
    return CanonicalForm(terms=tuple(kept), m=s.m)


def _match_terms(
    a: Sequence[Term],
    b: Sequence[Term],
    exponent_tolerance: float,
    coef_relative_tolerance: float,
) -> bool:
    """Backtracking search for a perfect 1:1 pairing of terms within tolerance."""

    def close(ta: Term, tb: Term) -> bool:
        if any(abs(x - y) > exponent_tolerance for x, y in zip(ta.beta, tb.beta)):
            return False
        scale = max(abs(ta.alpha), abs(tb.alpha))
        return abs(ta.alpha - tb.alpha) <= coef_relative_tolerance * scale

    used = [False] * len(b)

    def assign(i: int) -> bool:
        if i == len(a):
            return True
        for j in range(len(b)):
            if not used[j] and close(a[i], b[j]):
                used[j] = True
                if assign(i + 1):
                    return True
                used[j] = False
        return False

    return assign(0)


def equivalent(
    a: CanonicalForm,
    b: CanonicalForm,
    exponent_tolerance: float = DEFAULT_EXPONENT_TOLERANCE,
    coef_relative_tolerance: float = DEFAULT_COEF_RELATIVE_TOLERANCE,
) -> bool:
    """Decide whether two canonical forms describe the same expression.

    Requires identical term counts, every exponent within exponent_tolerance,
    and coefficients within a relative tolerance of each other under some 1:1
    pairing of terms.
    """
    if a.m != b.m:
        raise DimensionMismatchError(
            f"cannot compare canonical forms over {a.m} and {b.m} features"
        )
    if a.num_terms != b.num_terms:
        return False
    return _match_terms(a.terms, b.terms, exponent_tolerance, coef_relative_tolerance)


def _default_names(m: int) -> list[str]:
    return [f"x{j + 1}" for j in range(m)]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _is_one(e: float) -> bool:
    return abs(e - 1.0) < 1e-12


def render(s: Signomial, names: Sequence[str] | None = None, style: str = "plain") -> str:
    """Render a signomial as text. style is 'plain' or 'latex'."""
    if names is None:
        names = _default_names(s.m)
    elif len(names) != s.m:
        raise NameCountMismatchError(
            f"got {len(names)} names for {s.m} features"
        )
    if style not in ("plain", "latex"):
        raise ValueError(f"unknown style {style!r}")
    if s.num_terms == 0:
        return "0.00"

    pieces: list[str] = []
    for idx, t in enumerate(s.terms):
        mag = abs(t.alpha)
        if style == "plain":
            factors = [
                f"{names[j]}" if _is_one(b) else f"{names[j]}^{_fmt(b)}"
                for j, b in enumerate(t.beta)
                if b != 0.0
            ]
            body = " * ".join([_fmt(mag)] + factors)
        else:
            num = [
                names[j] if _is_one(b) else f"{names[j]}^{{{_fmt(b)}}}"
                for j, b in enumerate(t.beta)
                if b > 0.0
            ]
            den = [
                names[j] if _is_one(-b) else f"{names[j]}^{{{_fmt(-b)}}}"
                for j, b in enumerate(t.beta)
                if b < 0.0
            ]
            coef = _fmt(mag)
            if den:
                top = " ".join(num) if num else "1"
                body = f"{coef} \\frac{{{top}}}{{{' '.join(den)}}}"
            elif num:
                body = f"{coef} \\, {' '.join(num)}"
            else:
                body = coef
        if idx == 0:
            pieces.append(body if t.alpha >= 0 else f"-{body}")
        else:
            pieces.append(("+ " if t.alpha >= 0 else "- ") + body)
    return " ".join(pieces)
