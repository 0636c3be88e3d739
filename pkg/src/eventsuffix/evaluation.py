"""Suffix similarity, remaining-time error and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .eventlog import EOS_ID
from .infer import BeamConfig, beam_search, greedy_decode


def damerau_levenshtein(s1: Sequence, s2: Sequence) -> int:
    """Optimal-string-alignment distance.

    Unit-cost insertion, deletion, substitution and transposition of
    adjacent symbols; no substring is edited more than once.

    >>> damerau_levenshtein("abc", "acb")
    1
    >>> damerau_levenshtein("ca", "abc")
    3
    """
    n1, n2 = len(s1), len(s2)
    d = [[0] * (n2 + 1) for _ in range(n1 + 1)]
    for i in range(n1 + 1):
        d[i][0] = i
    for j in range(n2 + 1):
        d[0][j] = j
    for i in range(1, n1 + 1):
        for j in range(1, n2 + 1):
            cost = 0 if s1[i - 1] == s2[j - 1] else 1
            best = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
            if i > 1 and j > 1 and s1[i - 1] == s2[j - 2] and s1[i - 2] == s2[j - 1]:
                best = min(best, d[i - 2][j - 2] + 1)
            d[i][j] = best
    return d[n1][n2]


def sdl(s1: Sequence, s2: Sequence) -> float:
    """``1 - DL / max(len)``; two empty sequences count as identical (1.0)."""
    longest = max(len(s1), len(s2))
    if longest == 0:
        return 1.0
    # one division, so e.g. 2/3 comes out exact
    return (longest - damerau_levenshtein(s1, s2)) / longest


# -- Student t ---------------------------------------------------------------


def _beta_cf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Upper-tail probability ``P(T >= t)`` of Student's t."""
    if not df > 0:
        raise ValueError("degrees of freedom must be positive")
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


@dataclass(frozen=True)
class TTestResult:
    mean_difference: float
    t: float
    df: int
    p_value: float
    direction: str


def paired_t_test(differences: Sequence[float], direction: str = "upper") -> TTestResult:
    """One-tailed test of ``mean(d) = 0`` against ``> 0`` (upper) or ``< 0`` (lower)."""
    if direction not in ("upper", "lower"):
        raise ValueError("direction must be 'upper' or 'lower'")
    d = np.asarray(differences, dtype=np.float64)
    n = d.size
    if n < 2:
        raise ValueError("paired t-test needs at least two differences")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("paired t-test is degenerate: differences have zero variance")
    mean = float(np.mean(d))
    t = mean / (sd / math.sqrt(n))
    p = student_t_sf(t, n - 1) if direction == "upper" else student_t_sf(-t, n - 1)
    return TTestResult(mean, t, n - 1, p, direction)


# -- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    pair_id: str
    truth: tuple[int, ...]
    predicted: tuple[int, ...]
    sdl: float
    abs_error: float
    min_abs_error: float
    true_remaining: float
    predicted_remaining: float
    chosen_rank: int
    candidates: int

    def to_dict(self, vocab=None) -> dict:
        out = asdict(self)
        if vocab is not None:
            out["truth"] = [vocab.label(a) for a in self.truth]
            out["predicted"] = [vocab.label(a) for a in self.predicted]
        else:
            out["truth"], out["predicted"] = list(self.truth), list(self.predicted)
        return out


@dataclass(frozen=True)
class EvalSummary:
    mean_sdl: float
    mae: float
    mean_min_abs_error: float
    count: int
    beam_size: int
    records: tuple[EvalRecord, ...]

    def aggregate(self) -> dict:
        return {
            "mean_sdl": self.mean_sdl,
            "mae_days": self.mae,
            "mean_min_abs_error_days": self.mean_min_abs_error,
            "count": self.count,
            "beam_size": self.beam_size,
        }


def _strip_eos(seq) -> tuple[int, ...]:
    return tuple(a for a in seq if a != EOS_ID)


def evaluate(model, pairs, beam: BeamConfig | int = 1, scaler=None, max_length: int | None = None) -> EvalSummary:
    """Mean SDL and MAE over ``pairs``.

    With a beam of one the greedy decode is scored.  With a wider beam the
    candidate with the largest SDL is scored (first in rank order on ties);
    ``min_abs_error`` records the smallest error among all candidates.
    """
    if not pairs:
        raise ValueError("evaluate needs at least one pair")
    if isinstance(beam, int):
        beam = BeamConfig(beam_size=beam, max_length=max_length or 2 * max(len(p.suffix) for p in pairs))
    records = []
    for pair in pairs:
        if beam.beam_size == 1:
            candidates = [greedy_decode(model, pair.prefix, beam.max_length, scaler)]
        else:
            candidates = beam_search(model, pair.prefix, beam, scaler)
        truth = _strip_eos(pair.suffix_activities)
        true_remaining = pair.remaining_days
        scores = [sdl(truth, _strip_eos(c.activities)) for c in candidates]
        errors = [abs(c.remaining_time - true_remaining) for c in candidates]
        rank = int(np.argmax(scores))
        records.append(EvalRecord(
            pair_id=pair.pair_id,
            truth=truth,
            predicted=_strip_eos(candidates[rank].activities),
            sdl=scores[rank],
            abs_error=errors[rank],
            min_abs_error=min(errors),
            true_remaining=true_remaining,
            predicted_remaining=candidates[rank].remaining_time,
            chosen_rank=rank + 1,
            candidates=len(candidates),
        ))
    n = len(records)
    return EvalSummary(
        mean_sdl=math.fsum(r.sdl for r in records) / n,
        mae=math.fsum(r.abs_error for r in records) / n,
        mean_min_abs_error=math.fsum(r.min_abs_error for r in records) / n,
        count=n,
        beam_size=beam.beam_size,
        records=tuple(records),
    )
