"""Greedy and beam-search decoding of suffixes and remaining times.

Any object with ``encode_prefix(prefix) -> state``, ``decoder_step(x, state)
-> (pi, t, state)``, ``sos_vector()`` and ``vocab_size`` can be decoded, which
keeps toy models for testing cheap.  ``[SOS]`` is never emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .eventlog import EOS_ID, SOS_ID


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 1
    max_length: int = 20

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be at least 1")
        if self.max_length < 1:
            raise ValueError("max_length must be at least 1")


@dataclass
class Hypothesis:
    activities: list[int] = field(default_factory=list)
    durations: list[float] = field(default_factory=list)
    score: float = 0.0
    state: Any = None
    complete: bool = False


@dataclass(frozen=True)
class Prediction:
    """A decoded suffix.  ``durations`` are per-step times in days."""

    activities: tuple[int, ...]
    durations: tuple[float, ...]
    score: float
    truncated: bool

    @property
    def remaining_time(self) -> float:
        total = 0.0
        for d in self.durations:
            total += d
        return total

    def labels(self, vocab) -> list[str]:
        return [vocab.label(a) for a in self.activities]

    def to_record(self, vocab, prefix_id: str, rank: int) -> dict:
        return {
            "prefix_id": prefix_id,
            "rank": rank,
            "activities": self.labels(vocab),
            "times_days": list(self.durations),
            "remaining_time_days": self.remaining_time,
            "log_probability": self.score,
            "truncated": self.truncated,
        }


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _log_probs(pi) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(_as_array(pi))


def _feedback(model, activity: int, t: float) -> np.ndarray:
    x = np.zeros(model.vocab_size + 1)
    x[activity] = 1.0
    x[-1] = t
    return x


def _to_days(t: float, scaler) -> float:
    return float(t) if scaler is None else float(scaler.denormalize(t))


def greedy_decode(model, prefix, max_length: int = 20, scaler=None) -> Prediction:
    """1-best decoding: take the most likely activity at every step."""
    if max_length < 1:
        raise ValueError("max_length must be at least 1")
    state = model.encode_prefix(prefix)
    x = model.sos_vector()
    acts, durs, score = [], [], 0.0
    for _ in range(max_length):
        pi, t, state = model.decoder_step(x, state)
        logp = _log_probs(pi)
        a = SOS_ID + 1 + int(np.argmax(logp[SOS_ID + 1:]))
        t = float(_as_array(t))
        score = score + logp[a]
        acts.append(a)
        durs.append(_to_days(t, scaler))
        if a == EOS_ID:
            return Prediction(tuple(acts), tuple(durs), float(score), False)
        x = _feedback(model, a, t)
    return Prediction(tuple(acts), tuple(durs), float(score), True)


def beam_search(model, prefix, config: BeamConfig | int = 1, scaler=None) -> list[Prediction]:
    """The ``beam_size`` best suffixes by accumulated log-probability.

    Each hypothesis that emits ``[EOS]`` leaves the beam and the beam
    shrinks by one.  Hypotheses still open at ``max_length`` are returned as
    truncated, ranked after all completed ones.  Ties go to the lower
    activity index, then to the older hypothesis.  Zero-probability
    continuations are skipped, so fewer than ``beam_size`` results can come
    back.
    """
    if isinstance(config, int):
        config = BeamConfig(beam_size=config)
    live = [(Hypothesis(state=model.encode_prefix(prefix)), model.sos_vector())]
    completed: list[Hypothesis] = []
    capacity = config.beam_size
    for _ in range(config.max_length):
        candidates = []
        for h_idx, (hyp, x) in enumerate(live):
            pi, t, state = model.decoder_step(x, hyp.state)
            logp = _log_probs(pi)
            t = float(_as_array(t))
            for a in range(SOS_ID + 1, len(logp)):
                # impossible continuations are never predictions
                if logp[a] > -np.inf:
                    candidates.append((hyp.score + logp[a], a, h_idx, t, state))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        survivors = []
        for score, a, h_idx, t, state in candidates[:capacity]:
            parent = live[h_idx][0]
            hyp = Hypothesis(
                activities=parent.activities + [a],
                durations=parent.durations + [_to_days(t, scaler)],
                score=score,
                state=state,
                complete=a == EOS_ID,
            )
            if hyp.complete:
                completed.append(hyp)
                capacity -= 1
            else:
                survivors.append((hyp, _feedback(model, a, t)))
        live = survivors
        if not live:
            break

    completed.sort(key=lambda h: -h.score)
    truncated = sorted((h for h, _ in live), key=lambda h: -h.score)
    out = [Prediction(tuple(h.activities), tuple(h.durations), float(h.score), False) for h in completed]
    out += [Prediction(tuple(h.activities), tuple(h.durations), float(h.score), True) for h in truncated]
    return out[:config.beam_size]
