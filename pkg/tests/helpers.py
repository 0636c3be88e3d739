"""Test doubles and brute-force oracles shared across the suite."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from eventsuffix.eventlog import EOS_ID, SOS_ID, derive_durations, generate_pairs, generate_synthetic_log
from eventsuffix.eventlog import TimeScaler, Vocabulary, temporal_split

TWO_VARIANTS = {
    "start": "2021-01-04T08:00:00",
    "interarrival_days": 0.5,
    "variants": [
        {"activities": ["A", "B", "C"], "weight": 0.5},
        {"activities": ["A", "D", "C"], "weight": 0.5},
    ],
    "durations": {"B": 2.0, "D": 1.0, "C": 3.0},
}


def synthetic_splits(n_traces=100, seed=1, spec=TWO_VARIANTS):
    log = derive_durations(generate_synthetic_log(spec, n_traces, seed=seed))
    train, val, test = temporal_split(log)
    vocab = Vocabulary.from_log(train)
    scaler = TimeScaler.fit(train)
    pairs = [generate_pairs(part, vocab, scaler) for part in (train, val, test)]
    return vocab, scaler, pairs


class TreeModel:
    """Decoder whose next-activity distribution depends only on the history.

    ``dist(history) -> probability vector over the whole vocabulary``.  The
    state is the tuple of activities emitted so far; durations are
    ``0.1 * (step + 1)``.
    """

    def __init__(self, vocab_size, dist):
        self.vocab_size = vocab_size
        self.dist = dist

    def sos_vector(self):
        v = np.zeros(self.vocab_size + 1)
        v[SOS_ID] = 1.0
        return v

    def encode_prefix(self, prefix):
        return ()

    def decoder_step(self, x, state):
        a = int(np.argmax(np.asarray(x)[:-1]))
        history = () if a == SOS_ID else state + (a,)
        pi = np.asarray(self.dist(history), dtype=np.float64)
        return pi, 0.1 * (len(history) + 1), history


def random_tree_model(vocab_size, seed, sos_mass=0.0):
    """Tree model with independent random distributions at every history node."""
    cache = {}

    def dist(history):
        if history not in cache:
            rng = np.random.default_rng([seed, len(history), *history])
            p = rng.dirichlet(np.ones(vocab_size))
            p[SOS_ID] = sos_mass
            cache[history] = p / p.sum()
        return cache[history]

    return TreeModel(vocab_size, dist)


def enumerate_suffixes(model, cap):
    """All emitted sequences up to ``cap``: completed ones ranked first by
    exact log-probability, then the length-``cap`` open ones."""
    complete, open_ = [], []

    def walk(history, score):
        pi = model.dist(history)
        for a in range(SOS_ID + 1, model.vocab_size):
            s = score + np.log(pi[a])
            seq = history + (a,)
            if a == EOS_ID:
                complete.append((seq, s))
            elif len(seq) == cap:
                open_.append((seq, s))
            else:
                walk(seq, s)

    walk((), 0.0)
    complete.sort(key=lambda c: -c[1])
    open_.sort(key=lambda c: -c[1])
    return complete, open_


def osa_oracle(s1, s2):
    """Exhaustive search over edit scripts that never touch a symbol twice.

    Each script consumes both strings left to right with one of: keep,
    substitute, delete, insert, or swap of an adjacent pair.  Written
    top-down over suffixes, independent of the table-based implementation.
    """
    s1, s2 = tuple(s1), tuple(s2)

    @lru_cache(maxsize=None)
    def best(i, j):
        if i == len(s1):
            return len(s2) - j
        if j == len(s2):
            return len(s1) - i
        options = [1 + best(i + 1, j), 1 + best(i, j + 1), (s1[i] != s2[j]) + best(i + 1, j + 1)]
        if i + 1 < len(s1) and j + 1 < len(s2) and s1[i] == s2[j + 1] and s1[i + 1] == s2[j]:
            options.append(1 + best(i + 2, j + 2))
        return min(options)

    return best(0, 0)


def all_sequences(alphabet, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)
