"""Recurrent building blocks: stacked LSTM, generator, discriminator, Gumbel-softmax."""

from __future__ import annotations

import copy
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .eventlog import SOS_ID

PROB_FLOOR = 1e-12
REAL_SUFFIX_CONFIDENCE = 0.9

State = list  # [(h, c), ...] one pair of Tensors per layer


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def lstm_step(W: Tensor, b: Tensor, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell update.

    ``W`` has shape ``(4 * hidden, input + hidden)`` with gate rows ordered
    input, forget, candidate, output.
    """
    hidden = h.shape[0]
    if W.shape != (4 * hidden, x.shape[0] + hidden) or b.shape != (4 * hidden,) or c.shape != h.shape:
        raise ad.ShapeError(
            f"lstm_step: W {W.shape}, b {b.shape} incompatible with x {x.shape}, h {h.shape}, c {c.shape}"
        )
    z = ad.add(ad.matmul(W, ad.concat([x, h])), b)
    i = ad.sigmoid(z[0:hidden])
    f = ad.sigmoid(z[hidden:2 * hidden])
    g = ad.tanh(z[2 * hidden:3 * hidden])
    o = ad.sigmoid(z[3 * hidden:4 * hidden])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


class StackedLstm:
    """A stack of LSTM cells whose parameters live in a shared dict."""

    def __init__(self, params: dict, prefix: str, input_size: int, hidden_size: int, num_layers: int,
                 rng: np.random.Generator | None = None):
        self.params = params
        self.prefix = prefix
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        if rng is not None:
            for layer in range(num_layers):
                n_in = input_size if layer == 0 else hidden_size
                fan_in = n_in + hidden_size
                params[f"{prefix}.{layer}.W"] = Tensor(
                    _uniform(rng, (4 * hidden_size, fan_in), fan_in), requires_grad=True, name=f"{prefix}.{layer}.W"
                )
                params[f"{prefix}.{layer}.b"] = Tensor(
                    _uniform(rng, (4 * hidden_size,), fan_in), requires_grad=True, name=f"{prefix}.{layer}.b"
                )

    def zero_state(self) -> State:
        z = np.zeros(self.hidden_size)
        return [(Tensor(z), Tensor(z)) for _ in range(self.num_layers)]

    def step(self, x: Tensor, state: State) -> State:
        new_state = []
        inp = x
        for layer, (h, c) in enumerate(state):
            h, c = lstm_step(self.params[f"{self.prefix}.{layer}.W"], self.params[f"{self.prefix}.{layer}.b"], inp, h, c)
            new_state.append((h, c))
            inp = h
        return new_state

    def run(self, xs: Sequence[Tensor], state: State | None = None) -> State:
        state = self.zero_state() if state is None else state
        for x in xs:
            state = self.step(x, state)
        return state


class _Model:
    """Shared parameter handling for the generator and discriminator."""

    params: dict

    def with_params(self, params: dict):
        """Shallow copy that runs on ``params`` (name -> Tensor or array)."""
        clone = copy.copy(self)
        clone.params = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
        clone._bind()
        return clone

    def clone(self):
        return self.with_params({k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            if self.params[k].shape != np.shape(v):
                raise ad.ShapeError(f"parameter {k}: expected shape {self.params[k].shape}, got {np.shape(v)}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def layers(self) -> dict[str, list[str]]:
        """Parameter names grouped by layer (everything before the last dot)."""
        groups: dict[str, list[str]] = {}
        for name in self.params:
            groups.setdefault(name.rsplit(".", 1)[0], []).append(name)
        return groups

    def _bind(self):
        pass


class GeneratorModel(_Model):
    """LSTM encoder-decoder with an activity head (softmax) and a time head (ReLU)."""

    def __init__(self, vocab_size: int, hidden_size: int = 32, num_layers: int = 1, seed: int | None = 0):
        if vocab_size < 2:
            raise ValueError("vocabulary must hold at least the two reserved tokens")
        self.vocab_size = vocab_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        m = vocab_size
        self.encoder = StackedLstm(self.params, "encoder", m + 1, hidden_size, num_layers, rng)
        self.decoder = StackedLstm(self.params, "decoder", m + 1, hidden_size, num_layers, rng)
        for head, out in (("activity_head", m), ("time_head", 1)):
            self.params[f"{head}.W"] = Tensor(_uniform(rng, (out, hidden_size), hidden_size), True, f"{head}.W")
            self.params[f"{head}.b"] = Tensor(_uniform(rng, (out,), hidden_size), True, f"{head}.b")

    def _bind(self):
        self.encoder = copy.copy(self.encoder)
        self.encoder.params = self.params
        self.decoder = copy.copy(self.decoder)
        self.decoder.params = self.params

    @property
    def input_size(self) -> int:
        return self.vocab_size + 1

    def topology(self) -> dict:
        return {"vocab_size": self.vocab_size, "hidden_size": self.hidden_size, "num_layers": self.num_layers}

    def _check_input(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape != (self.input_size,):
            raise ad.ShapeError(f"event vector has shape {x.shape}, model expects ({self.input_size},)")
        return x

    def sos_vector(self) -> np.ndarray:
        v = np.zeros(self.input_size)
        v[SOS_ID] = 1.0
        return v

    def encode_prefix(self, prefix) -> State:
        """Final ``(h, c)`` of every encoder layer after reading ``prefix``."""
        if len(prefix) == 0:
            raise ValueError("cannot encode an empty prefix")
        return self.encoder.run([self._check_input(e) for e in prefix])

    def decoder_step(self, x, state: State) -> tuple[Tensor, Tensor, State]:
        """Next-activity distribution, non-negative duration and new state."""
        state = self.decoder.step(self._check_input(x), state)
        y = state[-1][0]
        p = self.params
        pi = ad.softmax(ad.add(ad.matmul(p["activity_head.W"], y), p["activity_head.b"]))
        t = ad.relu(ad.add(ad.matmul(p["time_head.W"], y), p["time_head.b"]))[0]
        return pi, t, state

    def rollout(self, prefix, steps: int, targets=None, teacher=None):
        """Open-loop decode for ``steps`` steps.

        Each step's input is the processed previous prediction, except where
        ``teacher[j]`` is true: then the ground-truth ``targets[j - 1]`` is
        fed instead.  Returns the lists of activity distributions and
        durations.
        """
        state = self.encode_prefix(prefix)
        x = Tensor(self.sos_vector())
        pis, ts = [], []
        for j in range(steps):
            if j > 0:
                if teacher is not None and teacher[j]:
                    x = Tensor(targets[j - 1])
                else:
                    x = Tensor(processing_block(pis[-1].data, float(ts[-1].data)))
            pi, t, state = self.decoder_step(x, state)
            pis.append(pi)
            ts.append(t)
        return pis, ts


class DiscriminatorModel(_Model):
    """LSTM over suffix event vectors followed by a sigmoid-activated linear head."""

    def __init__(self, vocab_size: int, hidden_size: int = 32, num_layers: int = 1, seed: int | None = 0):
        self.vocab_size = vocab_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        self.lstm = StackedLstm(self.params, "disc", vocab_size + 1, hidden_size, num_layers, rng)
        self.params["disc_head.W"] = Tensor(_uniform(rng, (1, hidden_size), hidden_size), True, "disc_head.W")
        self.params["disc_head.b"] = Tensor(_uniform(rng, (1,), hidden_size), True, "disc_head.b")

    def _bind(self):
        self.lstm = copy.copy(self.lstm)
        self.lstm.params = self.params

    def __call__(self, suffix) -> Tensor:
        return discriminate(self, suffix)


def discriminate(D: DiscriminatorModel, suffix) -> Tensor:
    """Probability (scalar tensor) that ``suffix`` is a real one."""
    if len(suffix) == 0:
        raise ValueError("cannot discriminate an empty suffix")
    xs = [e if isinstance(e, Tensor) else Tensor(e) for e in suffix]
    h = D.lstm.run(xs)[-1][0]
    logit = ad.add(ad.matmul(D.params["disc_head.W"], h), D.params["disc_head.b"])[0]
    return ad.sigmoid(logit)


def processing_block(pi: np.ndarray, t: float) -> np.ndarray:
    """One-hot of the most likely activity (lowest index on ties) plus ``t``."""
    pi = np.asarray(pi)
    vec = np.zeros(pi.shape[0] + 1)
    vec[int(np.argmax(pi))] = 1.0
    vec[-1] = t
    return vec


def sample_gumbel(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.gumbel(0.0, 1.0, size=size)


def gumbel_softmax(pi: Tensor, tau: float, rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None) -> Tensor:
    """Relaxed categorical sample from ``pi`` at temperature ``tau``.

    Pass ``noise`` to fix the Gumbel draws (e.g. zeros); otherwise they are
    drawn from ``rng``.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    pi = pi if isinstance(pi, Tensor) else Tensor(pi)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax needs either rng or noise")
        noise = sample_gumbel(rng, pi.shape[0])
    logits = ad.add(ad.log(ad.clip_min(pi, PROB_FLOOR)), Tensor(noise))
    return ad.softmax(ad.scale(logits, 1.0 / tau))


def smooth_real_suffix(suffix: np.ndarray, vocab_size: int, confidence: float = REAL_SUFFIX_CONFIDENCE) -> np.ndarray:
    """Replace each one-hot activity block by ``confidence`` / spread remainder."""
    m = vocab_size
    if m < 2:
        raise ValueError("smoothing needs at least two activities")
    suffix = np.asarray(suffix, dtype=np.float64)
    out = suffix.copy()
    block = np.full((suffix.shape[0], m), (1.0 - confidence) / (m - 1))
    block[np.arange(suffix.shape[0]), np.argmax(suffix[:, :m], axis=1)] = confidence
    out[:, :m] = block
    return out
