"""Supervised and adversarial (MLMME) training of the generator."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np
import yaml

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .eventlog import PrefixSuffixPair
from .nn import (
    PROB_FLOOR,
    DiscriminatorModel,
    GeneratorModel,
    discriminate,
    gumbel_softmax,
    processing_block,
    smooth_real_suffix,
)

log = logging.getLogger(__name__)

ADV_PROB_FLOOR = 1e-7


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, report: LossReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    mode: str = "mle"
    iterations: int = 500
    patience: int = 30
    learning_rate: float = 5e-5
    clip_norm: float = 1.0
    teacher_forcing_ratio: float = 0.1
    w_a: float = 1.0
    w_t: float = 1.0
    tau_start: float = 0.9
    tau_min: float = 0.05
    rho: float = 0.9
    eps: float = 1e-8
    hidden_size: int = 200
    num_layers: int = 5
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in ("mle", "mlmme"):
            raise ValueError(f"mode must be 'mle' or 'mlmme', got {self.mode!r}")
        if not 0.0 <= self.teacher_forcing_ratio <= 1.0:
            raise ValueError("teacher_forcing_ratio must lie in [0, 1]")
        for name in ("iterations", "patience", "learning_rate", "clip_norm", "w_a", "w_t",
                     "tau_start", "tau_min", "hidden_size", "num_layers"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tau_min > self.tau_start:
            raise ValueError("tau_min must not exceed tau_start")

    @classmethod
    def from_dict(cls, values: Mapping) -> TrainConfig:
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> TrainConfig:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a flat key/value mapping")
        doc.update(overrides)
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)


def desk_profile(**overrides) -> TrainConfig:
    """Small CPU-friendly setup: one 32-unit layer, 50 iterations."""
    values = dict(hidden_size=32, num_layers=1, iterations=50)
    values.update(overrides)
    return TrainConfig(**values)


# -- losses ------------------------------------------------------------------


def _floored_log(p: Tensor, floor: float) -> Tensor:
    return ad.log(ad.clip_min(p, floor))


def supervised_loss(G: GeneratorModel, pair: PrefixSuffixPair, teacher=None, w_a: float = 1.0, w_t: float = 1.0):
    """Weighted activity cross-entropy plus squared remaining-time error.

    The decoder runs for exactly ``len(pair.suffix)`` steps.  ``teacher`` is
    a boolean per step (entry 0 is ignored) selecting ground-truth inputs.
    Returns ``(total, activity, time)`` scalar tensors.
    """
    steps = len(pair.suffix)
    pis, ts = G.rollout(pair.prefix, steps, targets=pair.suffix, teacher=teacher)
    nll = [ad.neg(_floored_log(pi[a], PROB_FLOOR)) for pi, a in zip(pis, pair.suffix_activities)]
    activity = ad.sum(ad.concat(nll))
    predicted_total = ad.sum(ad.concat(ts))
    true_total = Tensor(np.sum(pair.suffix[:, -1]))
    time_loss = ad.squared_error(predicted_total, true_total)
    total = ad.add(ad.scale(activity, w_a), ad.scale(time_loss, w_t))
    return total, activity, time_loss


def fake_suffix(G: GeneratorModel, prefix, steps: int, tau: float, noise: np.ndarray) -> list[Tensor]:
    """Generator rollout with Gumbel-relaxed activity vectors.

    The decoder is fed the processed (hard) prediction; the relaxed vectors
    ``(alpha, t)`` form the suffix shown to the discriminator.
    """
    state = G.encode_prefix(prefix)
    x = Tensor(G.sos_vector())
    out = []
    for j in range(steps):
        pi, t, state = G.decoder_step(x, state)
        alpha = gumbel_softmax(pi, tau, noise=noise[j])
        out.append(ad.concat([alpha, t]))
        x = Tensor(processing_block(pi.data, float(t.data)))
    return out


def discriminator_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``-log D(real) - log(1 - D(fake))`` with probabilities floored."""
    return ad.sub(
        ad.neg(_floored_log(d_real, ADV_PROB_FLOOR)),
        _floored_log(ad.shift(ad.neg(d_fake), 1.0), ADV_PROB_FLOOR),
    )


def generator_adversarial_loss(d_fake: Tensor) -> Tensor:
    """``-[log D(fake) - log(1 - D(fake))]`` with probabilities floored."""
    return ad.neg(
        ad.sub(
            _floored_log(d_fake, ADV_PROB_FLOOR),
            _floored_log(ad.shift(ad.neg(d_fake), 1.0), ADV_PROB_FLOOR),
        )
    )


# -- optimizer ---------------------------------------------------------------


def clip_by_layer(grads: Mapping[str, np.ndarray], layers: Mapping[str, Sequence[str]], clip_norm: float):
    """Rescale each layer's gradient so its joint L2 norm is at most ``clip_norm``.

    Returns the clipped gradients and the per-layer norms after clipping.
    """
    out, norms = dict(grads), {}
    for layer, names in layers.items():
        norm = math.sqrt(sum(float(np.sum(grads[n] * grads[n])) for n in names))
        if norm > clip_norm:
            factor = clip_norm / norm
            for n in names:
                out[n] = grads[n] * factor
            norm = math.sqrt(sum(float(np.sum(out[n] * out[n])) for n in names))
        norms[layer] = norm
    return out, norms


@dataclass
class RmsPropState:
    rho: float = 0.9
    eps: float = 1e-8
    v: dict = field(default_factory=dict)


def rmsprop_update(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: RmsPropState,
                   lr: float, clip_norm: float, layers: Mapping[str, Sequence[str]] | None = None) -> dict:
    """One clipped RMSprop step.  ``params`` arrays are updated in place.

    Without ``layers`` every parameter is its own layer.  Returns the
    post-clip per-layer gradient norms.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ad.NonFiniteError(f"non-finite gradient for {name}")
    layers = layers if layers is not None else {n: [n] for n in grads}
    grads, norms = clip_by_layer(grads, layers, clip_norm)
    for name, g in grads.items():
        v = state.v.get(name)
        v = (1.0 - state.rho) * g * g if v is None else state.rho * v + (1.0 - state.rho) * g * g
        state.v[name] = v
        params[name] -= lr * g / np.sqrt(v + state.eps)
    return norms


class RmsProp:
    """RMSprop bound to a model's parameter tensors."""

    def __init__(self, model, lr: float, clip_norm: float, rho: float = 0.9, eps: float = 1e-8):
        self.model = model
        self.lr = lr
        self.clip_norm = clip_norm
        self.state = RmsPropState(rho, eps)
        self.updates = 0
        self.last_norms: dict[str, float] = {}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        arrays = {k: t.data for k, t in self.model.params.items()}
        self.last_norms = rmsprop_update(arrays, grads, self.state, self.lr, self.clip_norm, self.model.layers())
        self.updates += 1


# -- schedule ----------------------------------------------------------------


def anneal_temperature(iteration: int, config: TrainConfig) -> float:
    """Exponential decay from ``tau_start`` reaching ``tau_min`` at the last iteration."""
    rate = (config.tau_min / config.tau_start) ** (1.0 / config.iterations)
    return max(config.tau_start * rate ** iteration, config.tau_min)


# -- training steps ----------------------------------------------------------


def supervised_step(G: GeneratorModel, pair, opt: RmsProp, teacher, config: TrainConfig):
    with Tape() as tape:
        total, act, tim = supervised_loss(G, pair, teacher, config.w_a, config.w_t)
    opt.step(ad.backward(total, tape, G.params))
    return total.item(), act.item(), tim.item()


def adversarial_step(G: GeneratorModel, D: DiscriminatorModel, pair: PrefixSuffixPair, tau: float,
                     opt_g: RmsProp, opt_d: RmsProp, rng: np.random.Generator):
    """Discriminator update with G frozen, then generator update with D frozen.

    Returns ``(d_loss, g_loss)`` measured before the respective updates.
    """
    steps = len(pair.suffix)
    noise = rng.gumbel(0.0, 1.0, size=(steps, G.vocab_size))
    real = smooth_real_suffix(pair.suffix, G.vocab_size)

    # outside any tape: G is not tracked
    fake = [Tensor(e.data) for e in fake_suffix(G, pair.prefix, steps, tau, noise)]
    with Tape() as tape:
        d_loss = discriminator_loss(discriminate(D, real), discriminate(D, fake))
    opt_d.step(ad.backward(d_loss, tape, D.params))

    with Tape() as tape:
        fake = fake_suffix(G, pair.prefix, steps, tau, noise)
        g_loss = generator_adversarial_loss(discriminate(D, fake))
    opt_g.step(ad.backward(g_loss, tape, G.params))
    return d_loss.item(), g_loss.item()


def validation_loss(G: GeneratorModel, pairs: Sequence[PrefixSuffixPair], config: TrainConfig) -> float:
    """Mean open-loop supervised loss."""
    total = 0.0
    for pair in pairs:
        total += supervised_loss(G, pair, None, config.w_a, config.w_t)[0].item()
    return total / len(pairs)


# -- reporting ---------------------------------------------------------------

REPORT_COLUMNS = (
    "iteration", "supervised_loss", "activity_loss", "time_loss", "d_loss", "g_adv_loss",
    "validation_loss", "tau", "d_updates", "g_updates",
)


@dataclass
class IterationRecord:
    iteration: int
    supervised_loss: float
    activity_loss: float
    time_loss: float
    d_loss: float | None
    g_adv_loss: float | None
    validation_loss: float
    tau: float | None
    d_updates: int
    g_updates: int


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


@dataclass
class LossReport:
    records: list[IterationRecord] = field(default_factory=list)
    best_iteration: int = 0
    best_validation: float = math.inf
    stopped_early: bool = False
    # wall-clock per iteration; kept out of the CSV so reports stay reproducible
    seconds: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.records:
            writer.writerow([_cell(getattr(r, c)) for c in REPORT_COLUMNS])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "iterations_run": len(self.records),
            "best_iteration": self.best_iteration,
            "best_validation_loss": self.best_validation,
            "stopped_early": self.stopped_early,
        }


# -- main loop ---------------------------------------------------------------


def fit(G: GeneratorModel, train_pairs: Sequence[PrefixSuffixPair], val_pairs: Sequence[PrefixSuffixPair],
        config: TrainConfig, D: DiscriminatorModel | None = None, progress=None):
    """Train ``G`` and return ``(best_generator, report)``.

    One iteration is a pass over ``train_pairs``.  In ``mlmme`` mode each
    pair gets a discriminator update, a generator adversarial update and a
    generator supervised update, in that order; ``mle`` mode only does the
    last.  Training stops after ``config.iterations`` or once validation
    loss has not improved for ``config.patience`` iterations.  ``G`` is
    updated in place; the returned generator holds the best-validation
    parameters.
    """
    if not train_pairs or not val_pairs:
        raise ValueError("fit needs non-empty training and validation pairs")
    streams = np.random.SeedSequence(config.seed).spawn(4)
    shuffle_rng, teacher_rng, gumbel_rng = (np.random.default_rng(s) for s in streams[:3])

    adversarial = config.mode == "mlmme"
    opt_g = RmsProp(G, config.learning_rate, config.clip_norm, config.rho, config.eps)
    opt_d = None
    if adversarial:
        if D is None:
            D = DiscriminatorModel(G.vocab_size, G.hidden_size, G.num_layers,
                                   seed=int(streams[3].generate_state(1)[0]))
        opt_d = RmsProp(D, config.learning_rate, config.clip_norm, config.rho, config.eps)

    report = LossReport()
    best = G.clone()
    wait = 0
    order = np.arange(len(train_pairs))
    for it in range(config.iterations):
        started = time.perf_counter()
        tau = anneal_temperature(it, config) if adversarial else None
        if config.shuffle:
            shuffle_rng.shuffle(order)
        sums = np.zeros(5)
        d_before, g_before = (opt_d.updates if opt_d else 0), opt_g.updates
        try:
            for idx in order:
                pair = train_pairs[idx]
                if adversarial:
                    d_loss, g_loss = adversarial_step(G, D, pair, tau, opt_g, opt_d, gumbel_rng)
                    sums[3] += d_loss
                    sums[4] += g_loss
                teacher = teacher_rng.random(len(pair.suffix)) < config.teacher_forcing_ratio
                sums[:3] += supervised_step(G, pair, opt_g, teacher, config)
            val = validation_loss(G, val_pairs, config)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(f"iteration {it + 1}: {exc}", report) from exc
        if not math.isfinite(val):
            raise TrainingDiverged(f"iteration {it + 1}: validation loss is not finite", report)

        n = len(train_pairs)
        report.records.append(IterationRecord(
            iteration=it + 1,
            supervised_loss=sums[0] / n,
            activity_loss=sums[1] / n,
            time_loss=sums[2] / n,
            d_loss=sums[3] / n if adversarial else None,
            g_adv_loss=sums[4] / n if adversarial else None,
            validation_loss=val,
            tau=tau,
            d_updates=(opt_d.updates - d_before) if opt_d else 0,
            g_updates=opt_g.updates - g_before,
        ))
        report.seconds.append(time.perf_counter() - started)
        if progress is not None:
            progress(report.records[-1])

        if val < report.best_validation:
            report.best_validation = val
            report.best_iteration = it + 1
            best = G.clone()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                report.stopped_early = True
                log.info("early stop at iteration %d (best %d)", it + 1, report.best_iteration)
                break
    return best, report
