"""
Supervised versus adversarial training
======================================

Train the same small generator twice on the two-variant log: once with the
supervised loss only (MLE) and once with the discriminator in the loop
(MLMME).  Takes a couple of minutes on a laptop CPU.
"""

import statistics
from pathlib import Path

from eventsuffix.eventlog import (
    SyntheticSpec,
    TimeScaler,
    Vocabulary,
    derive_durations,
    generate_pairs,
    generate_synthetic_log,
    temporal_split,
)
from eventsuffix.evaluation import evaluate
from eventsuffix.nn import GeneratorModel
from eventsuffix.train import desk_profile, fit

spec = SyntheticSpec.load(Path(__file__).with_name("two_variants.yaml"))
log = derive_durations(generate_synthetic_log(spec, 100, seed=1))
train_log, val_log, test_log = temporal_split(log)
vocab, scaler = Vocabulary.from_log(train_log), TimeScaler.fit(train_log)
train, val, test = (generate_pairs(part, vocab, scaler) for part in (train_log, val_log, test_log))
max_length = 2 * max(len(p.suffix) for p in train)

for mode in ("mle", "mlmme"):
    config = desk_profile(mode=mode, iterations=200)
    G = GeneratorModel(vocab.size, config.hidden_size, config.num_layers, seed=config.seed)
    best, report = fit(G, train, val, config)
    result = evaluate(best, test, beam=1, scaler=scaler, max_length=max_length)
    last = report.records[-1]
    print(f"{mode}: {len(report.records)} iterations (best {report.best_iteration}), "
          f"{statistics.fmean(report.seconds):.2f}s per iteration")
    print(f"  final losses: supervised {last.supervised_loss:.4g}, D {last.d_loss}, G adversarial {last.g_adv_loss}")
    print(f"  test mean SDL {result.mean_sdl:.3f}, MAE {result.mae:.3f} days")
