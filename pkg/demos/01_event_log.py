"""
Event logs, vocabularies and prefix/suffix pairs
================================================

Generate a small two-variant log, split it in time, and look at how a
trace becomes training pairs.
"""

from pathlib import Path

from eventsuffix.eventlog import (
    SyntheticSpec,
    TimeScaler,
    Vocabulary,
    derive_durations,
    generate_pairs,
    generate_synthetic_log,
    log_to_csv_text,
    temporal_split,
)

spec = SyntheticSpec.load(Path(__file__).with_name("two_variants.yaml"))
log = derive_durations(generate_synthetic_log(spec, 20, seed=0))
print(log_to_csv_text(log).splitlines()[:7])

# durations are the gap in days since the previous event of the same case
trace = log.traces[0]
print(trace.case_id, trace.activities, trace.durations, "cycle time", trace.cycle_time)

# chronological 70/10/20 split; the vocabulary comes from training only
train, val, test = temporal_split(log)
vocab = Vocabulary.from_log(train)
scaler = TimeScaler.fit(train)
print(len(train), len(val), len(test), vocab.labels, "max duration", scaler.max_duration)

# a 3-event trace gives one pair: prefix of 2 events, suffix of 1 event + [EOS]
pair = generate_pairs(train, vocab, scaler)[0]
print(pair.pair_id)
print("prefix rows (one-hot activity | normalized duration):")
print(pair.prefix)
print("suffix:", [vocab.label(a) for a in pair.suffix_activities], "remaining", pair.remaining_days, "days")
