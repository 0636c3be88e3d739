"""
Greedy decoding and the garden path
===================================

A hand-written model where the most likely first activity leads nowhere
good.  Greedy decoding commits to it; a beam of two finds the better
suffix.
"""

import math

import numpy as np

from eventsuffix.eventlog import EOS_ID, SOS_ID
from eventsuffix.infer import BeamConfig, beam_search, greedy_decode

LABELS = ["[SOS]", "[EOS]", "A", "B", "C"]


class GardenPath:
    """Step 1: A 0.6, B 0.4.  After A nothing exceeds 0.3; after B, [EOS] has 0.9."""

    vocab_size = len(LABELS)

    def sos_vector(self):
        v = np.zeros(self.vocab_size + 1)
        v[SOS_ID] = 1.0
        return v

    def encode_prefix(self, prefix):
        return ()

    def decoder_step(self, x, history):
        a = int(np.argmax(x[:-1]))
        history = () if a == SOS_ID else history + (a,)
        p = np.zeros(self.vocab_size)
        if not history:
            p[[2, 3]] = 0.6, 0.4
        elif history[0] == 2:
            p[[EOS_ID, 2, 3, 4]] = 0.3, 0.2, 0.2, 0.3
        else:
            p[[EOS_ID, 4]] = 0.9, 0.1
        return p, 0.5, history


model = GardenPath()
g = greedy_decode(model, None, max_length=5)
print("greedy:", [LABELS[a] for a in g.activities], "p =", round(math.exp(g.score), 3))
for n in (1, 2, 3):
    for rank, p in enumerate(beam_search(model, None, BeamConfig(n, 5)), start=1):
        print(f"beam {n} #{rank}:", [LABELS[a] for a in p.activities], "p =", round(math.exp(p.score), 3),
              "remaining", p.remaining_time)
