"""
Reverse-mode gradients on a tape
================================

Record a small computation, pull gradients back, and compare them with
central differences.
"""

import numpy as np

from eventsuffix import autodiff as ad
from eventsuffix.autodiff import Tape, Tensor, backward, finite_difference_check

# cross-entropy of a softmax: the gradient is softmax(x) - onehot
x = Tensor([0.2, -0.3, 1.1], requires_grad=True)
with Tape() as tape:
    loss = ad.neg(ad.log(ad.softmax(x)[2]))
print("loss", loss.item())
print("gradient", backward(loss, tape, {"x": x})["x"])

# any function of named parameters can be checked against finite differences
rng = np.random.default_rng(0)
inp = Tensor(rng.normal(size=3))


def two_layer(p):
    h = ad.tanh(ad.add(p["W1"] @ inp, p["b1"]))
    return ad.sum(ad.tanh(ad.add(p["W2"] @ h, p["b2"])))


params = {"W1": rng.normal(size=(4, 3)), "b1": rng.normal(size=4), "W2": rng.normal(size=(2, 4)), "b2": rng.normal(size=2)}
print("max relative error", finite_difference_check(two_layer, params, step=1e-5))

# shape mistakes fail loudly
try:
    ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
except ad.ShapeError as exc:
    print("ShapeError:", exc)
