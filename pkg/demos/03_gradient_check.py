#!/usr/bin/env python3

"""03_gradient_check.py

Compare tape gradients with central differences for the routing step and
for the whole capsule model's training loss.
"""

import numpy as np

from capslstm import (ArchSpec, GradTape, ParameterSet, Prng, Tensor, build_model, finite_difference_gradient,
                      model_forward)
from capslstm import numcore as nc
from capslstm.capsule import route_slice
from capslstm.numcore import relative_error
from capslstm.train import mse_loss

rng = np.random.default_rng(3)

# Dynamic routing of 4 capsules of size 6, three iterations
u = ParameterSet({"u": rng.normal(size=(4, 6))})


def routed(p):
    return nc.sum(nc.mul(route_slice(p["u"], 3), Tensor(np.arange(6.0))))


with GradTape() as tape:
    tape.watch(u)
    out = routed(u)
analytic = tape.gradient(out, u)
numeric = finite_difference_gradient(lambda p: routed(p).item(), u)
print("routing relative error:", relative_error(analytic, numeric))

# Loss of a desk-size capsule model
spec = ArchSpec.create("capsnet_lstm", d=6, H=2, hidden=5, filters=8, primary_dim=4, high_dim=6)
params = build_model(spec, Prng(0))
X, Y = Tensor(rng.uniform(size=(4, 6, 1))), Tensor(rng.uniform(size=(4, 2)))
with GradTape() as tape:
    tape.watch(params)
    loss = mse_loss(model_forward(spec, params, X), Y)
analytic = tape.gradient(loss, params)
numeric = finite_difference_gradient(
    lambda p: mse_loss(model_forward(spec, p, X), Y).item(), params)
print(f"model loss {loss.item():.5f}, {params.size} parameters, relative error:",
      relative_error(analytic, numeric))
