#!/usr/bin/env python3

"""01_architectures.py

Build the four forecasters at their full widths, print their layer tables,
and push one window of prices through the capsule model to look at the
routing couplings.
"""

import numpy as np

from capslstm import ArchSpec, Prng, Tensor, build_model, model_forward
from capslstm.capsule import RoutingState, form_primary_capsules, route, squash, transform_capsules
from capslstm.cli import format_layer_table
from capslstm.layers import conv1d_forward

for kind in ["capsnet_lstm", "cnn_lstm", "lstm", "rnn"]:
    spec = ArchSpec.create(kind)
    print(f"== {kind}")
    print(format_layer_table(spec))

# One window of 50 normalized prices gives 5 forecasts
spec = ArchSpec.create("capsnet_lstm")
params = build_model(spec, Prng(0))
window = 0.5 + 0.3 * np.sin(np.arange(50) / 4.0)
print("forecast:", model_forward(spec, params, window).numpy())

# Re-run the capsule stage by hand so the routing state can be kept.
# Untrained, the squashed capsules are short, so agreement barely moves
# the couplings away from uniform.
x = Tensor(window.reshape(1, 50, 1))
fmap = conv1d_forward(spec.conv, params["conv.kernel"], params["conv.bias"], x)
v = squash(form_primary_capsules(fmap, spec.capsule.primary_dim))
u = transform_capsules(v, params["caps.W"])
state = RoutingState()
route(u, spec.capsule.routing_iters, state)
for k, c in enumerate(state.couplings):
    spread = c[0].max(axis=-1) - c[0].min(axis=-1)
    print(f"iteration {k + 1}: coupling spread over capsules, mean {spread.mean():.2e}")
