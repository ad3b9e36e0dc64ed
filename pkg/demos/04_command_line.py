#!/usr/bin/env python3

"""04_command_line.py

Drive the command-line workflow end to end in a scratch directory: write a
price CSV and a run config, train, inspect, evaluate and predict. The same
steps work from a shell as ``capslstm train --config run.ini`` and so on.
"""

import os
import tempfile

from capslstm import Prng, synth_series
from capslstm.cli import main
from capslstm.data import write_csv

work = tempfile.mkdtemp()
write_csv(synth_series("random_walk", 400, Prng(21)), os.path.join(work, "prices.csv"))

with open(os.path.join(work, "run.ini"), "w") as fh:
    fh.write("""\
[run]
seed = 21

[data]
source = csv
path = prices.csv
window = 20
horizon = 5

[model]
kind = capsnet_lstm
filters = 16
primary_dim = 4
high_dim = 8
hidden = 16

[train]
epochs = 15
lr = 0.003

[output]
checkpoint = model.c1dl
log = train_log.csv
""")

model = os.path.join(work, "model.c1dl")
prices = os.path.join(work, "prices.csv")
print("train ->", main(["train", "--config", os.path.join(work, "run.ini")]))
print("inspect ->", main(["inspect", "--model", model]))
print("evaluate ->", main(["evaluate", "--model", model, "--data", prices]))
print("predict ->", main(["predict", "--model", model, "--data", prices]))
print("evaluate with the wrong horizon ->", main(["evaluate", "--model", model, "--data", prices,
                                                   "--horizon", "3"]))
