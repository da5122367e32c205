"""
Model files and the command line
================================

Fit once, save the model, reload it elsewhere and get identical scores.
The same pipeline is available as ``nnkood synth | fit | score | eval``.
"""

import json
import os
import tempfile

import numpy as np

from nnkood import TrainConfig, fit, generate_synthetic, load_model, save_model, score
from nnkood.cli import main

work = tempfile.mkdtemp()
ds = generate_synthetic(3, 1, 100, 8, 6.0, 1.0, seed=2)

model = fit("ec_nnk", ds.train_id, config=TrainConfig(m_init=32, lam=0.05))
path = os.path.join(work, "model.bin")
save_model(model, path)
again = load_model(path)
print("file size", os.path.getsize(path), "bytes;",
      "identical scores:", np.array_equal(score(model, ds.test), score(again, ds.test)))

# command-line round trip; each call returns the process exit code
d = os.path.join(work, "data")
main(["synth", "--seed", "2", "--logits", "--out", d])
main(["fit", "--method", "nnk", "--train", f"{d}/train.npy", "--m-init", "16", "--out", f"{work}/nnk.bin"])
main(["score", "--model", f"{work}/nnk.bin", "--queries", f"{d}/test.npy", "--repeats", "3",
      "--out", f"{work}/scores.csv"])
main(["eval", "--scores", f"{work}/scores.csv", "--is-ood", f"{d}/test_is_ood.csv",
      "--out", f"{work}/metrics.json"])
print(json.load(open(f"{work}/metrics.json")))

# a label-aware method without labels is a configuration error (exit code 3)
print("exit code:", main(["fit", "--method", "c_nnk", "--train", f"{d}/train.npy", "--out", f"{work}/x.bin"]))

# timing comparison of two detectors on the same queries
main(["bench", "--methods", "nnk", "knn", "--train", f"{d}/train.npy", "--test", f"{d}/test.npy",
      "--is-ood", f"{d}/test_is_ood.csv", "--m-init", "16", "--out-dir", f"{work}/bench"])
