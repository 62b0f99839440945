"""
From CSV to balanced mini-batches
=================================

Vital-sign series arrive as long-format CSV: one row per patient and time
index, five channel columns and a label. Channels left blank everywhere
are simply absent.
"""

import io

import numpy as np

from vitalgan import data, toy

# %%
# Make a small stand-in dataset and write it out. Real data would come
# from a file with the same header.

ds = toy.sine_cycles(50, minority_fraction=0.2, channels=("temperature", "heart_rate"), rng=0)
buf = io.StringIO()
data.write_csv(ds, buf)
print(buf.getvalue().splitlines()[0])
print(buf.getvalue().splitlines()[1])

ds = data.parse_csv(io.StringIO(buf.getvalue()))
print(len(ds), "patients, channels", data.channel_tag(ds.channels))

# %%
# Range filtering drops a patient if any single reading falls outside
# the admissible interval for its channel. Bounds are inclusive.

for c in ds.channels:
    print(f"{c.name:18s} [{c.lower}, {c.upper}] {c.unit}")
X = ds.X
X[3, 10, 1] = 300.0  # an implausible heart rate
kept = data.filter_ranges(data.LabeledDataset.from_arrays(X, ds.y, ds.channels))
print("kept", len(kept), "of", len(ds))

# %%
# Split first, then fit the scaling on the training part only. Test
# values may then land slightly outside [-1, 1].

train, test = data.split_train_test(kept, test_fraction=0.3, rng=0)
train_n = data.normalize(train)
test_n = data.normalize(test, train_n.norm_stats)
print("class counts train", np.bincount(train.y), "test", np.bincount(test.y))
print("train range", train_n.X.min().round(3), train_n.X.max().round(3))
print("test range ", test_n.X.min().round(3), test_n.X.max().round(3))

# %%
# Mini-batches are drawn with replacement, half from each class, however
# skewed the data is.

batches = data.balanced_batches(train.y, 8, np.random.default_rng(0))
for _ in range(3):
    idx = next(batches)
    print(idx, train.y[idx])
