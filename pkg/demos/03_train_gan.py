"""
Training the conditional generator
==================================

A small conditional WGAN-GP learns two-class toy series: the majority
class traces one sine cycle over 20 steps, the minority class two. After
training, the generator is asked for equal numbers of each class.

The budget here is deliberately small so the script finishes in about a
minute. ``tests/test_acceptance.py`` runs the full-size version.
"""

import io

import numpy as np

from vitalgan import checkpoint, data, gan, toy

# %%
# Data and model size. ``ArchitectureConfig`` defaults to c=8, m=32, h=64;
# a narrower network is enough for this toy problem.

real = toy.sine_cycles(600, minority_fraction=0.2, rng=0)
train = data.normalize(real)
arch = gan.ArchitectureConfig(s=2, c=4, m=8, h=16)
print(gan.parameter_counts(arch))

# %%
# Five critic updates per generator update, penalty weight 10.

cfg = gan.TrainConfig(generator_steps=300, batch_size=32, learning_rate=5e-4, seed=0)
report = lambda r: r.step % 50 == 0 and print(r.to_line())  # noqa: E731
bundle, records = gan.train(train, arch, cfg, callbacks=[report])

# %%
# Sample a balanced proxy dataset in original units and compare the class
# averages with the real ones.

proxy = gan.synthesize_balanced(bundle, 600, rng=1)
print("proxy class counts", np.bincount(proxy.y))
for label in (0, 1):
    r = real.X[real.y == label, :, 0].mean(axis=0)
    p = proxy.X[proxy.y == label, :, 0].mean(axis=0)
    print(f"class {label}: mean |real - proxy| per step {np.abs(r - p).mean():.3f}")

# %%
# The checkpoint is a small self-describing binary file.

raw = checkpoint.dumps(bundle)
print(len(raw), "bytes; header starts", raw[:4])
again = checkpoint.loads(raw)
print(sorted(again.group("gen", strip=True))[:4], again.channels)
log = io.StringIO()
gan.write_training_log(records[:2], log)
print(log.getvalue())
