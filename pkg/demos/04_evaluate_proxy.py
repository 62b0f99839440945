"""
Train on synthetic, test on real
================================

An LSTM classifier is tuned by random search on real data. The tuned
configuration is then trained once on real and once on proxy data, and
both are scored on the same held-out real series. Only per-class
accuracies and their mean are reported, never the counts behind them.
"""

import numpy as np

from vitalgan import data, evaluation, gan, toy

# %%
# A quick generator, as in the previous demo.

real = toy.sine_cycles(600, minority_fraction=0.2, rng=0)
real_train, real_test = data.split_train_test(real, 0.3, 0)
arch = gan.ArchitectureConfig(s=2, c=4, m=8, h=16)
bundle, _ = gan.train(
    data.normalize(real_train), arch, gan.TrainConfig(generator_steps=300, batch_size=32, learning_rate=5e-4)
)
proxy = gan.synthesize_balanced(bundle, len(real_train), rng=1)

# %%
# A reduced search space keeps this short; ``HPOSpace()`` holds the full
# defaults (20 trials).

space = evaluation.HPOSpace(
    hidden_size=(8, 16), lstm_layers=(1,), dropout_rate=(0.0,), epochs=(3,), batch_size=(32,), trials=4
)
result = evaluation.evaluate_tstr(real_train, real_test, proxy, space)
for t in result.trials:
    print(t.index, t.config.hidden_size, f"{t.config.learning_rate:.1e}", t.score)
print(result.real.to_json())
print(result.proxy.to_json())

# %%
# Why no counts: two quite different confusion matrices can give the same
# report, so the report alone does not reveal how many minority patients
# the private data holds.

a = evaluation.privacy_gate(evaluation.ConfusionMatrix(3, 1, 1, 3), "real", "T,RR")
b = evaluation.privacy_gate(evaluation.ConfusionMatrix(300, 100, 10, 30), "real", "T,RR")
print(a == b, a.to_json())
print(np.round([a.acc_class0, a.acc_class1, a.balanced_accuracy], 3))
