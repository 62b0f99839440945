"""
Gradients, and gradients of gradients
=====================================

The tensor module records every operation so that ``grad`` can walk the
graph backwards. Passing ``higher_order=True`` keeps the backward pass on
the graph too, which is what a gradient penalty needs.
"""

import numpy as np

from vitalgan import gradcheck
from vitalgan import tensor as T
from vitalgan.tensor import Tensor

# %%
# A scalar function and its first two derivatives.
# f(x) = x^3, f'(2) = 12, f''(2) = 12

x = Tensor(2.0, requires_grad=True)
(dx,) = T.grad(x * x * x, [x], higher_order=True)
(ddx,) = T.grad(dx, [x])
print("f'(2) =", dx.item(), " f''(2) =", ddx.item())

# %%
# The sequence layers. A width-3 convolution pads by repeating the edge
# values, so a constant series stays constant under an averaging kernel.

series = Tensor(np.full((1, 6, 1), 4.0))
kernel = Tensor(np.full((1, 1, 3), 1 / 3))
print(T.conv1d(series, kernel, Tensor([0.0])).data.ravel())
print(T.avg_pool1d(Tensor(np.arange(8.0).reshape(1, 8, 1))).data.ravel())
print(T.upsample_linear1d(Tensor(np.array([0.0, 2.0]).reshape(1, 2, 1))).data.ravel())

# %%
# Every backward rule is compared against central differences. Here is the
# check for a small composite function.

rng = np.random.default_rng(0)


def f(a, b):
    return T.tanh(T.matmul(a, b))


err = gradcheck.check_gradient(f, [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
print(f"max relative error {err:.1e}")

# %%
# The full suite is what ``vitalgan check-grad`` runs; three instances per
# operation keep the demo quick.

print(gradcheck.format_results(gradcheck.run_suite(instances=3)))
