"""Finite-difference verification of every differentiable operation.

Each case builds random inputs, reduces the operation's output to a scalar
with fixed random weights and compares the reverse-mode gradient with
central differences. The error of one instance is
``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` over each input.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import gan, nn
from . import tensor as T
from .evaluation import ClassifierConfig, classifier_forward, classifier_param_specs, cross_entropy
from .tensor import Tensor

STEP = 1e-5
TOLERANCE = 1e-4
SECOND_ORDER_TOLERANCE = 1e-3


@dataclass(frozen=True)
class GradCase:
    """``build(rng)`` returns ``(fn, arrays)``; ``fn`` maps tensors to any tensor."""

    name: str
    build: Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[np.ndarray]]]
    tolerance: float = TOLERANCE


@dataclass(frozen=True)
class CaseResult:
    name: str
    max_rel_error: float
    instances: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def _scalarize(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], seed: int) -> Callable[..., Tensor]:
    with T.no_grad():
        shape = fn(*[Tensor(a) for a in arrays]).shape
    weights = Tensor(np.random.default_rng(seed).standard_normal(shape))

    def scalar(*tensors):
        return T.tsum(T.mul(fn(*tensors), weights))

    return scalar


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max-norm error relative to the larger gradient; ``floor`` bounds the scale
    from below so exactly-zero gradients are judged against finite-difference noise."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], step: float = STEP) -> list[np.ndarray]:
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    with T.no_grad():
        for k, a in enumerate(arrays):
            g = np.zeros_like(a)
            flat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = fn(*[Tensor(x) for x in arrays]).item()
                flat[i] = orig - step
                lo = fn(*[Tensor(x) for x in arrays]).item()
                flat[i] = orig
                g.reshape(-1)[i] = (hi - lo) / (2 * step)
            out.append(g)
    return out


def check_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], step: float = STEP, seed: int = 0) -> float:
    """Largest relative error between reverse-mode and central-difference gradients."""
    scalar = _scalarize(fn, arrays, seed)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = T.grad(scalar(*tensors), tensors)
    numeric = numeric_gradient(scalar, arrays, step)
    return max(relative_error(a.data, n) for a, n in zip(analytic, numeric))


def run_case(case: GradCase, instances: int = 20, seed: int = 0) -> CaseResult:
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([seed, i, sum(map(ord, case.name))])
        fn, arrays = case.build(rng)
        worst = max(worst, check_gradient(fn, arrays, seed=i))
    return CaseResult(case.name, worst, instances, case.tolerance)


# ---------------------------------------------------------------------------
# input generators kept away from kinks and singularities


def _normal(rng, *shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, *shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.05, 2.0, size=shape)


def _positive(rng, *shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _small_arch():
    return gan.ArchitectureConfig(s=2, c=2, m=3, h=2)


def _jittered(ps, names, rng):
    # zero biases put exact zeros on LeakyReLU kinks where dropout cleared a window
    return [ps[n].data + 0.1 * rng.standard_normal(ps[n].shape) for n in names]


def _lstm_case(rng):
    specs = nn.lstm_param_specs("lstm", 2, 2)
    ps = nn.init_parameters(specs, int(rng.integers(2**31)))
    names = [s.name for s in specs]
    x = _normal(rng, 1, 20, 2)

    def fn(xt, *weights):
        return nn.lstm_forward(nn.ParameterSet(dict(zip(names, weights))), xt, 2)

    return fn, [x] + [ps[n].data * 3 for n in names]


def _stacked_lstm_case(rng):
    specs = nn.lstm_param_specs("lstm", 1, 2, layers=2)
    ps = nn.init_parameters(specs, int(rng.integers(2**31)))
    names = [s.name for s in specs]
    x = _normal(rng, 2, 5, 1)

    def fn(xt, *weights):
        return nn.lstm_forward(nn.ParameterSet(dict(zip(names, weights))), xt, 2, layers=2)

    return fn, [x] + [ps[n].data * 3 for n in names]


def _classifier_case(rng):
    cfg = ClassifierConfig(hidden_size=2, batch_size=2)
    specs = classifier_param_specs(1, cfg)
    ps = nn.init_parameters(specs, int(rng.integers(2**31)))
    names = [s.name for s in specs]
    x = _normal(rng, 2, 6, 1)
    labels = np.array([0, 1])

    def fn(*weights):
        params = nn.ParameterSet(dict(zip(names, weights)))
        return cross_entropy(classifier_forward(params, x, cfg), labels)

    return fn, [ps[n].data * 3 for n in names]


def _linear_case(rng):
    x, w, b = _normal(rng, 4, 3), _normal(rng, 2, 3), _normal(rng, 2)

    def fn(xt, wt, bt):
        return nn.linear_forward(nn.ParameterSet({"fc.weight": wt, "fc.bias": bt}), xt, "fc")

    return fn, [x, w, b]


def _embedding_case(rng):
    labels = rng.integers(0, 2, size=5)

    def fn(table):
        return nn.embedding_lookup(nn.ParameterSet({"emb.weight": table}), labels, "emb")

    return fn, [_normal(rng, 2, 3)]


def _generator_case(rng):
    arch = _small_arch()
    specs = gan.generator_param_specs(arch)
    ps = nn.init_parameters(specs, int(rng.integers(2**31)))
    names = [s.name for s in specs]
    labels = np.array([0, 1])
    dropout_seed = int(rng.integers(2**31))

    def fn(z, *weights):
        params = nn.ParameterSet(dict(zip(names, weights)))
        drng = np.random.default_rng(dropout_seed)
        return gan.generator_forward(params, z, labels, arch, training=True, rng=drng, dropout_rate=0.5)

    return fn, [_normal(rng, 2, arch.m)] + _jittered(ps, names, rng)


def _critic_case(rng):
    arch = _small_arch()
    specs = gan.critic_param_specs(arch)
    ps = nn.init_parameters(specs, int(rng.integers(2**31)))
    names = [s.name for s in specs]
    labels = np.array([1, 0])

    def fn(x, *weights):
        return gan.critic_forward(nn.ParameterSet(dict(zip(names, weights))), x, labels, arch)

    return fn, [_normal(rng, 2, 20, arch.s)] + _jittered(ps, names, rng)


def _losses_case(rng):
    def fn(real, fake, penalty):
        return T.add(gan.critic_loss(real, fake, T.tsum(penalty), 10.0), T.mul(gan.generator_loss(fake), 0.5))

    return fn, [_normal(rng, 6), _normal(rng, 6), _positive(rng, 1)]


def _dropout_case(rng):
    seed = int(rng.integers(2**31))
    return (lambda x: T.dropout(x, 0.5, True, np.random.default_rng(seed))), [_normal(rng, 4, 5)]


def _slice_case(rng):
    return (lambda x: x[:, 1:4]), [_normal(rng, 3, 6)]


def _gather_case(rng):
    index = rng.integers(0, 4, size=7)
    return (lambda x: x[index]), [_normal(rng, 4, 2)]


DEFAULT_CASES: list[GradCase] = [
    GradCase("add", lambda r: (T.add, [_normal(r, 3, 4), _normal(r, 4)])),
    GradCase("sub", lambda r: (T.sub, [_normal(r, 2, 3, 4), _normal(r, 3, 1)])),
    GradCase("mul", lambda r: (T.mul, [_normal(r, 3, 4), _normal(r, 3, 4)])),
    GradCase("div", lambda r: (T.div, [_normal(r, 3, 4), _away_from_zero(r, 3, 4)])),
    GradCase("neg", lambda r: (T.neg, [_normal(r, 5)])),
    GradCase("matmul", lambda r: (T.matmul, [_normal(r, 3, 4), _normal(r, 4, 2)])),
    GradCase("matmul_batched", lambda r: (T.matmul, [_normal(r, 2, 3, 4), _normal(r, 2, 4, 2)])),
    GradCase("matmul_stack_by_matrix", lambda r: (T.matmul, [_normal(r, 2, 3, 4), _normal(r, 4, 2)])),
    GradCase("matmul_matrix_by_stack", lambda r: (T.matmul, [_normal(r, 4, 3), _normal(r, 2, 3, 2)])),
    GradCase("concat", lambda r: ((lambda a, b: T.concat([a, b], axis=1)), [_normal(r, 2, 3), _normal(r, 2, 2)])),
    GradCase("slice", _slice_case),
    GradCase("gather", _gather_case),
    GradCase("reshape", lambda r: ((lambda x: T.reshape(x, (4, 3))), [_normal(r, 2, 6)])),
    GradCase("transpose", lambda r: ((lambda x: T.transpose(x, (2, 0, 1))), [_normal(r, 2, 3, 4)])),
    GradCase("broadcast_to", lambda r: ((lambda x: T.broadcast_to(x, (3, 2, 4))), [_normal(r, 2, 1)])),
    GradCase("sum", lambda r: ((lambda x: T.tsum(x, axis=1)), [_normal(r, 3, 4)])),
    GradCase("mean", lambda r: ((lambda x: T.mean(x, axis=(0, 2))), [_normal(r, 2, 3, 4)])),
    GradCase("sqrt", lambda r: (T.sqrt, [_positive(r, 3, 4)])),
    GradCase("exp", lambda r: (T.exp, [_normal(r, 3, 4)])),
    GradCase("log", lambda r: (T.log, [_positive(r, 3, 4)])),
    GradCase("tanh", lambda r: (T.tanh, [_normal(r, 3, 4)])),
    GradCase("sigmoid", lambda r: (T.sigmoid, [_normal(r, 3, 4)])),
    GradCase("logsumexp", lambda r: ((lambda x: T.logsumexp(x, axis=1)), [_normal(r, 3, 4)])),
    GradCase("leaky_relu", lambda r: ((lambda x: T.leaky_relu(x, 0.2)), [_away_from_zero(r, 4, 5)])),
    GradCase("dropout", _dropout_case),
    GradCase("replicate_pad1d", lambda r: ((lambda x: T.replicate_pad1d(x, 2)), [_normal(r, 2, 5, 3)])),
    GradCase("conv1d", lambda r: (T.conv1d, [_normal(r, 2, 6, 3), _normal(r, 2, 3, 3), _normal(r, 2)])),
    GradCase("conv1d_length1", lambda r: (T.conv1d, [_normal(r, 2, 1, 2), _normal(r, 3, 2, 3), _normal(r, 3)])),
    GradCase("avg_pool1d", lambda r: (T.avg_pool1d, [_normal(r, 2, 8, 3)])),
    GradCase("upsample_linear1d", lambda r: (T.upsample_linear1d, [_normal(r, 2, 5, 3)])),
    GradCase("linear", _linear_case),
    GradCase("embedding", _embedding_case),
    GradCase("lstm", _lstm_case),
    GradCase("lstm_stacked", _stacked_lstm_case),
    GradCase("classifier_cross_entropy", _classifier_case),
    GradCase("wasserstein_losses", _losses_case),
    GradCase("generator", _generator_case),
    GradCase("critic", _critic_case),
]


# ---------------------------------------------------------------------------
# second order


def tiny_critic_arch() -> gan.ArchitectureConfig:
    """Smallest critic of the full layout: 27 parameters."""
    return gan.ArchitectureConfig(s=1, c=1, m=1, h=1)


def penalty_second_order_error(rng: np.random.Generator, step: float = STEP) -> float:
    """Error of d(gradient penalty)/d(critic parameters) against finite differences."""
    arch = tiny_critic_arch()
    specs = gan.critic_param_specs(arch)
    names = [s.name for s in specs]
    ps = nn.init_parameters(specs, int(rng.integers(2**31)))
    arrays = [ps[n].data * 2 for n in names]
    x_real = rng.standard_normal((3, 20, 1))
    x_fake = rng.standard_normal((3, 20, 1))
    labels = np.array([0, 1, 1])
    eps_seed = int(rng.integers(2**31))

    def penalty(*weights):
        params = nn.ParameterSet(dict(zip(names, weights)))
        critic = lambda x, lab: gan.critic_forward(params, x, lab, arch)  # noqa: E731
        return gan.gradient_penalty(critic, x_real, x_fake, labels, np.random.default_rng(eps_seed))

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = T.grad(penalty(*tensors), tensors)
    # the penalty needs a gradient inside, so finite differences run with recording on
    numeric = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for i in range(a.size):
            shifted = [x.copy() for x in arrays]
            shifted[k].reshape(-1)[i] += step
            hi = penalty(*[Tensor(x) for x in shifted]).item()
            shifted[k].reshape(-1)[i] -= 2 * step
            lo = penalty(*[Tensor(x) for x in shifted]).item()
            g.reshape(-1)[i] = (hi - lo) / (2 * step)
        numeric.append(g)
    return max(relative_error(a.data, n) for a, n in zip(analytic, numeric))


def gradient_norm_second_order_error(rng: np.random.Generator, step: float = STEP) -> float:
    """``g(x) = ||grad_x f(x)||`` for a 2-layer tanh network (26 parameters); check dg/dtheta."""
    shapes = [(5, 3), (5,), (1, 5), (1,)]
    arrays = [rng.standard_normal(s) for s in shapes]
    x0 = rng.standard_normal((1, 3))

    def g_of(w1, b1, w2, b2):
        x = Tensor(x0, requires_grad=True)
        hidden = T.tanh(T.add(T.matmul(x, w1.mT), b1))
        f = T.tsum(T.add(T.matmul(hidden, w2.mT), b2))
        (gx,) = T.grad(f, [x], higher_order=True)
        return T.sqrt(T.tsum(T.mul(gx, gx)))

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = T.grad(g_of(*tensors), tensors)
    numeric = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for i in range(a.size):
            shifted = [x.copy() for x in arrays]
            shifted[k].reshape(-1)[i] += step
            hi = g_of(*[Tensor(x) for x in shifted]).item()
            shifted[k].reshape(-1)[i] -= 2 * step
            lo = g_of(*[Tensor(x) for x in shifted]).item()
            g.reshape(-1)[i] = (hi - lo) / (2 * step)
        numeric.append(g)
    return max(relative_error(a.data, n) for a, n in zip(analytic, numeric))


def linear_critic_penalty(norm: float = 5.0, seed: int = 0) -> float:
    """Penalty of the linear critic ``w . x`` with ``||w|| = norm``; analytically ``(norm - 1)**2``."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((20, 2))
    w *= norm / np.linalg.norm(w)
    wt = Tensor(w)
    critic = lambda x, labels: T.tsum(T.mul(x, wt), axis=(1, 2))  # noqa: E731
    x_real = rng.standard_normal((6, 20, 2))
    x_fake = rng.standard_normal((6, 20, 2))
    return gan.gradient_penalty(critic, x_real, x_fake, np.zeros(6, int), rng).item()


_SECOND_ORDER_FNS = {
    "gradient_penalty_wrt_critic": penalty_second_order_error,
    "input_gradient_norm_wrt_params": gradient_norm_second_order_error,
}


def run_second_order(instances: int = 3, seed: int = 0) -> list[CaseResult]:
    results = []
    for name, fn in _SECOND_ORDER_FNS.items():
        worst = max(fn(np.random.default_rng([seed, i])) for i in range(instances))
        results.append(CaseResult(name, worst, instances, SECOND_ORDER_TOLERANCE))
    return results


def run_suite(
    cases: Sequence[GradCase] | None = None,
    instances: int = 20,
    seed: int = 0,
    second_order: bool = True,
) -> list[CaseResult]:
    cases = DEFAULT_CASES if cases is None else cases
    results = [run_case(case, instances, seed) for case in cases]
    if second_order:
        results += run_second_order(seed=seed)
    return results


def format_results(results: Sequence[CaseResult]) -> str:
    lines = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:32s} max_rel_error={r.max_rel_error:.3e} tol={r.tolerance:.0e} n={r.instances} {status}")
    return "\n".join(lines)


if __name__ == "__main__":
    start = time.time()
    print(format_results(run_suite()))
    print(f"{time.time() - start:.1f}s")
