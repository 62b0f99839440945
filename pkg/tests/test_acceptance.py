"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n>: PASS/FAIL`` line (also collected
in the terminal summary) before asserting.
"""

import io
import json
import time

import numpy as np
import pytest

from vitalgan import checkpoint, cli, data, gan, gradcheck, nn, toy
from vitalgan import evaluation as E

# ---------------------------------------------------------------------------
# 1. first-order finite differences


def test_criterion_1_gradient_suite(verdict):
    start = time.perf_counter()
    results = gradcheck.run_suite(instances=20, seed=0, second_order=False)
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not (r.passed and r.instances >= 20)]
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = not failed and elapsed < 60.0 and worst.max_rel_error < 1e-4
    verdict(
        1,
        ok,
        f"{len(results)} operations x 20 instances, worst {worst.name} {worst.max_rel_error:.2e} < 1e-4, "
        f"{elapsed:.1f}s < 60s, failed={failed}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 2. second-order


def test_criterion_2_second_order(verdict):
    arch = gradcheck.tiny_critic_arch()
    n_params = gan.parameter_counts(arch)["critic"]
    results = gradcheck.run_second_order(instances=5, seed=0)
    errors = {r.name: r.max_rel_error for r in results}
    analytic = {norm: abs(gradcheck.linear_critic_penalty(norm, seed=k) - (norm - 1) ** 2) for k, norm in enumerate((0.5, 1.0, 2.0, 5.0))}
    ok = n_params <= 50 and all(e <= 1e-3 for e in errors.values()) and all(d <= 1e-9 for d in analytic.values())
    verdict(
        2,
        ok,
        f"critic with {n_params} params: "
        + ", ".join(f"{k} {v:.2e}" for k, v in errors.items())
        + f" (<= 1e-3); linear critic max |pen - (|w|-1)^2| = {max(analytic.values()):.1e} (<= 1e-9)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 3. architecture


def _expected_generator(a):
    h = a.h
    return [(a.m,), (a.m, 1 + a.c), (5, h), (10, h), (10, h), (10, h), (20, h), (20, h), (20, h), (20, a.s)]


def _expected_critic(a):
    h = a.h
    return [(20, a.s), (20, a.s + a.c), (20, h), (20, h), (10, h), (10, h), (10, h), (5, h), (1,)]


def test_criterion_3_architecture(verdict):
    problems = []
    for names in (
        ["temperature"],
        ["temperature", "respiratory_rate"],
        ["temperature", "respiratory_rate", "heart_rate"],
        [c.name for c in data.CHANNELS],
    ):
        arch = gan.ArchitectureConfig(s=len(names))  # default c=8, m=32, h=64
        gen = nn.init_parameters(gan.generator_param_specs(arch), 0)
        critic = nn.init_parameters(gan.critic_param_specs(arch), 1)
        for batch in (1, 4, 32):
            labels = np.arange(batch) % 2
            g_trace, c_trace = [], []
            z = np.random.default_rng(batch).standard_normal((batch, arch.m))
            x = gan.generator_forward(gen, z, labels, arch, trace=g_trace)
            scores = gan.critic_forward(critic, x, labels, arch, trace=c_trace)
            if [s for _, s in g_trace] != _expected_generator(arch) or x.shape != (batch, 20, arch.s):
                problems.append(f"generator s={arch.s} batch={batch}: {g_trace}")
            if [s for _, s in c_trace] != _expected_critic(arch) or scores.shape != (batch,):
                problems.append(f"critic s={arch.s} batch={batch}: {c_trace}")
    ok = not problems
    verdict(3, ok, "s in {1,2,3,5}, batch in {1,4,32}: every layer shape matches" if ok else "; ".join(problems))
    assert ok


# ---------------------------------------------------------------------------
# 4. toy train-on-synthetic / test-on-real

TOY_TRAIN, TOY_TEST = 2000, 600
TOY_ARCH = gan.ArchitectureConfig(s=2, c=8, m=16, h=32)
TOY_TRAINING = gan.TrainConfig(generator_steps=1000, batch_size=64, seed=0)
TOY_SPACE = E.HPOSpace(
    hidden_size=(8, 16),
    lstm_layers=(1,),
    dropout_rate=(0.0, 0.2),
    learning_rate=(1e-3, 1e-2),
    batch_size=(64,),
    epochs=(3, 5),
    trials=10,
    seed=0,
)


def test_criterion_4_toy_tstr(verdict):
    start = time.perf_counter()
    real = toy.sine_cycles(TOY_TRAIN + TOY_TEST, minority_fraction=0.2, noise=0.1, amplitude=1.0, rng=11)
    # with 20% minority in each class this fraction yields exactly 2000 / 600
    fraction = TOY_TEST / (TOY_TRAIN + TOY_TEST)
    real_train, real_test = data.split_train_test(real, fraction, 0)
    assert (len(real_train), len(real_test)) == (TOY_TRAIN, TOY_TEST)

    bundle, _ = gan.train(data.normalize(real_train), TOY_ARCH, TOY_TRAINING)
    proxy = gan.synthesize_balanced(bundle, len(real_train), rng=1)
    result = E.tstr_protocol(real, proxy, TOY_SPACE, test_fraction=fraction, split_seed=0)
    elapsed = time.perf_counter() - start

    # conditioning check: a real-trained classifier agrees with the proxy's labels
    agreement = float(np.mean(E.train_classifier(real_train, result.best_config).predict(proxy) == proxy.y))

    real_bal, proxy_bal = result.real.balanced_accuracy, result.proxy.balanced_accuracy
    ok = proxy_bal >= 0.80 and abs(real_bal - proxy_bal) <= 0.10 and elapsed <= 15 * 60 and agreement >= 0.80
    verdict(
        4,
        ok,
        f"balanced accuracy proxy-trained {proxy_bal:.3f} (>= 0.80), real-trained {real_bal:.3f}, "
        f"gap {abs(real_bal - proxy_bal):.3f} (<= 0.10), {TOY_SPACE.trials} trials, "
        f"{TOY_TRAINING.generator_steps} generator steps, {elapsed / 60:.1f} min (<= 15), "
        f"proxy label agreement {agreement:.3f} (>= 0.80)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 5. balance and privacy


def test_criterion_5_balance_and_privacy(verdict):
    rng = np.random.default_rng(5)
    arch = gan.ArchitectureConfig(s=1, c=2, m=4, h=4)
    unbalanced = []
    ratios = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, *rng.uniform(0.05, 0.30, 6)]
    for k, ratio in enumerate(ratios):
        n = int(rng.integers(60, 240))
        ds = data.normalize(toy.sine_cycles(n, minority_fraction=ratio, channels=("heart_rate",), rng=k))
        bundle, _ = gan.train(ds, arch, gan.TrainConfig(generator_steps=2, batch_size=8, seed=k))
        for total in (n, n + 1, 1000):
            counts = np.bincount(gan.synthesize_balanced(bundle, total, rng=k).y, minlength=2)
            if counts[0] != counts[1] or counts[0] != total // 2:
                unbalanced.append((round(ratio, 3), total, counts.tolist()))

    schema_violations = 0
    worst_mean = 0.0
    for _ in range(2000):
        tn, fp, fn, tp = (int(v) for v in rng.integers(0, 50, 4))
        tn, tp = tn + 1, tp + 1
        report = E.privacy_gate(E.ConfusionMatrix(tn, fp, fn, tp), str(rng.choice(E.ROLES)), "T,RR")
        buf = io.StringIO()
        E.dump_reports([report], buf)
        (obj,) = json.loads(buf.getvalue())
        try:
            E.validate_report(obj)
        except ValueError:
            schema_violations += 1
        if list(obj) != list(E.REPORT_FIELDS) or any(isinstance(v, int) for v in obj.values()):
            schema_violations += 1
        worst_mean = max(worst_mean, abs(obj["balanced_accuracy"] - (obj["acc_class0"] + obj["acc_class1"]) / 2))

    ok = not unbalanced and schema_violations == 0 and worst_mean <= 1e-12
    verdict(
        5,
        ok,
        f"{len(ratios)} class ratios in [0.05, 0.30]: unbalanced outputs {unbalanced}; "
        f"2000 reports, schema violations {schema_violations}, max |bal - mean| {worst_mean:.1e} (<= 1e-12)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 6. data pipeline


def _brute_force_keep(X, specs):
    keep = []
    for i in range(X.shape[0]):
        ok = True
        for t in range(X.shape[1]):
            for j, c in enumerate(specs):
                value = X[i, t, j]
                if value < c.lower or value > c.upper:
                    ok = False
        keep.append(ok)
    return keep


def test_criterion_6_data_pipeline(verdict):
    rng = np.random.default_rng(6)
    failures = {"filter": 0, "round_trip": 0, "split": 0, "csv": 0}
    worst_round_trip = 0.0
    for _ in range(1000):
        n = int(rng.integers(0, 12))
        k = int(rng.integers(1, 6))
        specs = data.channel_specs(sorted(rng.choice([c.name for c in data.CHANNELS], k, replace=False)))
        lower = np.array([c.lower for c in specs])
        upper = np.array([c.upper for c in specs])
        span = upper - lower
        X = rng.uniform(lower - 0.05 * span, upper + 0.05 * span, size=(n, 20, k))
        # some patients exactly on the bounds
        if n:
            X[rng.integers(n), rng.integers(20), rng.integers(k)] = upper[0] if k == 1 else lower[-1]
        y = rng.integers(0, 2, n)
        ds = data.LabeledDataset.from_arrays(X, y, specs)

        kept = data.filter_ranges(ds)
        expected = [p.patient_id for p, keep in zip(ds.series, _brute_force_keep(X, specs)) if keep]
        failures["filter"] += [p.patient_id for p in kept.series] != expected

        if n >= 2 and np.all(np.ptp(X, axis=(0, 1)) > 0):
            norm = data.normalize(ds)
            err = float(np.max(np.abs(data.denormalize(norm).X - X)))
            worst_round_trip = max(worst_round_trip, err)
            failures["round_trip"] += err > 1e-6

        if (y == 0).any() and (y == 1).any():
            seed = int(rng.integers(1000))
            a = data.split_train_test(ds, 0.3, seed)
            b = data.split_train_test(ds, 0.3, seed)
            ids = lambda part: [p.patient_id for p in part.series]  # noqa: E731
            failures["split"] += (ids(a[0]), ids(a[1])) != (ids(b[0]), ids(b[1]))

        buf = io.StringIO()
        data.write_csv(ds, buf)
        back = data.parse_csv(io.StringIO(buf.getvalue()), [c.name for c in specs])
        same = (
            back.channel_names == ds.channel_names
            and back.X.tobytes() == ds.X.tobytes()
            and back.y.tolist() == ds.y.tolist()
            and [p.patient_id for p in back.series] == [p.patient_id for p in ds.series]
        )
        failures["csv"] += not same

    ok = not any(failures.values()) and worst_round_trip <= 1e-6
    verdict(
        6,
        ok,
        f"1000 random datasets, mismatches {failures}, worst normalize round trip {worst_round_trip:.1e} (<= 1e-6)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 7. determinism of cmd_train


def test_criterion_7_train_determinism(tmp_path, verdict):
    with open(tmp_path / "real.csv", "w", newline="") as fh:
        data.write_csv(toy.sine_cycles(200, rng=7), fh)
    runs = []
    for k in range(2):
        cfg = {
            "channels": ["temperature", "respiratory_rate"],
            "training": {"generator_steps": 10, "seed": 123},
            "paths": {"input": "real.csv", "checkpoint": f"run{k}.ckpt", "log": f"run{k}.log"},
        }
        path = tmp_path / f"run{k}.json"
        path.write_text(json.dumps(cfg))
        assert cli.main(["train", str(path)]) == 0
        with open(tmp_path / f"run{k}.log") as fh:
            records = gan.read_training_log(fh)
        runs.append(((tmp_path / f"run{k}.ckpt").read_bytes(), records))
    (bytes_a, log_a), (bytes_b, log_b) = runs
    checkpoint.loads(bytes_a)  # well-formed
    ok = bytes_a == bytes_b and len(log_a) == 10 and log_a[:10] == log_b[:10]
    verdict(
        7,
        ok,
        f"two cmd_train runs (default architecture, seed 123): checkpoints {len(bytes_a)} bytes, "
        f"byte-identical={bytes_a == bytes_b}, first 10 loss records identical={log_a[:10] == log_b[:10]}",
    )
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
