"""Acceptance suite: one test per criterion, each emitting a PASS/FAIL line."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

import goldens
from conftest import VERDICTS
from oracles import auc_mann_whitney, confusion_loops, conv1d_loops, lstm_loops, matmul_loops, maxpool_loops
from seizure_forecast import autodiff as ad
from seizure_forecast.autodiff import Tensor, gradient_check
from seizure_forecast.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from seizure_forecast.cli import main
from seizure_forecast.errors import CheckpointError
from seizure_forecast.evaluation import confusion, metrics, render_reports, roc_auc
from seizure_forecast.experiments import config_from_dict, load_config, prepare_dataset, run_personalization
from seizure_forecast.layers import (
    Hyperparameters,
    LayerSpec,
    bilstm_forward,
    conv1d_forward,
    create_model,
    dense_forward,
    lstm_forward,
    maxpool1d_forward,
    weight_shapes,
)
from seizure_forecast.pipeline import SampleSet
from seizure_forecast.pipeline.scaling import robust_scale
from seizure_forecast.pipeline.split import split
from seizure_forecast.training import class_weights, weighted_bce_tensor

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
TINY = Path(__file__).parent / "fixtures" / "tiny.config"


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


# ----------------------------------------------------------------- 1


def _rand_weights(rng, spec, scale=0.5):
    return {n: Tensor(rng.normal(scale=scale, size=s), name=n) for n, s in weight_shapes(spec).items()}


# each check reads the layer output through a random linear projection, so
# every output element contributes a distinct gradient


def _grad_conv(rng):
    c_in, c_out, k = (int(v) for v in rng.integers(1, 4, size=3))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    spec = LayerSpec("conv1d", {"in_channels": c_in, "out_channels": c_out, "kernel_size": k,
                                "stride": stride, "padding": pad})
    x = Tensor(rng.normal(size=(2, int(rng.integers(k + 2, 9)), c_in)), name="x")
    w = _rand_weights(rng, spec)
    proj = rng.normal(size=conv1d_forward(x.data, spec, {k: v.data for k, v in w.items()}).shape)

    def f(x, kernel, bias):
        return ad.sum(conv1d_forward(x, spec, {"kernel": kernel, "bias": bias}) * Tensor(proj))

    return gradient_check(f, [x, w["kernel"], w["bias"]])


def _grad_maxpool(rng):
    pool, stride = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    # distinct values spaced well beyond epsilon keep the argmax stable under perturbation
    n = 2 * int(rng.integers(pool + 1, 9)) * 2
    vals = rng.permutation(n).astype(np.float64) * 0.1 + rng.uniform(0, 0.01, size=n)
    x = Tensor(vals.reshape(2, -1, 2), name="x")
    proj = rng.normal(size=maxpool1d_forward(x.data, pool, stride).shape)
    return gradient_check(lambda x: ad.sum(maxpool1d_forward(x, pool, stride) * Tensor(proj)), [x])


def _grad_lstm(rng, bidirectional: bool):
    f_in, hidden = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    spec = LayerSpec("bilstm" if bidirectional else "lstm", {"input_size": f_in, "hidden_size": hidden})
    x = Tensor(rng.normal(size=(2, int(rng.integers(2, 6)), f_in)), name="x")
    w = _rand_weights(rng, spec)
    names = sorted(w)
    fwd = bilstm_forward if bidirectional else lstm_forward
    proj = rng.normal(size=fwd(x.data, spec, {n: w[n].data for n in names}).shape)

    def f(x, *ws):
        return ad.sum(fwd(x, spec, dict(zip(names, ws))) * Tensor(proj))

    return gradient_check(f, [x] + [w[n] for n in names])


def _grad_dense(rng):
    f_in, f_out = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    act = [None, "sigmoid", "tanh"][int(rng.integers(3))]
    spec = LayerSpec("dense", {"in_features": f_in, "out_features": f_out, "activation": act})
    x = Tensor(rng.normal(size=(3, f_in)), name="x")
    w = _rand_weights(rng, spec)
    proj = rng.normal(size=(3, f_out))
    return gradient_check(lambda x, W, b: ad.sum(dense_forward(x, spec, {"W": W, "b": b}) * Tensor(proj)),
                          [x, w["W"], w["b"]])


def _grad_activation(rng, name):
    fn = {"relu": ad.relu, "sigmoid": ad.sigmoid, "tanh": ad.tanh}[name]
    # keep relu inputs away from the kink so the central difference is well defined
    v = rng.uniform(0.05, 2.0, size=7) * rng.choice([-1.0, 1.0], size=7)
    proj = rng.normal(size=7)
    return gradient_check(lambda t: ad.sum(fn(t) * Tensor(proj)), [Tensor(v, name="x")])


def _grad_bce(rng):
    n = int(rng.integers(1, 9))
    p = Tensor(rng.uniform(0.05, 0.95, size=n), name="p")
    y = rng.integers(0, 2, size=n)
    w = rng.uniform(0.2, 3.0, size=n)
    return gradient_check(lambda t: weighted_bce_tensor(t, y, w), [p])


def test_criterion_01_gradient_correctness():
    rng = np.random.default_rng(101)
    checks = {
        "conv1d": _grad_conv, "maxpool1d": _grad_maxpool,
        "lstm": lambda r: _grad_lstm(r, False), "bilstm": lambda r: _grad_lstm(r, True),
        "dense": _grad_dense, "relu": lambda r: _grad_activation(r, "relu"),
        "sigmoid": lambda r: _grad_activation(r, "sigmoid"), "tanh": lambda r: _grad_activation(r, "tanh"),
        "weighted_bce": _grad_bce,
    }
    start = time.perf_counter()
    worst = {name: max(check(rng) for _ in range(20)) for name, check in checks.items()}
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(1, "gradient checks (20 instances each, eps 1e-5, rel err < 1e-4)", ok, f"{detail}; {elapsed:.1f}s")


# ----------------------------------------------------------------- 2


def test_criterion_02_oracle_equivalence():
    rng = np.random.default_rng(202)
    worst = {"conv1d": 0.0, "maxpool1d": 0.0, "lstm": 0.0, "matmul": 0.0}
    start = time.perf_counter()
    for _ in range(100):
        c_in, c_out, k = (int(v) for v in rng.integers(1, 5, size=3))
        stride, pad = int(rng.integers(1, 4)), int(rng.integers(0, 3))
        x = rng.normal(size=(int(rng.integers(k + 1, 25)), c_in))
        kernel, bias = rng.normal(size=(c_out, c_in, k)), rng.normal(size=c_out)
        spec = LayerSpec("conv1d", {"in_channels": c_in, "out_channels": c_out, "kernel_size": k,
                                    "stride": stride, "padding": pad})
        got = conv1d_forward(x, spec, {"kernel": kernel, "bias": bias}).data
        worst["conv1d"] = max(worst["conv1d"], np.max(np.abs(got - conv1d_loops(x, kernel, bias, stride, pad))))

        pool, pstride = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(size=(int(rng.integers(pool, 30)), int(rng.integers(1, 5))))
        got = maxpool1d_forward(x, pool, pstride).data
        worst["maxpool1d"] = max(worst["maxpool1d"], np.max(np.abs(got - maxpool_loops(x, pool, pstride))))

        f_in, hidden = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        spec = LayerSpec("lstm", {"input_size": f_in, "hidden_size": hidden})
        w = {n: rng.normal(scale=0.5, size=s) for n, s in weight_shapes(spec).items()}
        x = rng.normal(size=(int(rng.integers(1, 15)), f_in))
        reverse = bool(rng.integers(2))
        got = lstm_forward(x, spec, w, "reverse" if reverse else "forward").data
        ref = lstm_loops(x, w["W_fwd"], w["U_fwd"], w["b_fwd"], reverse=reverse)
        worst["lstm"] = max(worst["lstm"], np.max(np.abs(got - ref)))

        n, kk, m = (int(v) for v in rng.integers(1, 9, size=3))
        a, b = rng.normal(size=(n, kk)), rng.normal(size=(kk, m))
        got = ad.matmul(Tensor(a), Tensor(b)).data
        worst["matmul"] = max(worst["matmul"], np.max(np.abs(got - matmul_loops(a, b))))
    elapsed = time.perf_counter() - start
    ok = all(v <= 1e-10 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(2, "nested-loop oracle equivalence (100 instances each, 1e-10 abs)", ok, f"{detail}; {elapsed:.1f}s")


# ----------------------------------------------------------------- 3


def test_criterion_03_class_weights():
    rng = np.random.default_rng(303)
    mismatches = 0
    for _ in range(50):
        n0, n1 = (int(v) for v in rng.integers(1, 100_000, size=2))
        total = n0 + n1
        # hand computation: total / (classes * count)
        expected = {0: total / (2 * n0), 1: total / (2 * n1)}
        mismatches += class_weights({0: n0, 1: n1}, total) != expected
    balanced = [class_weights({0: n, 1: n}, 2 * n) for n in rng.integers(1, 100_000, size=50).tolist()]
    balanced_ok = all(w == {0: 1.0, 1: 1.0} for w in balanced)
    verdict(3, "class weights exact on 50 pairs, balanced -> (1.0, 1.0)", mismatches == 0 and balanced_ok,
            f"{mismatches} mismatches, balanced all ones: {balanced_ok}")


# ----------------------------------------------------------------- 4


def test_criterion_04_robust_scale():
    rng = np.random.default_rng(404)
    example, _ = robust_scale(np.array([1.0, 2.0, 3.0, 4.0, 100.0]))
    example_ok = example.tolist() == [-1.0, -0.5, 0.0, 0.5, 48.5]
    median_ok, worst_affine = True, 0.0
    for _ in range(50):
        x = rng.standard_t(3, size=2 * int(rng.integers(2, 200)) + 1)
        scaled, _ = robust_scale(x)
        median_ok &= scaled[np.argsort(x)[len(x) // 2]] == 0.0
        a, b = rng.uniform(0.01, 100.0), rng.uniform(-1e3, 1e3)
        worst_affine = max(worst_affine, np.max(np.abs(robust_scale(a * x + b)[0] - scaled)))
    ok = example_ok and median_ok and worst_affine <= 1e-10
    verdict(4, "robust scaling properties", ok,
            f"example {example.tolist()}, median -> 0: {median_ok}, affine max dev {worst_affine:.1e}")


# ----------------------------------------------------------------- 5


def test_criterion_05_metric_oracles():
    rng = np.random.default_rng(505)
    count_errors, worst_auc, monotone_ok = 0, 0.0, True
    for _ in range(100):
        n = int(rng.integers(2, 501))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        # coarse scores create ties, which the oracle counts as one half
        scores = np.round(rng.uniform(size=n), int(rng.integers(1, 4)))
        cm = confusion(scores, labels)
        tp, fp, tn, fn = confusion_loops(scores, labels)
        r = metrics(cm)
        exact = ((cm.tp, cm.fp, cm.tn, cm.fn) == (tp, fp, tn, fn) and r.accuracy == (tp + tn) / n
                 and r.recall == tp / (tp + fn) and r.precision == (tp / (tp + fp) if tp + fp else 0.0))
        count_errors += not exact
        auc = roc_auc(scores, labels)[0]
        worst_auc = max(worst_auc, abs(auc - auc_mann_whitney(scores, labels)))
        monotone_ok &= roc_auc(np.log1p(scores) * 3.0 - 2.0, labels)[0] == auc
    ok = count_errors == 0 and worst_auc <= 1e-12 and monotone_ok
    verdict(5, "metrics vs brute force, AUC vs Mann-Whitney (100 instances, n <= 500)", ok,
            f"count mismatches {count_errors}, AUC max dev {worst_auc:.1e}, monotone invariant: {monotone_ok}")


# ----------------------------------------------------------------- 6


def test_criterion_06_split_hygiene():
    rng = np.random.default_rng(606)
    worst_size, worst_strat, partition_ok = 0.0, 0.0, True
    for seed in range(50):
        n = int(rng.integers(100, 1500))
        patients = rng.choice([f"P{i}" for i in range(int(rng.integers(2, 10)))], size=n)
        labels = (rng.uniform(size=n) < rng.uniform(0.15, 0.6)).astype(int)
        samples = SampleSet(np.zeros((n, 2, 5)), labels, patients.tolist(), np.arange(n) * 30_000)
        s = split(samples, seed=seed, by_patient=True)
        keys = [set(p.keys()) for p in s.parts().values()]
        partition_ok &= (sum(len(k) for k in keys) == n and len(set.union(*keys)) == n)
        overall = labels.mean()
        for part, ratio in zip(s.parts().values(), (0.6, 0.2, 0.2)):
            worst_size = max(worst_size, abs(len(part) - ratio * n))
            worst_strat = max(worst_strat, abs(part.labels.mean() - overall))
    ok = partition_ok and worst_size <= 1.0 and worst_strat <= 0.05
    verdict(6, "split hygiene over 50 seeds", ok,
            f"exact partition: {partition_ok}, max size dev {worst_size:.2f} samples, "
            f"max class-share dev {100 * worst_strat:.2f} pp")


# ----------------------------------------------------------------- 7


@pytest.mark.slow
def test_criterion_07_desk_scale_general_run(tmp_path):
    cfg = CONFIGS / "example.config"
    start = time.perf_counter()
    codes = [main([stage, "--config", str(cfg), "--out", str(tmp_path)]) for stage in ("synth", "prepare", "train")]
    elapsed = time.perf_counter() - start
    report = json.loads((tmp_path / "metrics.json").read_text())["general"] if codes == [0, 0, 0] else {}
    acc, auc = report.get("accuracy", 0.0), report.get("auc_roc", 0.0)
    ok = codes == [0, 0, 0] and acc >= 0.85 and auc >= 0.90 and elapsed < 600
    verdict(7, "synthetic 9-patient general model (acc >= 0.85, AUC >= 0.90, < 10 min)", ok,
            f"exit codes {codes}, accuracy {acc:.4f}, AUC {auc:.4f}, {elapsed:.0f}s")


# ----------------------------------------------------------------- 8


@pytest.mark.slow
def test_criterion_08_personalization_lift():
    rows = []
    for seed in (0, 1, 2):
        config = load_config(CONFIGS / "inverted.config", seed=seed)
        r = run_personalization(config, "01844", prepare_dataset(config))
        assert r.before.n_samples == r.after.n_samples
        rows.append((seed, r.before.accuracy, r.after.accuracy))
    ok = all(b <= 0.65 and a >= b + 0.15 for _, b, a in rows)
    detail = "; ".join(f"seed {s}: {b:.4f} -> {a:.4f}" for s, b, a in rows)
    verdict(8, "inverted held-out patient 01844 (before <= 0.65, after >= before + 15 pp, 3/3 seeds)", ok, detail)


# ----------------------------------------------------------------- 9


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_09_determinism(tmp_path):
    stages = [["prepare"], ["train"], ["compare"], ["personalize", "--all"]]
    for name in ("a", "b"):
        for stage in stages:
            assert main(stage + ["--config", str(TINY), "--seed", "11", "--out", str(tmp_path / name)]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    artifacts = [k for k in a if k.endswith((".csv", ".ckpt"))]
    differing = [k for k in artifacts if a.get(k) != b.get(k)]
    ok = a.keys() == b.keys() and not differing and any(k.endswith(".ckpt") for k in artifacts)
    verdict(9, "byte-identical reports and checkpoints on re-run", ok,
            f"{len(artifacts)} CSV/checkpoint files compared, {len(differing)} differ")


# ----------------------------------------------------------------- 10


def test_criterion_10_report_fidelity(tmp_path):
    pairs = goldens.patient_reports()
    produced = {
        "table3_general.csv": render_reports(goldens.general_report(), "general", tmp_path)[0],
        "table2_architectures.csv": render_reports(goldens.architecture_reports(), "architecture_comparison",
                                                   tmp_path)[0],
        "table4_personalization.csv": render_reports(pairs, "per_patient_before_after", tmp_path)[0],
    }
    produced["appendix1_before.csv"], produced["appendix2_after.csv"] = render_reports(pairs, "appendix", tmp_path)
    mismatched = [g for g, p in produced.items() if p.read_text() != (goldens.GOLDEN / g).read_text()]
    verdict(10, "rendered tables match golden files character for character", not mismatched,
            f"{len(produced) - len(mismatched)}/{len(produced)} tables identical"
            + (f"; mismatched {mismatched}" if mismatched else ""))


# ----------------------------------------------------------------- 11


def test_criterion_11_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1111)
    model = create_model("cnn_bilstm", (120, 5), Hyperparameters(), rng_seed=3)
    path = save_checkpoint(model, tmp_path / "m.ckpt", {"seed": 3})
    loaded = load_checkpoint(path, "cnn_bilstm")
    identical = all(np.array_equal(model.predict(x), loaded.predict(x))
                    for x in (rng.normal(size=(2, 120, 5)) for _ in range(5)))
    raw = path.read_bytes()

    def flipped(offset):
        b = bytearray(raw)
        b[offset] ^= 0x40
        return bytes(b)

    version = bytearray(raw)
    version[8] = 9
    cases = {
        "E_CKPT_MAGIC": flipped(0),
        "E_CKPT_VERSION": bytes(version),
        "E_CKPT_TRUNCATED": raw[: len(raw) // 2],
        "E_CKPT_CHECKSUM": flipped(len(raw) - 100),
        "E_CKPT_ARCH": checkpoint_bytes(create_model("cnn_lstm", (120, 5), rng_seed=3)),
    }
    got = {}
    for code, blob in cases.items():
        (tmp_path / "bad.ckpt").write_bytes(blob)
        try:
            load_checkpoint(tmp_path / "bad.ckpt", "cnn_bilstm")
            got[code] = "loaded"
        except CheckpointError as exc:
            got[code] = f"{exc.code}/{exc.exit_code}"
    codes_ok = all(got[c] == f"{c}/5" for c in cases)
    verdict(11, "checkpoint round trip bit-identical on 5 inputs, corruptions rejected", identical and codes_ok,
            f"forward identical: {identical}; " + ", ".join(f"{c} -> {g}" for c, g in got.items()))
