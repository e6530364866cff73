"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(and echoed to stdout, visible with ``-s``).
"""

import contextlib
import csv
import time

import numpy as np
import pytest

from trace_risk import tensor as T
from trace_risk.checkpoint import load_checkpoint, save_checkpoint
from trace_risk.cli import main
from trace_risk.data import (TabularDataset, default_synthetic_schema, generate_synthetic,
                             simulate_missing, stratified_batches, stratified_split)
from trace_risk.embed import CheckboxEmbedder
from trace_risk.explain import attention_by_feature, attention_by_sample, capture_attention
from trace_risk.losses import focal_loss
from trace_risk.nnmlp import NnMlpConfig, NnMlpModel, init_params, nnmlp_forward
from trace_risk.tensor import Tensor, finite_diff_check
from trace_risk.trace import TraceConfig, TraceModel, multi_head_attention
from trace_risk.training import TrainConfig, evaluate, stream_rng, train

from conftest import ACCEPTANCE, toy_schema
from test_tensor import _primitive_cases

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(n: int, text: str, limit_s: float | None = None):
    start = time.perf_counter()
    ok = False
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit_s is not None:
            assert elapsed < limit_s, f"took {elapsed:.1f}s, limit {limit_s:.0f}s"
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        line = f"{text} ({elapsed:.1f}s)"
        ACCEPTANCE[n] = (ok, line)
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {line}")


def _synthetic_2000(noise=0.05):
    ds, _ = generate_synthetic(default_synthetic_schema(), 2000, 0.1, 7, noise=noise)
    return ds


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# 1 ---------------------------------------------------------------------------
def _toy_batch():
    ds, _ = generate_synthetic(toy_schema(), 40, 0.5, 1)
    return simulate_missing(ds, 0.2, 3).take(np.arange(4)), ds


def _ffn_margin(model, batch):
    x = model.embed(batch)
    lay = model.layers[0]
    a, _ = multi_head_attention(x, lay)
    h = T.layer_norm(x + a, lay.ln1_g, lay.ln1_b)
    return np.abs((h @ lay.w_ff1 + lay.b_ff1).data).min()


def test_c01_gradient_correctness():
    worst = {}
    with criterion(1, "finite differences match tape gradients (rel err < 1e-4)", limit_s=10):
        for point in range(20):
            for name, f, x in _primitive_cases(np.random.default_rng(point)):
                worst[name] = max(worst.get(name, 0.0), finite_diff_check(f, Tensor(x), h=1e-5))

        raw, full = _toy_batch()
        assert raw.missing_matrix().any(axis=0).all(), "toy batch should mask every feature kind"
        trace = TraceModel(toy_schema(), TraceConfig(model_size=8), seed=0)
        rng = np.random.default_rng(100)
        for k, p in trace.parameters().items():
            if "table" in k:  # unit-scale tables keep every loss term well above round-off
                p.data[...] = rng.normal(size=p.shape)
        batch = trace.prepare(raw)
        # non-degenerate point: no FFN pre-activation within 10 steps of a ReLU kink
        assert _ffn_margin(trace, batch) > 1e-3
        f = lambda _p: focal_loss(trace.forward(batch), batch.labels, 0.8, 2.0)  # noqa: E731
        for name, p in trace.parameters().items():
            worst["trace:" + name] = finite_diff_check(f, p, h=1e-4)

        nn = NnMlpModel(toy_schema(), seed=0)
        nn.fit_preprocessing(full)
        nb = nn.prepare(raw)
        x = nn.encode(nb)
        assert np.abs(x @ nn.params["W1"].data + nn.params["b1"].data).min() > 1e-3
        g = lambda _p: focal_loss(nn.forward(nb), nb.labels, 0.8, 2.0)  # noqa: E731
        for name, p in nn.parameters().items():
            worst["nnmlp:" + name] = finite_diff_check(g, p, h=1e-4)

        bad = {k: v for k, v in worst.items() if not v < 1e-4}
        assert not bad, bad


# 2 ---------------------------------------------------------------------------
def test_c02_focal_loss():
    with criterion(2, "focal loss: gamma=0 is weighted BCE (1e-12); hand value (1e-9)"):
        rng = np.random.default_rng(2)
        for _ in range(100):
            z = rng.normal(scale=4, size=64)
            y = rng.integers(0, 2, 64)
            a = rng.uniform(0.05, 0.95)
            p = 1 / (1 + np.exp(-z))
            bce = np.mean(-np.where(y == 1, a, 1 - a) * (y * np.log(p) + (1 - y) * np.log1p(-p)))
            assert abs(focal_loss(z, y, a, 0.0).item() - bce) < 1e-12
        hand = focal_loss(np.array([0.0]), np.array([1]), 0.5, 2.0).item()
        assert abs(hand - 0.5 * 0.25 * np.log(2)) < 1e-9


# 3 ---------------------------------------------------------------------------
def test_c03_nnmlp_invariants():
    with criterion(3, "nnMLP sign constraints, monotonicity, zero input = baseline", limit_s=60):
        ds, _ = generate_synthetic(default_synthetic_schema(), 1000, 0.1, 3)
        tr, va = stratified_split(ds, 0.2, stream_rng(0, "split"))
        model = NnMlpModel(ds.schema, NnMlpConfig(), seed=stream_rng(0, "init"))
        steps = []
        train(model, tr, va, TrainConfig(epochs=50, optimizer="rmsprop", learning_rate=1e-3),
              callback=lambda e, b, m: steps.append(m.constraints_hold()))
        assert len(steps) == 50 * 13 and all(steps)

        rng = np.random.default_rng(3)
        violations = 0
        for _ in range(1000):
            d = int(rng.integers(1, 8))
            params = init_params(d, int(rng.integers(1, 6)), int(rng.integers(1, 6)), rng)
            for k in ("W1", "W2", "W3"):
                params[k].data[...] *= rng.uniform(0, 5)
            params["b3"].data[...] = rng.normal(scale=3)
            x = rng.exponential(size=(1, d))
            x2 = x + rng.exponential(size=(1, d)) * (rng.random((1, d)) < 0.6)
            violations += nnmlp_forward(x, params).data[0] > nnmlp_forward(x2, params).data[0]
            zero = nnmlp_forward(np.zeros((1, d)), params).data[0]
            assert zero == params["b3"].data[0]
            assert T.sigmoid(Tensor([zero])).data[0] == T.sigmoid(params["b3"]).data[0]
        assert violations == 0


# 4 ---------------------------------------------------------------------------
def test_c04_missing_value_invariance():
    with criterion(4, "masked cells never change TRACE logits (exact)", limit_s=30):
        ds = simulate_missing(_synthetic_2000(), 0.3, 4).take(np.arange(500))
        model = TraceModel(ds.schema, TraceConfig(model_size=32), seed=4)
        model.fit_preprocessing(ds)
        base = model.forward(model.prepare(ds)).data
        rng = np.random.default_rng(4)
        masked_cells = 0
        for j in range(ds.schema.n_num):
            miss = ds.cont_missing[:, j]
            cont = ds.cont.copy()
            cont[miss, j] = rng.normal(scale=50, size=miss.sum())
            probe = TabularDataset(ds.schema, cont, ds.cont_missing, ds.cat, ds.check,
                                   ds.check_missing, ds.labels)
            assert model.forward(model.prepare(probe)).data.tobytes() == base.tobytes()
            masked_cells += miss.sum()
        for k in range(ds.schema.n_check):
            miss = ds.check_missing[:, k]
            check = list(ds.check)
            bits = check[k].copy()
            bits[miss] = rng.integers(0, 2, size=bits[miss].shape)
            check[k] = bits
            probe = TabularDataset(ds.schema, ds.cont, ds.cont_missing, ds.cat, tuple(check),
                                   ds.check_missing, ds.labels)
            assert model.forward(model.prepare(probe)).data.tobytes() == base.tobytes()
            masked_cells += miss.sum()
        assert masked_cells > 300


# 5 ---------------------------------------------------------------------------
def test_c05_checkbox_embedding():
    with criterion(5, "checkbox sums are additive and order-free (exact); flag disables them"):
        rng = np.random.default_rng(5)
        c, e = 22, 16
        emb = CheckboxEmbedder([c], e, rng)
        # dyadic table entries: every partial sum is exact, so equality can be bitwise
        emb.tables[0].data[...] = np.round(rng.normal(size=(c + 1, e)) * 4096) / 4096
        present = np.zeros((1000, 1), bool)
        b1 = (rng.random((1000, c)) < 0.3).astype(np.int8)
        b2 = ((rng.random((1000, c)) < 0.3) & (b1 == 0)).astype(np.int8)
        joint = emb([b1 + b2], present).data
        split = emb([b1], present).data + emb([b2], present).data
        assert np.array_equal(joint, split)
        for _ in range(20):
            perm = rng.permutation(c)
            shuffled = CheckboxEmbedder([c], e, rng)
            shuffled.tables[0].data[...] = emb.tables[0].data[np.append(perm, c)]
            assert np.array_equal(shuffled([b1[:, perm]], present).data, emb([b1], present).data)

        ds, _ = generate_synthetic(default_synthetic_schema(), 50, 0.2, 5)
        on = TraceModel(ds.schema, TraceConfig(model_size=8))
        off = TraceModel(ds.schema, TraceConfig(model_size=8, checkbox_embeddings=False))
        assert on.n_tokens == 7 and off.n_tokens == 10
        assert off.forward(off.prepare(ds)).shape == (50,)


# 6 ---------------------------------------------------------------------------
def test_c06_attention_maps():
    with criterion(6, "attention rows stochastic; views match per-sample oracle exactly", limit_s=10):
        ds = _synthetic_2000().take(np.arange(200))
        model = TraceModel(ds.schema, TraceConfig(model_size=64, n_heads=2), seed=6)
        model.fit_preprocessing(ds)
        attn = capture_attention(model, ds)
        assert np.abs(attn.sum(axis=-1) - 1).max() < 1e-6
        per = []
        for i in range(len(ds)):
            model.forward(model.prepare(ds.take([i])), capture=True)
            per.append(model.attention[-1][0].mean(axis=0))
        per = np.stack(per)
        by_sample = attention_by_sample(model, ds).matrix
        by_feature = attention_by_feature(model, ds).matrix
        assert np.array_equal(by_sample, per.mean(axis=1))
        assert np.array_equal(by_feature, per.mean(axis=0))
        assert np.abs(by_sample.sum(axis=1) - 1).max() < 1e-6
        assert np.abs(by_feature.sum(axis=1) - 1).max() < 1e-6


# 7 ---------------------------------------------------------------------------
def test_c07_stratified_batching():
    with criterion(7, "every full batch of 50 holds exactly 5 positives over 100 epochs"):
        labels = np.zeros(1000, dtype=int)
        labels[np.random.default_rng(7).choice(1000, 100, replace=False)] = 1
        rng = stream_rng(0, "batches")
        for _ in range(100):
            batches = stratified_batches(labels, 50, rng)
            assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(1000))
            assert all(labels[b].sum() == 5 for b in batches if len(b) == 50)


# 8 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_c08_end_to_end_learnability():
    scores = {}
    with criterion(8, "validation BA: TRACE(E=64) >= 0.90, nnMLP >= 0.85", limit_s=300):
        ds = _synthetic_2000()
        tr, va = stratified_split(ds, 0.2, stream_rng(0, "split"))
        trace = TraceModel(ds.schema, TraceConfig(model_size=64, n_encoder_layers=1, n_heads=2),
                           seed=stream_rng(0, "init"))
        train(trace, tr, va, TrainConfig(epochs=100))
        nn = NnMlpModel(ds.schema, seed=stream_rng(0, "init"))
        train(nn, tr, va, TrainConfig(epochs=100, optimizer="rmsprop"))
        scores = {"trace": evaluate(trace, va).balanced_accuracy,
                  "nnmlp": evaluate(nn, va).balanced_accuracy}
        print(f"balanced accuracy: {scores}")
        assert scores["trace"] >= 0.90 and scores["nnmlp"] >= 0.85, scores


# 9 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_c09_alpha_trend():
    with criterion(9, "alpha 0.9 vs 0.5: sensitivity up, specificity down (3-seed mean)"):
        ds = _synthetic_2000(noise=0.5)
        means = {}
        for alpha in (0.5, 0.9):
            sens, spec = [], []
            for seed in range(3):
                tr, va = stratified_split(ds, 0.2, stream_rng(seed, "split"))
                m = TraceModel(ds.schema, TraceConfig(model_size=32), seed=stream_rng(seed, "init"))
                train(m, tr, va, TrainConfig(epochs=30, learning_rate=1e-3, focal_alpha=alpha, seed=seed))
                r = evaluate(m, va)
                sens.append(r.sensitivity)
                spec.append(r.specificity)
            means[alpha] = (np.mean(sens), np.mean(spec))
        print(f"(sensitivity, specificity) by alpha: {means}")
        assert means[0.9][0] >= means[0.5][0] and means[0.9][1] <= means[0.5][1], means


# 10 --------------------------------------------------------------------------
@pytest.mark.slow
def test_c10_missing_data_trends(tmp_path):
    with criterion(10, "keep-missing F1 >= drop-missing F1; F1(ratio 0.5) <= F1(ratio 0)"):
        assert main(["synth", "--data-out", str(tmp_path / "d.csv"), "--schema-out",
                     str(tmp_path / "s.json"), "--samples", "2000", "--positive-ratio", "0.1",
                     "--seed", "7"]) == 0
        common = ["--data", str(tmp_path / "d.csv"), "--schema", str(tmp_path / "s.json"),
                  "--model-size", "32", "--epochs", "30", "--lr", "1e-3"]
        assert main(["ablate-missing", "--simulate-missing", "0.3", "--repeats", "3",
                     "--out", str(tmp_path / "abl")] + common) == 0
        arms = {r["arm"]: float(r["f1"]) for r in _read_rows(tmp_path / "abl" / "ablation.csv")}
        assert main(["missing-curve", "--ratios", "0,0.5", "--repeats", "3",
                     "--out", str(tmp_path / "curve")] + common) == 0
        curve = {r["ratio"]: float(r["f1"]) for r in _read_rows(tmp_path / "curve" / "curve.csv")
                 if r["repeat"] == "mean"}
        print(f"ablation F1 {arms}; curve F1 {curve}")
        assert arms["keep-missing"] >= arms["drop-missing"], arms
        assert curve["0.5"] <= curve["0.0"], curve


# 11 --------------------------------------------------------------------------
def test_c11_determinism_and_persistence(tmp_path):
    with criterion(11, "byte-identical histories; checkpoint reload gives identical logits"):
        assert main(["synth", "--data-out", str(tmp_path / "d.csv"), "--schema-out",
                     str(tmp_path / "s.json"), "--samples", "400", "--missing", "0.1"]) == 0
        args = ["train", "--data", str(tmp_path / "d.csv"), "--schema", str(tmp_path / "s.json"),
                "--model-size", "16", "--epochs", "5", "--seed", "11"]
        for model in ("trace", "nnmlp"):
            assert main(args + ["--model", model, "--out", str(tmp_path / f"{model}_a")]) == 0
            assert main(args + ["--model", model, "--out", str(tmp_path / f"{model}_b")]) == 0
            a = (tmp_path / f"{model}_a" / "history.csv").read_bytes()
            assert a == (tmp_path / f"{model}_b" / "history.csv").read_bytes()

        ds = simulate_missing(_synthetic_2000(), 0.2, 11)
        for model in (TraceModel(ds.schema, TraceConfig(model_size=16), seed=11),
                      NnMlpModel(ds.schema, seed=11)):
            model.fit_preprocessing(ds)
            before = model.forward(model.prepare(ds)).data
            path = tmp_path / f"{model.kind}.npz"
            save_checkpoint(model, path)
            back = load_checkpoint(path)
            assert back.forward(back.prepare(ds)).data.tobytes() == before.tobytes()
