"""The fourteen acceptance criteria, one test each, at their stated tolerances.

Each test records ``criterion``, ``title`` and ``measured`` so the terminal
summary prints one PASS/FAIL line per criterion.
"""

import json
import os
import shutil
import time

import numpy as np
import pytest

from oracles import ap_oracle, label_oracle, peaks_oracle, windowed_mean
from softspot.cli import main
from softspot.dataio import read_feature_cache, write_feature_cache
from softspot.evaluation import (AP_THRESHOLDS, P_GRID, MatchCounts, ap_range, average_precision,
                                 precision_recall_f1)
from softspot.flow import FlowField, optical_strain, tvl1_flow
from softspot.preprocess import MotionInput
from softspot.pseudolabel import FrameInterval, generate_labels
from softspot.softnet import (PARAM_NAMES, SoftNetModel, TrainConfig, TrainingSample, backward, forward,
                              grad_cam, grad_cam_weights, head_from_concat, load_model, parameter_count,
                              save_model, train)
from softspot.spotting import ScoreSeries, SpotResult, compute_threshold, detect_peaks, smooth_scores

from conftest import textured


@pytest.fixture
def criterion(record_property):
    def record(num, title, measured=""):
        record_property("criterion", num)
        record_property("title", title)
        record_property("measured", measured)
    return record


def test_01_parameter_count(criterion):
    t0 = time.perf_counter()
    model = SoftNetModel.initialize(np.random.default_rng(0))
    n = parameter_count(model)
    elapsed = time.perf_counter() - t0
    criterion(1, "parameter count = 314,817", f"{n} params, {elapsed:.3f} s")
    assert n == 314_817
    assert round(n / 1e6, 4) == 0.3148
    assert elapsed < 1.0


def _pattern(cache):
    """Every piecewise-linear switch of the network: ReLU signs and pool argmaxes."""
    parts = []
    for _, z, idx in cache["streams"]:
        parts += [z > 0, idx]
    return parts + [cache["idx2"], cache["h_pre"] > 0]


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def test_02_gradient_check(criterion):
    """Central differences (h = 1e-4) for 200 parameters over 10 inputs, 20 per input.

    Central differences are only meaningful inside one linear piece of the
    network; a draw whose +/-h perturbation flips any ReLU or pool argmax is
    replaced by a fresh draw from the same tensor and the count is reported.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    model = SoftNetModel.initialize(rng)
    for b in (1, 3, 5, 7):
        model.params[b] = rng.uniform(-0.05, 0.05, model.params[b].shape)
    h = 1e-4
    worst, checked, redrawn = 0.0, 0, 0
    for n in range(10):
        x = rng.normal(size=(42, 42, 3))
        x[..., 2] = np.abs(x[..., 2])
        target = float(rng.uniform())
        grads, _ = backward(model, x, target)
        base = _pattern(forward(model, x)[1])
        # 2 parameters from each of the 10 tensors per input
        for t in [t for t in range(len(PARAM_NAMES)) for _ in range(2)]:
            p = model.params[t]
            while True:
                idx = tuple(int(rng.integers(0, s)) for s in p.shape)
                keep = p[idx]
                p[idx] = keep + h
                s_up, c_up = forward(model, x)
                p[idx] = keep - h
                s_dn, c_dn = forward(model, x)
                p[idx] = keep
                if _same(_pattern(c_up), base) and _same(_pattern(c_dn), base):
                    break
                redrawn += 1
            fd = (0.5 * (s_up[0] - target) ** 2 - 0.5 * (s_dn[0] - target) ** 2) / (2 * h)
            an = grads[t][idx]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            worst = max(worst, rel)
            checked += 1
    elapsed = time.perf_counter() - t0
    criterion(2, "gradient check vs central differences",
              f"{checked} params, max rel err {worst:.2e}, {redrawn} kink redraws, {elapsed:.1f} s")
    assert checked == 200
    assert worst < 1e-4
    assert elapsed < 30


def test_03_strain_analytic(criterion):
    y, x = np.mgrid[0:32, 0:32].astype(float)
    a, b, c, d = 0.13, -0.07, 0.21, 0.05
    s = optical_strain(FlowField(a * x + b * y, c * x + d * y))
    exy = 0.5 * (b + c)
    mag = np.sqrt(a**2 + d**2 + 2 * exy**2)
    inner = (slice(1, -1), slice(1, -1))
    err = max(np.abs(s.exx[inner] - a).max(), np.abs(s.eyy[inner] - d).max(),
              np.abs(s.exy[inner] - exy).max(), np.abs(s.magnitude[inner] - mag).max())
    shear = optical_strain(FlowField(0.4 * y, np.zeros_like(y)))
    err_shear = max(np.abs(shear.exy[inner] - 0.2).max(), np.abs(shear.exx[inner]).max(),
                    np.abs(shear.magnitude[inner] - np.sqrt(2 * 0.04)).max())
    criterion(3, "strain on affine and shear fields", f"max err {max(err, err_shear):.1e}")
    assert err < 1e-12 and err_shear < 1e-12


def test_04_tvl1_sanity(criterion):
    t0 = time.perf_counter()
    img = textured(64, seed=21)
    f = tvl1_flow(img, np.roll(img, 2, axis=1))
    mean_err = abs(f.u[8:-8, 8:-8].mean() - 2.0)
    g = tvl1_flow(img, img)
    still = max(np.abs(g.u).max(), np.abs(g.v).max())
    elapsed = time.perf_counter() - t0
    criterion(4, "TV-L1 shift recovery and zero flow",
              f"mean-u err {mean_err:.3f} px, static max {still:.1e} px, {elapsed:.2f} s")
    assert mean_err < 0.2 and still < 1e-3 and elapsed < 10


def test_05_pseudolabel_oracle(criterion):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(1000):
        length = int(rng.integers(2, 201))
        k = int(rng.integers(1, min(20, length - 1) + 1))
        ivs = []
        for _ in range(int(rng.integers(0, 5))):
            a = int(rng.integers(0, length))
            ivs.append((a, int(rng.integers(a, min(a + 40, length)))))
        for kind in ("linear", "step4", "unit_step"):
            got = generate_labels(length, k, [FrameInterval(*iv) for iv in ivs], kind).scores
            mismatches += not np.array_equal(got, np.array(label_oracle(length, k, ivs, kind)))
    criterion(5, "pseudo-labels equal brute-force IoU", f"1000 cases x 3 functions, {mismatches} mismatches")
    assert mismatches == 0


def test_06_metric_arithmetic(criterion):
    p, r, f1 = precision_recall_f1(MatchCounts(90, 357, 210))
    _, _, overall = precision_recall_f1(MatchCounts(110, 621, 247))
    criterion(6, "P/R/F1 arithmetic", f"P={p:.4f} R={r:.4f} F1={f1:.4f} overall F1={overall:.4f}")
    assert abs(p - 0.2013) < 5e-4 and abs(r - 0.3000) < 5e-4 and abs(f1 - 0.2410) < 5e-4
    assert abs(overall - 0.2022) < 5e-4


def test_07_ap_oracle(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        gts = []
        for _ in range(int(rng.integers(0, 6))):
            a = int(rng.integers(0, 60))
            gts.append((a, a + int(rng.integers(0, 12))))
        preds = []
        for _ in range(int(rng.integers(0, 11))):
            if gts and rng.random() < 0.5:
                # jitter a ground-truth interval so IoUs span the threshold range
                g = gts[int(rng.integers(len(gts)))]
                a = max(0, g[0] + int(rng.integers(-3, 4)))
                b = max(a, g[1] + int(rng.integers(-3, 4)))
            else:
                a = int(rng.integers(0, 60))
                b = a + int(rng.integers(0, 12))
            conf = float(rng.integers(0, 5)) / 4  # coarse grid forces confidence ties
            preds.append(((a, b), conf, int(rng.integers(0, 70))))
        objs = [SpotResult(pk, FrameInterval(*iv), c, 0.0) for iv, c, pk in preds]
        gt_objs = [FrameInterval(*g) for g in gts]
        per = [ap_oracle([(preds, gts)], t) for t in AP_THRESHOLDS]
        for t, want in zip(AP_THRESHOLDS, per):
            worst = max(worst, abs(average_precision(objs, gt_objs, t) - want))
        worst = max(worst, abs(ap_range(objs, gt_objs) - float(np.mean(per))))
    criterion(7, "AP equals rank-walk oracle", f"500 instances, max abs diff {worst:.1e}")
    assert worst <= 1e-9


def test_08_peak_oracle(criterion):
    rng = np.random.default_rng(8)
    mismatches, violations = 0, 0
    for case in range(500):
        n = int(rng.integers(1, 201))
        # integer levels make plateaus and ties common
        values = (rng.integers(0, 8, n) if case % 2 else rng.random(n)).tolist()
        k = int(rng.integers(1, 21))
        t = float(np.quantile(values, rng.uniform(0, 1)))
        got = detect_peaks(ScoreSeries(values), t, k)
        mismatches += got != peaks_oracle(values, t, k)
        violations += any(b - a < k for a, b in zip(got, got[1:]))
    criterion(8, "peak detection equals brute force", f"500 cases, {mismatches} mismatches, {violations} spacing violations")
    assert mismatches == 0 and violations == 0


def test_09_smoothing(criterion):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(3, 1001))
        k = int(rng.integers(1, (n - 1) // 2 + 1))
        values = rng.normal(size=n).tolist()
        got = smooth_scores(ScoreSeries(values), k).scores
        worst = max(worst, float(np.abs(got - np.array(windowed_mean(values, k))).max()))
    const = smooth_scores(ScoreSeries(np.full(50, 0.375)), 6).scores
    criterion(9, "windowed-mean smoothing", f"max err {worst:.1e}, constant preserved {bool(np.all(const == 0.375))}")
    assert worst < 1e-12
    assert len(const) == 38 and np.all(const == 0.375)


def test_10_threshold(criterion):
    rng = np.random.default_rng(10)
    endpoint_ok, monotone_ok = True, True
    for _ in range(200):
        s = ScoreSeries(rng.normal(size=int(rng.integers(1, 300))))
        endpoint_ok &= compute_threshold(s, 0.0) == s.scores.mean()
        endpoint_ok &= compute_threshold(s, 1.0) == s.scores.max()
        ts = [compute_threshold(s, p) for p in P_GRID]
        monotone_ok &= all(a <= b for a, b in zip(ts, ts[1:]))
    criterion(10, "threshold endpoints and monotonicity", f"endpoints exact {endpoint_ok}, monotone {monotone_ok}")
    assert len(P_GRID) == 19
    assert endpoint_ok and monotone_ok


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Synthetic corpus with seed 7, full LOSO evaluation run twice from scratch."""
    base = tmp_path_factory.mktemp("e2e")
    data, out = base / "data", base / "out"
    jobs = str(min(4, os.cpu_count() or 1))
    t0 = time.perf_counter()
    assert main(["synth", "--seed", "7", "--out", str(data)]) == 0
    argv = ["evaluate", "--dataset-root", str(data), "--out", str(out), "--seed", "7", "--jobs", jobs]
    assert main(argv) == 0
    elapsed = time.perf_counter() - t0
    first = (out / "report.json").read_bytes()
    # second run recomputes everything, features included
    shutil.rmtree(out)
    assert main(argv) == 0
    second = (out / "report.json").read_bytes()
    return {"base": base, "data": data, "out": out, "elapsed": elapsed, "jobs": jobs,
            "first": first, "second": second}


@pytest.mark.slow
def test_11_end_to_end(criterion, e2e):
    doc = json.loads(e2e["first"])
    macro, micro = doc["classes"]["macro"]["f1"], doc["classes"]["micro"]["f1"]
    identical = e2e["first"] == e2e["second"]
    criterion(11, "synthetic LOSO protocol",
              f"macro F1 {macro:.3f}, micro F1 {micro:.3f}, {e2e['elapsed']:.0f} s on {e2e['jobs']} core(s), "
              f"reports identical {identical}")
    assert doc["config"]["k"] == {"macro": 18, "micro": 6} and doc["config"]["p"] == 0.55
    assert doc["classes"]["macro"]["total"] == 40 and doc["classes"]["micro"]["total"] == 20
    assert len(doc["folds"]) == 4 and len(doc["videos"]) == 20
    assert macro >= 0.5 and micro >= 0.3
    assert e2e["elapsed"] < 600
    assert identical


def test_12_determinism(criterion, tmp_path):
    rng = np.random.default_rng(12)
    samples = [TrainingSample(rng.normal(scale=0.3, size=(42, 42, 3)), float(i % 2)) for i in range(12)]
    cfg = TrainConfig(epochs=3, seed=4)
    save_model(train(samples, cfg), tmp_path / "a.sftn")
    save_model(train(samples, cfg), tmp_path / "b.sftn")
    models_equal = (tmp_path / "a.sftn").read_bytes() == (tmp_path / "b.sftn").read_bytes()
    save_model(load_model(tmp_path / "a.sftn"), tmp_path / "c.sftn")
    model_rt = (tmp_path / "a.sftn").read_bytes() == (tmp_path / "c.sftn").read_bytes()

    data = rng.normal(size=(7, 42, 42, 3)).astype(np.float32)
    data[..., 2] = np.abs(data[..., 2])
    feats = [MotionInput(d, i) for i, d in enumerate(data)]
    write_feature_cache(tmp_path / "f.sfmc", feats, 6)
    back, k = read_feature_cache(tmp_path / "f.sfmc")
    cache_rt = k == 6 and all(np.array_equal(a.data, b.data) for a, b in zip(feats, back))
    write_feature_cache(tmp_path / "g.sfmc", back, k)
    cache_rt &= (tmp_path / "f.sfmc").read_bytes() == (tmp_path / "g.sfmc").read_bytes()
    criterion(12, "training, model file and cache determinism",
              f"models identical {models_equal}, model round trip {model_rt}, cache round trip {cache_rt}")
    assert models_equal and model_rt and cache_rt


@pytest.mark.slow
def test_13_p_sweep(criterion, e2e):
    out = e2e["out"]
    argv = ["sweep", "--dataset-root", str(e2e["data"]), "--out", str(out), "--seed", "7", "--jobs", e2e["jobs"]]
    assert main(argv) == 0
    rows = json.loads((out / "sweep.json").read_text())["rows"]
    csv_rows = (out / "sweep.csv").read_text().strip().splitlines()[1:]
    bad = 0
    for vid in rows[0]["spots"]:
        for cls in ("macro", "micro"):
            counts = [r["spots"][vid][cls] for r in rows]
            bad += any(a < b for a, b in zip(counts, counts[1:]))
    criterion(13, "p sweep grid and monotone spot counts",
              f"{len(csv_rows)} rows, {bad} video/class series increasing")
    assert len(csv_rows) == 19 and [r["p"] for r in rows] == list(P_GRID)
    assert bad == 0


def test_14_grad_cam(criterion):
    rng = np.random.default_rng(14)
    zero = grad_cam(SoftNetModel.zeros(), rng.normal(size=(42, 42, 3)))
    zero_ok = zero.shape == (42, 42) and np.all(zero == 0)
    model = SoftNetModel.initialize(rng)
    worst, shapes_ok = 0.0, True
    delta = 1e-5
    for _ in range(5):
        x = np.abs(rng.normal(size=(42, 42, 3)))
        weights, concat = grad_cam_weights(model, x)
        shapes_ok &= concat.shape == (14, 14, 16) and grad_cam(model, x).shape == (42, 42)
        for c in range(16):
            bump = np.zeros_like(concat)
            bump[..., c] = delta
            fd = (head_from_concat(model, concat + bump) - head_from_concat(model, concat - bump)) / (2 * delta)
            # a uniform shift of channel c moves the score by the sum of its 196 gradients
            worst = max(worst, abs(fd / 196 - weights[c]))
    criterion(14, "GradCAM shape, zero model and channel weights",
              f"zero map {zero_ok}, shapes {shapes_ok}, max weight err {worst:.1e}")
    assert zero_ok and shapes_ok and worst < 1e-3
