import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cinesync.evalkit import (PER_CLIP, TABLE2_COLUMNS, MetricReport, ReportError, evaluate_clips,
                              frechet_distance, nway_topk, psnr, ssim, table_csv, temporal_consistency,
                              video_ssim)
from cinesync.evalkit.metrics import gaussian_window

# ---------------------------------------------------------------------- PSNR


def test_psnr_half_grey_oracle():
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.5)) == pytest.approx(10 * np.log10(4), abs=1e-3)
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.5)) == pytest.approx(6.0206, abs=1e-3)


def test_psnr_identical_is_capped():
    a = np.random.default_rng(0).random((3, 8, 8, 3))
    assert psnr(a, a) == 99.0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_psnr_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((5, 6)), r.random((5, 6))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------------- SSIM
def naive_ssim(a, b, size=7, sigma=1.5):
    """Window-by-window SSIM, written out directly."""
    w = gaussian_window(size, sigma)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va, vb = (w * (pa - ma) ** 2).sum(), (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def checker16():
    i, j = np.indices((16, 16))
    return (((i // 4) + (j // 4)) % 2).astype(np.float64)


def test_ssim_identical_is_one():
    a = np.random.default_rng(1).random((16, 16, 3))
    assert ssim(a, a) == 1.0


def test_ssim_matches_windowed_oracle():
    r = np.random.default_rng(2)
    a = r.random((16, 16))
    b = np.clip(a + 0.2 * r.normal(size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-9)


def test_ssim_inverted_binary_pattern_is_negative():
    a = checker16()
    got = ssim(a, 1 - a)
    assert got < 0
    assert got == pytest.approx(naive_ssim(a, 1 - a), abs=1e-9)


def test_ssim_symmetric_and_colour():
    r = np.random.default_rng(3)
    a, b = r.random((12, 12, 3)), r.random((12, 12, 3))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9
    luma = np.array([0.299, 0.587, 0.114])
    assert ssim(a, b) == pytest.approx(ssim(a @ luma, b @ luma))


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((6, 6)), np.zeros((6, 6)))


def test_video_ssim_is_frame_mean():
    r = np.random.default_rng(4)
    a, b = r.random((3, 8, 8)), r.random((3, 8, 8))
    assert video_ssim(a, b) == pytest.approx(np.mean([ssim(x, y) for x, y in zip(a, b)]))


# ----------------------------------------------------------------- retrieval
def test_perfect_embeddings_always_retrieved():
    g = np.random.default_rng(5).normal(size=(60, 16))
    for n_way in (2, 10, 50, 60):
        assert nway_topk(g, g, n_way, 1, 20) == 1.0


def test_random_embeddings_hit_chance():
    """10^4 query-trials over a fresh random set; a fixed small set would add its own rank spread."""
    r = np.random.default_rng(6)
    q, g = r.normal(size=(2000, 32)), r.normal(size=(2000, 32))
    assert abs(nway_topk(q, g, 2, 1, 5, np.random.default_rng(0)) - 0.5) < 0.02
    assert abs(nway_topk(q, g, 50, 1, 5, np.random.default_rng(1)) - 0.02) < 0.01


def test_explicit_distractor_sampling_agrees():
    """Direct simulation of the trial protocol matches the closed-form draw."""
    r = np.random.default_rng(7)
    q, g = r.normal(size=(30, 8)), r.normal(size=(30, 8))
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    gn = g / np.linalg.norm(g, axis=1, keepdims=True)
    sims = qn @ gn.T
    hits = []
    for i in range(30):
        others = np.delete(np.arange(30), i)
        for _ in range(2000):
            d = r.choice(others, 4, replace=False)
            cand = np.sort(np.append(d, i))
            order = cand[np.lexsort((cand, -sims[i, cand]))]
            hits.append(i in order[:2])
    assert nway_topk(q, g, 5, 2, 4000, np.random.default_rng(8)) == pytest.approx(np.mean(hits), abs=0.015)


def test_k_equals_n_always_succeeds():
    r = np.random.default_rng(9)
    q, g = r.normal(size=(20, 4)), r.normal(size=(20, 4))
    assert nway_topk(q, g, 7, 7, 50) == 1.0


def test_ties_favour_lower_index():
    g = np.ones((3, 2))
    # all similarities tie: query i is beaten by every lower-indexed row
    from cinesync.evalkit import nway_topk_per_query
    acc = nway_topk_per_query(g, g, 3, 1, 10)
    assert list(acc) == [1.0, 0.0, 0.0]


def test_retrieval_orthogonal_invariance():
    r = np.random.default_rng(10)
    q, g = r.normal(size=(40, 6)), r.normal(size=(40, 6))
    rot, _ = np.linalg.qr(r.normal(size=(6, 6)))
    a = nway_topk(q, g, 10, 1, 200, np.random.default_rng(3))
    b = nway_topk(q @ rot, g @ rot, 10, 1, 200, np.random.default_rng(3))
    assert a == pytest.approx(b, abs=1e-12)


def test_retrieval_errors():
    g = np.zeros((5, 3)) + np.eye(5, 3)
    with pytest.raises(ValueError):
        nway_topk(g, g, 6)
    with pytest.raises(ValueError):
        nway_topk(g[:4], g, 2)


# ------------------------------------------------------- temporal consistency
def test_static_video_consistency_one():
    frames = np.repeat(np.random.default_rng(11).random((1, 4)), 5, axis=0)
    assert temporal_consistency(frames, lambda f: f) == pytest.approx(1.0, abs=1e-6)


def test_alternating_orthogonal_frames_zero():
    frames = np.array([[1.0, 0], [0, 1.0], [1.0, 0], [0, 1.0]])
    assert temporal_consistency(frames, lambda f: f) == pytest.approx(0.0, abs=1e-6)


def test_consistency_scale_invariant():
    f = np.random.default_rng(12).normal(size=(6, 5))
    assert temporal_consistency(f, lambda x: x) == pytest.approx(temporal_consistency(f, lambda x: 3.7 * x))


def test_consistency_needs_two_frames():
    with pytest.raises(ValueError):
        temporal_consistency(np.zeros((1, 3)), lambda x: x)


# -------------------------------------------------------------------- Frechet
def test_frechet_self_distance_zero():
    a = np.random.default_rng(13).normal(size=(500, 8))
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-6)


def test_frechet_shifted_gaussians():
    r = np.random.default_rng(14)
    delta = np.full(8, 0.75)
    a, b = r.normal(size=(10_000, 8)), r.normal(size=(10_000, 8)) + delta
    want = float(delta @ delta)
    assert frechet_distance(a, b) == pytest.approx(want, rel=0.05)


def test_frechet_symmetric():
    r = np.random.default_rng(15)
    a, b = r.normal(size=(300, 5)), 2 * r.normal(size=(300, 5)) + 1
    assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-6


def test_frechet_closed_form_for_scaled_gaussians():
    """Sa = I, Sb = s^2 I gives d (1 - s)^2 for the trace term."""
    r = np.random.default_rng(16)
    a = r.normal(size=(20_000, 4))
    b = 2.0 * r.normal(size=(20_000, 4))
    assert frechet_distance(a, b) == pytest.approx(4 * (1 - 2) ** 2, rel=0.05)


def test_frechet_errors():
    with pytest.raises(ValueError):
        frechet_distance(np.zeros((1, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        frechet_distance(np.zeros((4, 3)), np.zeros((4, 2)))


# --------------------------------------------------------------------- report
def toy_embedder(frames):
    f = np.asarray(frames, np.float64)
    return f.reshape(*f.shape[:-3], -1)[..., ::7] - 0.5


def mean_aggregator(e):
    return e.mean(axis=1)


@pytest.fixture(scope="module")
def report():
    r = np.random.default_rng(17)
    truth = r.random((60, 3, 8, 8, 3))
    recon = np.clip(truth + 0.3 * r.normal(size=truth.shape), 0, 1)
    return evaluate_clips(recon, truth, toy_embedder, toy_embedder, mean_aggregator, np.arange(100, 160),
                          "abc123", "test", trials=50, seed=4)


def test_report_fields_and_ranges(report):
    assert set(report.per_clip) == set(PER_CLIP)
    assert all(len(v) == 60 for v in report.per_clip.values())
    assert report.aggregate["fvd"] >= 0
    assert 0.5 < report.aggregate["video_2way"] <= 1
    assert report.extra["n_way_large"] == 50
    report.validate()


def test_report_aggregate_is_per_clip_mean(report):
    for k in PER_CLIP:
        assert abs(report.aggregate[k] - np.mean(report.per_clip[k])) <= 1e-9


def test_report_json_roundtrip(report):
    text = report.to_json()
    back = MetricReport.from_json(text)
    assert back.to_json() == text
    d = json.loads(text)
    assert d["config_hash"] == "abc123" and d["split_id"] == "test"
    assert list(d)[:4] == ["config_hash", "split_id", "metric_seed", "trials"]


def test_report_csv_columns(report):
    lines = report.to_csv().splitlines()
    assert lines[0] == "model,2-way,50-way,FVD-surrogate,DTC,CTC,SSIM,PSNR"
    assert len(lines) == 2
    t2 = table_csv({"Joint": report, "DualFusion": report}, TABLE2_COLUMNS).splitlines()
    assert t2[0] == "model,2-way,50-way,FVD-surrogate,SSIM,PSNR" and len(t2) == 3


def test_report_is_deterministic(report):
    r = np.random.default_rng(17)
    truth = r.random((60, 3, 8, 8, 3))
    recon = np.clip(truth + 0.3 * r.normal(size=truth.shape), 0, 1)
    again = evaluate_clips(recon, truth, toy_embedder, toy_embedder, mean_aggregator, np.arange(100, 160),
                           "abc123", "test", trials=50, seed=4)
    assert again.to_json() == report.to_json()


def test_report_rejects_bad_values(report):
    bad = MetricReport.from_json(report.to_json())
    bad.aggregate["psnr"] += 1.0
    with pytest.raises(ReportError):
        bad.validate()
    bad = MetricReport.from_json(report.to_json())
    bad.aggregate["fvd"] = -1.0
    with pytest.raises(ReportError):
        bad.validate()


def test_evaluate_shape_errors():
    with pytest.raises(ReportError):
        evaluate_clips(np.zeros((2, 2, 8, 8, 3)), np.zeros((3, 2, 8, 8, 3)), toy_embedder, toy_embedder,
                       mean_aggregator, [0, 1], "h", "test")
