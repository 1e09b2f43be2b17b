"""Acceptance suite: one test per criterion, each printing a PASS line with
its runtime. Tolerances and budgets are pinned here and nowhere else."""
import dataclasses
import math
import time

import numpy as np
import pytest

from playclass import dataset_io as dio
from playclass import loco, mask_features, rep_analysis, synthetic
from playclass import chunk_planner as cp
from playclass import classifier as clf
from playclass import track_metrics as tm
from playclass.classifier import ModelConfig, TrainConfig

from test_chunk_planner import boundary_oracle, grounding_oracle, det
from test_classifier import _grad_check, _tiny_cnn
from test_loco import reference_confusion_fixture
from test_track_metrics import brute_assignment, hota_oracle, idf1_oracle, random_instance


def _passed(name, t0, budget):
    elapsed = time.time() - t0
    status = "PASS" if elapsed < budget else "FAIL (over budget)"
    print(f"\n[ACCEPTANCE] {name}: {status} ({elapsed:.1f}s / budget {budget:.0f}s)")
    assert elapsed < budget, f"{name} exceeded its runtime budget"


def test_acceptance_reference_metrics():
    t0 = time.time()
    report = loco.evaluate(reference_confusion_fixture())
    pc = report["per_class"]
    for name, f1, prec in [("other", 94.8, 96.2), ("object", 61.9, 58.2),
                           ("locomotor", 74.4, 66.2)]:
        assert pc[name]["f1"] * 100 == pytest.approx(f1, abs=0.3)
        assert pc[name]["precision"] * 100 == pytest.approx(prec, abs=0.3)
    assert report["macro_f1"] * 100 == pytest.approx(77.0, abs=0.2)
    _passed("reference-confusion consistency", t0, 1.0)


def test_acceptance_gradient_correctness():
    t0 = time.time()
    rng = np.random.default_rng(101)
    worst = 0.0
    worst = max(worst, _grad_check(ModelConfig(variant="mlp", d_in=6, h_bottleneck=4),
                                   rng, rng.standard_normal((5, 6))))
    worst = max(worst, _grad_check(_tiny_cnn(), rng, rng.standard_normal((4, 4, 3))))
    worst = max(worst, _grad_check(_tiny_cnn(hybrid=True), rng,
                                   rng.standard_normal((4, 4, 3)),
                                   feats=rng.standard_normal((4, 7))))
    assert worst < 1e-4
    print(f"\n  max relative gradient error: {worst:.2e}")
    _passed("gradient correctness", t0, 30.0)


def test_acceptance_tracking_metric_oracles():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    for trial in range(100):
        gt_frames, pred_frames = random_instance(rng)
        hota, det_a, ass_a, _ = tm.hota_on_video(gt_frames, pred_frames)
        want_hota, want_alpha = hota_oracle(gt_frames, pred_frames)
        assert hota == pytest.approx(want_hota, abs=1e-9), trial
        for alpha in tm.ALPHA_GRID:
            assert det_a[alpha] == pytest.approx(want_alpha[alpha][0], abs=1e-9)
            assert ass_a[alpha] == pytest.approx(want_alpha[alpha][1], abs=1e-9)
        idf1 = tm.idf1_on_video(gt_frames, pred_frames)
        assert idf1 == pytest.approx(idf1_oracle(gt_frames, pred_frames), abs=1e-9)
        # id-permutation invariance on the same instance
        ids = sorted({o.obj_id for objs in pred_frames.values() for o in objs})
        perm = dict(zip(ids, rng.permutation(ids).tolist()))
        permuted = {f: [tm.FrameObject(perm[o.obj_id], o.bbox, o.cells, o.shape)
                        for o in objs] for f, objs in pred_frames.items()}
        h2, *_ = tm.hota_on_video(gt_frames, permuted)
        assert h2 == pytest.approx(hota, abs=1e-12)
        assert tm.idf1_on_video(gt_frames, permuted) == pytest.approx(idf1, abs=1e-12)
        # perfect tracking scores 1.0
        mirror = {f: [tm.FrameObject(o.obj_id + 1000, o.bbox, o.cells, o.shape)
                      for o in objs] for f, objs in gt_frames.items()}
        hp, *_ = tm.hota_on_video(gt_frames, mirror)
        assert hp == pytest.approx(1.0, abs=1e-12)
        assert tm.idf1_on_video(gt_frames, mirror) == pytest.approx(1.0, abs=1e-12)
    _passed("tracking-metric oracles (100 instances)", t0, 60.0)


def test_acceptance_hungarian_optimality():
    t0 = time.time()
    rng = np.random.default_rng(7)
    cases = 0
    while cases < 1000:
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 7))
        cost = rng.uniform(-5, 10, size=(n, m))
        maximize = bool(rng.integers(0, 2))
        pairs, total = tm.hungarian(cost, maximize=maximize)
        _, want = brute_assignment(cost, maximize)
        assert total == want, (cost, maximize)
        cases += 1
    _passed("hungarian optimality (1000 cases up to 6x6)", t0, 30.0)


def _translate_record(rec, dx, dy):
    """Exact translation without decoding: every flat index shifts by
    dx*H + dy, so only the leading/trailing zero runs change."""
    h, w = rec.shape
    delta = dx * h + dy
    counts = list(rec.counts)
    assert len(counts) >= 3 and counts[-1] > delta >= 0
    counts[0] += delta
    counts[-1] -= delta
    x, y, bw, bh = rec.bbox
    return dataclasses.replace(rec, bbox=(x + dx, y + dy, bw, bh), counts=counts)


def test_acceptance_feature_pipeline():
    t0 = time.time()
    records, labels, info = synthetic.generate_video(
        "fixture", 1, n_windows=180, n_birds=3, seed=11, radius=10)
    assert info.frame_count == 22500
    groups = {}
    for r in records:
        groups.setdefault((r.video_id, r.track_id), []).append(r)
    keys, matrix, flags = mask_features.compute_window_features(groups, labels)
    per_bird = {}
    for k in keys:
        per_bird[k.bird_id] = per_bird.get(k.bird_id, 0) + 1
    assert sorted(per_bird.values()) == [180, 180, 180]
    assert matrix.shape == (540, 171)
    assert np.isfinite(matrix[~flags]).all()

    # analytic shape checks
    from conftest import make_disc, make_square, mask_record
    sq = mask_features.frame_spatial_features(mask_record(make_square(100, pad=0)))
    assert sq[2] == pytest.approx(math.pi / 4, rel=0.01)
    disc = mask_features.frame_spatial_features(mask_record(make_disc(50)))
    assert disc[2] == pytest.approx(1.0, abs=0.05)

    # translation invariance, bitwise, over the whole fixture (the shift must
    # fit inside the generator's wall margin to avoid raster wrap)
    shifted_groups = {k: [_translate_record(r, 2, 3) for r in v]
                      for k, v in groups.items()}
    _, matrix2, flags2 = mask_features.compute_window_features(shifted_groups, labels)
    assert matrix.tobytes() == matrix2.tobytes()
    assert np.array_equal(flags, flags2)
    _passed("feature pipeline (22,500 frames x 3 birds)", t0, 60.0)


def test_acceptance_end_to_end_learning():
    t0 = time.time()
    records, labels, manifest = synthetic.generate_dataset(
        n_cages=5, videos_per_cage=1, n_windows=60, n_birds=3, seed=42, radius=10)
    groups = {}
    for r in records:
        groups.setdefault((r.video_id, r.track_id), []).append(r)
    keys, matrix, flags = mask_features.compute_window_features(groups, labels)
    dataset = loco.assemble_dataset(labels, manifest, features=(keys, matrix, flags))
    folds = loco.make_loco_folds(manifest)
    for f in folds:  # disjoint-cage leakage guard
        assert not ({f.test_cage} & set(f.train_cages))
        assert not ({f.val_cage} & set(f.train_cages))
        assert f.test_cage != f.val_cage
    mc = ModelConfig(variant="mlp", d_in=171, h_bottleneck=256)
    tc = TrainConfig(epochs=5, seed=0)
    report, results = loco.run_loco(dataset, folds, mc, tc)
    print(f"\n  end-to-end macro-F1: {report['macro_f1']:.3f}")
    assert report["macro_f1"] >= 0.90
    _passed("end-to-end desk-scale learning", t0, 300.0)


def test_acceptance_chunk_planner():
    t0 = time.time()
    rng = np.random.default_rng(31)
    for trial in range(50):
        dets = {}
        frame_count = 3000
        for f in range(frame_count):
            if rng.random() < 0.08:
                continue
            n = int(rng.integers(1, 5))
            dets[f] = [det(float(rng.uniform(0, 600)), float(rng.uniform(0, 500)),
                           conf=float(rng.uniform(0.3, 1.0))) for _ in range(n)]
        if any(f in dets for f in range(125)):
            assert cp.score_grounding(dets) == grounding_oracle(dets)
        plan = cp.plan_boundaries(dets, "v", frame_count)
        assert plan.boundaries == boundary_oracle(dets, frame_count)
    # prompts always interior
    from conftest import mask_record, random_blob
    for seed in range(50):
        m = random_blob(np.random.default_rng(seed))
        prompts, _ = cp.extract_point_prompts([mask_record(m)])
        (_, (x, y)), = prompts
        assert m[y, x]
    _passed("chunk planner oracles (50 streams)", t0, 30.0)


def test_acceptance_cka_suite():
    t0 = time.time()
    rng = np.random.default_rng(55)
    for _ in range(100):
        n = int(rng.integers(5, 40))
        x = rng.standard_normal((n, int(rng.integers(2, 8))))
        y = rng.standard_normal((n, int(rng.integers(2, 8))))
        assert rep_analysis.linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)
        q, _ = np.linalg.qr(rng.standard_normal((y.shape[1], y.shape[1])))
        c = float(rng.uniform(0.1, 5.0))
        base = rep_analysis.linear_cka(x, y)
        assert abs(rep_analysis.linear_cka(x, c * y @ q) - base) < 1e-8
        assert abs(base - rep_analysis.linear_cka(y, x)) < 1e-12
    _passed("CKA suite (100 pairs)", t0, 10.0)


def test_acceptance_train_determinism(tmp_path):
    t0 = time.time()
    from playclass.cli import main

    records, labels, manifest = synthetic.generate_dataset(
        n_cages=5, videos_per_cage=1, n_windows=10, n_birds=2, seed=3, radius=6)
    dio.write_tracks(records, tmp_path / "tracks.tsv")
    dio.write_labels(labels, tmp_path / "labels.csv")
    dio.write_manifest(manifest, tmp_path / "manifest")
    assert main(["features", "--tracks", str(tmp_path / "tracks.tsv"),
                 "--labels", str(tmp_path / "labels.csv"),
                 "--out", str(tmp_path / "features.csv"),
                 "--out-dir", str(tmp_path)]) == 0
    (tmp_path / "run.toml").write_text("\n".join([
        "[run]", 'variant = "mlp"', "seed = 9",
        "[data]", 'labels = "labels.csv"', 'manifest = "manifest"',
        'features = "features.csv"',
        "[train]", "epochs = 2", "[model]", "h_bottleneck = 16",
    ]) + "\n")
    assert main(["train", "--config", str(tmp_path / "run.toml"),
                 "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", str(tmp_path / "run.toml"),
                 "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == \
        (tmp_path / "b" / "report.json").read_bytes()
    _passed("train determinism (byte-identical report.json)", t0, 120.0)
