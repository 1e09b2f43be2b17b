"""Command-line pipeline: one subcommand per stage, file-to-file contracts.

Every run writes ``run.json`` (the resolved configuration) into ``--out-dir``.
Exit codes: 0 success, 1 validation/format error, 2 usage error.
``PLAYCLASS_LOG`` sets verbosity (error, info, debug).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import chunk_planner, dataset_io, loco, rep_analysis, synthetic, track_metrics
from .classifier import ModelConfig, TrainConfig
from .dataset_io import FormatError, ValidationError, dump_json, write_atomic

log = logging.getLogger("playclass")

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("PLAYCLASS_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _write_run_json(args: argparse.Namespace, command: str) -> None:
    out_dir = Path(args.out_dir)
    resolved = {k: v for k, v in sorted(vars(args).items())
                if k not in ("func",) and not k.startswith("_")}
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in resolved.items()}
    write_atomic(out_dir / "run.json", dump_json({"command": command, "config": resolved}))


def _load_toml(path) -> dict:
    with open(path, "rb") as f:
        return tomllib.load(f)


# --- subcommand implementations -------------------------------------------------

def cmd_validate(args) -> int:
    manifest = dataset_io.load_manifest(args.manifest) if args.manifest else None
    if manifest:
        print(f"manifest: {len(manifest.videos)} videos, {len(manifest.birds)} birds, "
              f"cages {manifest.cages}")
    labels = None
    if args.labels:
        labels = dataset_io.load_labels(args.labels)
        hist = dataset_io.category_histogram(labels)
        print(f"labels: {len(labels)} windows, histogram "
              + " ".join(f"{k}={v}" for k, v in sorted(hist.items())))
        if manifest:
            known = {v.video_id for v in manifest.videos}
            missing = sorted({w.video_id for w in labels} - known)
            if missing:
                raise ValidationError(f"labels reference videos not in manifest: {missing}")
    if args.tracks:
        groups = dataset_io.load_tracks(args.tracks, manifest=manifest)
        n = sum(len(v) for v in groups.values())
        print(f"tracks: {n} masks across {len(groups)} (video, track) groups")
    if args.embeddings:
        seqs = dataset_io.load_embeddings(args.embeddings)
        d = seqs[0].tokens.shape[1] if seqs else 0
        print(f"embeddings: {len(seqs)} windows, D={d}, backbone={seqs[0].backbone_id if seqs else '-'}")
        if labels is not None:
            _, orphans = dataset_io.match_windows(seqs, labels)
            for key in orphans:
                log.warning("embedding window %s has no label", key)
            print(f"embeddings: {len(orphans)} orphan windows")
    print("ok")
    return 0


def _features_for_video(payload):
    video_id, groups, labels, fps, radius, min_valid = payload
    from .mask_features import compute_window_features

    return compute_window_features(groups, labels, fps=fps,
                                   neighbor_radius=radius, min_valid=min_valid)


def cmd_features(args) -> int:
    from .mask_features import compute_window_features

    groups = dataset_io.load_tracks(args.tracks)
    labels = dataset_io.load_labels(args.labels)
    if args.jobs > 1:
        videos = sorted({w.video_id for w in labels})
        payloads = []
        for vid in videos:
            sub_groups = {k: v for k, v in groups.items() if k[0] == vid}
            sub_labels = [w for w in labels if w.video_id == vid]
            payloads.append((vid, sub_groups, sub_labels, args.fps,
                             args.neighbor_radius, args.min_valid))
        keys, mats, flags = [], [], []
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for k, m, f in pool.map(_features_for_video, payloads):
                keys.extend(k)
                mats.append(m)
                flags.append(f)
        matrix = np.vstack(mats)
        flag_arr = np.concatenate(flags)
    else:
        keys, matrix, flag_arr = compute_window_features(
            groups, labels, fps=args.fps, neighbor_radius=args.neighbor_radius,
            min_valid=args.min_valid)
    dataset_io.write_features(keys, matrix, flag_arr, args.out)
    print(f"wrote {len(keys)} window vectors to {args.out}")
    return 0


def cmd_plan_chunks(args) -> int:
    dets = chunk_planner.load_detections(args.detections)
    if args.video not in dets:
        raise ValidationError(f"video {args.video!r} not present in detections")
    per_frame = dets[args.video]
    if args.frame_count:
        frame_count = args.frame_count
    elif args.manifest:
        frame_count = dataset_io.load_manifest(args.manifest).frame_count(args.video)
    else:
        raise ValidationError("pass --frame-count or --manifest")
    grounding = chunk_planner.score_grounding(
        per_frame, expected_count=args.expected_birds, d_ref=args.d_ref)
    plan = chunk_planner.plan_boundaries(
        per_frame, args.video, frame_count, chunk_len=args.chunk_len,
        delta=args.delta, grounding_frame=grounding)
    if args.tracks:
        groups = dataset_io.load_tracks(args.tracks)
        for b in plan.boundaries:
            masks = [r for (vid, _), recs in groups.items() if vid == args.video
                     for r in recs if r.frame == b - 1]
            prompts, lost = chunk_planner.extract_point_prompts(masks)
            for tid, (x, y) in prompts:
                plan.prompts.append({"boundary": b, "track_id": tid, "x": x, "y": y})
            for tid in lost:
                log.warning("track %d lost at boundary %d (empty mask)", tid, b)
    chunk_planner.write_plan(plan, args.out)
    print(f"grounding frame {plan.grounding_frame}, {len(plan.boundaries)} boundaries "
          f"-> {args.out}")
    return 0


def cmd_match_ids(args) -> int:
    groups = dataset_io.load_tracks(args.tracks)
    plan = chunk_planner.load_plan(args.plan)
    video = plan.video_id
    matches = []
    for b in plan.boundaries:
        prev = [r for (vid, _), recs in groups.items() if vid == video
                for r in recs if r.frame == b - 1]
        nxt = [r for (vid, _), recs in groups.items() if vid == video
               for r in recs if r.frame == b]
        matches.append(chunk_planner.match_identities(prev, nxt, b, tau=args.tau))
    payload = {
        "video_id": video,
        "tau_match": args.tau,
        "matches": [
            {"boundary_frame": m.boundary_frame,
             "assignment": [{"prev_track_id": p, "next_track_id": n, "iou": i}
                            for p, n, i in m.assignment],
             "flags": m.flags}
            for m in matches
        ],
    }
    write_atomic(args.out, dump_json(payload))
    flagged = sum(len(m.flags) for m in matches)
    print(f"{len(matches)} boundaries matched, {flagged} flagged -> {args.out}")
    return 0


def cmd_review_export(args) -> int:
    data = json.loads(Path(args.matches).read_text())
    try:
        video = data["video_id"]
        tau = float(data.get("tau_match", chunk_planner.TAU_MATCH))
        matches = [
            chunk_planner.BoundaryMatch(
                int(m["boundary_frame"]),
                [(e["prev_track_id"], e["next_track_id"], float(e["iou"]))
                 for e in m["assignment"]],
                [int(t) for t in m["flags"]])
            for m in data["matches"]
        ]
    except (KeyError, TypeError) as e:
        raise FormatError(f"{args.matches}: bad matches file: {e}") from e
    path = chunk_planner.export_review_bundle(video, matches, args.out_dir,
                                              crops_dir=args.crops, tau=tau)
    print(f"review bundle -> {path}")
    return 0


def cmd_apply_corrections(args) -> int:
    groups = dataset_io.load_tracks(args.tracks)
    video_id, corrections = dataset_io.load_corrections(args.corrections)
    plan = chunk_planner.load_plan(args.plan) if args.plan else None
    fixed = chunk_planner.apply_corrections(groups, video_id, corrections, plan=plan)
    dataset_io.write_tracks(fixed, args.out)
    print(f"corrected tracks -> {args.out}")
    return 0


def cmd_trackeval(args) -> int:
    gt = dataset_io.load_tracks(args.gt)
    pred = dataset_io.load_tracks(args.pred)
    method = args.method or Path(args.pred).stem
    report = track_metrics.evaluate_tracking(gt, pred, use_masks=args.similarity == "mask",
                                             method=method)
    out = Path(args.out_dir) / "trackeval.json" if not args.out else Path(args.out)
    write_atomic(out, dump_json(report.to_dict()))
    for w in report.warnings:
        log.warning("%s", w)
    print(f"HOTA {report.hota_mean:.3f} +- {report.hota_sd:.3f}  "
          f"IDF1 {report.idf1_mean:.3f} +- {report.idf1_sd:.3f} ({report.similarity_used})")
    return 0


def _resolve_run_config(path) -> dict:
    cfg = _load_toml(path)
    run = cfg.get("run", {})
    model = cfg.get("model", {})
    train = cfg.get("train", {})
    variant = run.get("variant", "mlp")
    if variant not in ("mlp", "cnn", "hybrid"):
        raise ValidationError(f"run.variant must be mlp, cnn or hybrid, got {variant!r}")
    return {"raw": cfg, "run": run, "model": model, "train": train,
            "data": cfg.get("data", {}), "ablate": cfg.get("ablate", {}),
            "variant": variant}


def _build_experiment(args):
    cfg = _resolve_run_config(args.config)
    data = cfg["data"]
    if "labels" not in data or "manifest" not in data:
        raise ValidationError("config [data] needs labels and manifest")
    base = Path(args.config).parent
    rel = lambda p: p if os.path.isabs(p) else str(base / p)
    labels = dataset_io.load_labels(rel(data["labels"]))
    manifest = dataset_io.load_manifest(rel(data["manifest"]))
    features = dataset_io.load_features(rel(data["features"])) if data.get("features") else None
    embeddings = dataset_io.load_embeddings(rel(data["embeddings"])) if data.get("embeddings") else None

    variant = cfg["variant"]
    hybrid = variant == "hybrid"
    mc_kwargs = dict(cfg["model"])
    k = int(mc_kwargs.pop("k", 32))
    if variant in ("cnn", "hybrid"):
        if embeddings is None:
            raise ValidationError(f"variant {variant} needs [data].embeddings")
        if hybrid and features is None:
            raise ValidationError("hybrid needs [data].features")
        d_in = embeddings[0].tokens.shape[1]
        model_config = ModelConfig(variant="cnn", d_in=d_in, k=k, hybrid=hybrid, **mc_kwargs)
    else:
        if embeddings is not None:
            d_in = embeddings[0].tokens.shape[1]
        elif features is not None:
            d_in = dataset_io.VECTOR_DIM
        else:
            raise ValidationError("mlp needs [data].embeddings or [data].features")
        model_config = ModelConfig(variant="mlp", d_in=d_in, k=k, **mc_kwargs)

    seed = args.seed if args.seed is not None else int(cfg["run"].get("seed", 0))
    train_config = TrainConfig(seed=seed, **cfg["train"])
    jobs = args.jobs if args.jobs else int(cfg["run"].get("jobs", 1))

    def build_dataset(mc: ModelConfig) -> loco.WindowDataset:
        use_features = hybrid or (mc.variant == "mlp" and embeddings is None)
        return loco.assemble_dataset(labels, manifest,
                                     features=features if use_features else None,
                                     embeddings=embeddings,
                                     k=mc.k if mc.variant == "cnn" else None)

    manifest.validate_for_loco()
    folds = loco.make_loco_folds(manifest)
    return cfg, model_config, train_config, folds, build_dataset, jobs


def _write_train_outputs(out_dir: Path, cfg: dict, report: dict, results) -> None:
    payload = {
        "config": cfg["raw"],
        "metrics": report,
        "folds": [
            {
                "fold_id": r.fold.fold_id,
                "test_cage": r.fold.test_cage,
                "val_cage": r.fold.val_cage,
                "train_cages": list(r.fold.train_cages),
                "best_epoch": r.best_epoch,
                "confusion": r.confusion.tolist(),
                "macro_f1": loco.macro_f1(r.confusion),
            }
            for r in results
        ],
    }
    write_atomic(out_dir / "report.json", dump_json(payload))
    loco.write_confusion_csv(np.sum([r.confusion for r in results], axis=0),
                             out_dir / "confusion.csv")
    lines = []
    for r in results:
        for entry in r.epoch_log:
            lines.append(json.dumps({"fold": r.fold.fold_id, **entry}, sort_keys=True))
    write_atomic(out_dir / "train_log.jsonl", "\n".join(lines) + "\n")


def cmd_train(args) -> int:
    cfg, model_config, train_config, folds, build_dataset, jobs = _build_experiment(args)
    dataset = build_dataset(model_config)
    report, results = loco.run_loco(dataset, folds, model_config, train_config, jobs=jobs)
    out_dir = Path(args.out_dir)
    _write_train_outputs(out_dir, cfg, report, results)
    from . import classifier as clf

    for r in results:
        clf.save_checkpoint(out_dir / f"fold_{r.fold.fold_id}.ckpt", r.params, model_config,
                            extra={"fold_id": r.fold.fold_id, "best_epoch": r.best_epoch})
    print(f"macro-F1 {report['macro_f1']:.4f} "
          f"(mean {report['macro_f1_mean']:.4f} +- {report['macro_f1_sd']:.4f}) -> "
          f"{out_dir / 'report.json'}")
    return 0


def cmd_evaluate(args) -> int:
    matrices = [loco.load_confusion_csv(p) for p in args.confusion]
    report = loco.evaluate(matrices)
    out = Path(args.out) if args.out else Path(args.out_dir) / "report.json"
    write_atomic(out, dump_json(report))
    per_class = report["per_class"]
    for name in dataset_io.CATEGORIES:
        m = per_class[name]
        print(f"{name}: precision {m['precision'] * 100:.1f} recall {m['recall'] * 100:.1f} "
              f"F1 {m['f1'] * 100:.1f} (support {m['support']})")
    print(f"macro-F1 {report['macro_f1'] * 100:.1f}")
    return 0


def cmd_ablate(args) -> int:
    cfg, model_config, train_config, folds, build_dataset, jobs = _build_experiment(args)
    toggles = list(cfg["ablate"].get("toggles", []))
    table = loco.run_ablation_grid(build_dataset, folds, model_config, train_config,
                                   toggles, jobs=jobs)
    out_dir = Path(args.out_dir)
    write_atomic(out_dir / "ablation.json", dump_json({"config": cfg["raw"], **table}))
    for row in table["rows"]:
        print(f"{row['name']:>20}: macro-F1 {row['macro_f1'] * 100:.1f} "
              f"+- {row['macro_f1_sd'] * 100:.1f} (delta {row['delta'] * 100:+.1f})")
    return 0


def cmd_analyze(args) -> int:
    out_dir = Path(args.out_dir)
    wrote = []
    if args.embeddings:
        reps = {}
        keys_by_backbone = {}
        for path in args.embeddings:
            seqs = dataset_io.load_embeddings(path)
            name = seqs[0].backbone_id if seqs else Path(path).name
            keys = [s.key for s in seqs]
            pooled = np.vstack([s.tokens.astype(float).mean(axis=0) for s in seqs])
            reps[name] = (keys, pooled)
            keys_by_backbone[name] = keys
        common = set.intersection(*(set(k) for k, _ in reps.values()))
        if len(reps) >= 2:
            aligned = {}
            for name, (keys, pooled) in reps.items():
                idx = [i for i, k in enumerate(keys) if k in common]
                aligned[name] = pooled[sorted(idx, key=lambda i: str(keys[i]))]
            names, matrix = rep_analysis.cka_matrix(aligned)
            rep_analysis.export_cka_csv(names, matrix, out_dir / "cka.csv")
            wrote.append("cka.csv")
        for name, (keys, pooled) in reps.items():
            rep_analysis.export_window_matrix_csv(keys, pooled,
                                                  out_dir / f"windows_{name}.csv")
            wrote.append(f"windows_{name}.csv")
        if args.labels:
            labels = dataset_io.load_labels(args.labels)
            by_key = {w.key: w.behaviour for w in labels}
            for name, (keys, pooled) in reps.items():
                mask = [i for i, k in enumerate(keys) if k in by_key]
                if len(mask) >= 2:
                    dists = rep_analysis.knn_probe(pooled[mask],
                                                   [by_key[keys[i]] for i in mask])
                    rep_analysis.export_knn_csv(dists, out_dir / f"knn_{name}.csv")
                    wrote.append(f"knn_{name}.csv")
    if args.confusion:
        matrix = loco.load_confusion_csv(args.confusion)
        rep_analysis.export_confusion_percent_csv(matrix, out_dir / "confusion_percent.csv")
        wrote.append("confusion_percent.csv")
    if args.xy:
        rows = np.loadtxt(args.xy, delimiter=",", skiprows=1, ndmin=2)
        rho, p = rep_analysis.spearman(rows[:, 0], rows[:, 1],
                                       permutations=args.permutations)
        rep_analysis.export_spearman_json(rho, p, len(rows), out_dir / "spearman.json")
        wrote.append("spearman.json")
        print(f"spearman rho {rho:.4f} p {p:.3g}")
    print("wrote: " + ", ".join(wrote) if wrote else "nothing to do")
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="playclass",
                                     description="chunked-tracking post-processing and "
                                                 "play-behaviour classification toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global RNG seed")
    common.add_argument("--config", default=None, help="TOML run configuration")
    common.add_argument("--out-dir", default=".", help="directory for run.json and outputs")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers over videos/folds")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="validate on-disk artefacts")
    p.add_argument("--tracks")
    p.add_argument("--labels")
    p.add_argument("--embeddings")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("features", parents=[common], help="compute 171-dim window features")
    p.add_argument("--tracks", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=int, default=dataset_io.FPS)
    p.add_argument("--neighbor-radius", type=float, default=150.0)
    p.add_argument("--min-valid", type=int, default=13)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("plan-chunks", parents=[common], help="grounding frame and chunk boundaries")
    p.add_argument("--detections", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--frame-count", type=int, default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--tracks", default=None, help="masks for boundary point prompts")
    p.add_argument("--chunk-len", type=int, default=chunk_planner.CHUNK_LEN)
    p.add_argument("--delta", type=int, default=chunk_planner.BOUNDARY_DELTA)
    p.add_argument("--expected-birds", type=int, default=chunk_planner.EXPECTED_BIRDS)
    p.add_argument("--d-ref", type=float, default=chunk_planner.GROUNDING_D_REF)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan_chunks)

    p = sub.add_parser("match-ids", parents=[common], help="match identities across boundaries")
    p.add_argument("--tracks", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--tau", type=float, default=chunk_planner.TAU_MATCH)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match_ids)

    p = sub.add_parser("review-export", parents=[common], help="export the human review bundle")
    p.add_argument("--matches", required=True)
    p.add_argument("--crops", default=None)
    p.set_defaults(func=cmd_review_export)

    p = sub.add_parser("apply-corrections", parents=[common], help="apply reviewed identity edits")
    p.add_argument("--tracks", required=True)
    p.add_argument("--corrections", required=True)
    p.add_argument("--plan", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply_corrections)

    p = sub.add_parser("trackeval", parents=[common], help="HOTA / IDF1 on verified keyframes")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--similarity", choices=["mask", "bbox"], default="mask")
    p.add_argument("--method", default=None, help="row label in the report")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_trackeval)

    p = sub.add_parser("train", parents=[common], help="LOCO training run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="metrics from confusion matrices")
    p.add_argument("--confusion", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="ablation grid around a base run")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", parents=[common], help="CKA / k-NN / Spearman / confusion exports")
    p.add_argument("--embeddings", action="append", default=[])
    p.add_argument("--labels", default=None)
    p.add_argument("--confusion", default=None)
    p.add_argument("--xy", default=None, help="two-column CSV for Spearman")
    p.add_argument("--permutations", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("train", "ablate") and not args.config:
            parser.error("train/ablate need --config")
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        rc = args.func(args)
        _write_run_json(args, args.command)
        return rc
    except (FormatError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
