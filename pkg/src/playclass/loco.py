"""Leave-one-cage-out cross-validation, checkpoint selection, and ablations.

Folds are cage-keyed to prevent environment leakage: fold i tests on cage i,
validates on the next cage in circular order, trains on the remaining three.
The headline metric is macro-F1 computed from the fold-summed confusion
matrix; the +- spread is the sample SD of per-fold macro-F1.
"""
from __future__ import annotations

import copy
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import classifier
from .classifier import ModelConfig, TrainConfig
from .dataset_io import (CATEGORIES, DatasetManifest, LabelWindow, ValidationError,
                         WindowKey, write_atomic)
from .mask_features import FeatureScaler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    test_cage: int
    val_cage: int
    train_cages: tuple[int, ...]


def make_loco_folds(manifest: DatasetManifest, allow_any_cage_count: bool = False
                    ) -> list[FoldSpec]:
    """One fold per cage: test cage i, validation the next cage in circular
    order, training the rest."""
    cages = manifest.cages
    if len(cages) != 5 and not allow_any_cage_count:
        raise ValidationError(f"expected 5 cages for leave-one-cage-out, found {len(cages)}; "
                              f"pass allow_any_cage_count to generalise")
    if len(cages) < 3:
        raise ValidationError("need at least 3 cages (train/val/test must be disjoint)")
    folds = []
    for i, test in enumerate(cages):
        val = cages[(i + 1) % len(cages)]
        train = tuple(c for c in cages if c not in (test, val))
        fold = FoldSpec(i + 1, test, val, train)
        _assert_disjoint(fold)
        folds.append(fold)
    return folds


def _assert_disjoint(fold: FoldSpec) -> None:
    sets = [{fold.test_cage}, {fold.val_cage}, set(fold.train_cages)]
    for i in range(3):
        for j in range(i + 1, 3):
            if sets[i] & sets[j]:
                raise ValidationError(f"cage leakage in fold {fold.fold_id}: "
                                      f"{sets[i] & sets[j]} appears in two splits")


# --- confusion metrics -----------------------------------------------------------

def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int = 3) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


def per_class_metrics(matrix: np.ndarray) -> dict[str, dict[str, float]]:
    matrix = np.asarray(matrix)
    out: dict[str, dict[str, float]] = {}
    for c, name in enumerate(CATEGORIES):
        tp = float(matrix[c, c])
        col = float(matrix[:, c].sum())
        row = float(matrix[c, :].sum())
        precision = tp / col if col else 0.0
        recall = tp / row if row else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[name] = {"precision": precision, "recall": recall, "f1": f1,
                     "support": int(row)}
    return out


def macro_f1(matrix: np.ndarray) -> float:
    metrics = per_class_metrics(matrix)
    return sum(m["f1"] for m in metrics.values()) / len(CATEGORIES)


def evaluate(matrices) -> dict:
    """EvalReport over one or more fold confusion matrices.

    The aggregated (summed) matrix drives the headline per-class metrics and
    macro-F1; the +- SD is the sample SD of per-fold macro-F1.
    """
    if isinstance(matrices, np.ndarray) and matrices.ndim == 2:
        matrices = [matrices]
    matrices = [np.asarray(m, dtype=np.int64) for m in matrices]
    if not matrices:
        raise ValidationError("no confusion matrices to evaluate")
    for m in matrices:
        if m.shape != (len(CATEGORIES), len(CATEGORIES)):
            raise ValidationError(f"confusion matrix must be {len(CATEGORIES)}x{len(CATEGORIES)}")
        if (m < 0).any():
            raise ValidationError("confusion counts must be non-negative")
    agg = np.sum(matrices, axis=0)
    if agg.sum() == 0:
        raise ValidationError("all-zero confusion matrix")
    per_fold = [macro_f1(m) if m.sum() else 0.0 for m in matrices]
    mean = math.fsum(per_fold) / len(per_fold)
    if len(per_fold) > 1:
        var = math.fsum((v - mean) ** 2 for v in per_fold) / (len(per_fold) - 1)
        sd = math.sqrt(var)
    else:
        sd = 0.0
    return {
        "confusion": agg.tolist(),
        "per_class": per_class_metrics(agg),
        "macro_f1": macro_f1(agg),
        "per_fold_macro_f1": per_fold,
        "macro_f1_mean": mean,
        "macro_f1_sd": sd,
    }


def write_confusion_csv(matrix: np.ndarray, path) -> None:
    lines = ["true\\pred," + ",".join(CATEGORIES)]
    for c, name in enumerate(CATEGORIES):
        lines.append(name + "," + ",".join(str(int(v)) for v in np.asarray(matrix)[c]))
    write_atomic(path, "\n".join(lines) + "\n")


def load_confusion_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != "true\\pred," + ",".join(CATEGORIES):
            raise ValidationError(f"{path}: unexpected confusion header")
        rows = []
        for name in CATEGORIES:
            parts = f.readline().rstrip("\n").split(",")
            if parts[0] != name or len(parts) != len(CATEGORIES) + 1:
                raise ValidationError(f"{path}: bad row for class {name}")
            rows.append([int(v) for v in parts[1:]])
    return np.array(rows, dtype=np.int64)


# --- dataset assembly --------------------------------------------------------------

@dataclass
class WindowDataset:
    """Per-window model inputs, already joined against labels and cages."""
    keys: list[WindowKey]
    y: np.ndarray                      # class index into CATEGORIES
    cages: np.ndarray
    tokens: np.ndarray | None = None   # (n, K, D) pooled segments (cnn)
    pooled_mean: np.ndarray | None = None  # (n, D) mean-pooled embeddings (mlp)
    features: np.ndarray | None = None     # (n, 171)

    def __len__(self) -> int:
        return len(self.keys)


def assemble_dataset(labels: list[LabelWindow], manifest: DatasetManifest, *,
                     features=None, embeddings=None, k: int | None = None
                     ) -> WindowDataset:
    """Join labels with features and/or embeddings; social windows drop out.

    ``features`` is a (keys, matrix, flags) triple from the features CSV;
    ``embeddings`` a list of EmbeddingSequence. Windows missing a required
    input are skipped with a warning.
    """
    trainable = [w for w in labels if w.category in CATEGORIES]
    feat_by_key = {}
    if features is not None:
        fkeys, fmat, _ = features
        feat_by_key = {k_: fmat[i] for i, k_ in enumerate(fkeys)}
    emb_by_key = {}
    if embeddings is not None:
        emb_by_key = {e.key: e for e in embeddings}

    keys, ys, cages = [], [], []
    feat_rows, token_rows, mean_rows = [], [], []
    skipped = 0
    for w in sorted(trainable, key=lambda w: (w.video_id, w.bird_id, w.start_frame)):
        if features is not None and w.key not in feat_by_key:
            skipped += 1
            continue
        if embeddings is not None and w.key not in emb_by_key:
            skipped += 1
            continue
        keys.append(w.key)
        ys.append(CATEGORIES.index(w.category))
        cages.append(manifest.cage_of_video(w.video_id))
        if features is not None:
            feat_rows.append(feat_by_key[w.key])
        if embeddings is not None:
            tokens = emb_by_key[w.key].tokens.astype(float)
            mean_rows.append(tokens.mean(axis=0))
            if k is not None:
                token_rows.append(classifier.adaptive_avg_pool(tokens, k))
    if skipped:
        log.warning("skipped %d windows lacking features/embeddings", skipped)
    if not keys:
        raise ValidationError("no trainable windows after joining inputs")
    return WindowDataset(
        keys=keys,
        y=np.array(ys, dtype=np.int64),
        cages=np.array(cages, dtype=np.int64),
        tokens=np.stack(token_rows) if token_rows else None,
        pooled_mean=np.stack(mean_rows) if mean_rows else None,
        features=np.vstack(feat_rows) if feat_rows else None,
    )


# --- fold training -----------------------------------------------------------------

@dataclass
class FoldResult:
    fold: FoldSpec
    confusion: np.ndarray
    best_epoch: int
    epoch_log: list[dict]
    params: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    class_weights: np.ndarray | None = None


def _model_inputs(dataset: WindowDataset, config: ModelConfig, idx: np.ndarray,
                  scaler: FeatureScaler | None):
    """(tokens, features) slice for the given window indices."""
    if config.variant == "mlp":
        base = dataset.features if dataset.features is not None and config.d_in == dataset.features.shape[1] \
            else dataset.pooled_mean
        x = base[idx]
        return scaler.transform(x), None
    tokens = dataset.tokens[idx]
    feats = scaler.transform(dataset.features[idx]) if config.hybrid else None
    return tokens, feats


def _fit_scaler(dataset: WindowDataset, config: ModelConfig, train_idx: np.ndarray
                ) -> FeatureScaler:
    scaler = FeatureScaler()
    if config.variant == "mlp":
        base = dataset.features if dataset.features is not None and config.d_in == dataset.features.shape[1] \
            else dataset.pooled_mean
        scaler.fit(base[train_idx])
    elif config.hybrid:
        scaler.fit(dataset.features[train_idx])
    return scaler


def _batched_loss(params, config, tokens, feats, y, weights, alpha, chunk=1024) -> float:
    total = 0.0
    wsum = 0.0
    for lo in range(0, len(y), chunk):
        sl = slice(lo, lo + chunk)
        logits, _ = classifier.forward(params, config, tokens[sl],
                                       feats[sl] if feats is not None else None)
        loss, _ = classifier.loss_and_grad(logits, y[sl], weights, alpha)
        w = weights[y[sl]].sum()
        total += loss * w
        wsum += w
    return total / wsum if wsum else 0.0


def predict(params, config: ModelConfig, tokens, feats, chunk=1024) -> np.ndarray:
    out = []
    for lo in range(0, len(tokens), chunk):
        sl = slice(lo, lo + chunk)
        logits, _ = classifier.forward(params, config, tokens[sl],
                                       feats[sl] if feats is not None else None)
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def train_fold(dataset: WindowDataset, fold: FoldSpec, model_config: ModelConfig,
               train_config: TrainConfig) -> FoldResult:
    """Train one fold: select the epoch checkpoint with the lowest validation
    loss (ties to the earlier epoch) and evaluate the test cage once."""
    _assert_disjoint(fold)
    cages = dataset.cages
    train_idx = np.flatnonzero(np.isin(cages, fold.train_cages))
    val_idx = np.flatnonzero(cages == fold.val_cage)
    test_idx = np.flatnonzero(cages == fold.test_cage)
    if len(train_idx) == 0 or len(val_idx) == 0 or len(test_idx) == 0:
        raise ValidationError(f"fold {fold.fold_id}: empty split "
                              f"(train {len(train_idx)}, val {len(val_idx)}, test {len(test_idx)})")

    scaler = _fit_scaler(dataset, model_config, train_idx)
    y = dataset.y
    counts = np.bincount(y[train_idx], minlength=len(CATEGORIES))
    if train_config.class_weights == "inv_sqrt":
        if (counts == 0).any():
            missing = [CATEGORIES[i] for i in np.flatnonzero(counts == 0)]
            log.warning("fold %d: classes %s absent from training split; weight falls back to count 1",
                        fold.fold_id, missing)
        weights = classifier.inv_sqrt_class_weights(counts)
    else:
        weights = np.ones(len(CATEGORIES))

    rng = np.random.default_rng([train_config.seed, fold.fold_id])
    params = classifier.init_params(model_config, rng)
    state = classifier.AdamWState()
    tr_tokens, tr_feats = _model_inputs(dataset, model_config, train_idx, scaler)
    va_tokens, va_feats = _model_inputs(dataset, model_config, val_idx, scaler)
    te_tokens, te_feats = _model_inputs(dataset, model_config, test_idx, scaler)
    y_tr, y_va, y_te = y[train_idx], y[val_idx], y[test_idx]

    snapshots = []
    epoch_log = []
    alpha = train_config.label_smoothing
    for epoch in range(1, train_config.epochs + 1):
        perm = rng.permutation(len(train_idx))
        running, running_w = 0.0, 0.0
        for lo in range(0, len(perm), train_config.batch_size):
            sel = perm[lo:lo + train_config.batch_size]
            logits, cache = classifier.forward(params, model_config, tr_tokens[sel],
                                               tr_feats[sel] if tr_feats is not None else None)
            loss, dlogits = classifier.loss_and_grad(logits, y_tr[sel], weights, alpha)
            grads = classifier.backward(params, model_config, cache, dlogits)
            classifier.adamw_step(params, grads, state, train_config)
            bw = weights[y_tr[sel]].sum()
            running += loss * bw
            running_w += bw
        val_loss = _batched_loss(params, model_config, va_tokens, va_feats, y_va, weights, alpha)
        epoch_log.append({"epoch": epoch,
                          "train_loss": running / running_w if running_w else 0.0,
                          "val_loss": val_loss})
        snapshots.append(copy.deepcopy(params))

    val_losses = [e["val_loss"] for e in epoch_log]
    best_epoch = int(np.argmin(val_losses)) + 1
    best_params = snapshots[best_epoch - 1]
    y_hat = predict(best_params, model_config, te_tokens, te_feats)
    confusion = confusion_matrix(y_te, y_hat, len(CATEGORIES))
    return FoldResult(fold, confusion, best_epoch, epoch_log, best_params, weights)


def _train_fold_worker(args):
    dataset, fold, model_config, train_config = args
    return train_fold(dataset, fold, model_config, train_config)


def run_loco(dataset: WindowDataset, folds: list[FoldSpec], model_config: ModelConfig,
             train_config: TrainConfig, jobs: int = 1) -> tuple[dict, list[FoldResult]]:
    """All folds, then the aggregated EvalReport (fold order never matters)."""
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_fold_worker,
                                    [(dataset, f, model_config, train_config) for f in folds]))
    else:
        results = [train_fold(dataset, f, model_config, train_config) for f in folds]
    results.sort(key=lambda r: r.fold.fold_id)
    report = evaluate([r.confusion for r in results])
    return report, results


# --- ablations ----------------------------------------------------------------------

KNOWN_TOGGLES = ("epochs=1", "no_class_weights", "no_label_smoothing", "mlp",
                 "k=16", "k=32", "k=48")


def apply_toggle(toggle: str, model_config: ModelConfig, train_config: TrainConfig
                 ) -> tuple[ModelConfig, TrainConfig, bool]:
    """New configs under one ablation toggle; the flag reports whether the
    token pooling width changed (dataset must be re-pooled)."""
    mc = copy.deepcopy(model_config)
    tc = copy.deepcopy(train_config)
    repool = False
    if toggle.startswith("epochs="):
        tc.epochs = int(toggle.split("=", 1)[1])
    elif toggle == "no_class_weights":
        tc.class_weights = "none"
    elif toggle == "no_label_smoothing":
        tc.label_smoothing = 0.0
    elif toggle == "mlp":
        mc.variant = "mlp"
        mc.hybrid = False
    elif toggle.startswith("k="):
        mc.k = int(toggle.split("=", 1)[1])
        repool = True
    else:
        raise ValidationError(f"unknown ablation toggle {toggle!r}; "
                              f"known: {', '.join(KNOWN_TOGGLES)}")
    return mc, tc, repool


def run_ablation_grid(build_dataset, folds, model_config: ModelConfig,
                      train_config: TrainConfig, toggles: list[str], jobs: int = 1) -> dict:
    """Base run plus one run per toggle, identical seeds and folds throughout.

    ``build_dataset(model_config)`` must return the WindowDataset for a given
    configuration (token pooling depends on k). Deltas are against the base
    run's aggregated macro-F1.
    """
    rows = []
    base_dataset = build_dataset(model_config)
    base_report, _ = run_loco(base_dataset, folds, model_config, train_config, jobs)
    rows.append({"name": "base", "macro_f1": base_report["macro_f1"],
                 "macro_f1_sd": base_report["macro_f1_sd"], "delta": 0.0,
                 "report": base_report})
    for toggle in toggles:
        mc, tc, repool = apply_toggle(toggle, model_config, train_config)
        ds = build_dataset(mc) if repool else base_dataset
        if mc.variant != model_config.variant:
            mc.d_in = _mlp_input_dim(ds, mc)
        report, _ = run_loco(ds, folds, mc, tc, jobs)
        rows.append({"name": toggle, "macro_f1": report["macro_f1"],
                     "macro_f1_sd": report["macro_f1_sd"],
                     "delta": report["macro_f1"] - base_report["macro_f1"],
                     "report": report})
    return {"rows": rows}


def _mlp_input_dim(dataset: WindowDataset, config: ModelConfig) -> int:
    if dataset.pooled_mean is not None:
        return dataset.pooled_mean.shape[1]
    return dataset.features.shape[1]
