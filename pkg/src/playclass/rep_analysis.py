"""Representation- and error-analysis utilities.

Linear CKA between backbone representations (mean-pooled per window),
k=1 nearest-neighbour probing by fine-grained behaviour label, Spearman rank
correlation, and the plotting-friendly exports.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .dataset_io import CATEGORIES, ValidationError, dump_json, write_atomic


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    """Linear centered kernel alignment between (n, p) and (n, q) matrices.

    ||Yc' Xc||_F^2 / (||Xc' Xc||_F ||Yc' Yc||_F) after column centering;
    invariant to orthogonal transforms and isotropic scaling of either side.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValidationError("CKA needs two matrices with the same number of rows")
    if x.shape[0] < 2:
        raise ValidationError("CKA needs at least 2 rows")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    xx = np.linalg.norm(xc.T @ xc)
    yy = np.linalg.norm(yc.T @ yc)
    if xx == 0.0 or yy == 0.0:
        raise ValidationError("degenerate representation: zero variance input")
    return float(np.linalg.norm(yc.T @ xc) ** 2 / (xx * yy))


def cka_matrix(reps: dict[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    names = sorted(reps)
    m = np.eye(len(names))
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            m[i, j] = m[j, i] = linear_cka(reps[names[i]], reps[names[j]])
    return names, m


def knn_probe(x: np.ndarray, labels: list[str]) -> dict[str, dict[str, float]]:
    """Nearest-other-window class distribution per label, cosine distance.

    Self is excluded; exact distance ties break to the smallest index.
    Each label's neighbour distribution sums to 1.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValidationError("k-NN probing needs at least 2 windows")
    if len(labels) != n:
        raise ValidationError("labels must match rows")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms = np.where(norms > 0, norms, 1.0)
    unit = x / norms
    dist = 1.0 - unit @ unit.T
    np.fill_diagonal(dist, np.inf)
    nearest = np.argmin(dist, axis=1)  # first minimum = smallest index on ties
    counts: dict[str, dict[str, int]] = {}
    for i, lab in enumerate(labels):
        nb = labels[nearest[i]]
        counts.setdefault(lab, {}).setdefault(nb, 0)
        counts[lab][nb] += 1
    out: dict[str, dict[str, float]] = {}
    for lab, nbs in counts.items():
        total = sum(nbs.values())
        out[lab] = {nb: c / total for nb, c in sorted(nbs.items())}
    return out


def _midranks(v: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mid-rank."""
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=float)
    sv = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y, permutations: int | None = None, seed: int = 0) -> tuple[float, float]:
    """Spearman rho via Pearson on mid-ranks, with a two-sided p-value.

    The p-value uses the t approximation with n-2 degrees of freedom, or a
    permutation test when ``permutations`` is given.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("x and y must be 1-D with equal length")
    n = len(x)
    if n < 3:
        raise ValidationError("spearman needs n >= 3")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValidationError("undefined correlation: constant input")

    def rho_of(a, b):
        ra, rb = _midranks(a), _midranks(b)
        ra = ra - ra.mean()
        rb = rb - rb.mean()
        return float(ra @ rb / math.sqrt((ra @ ra) * (rb @ rb)))

    rho = rho_of(x, y)
    if permutations is not None:
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(permutations):
            if abs(rho_of(x, rng.permutation(y))) >= abs(rho) - 1e-15:
                hits += 1
        return rho, (hits + 1) / (permutations + 1)
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 2))
    return rho, p


# --- exports --------------------------------------------------------------------

def confusion_percent_rows(matrix: np.ndarray) -> list[list[str]]:
    """Row-normalised percentages formatted to one decimal (presentation rule)."""
    matrix = np.asarray(matrix, dtype=float)
    rows = []
    for r in matrix:
        total = r.sum()
        rows.append([f"{(v / total * 100.0 if total else 0.0):.1f}" for v in r])
    return rows


def export_cka_csv(names: list[str], matrix: np.ndarray, path) -> None:
    lines = ["backbone," + ",".join(names)]
    for i, name in enumerate(names):
        lines.append(name + "," + ",".join(repr(float(v)) for v in matrix[i]))
    write_atomic(path, "\n".join(lines) + "\n")


def export_knn_csv(dists: dict[str, dict[str, float]], path) -> None:
    lines = ["fine_label,neighbour_label,fraction"]
    for lab in sorted(dists):
        for nb, frac in sorted(dists[lab].items()):
            lines.append(f'"{lab}","{nb}",{repr(float(frac))}')
    write_atomic(path, "\n".join(lines) + "\n")


def export_confusion_percent_csv(matrix: np.ndarray, path) -> None:
    rows = confusion_percent_rows(matrix)
    lines = ["true\\pred," + ",".join(CATEGORIES)]
    for name, row in zip(CATEGORIES, rows):
        lines.append(name + "," + ",".join(row))
    write_atomic(path, "\n".join(lines) + "\n")


def export_spearman_json(rho: float, p: float, n: int, path, label: str = "") -> None:
    write_atomic(path, dump_json({"label": label, "rho": rho, "p": p, "n": n}))


def export_window_matrix_csv(keys, matrix: np.ndarray, path) -> None:
    """Raw per-window vectors (mean-pooled embeddings) for external projection."""
    matrix = np.asarray(matrix, dtype=float)
    lines = ["window_key," + ",".join(f"e{j:03d}" for j in range(matrix.shape[1]))]
    for key, row in zip(keys, matrix):
        lines.append(str(key) + "," + ",".join(repr(float(v)) for v in row))
    write_atomic(path, "\n".join(lines) + "\n")
