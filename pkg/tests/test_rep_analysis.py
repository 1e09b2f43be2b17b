import numpy as np
import pytest
from scipy import stats

from playclass import rep_analysis as ra
from playclass.dataset_io import ValidationError


# --- CKA ------------------------------------------------------------------------

def cka_hsic_oracle(x, y):
    """Independent route: HSIC on centered Gram matrices."""
    def center_gram(a):
        k = a @ a.T
        n = k.shape[0]
        h = np.eye(n) - np.ones((n, n)) / n
        return h @ k @ h

    kx, ky = center_gram(np.asarray(x, float)), center_gram(np.asarray(y, float))
    hsic = np.sum(kx * ky)
    return hsic / np.sqrt(np.sum(kx * kx) * np.sum(ky * ky))


def test_cka_self_similarity(rng):
    x = rng.standard_normal((30, 7))
    assert ra.linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)


def test_cka_orthogonal_and_scale_invariance(rng):
    x = rng.standard_normal((40, 6))
    y = rng.standard_normal((40, 9))
    q, _ = np.linalg.qr(rng.standard_normal((9, 9)))
    base = ra.linear_cka(x, y)
    assert abs(ra.linear_cka(x, 3.7 * y @ q) - base) < 1e-8
    assert abs(ra.linear_cka(-0.2 * x, y) - base) < 1e-8


def test_cka_fixed_matrices_match_direct_formula():
    x = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0], [-2.0, 1.0]])
    y = np.array([[0.0, 1.0], [1.0, 1.0], [-1.0, 2.0], [2.0, -3.0]])
    assert ra.linear_cka(x, y) == pytest.approx(cka_hsic_oracle(x, y), abs=1e-12)


def test_cka_symmetry(rng):
    for _ in range(20):
        x = rng.standard_normal((15, rng.integers(2, 6)))
        y = rng.standard_normal((15, rng.integers(2, 6)))
        assert abs(ra.linear_cka(x, y) - ra.linear_cka(y, x)) < 1e-12


def test_cka_degenerate_errors():
    x = np.ones((10, 3))  # zero variance after centering
    y = np.random.default_rng(0).standard_normal((10, 3))
    with pytest.raises(ValidationError, match="degenerate"):
        ra.linear_cka(x, y)


def test_cka_matrix_structure(rng):
    reps = {f"b{i}": rng.standard_normal((20, 4)) for i in range(4)}
    names, m = ra.cka_matrix(reps)
    assert len(names) == 4
    assert np.allclose(m, m.T)
    assert np.allclose(np.diag(m), 1.0)


# --- knn probe -------------------------------------------------------------------

def test_knn_two_separated_clusters(rng):
    a = rng.standard_normal((20, 3)) * 0.01 + np.array([10.0, 0, 0])
    b = rng.standard_normal((20, 3)) * 0.01 + np.array([0, 10.0, 0])
    x = np.vstack([a, b])
    labels = ["frolic"] * 20 + ["peck"] * 20
    dists = ra.knn_probe(x, labels)
    assert dists["frolic"]["frolic"] == 1.0
    assert dists["peck"]["peck"] == 1.0


def test_knn_tie_breaks_to_smallest_index():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])  # rows 1,2 identical
    labels = ["a", "b", "c"]
    dists = ra.knn_probe(x, labels)
    # row 0 equidistant to rows 1 and 2 -> picks row 1 ("b")
    assert dists["a"] == {"b": 1.0}


def test_knn_matches_bruteforce_oracle(rng):
    x = rng.standard_normal((50, 5))
    labels = [f"l{int(i)}" for i in rng.integers(0, 4, 50)]
    got = ra.knn_probe(x, labels)
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    counts = {}
    for i in range(50):
        best, bj = None, None
        for j in range(50):
            if j == i:
                continue
            d = 1.0 - float(unit[i] @ unit[j])
            if best is None or d < best:
                best, bj = d, j
        counts.setdefault(labels[i], {}).setdefault(labels[bj], 0)
        counts[labels[i]][labels[bj]] += 1
    for lab, nbs in counts.items():
        total = sum(nbs.values())
        for nb, c in nbs.items():
            assert got[lab][nb] == pytest.approx(c / total, abs=1e-12)


def test_knn_distributions_sum_to_one(rng):
    x = rng.standard_normal((30, 4))
    labels = [f"l{int(i)}" for i in rng.integers(0, 3, 30)]
    for dist in ra.knn_probe(x, labels).values():
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)


# --- spearman ---------------------------------------------------------------------

def test_spearman_monotone():
    rho, p = ra.spearman([1, 2, 3], [1, 4, 9])
    assert rho == pytest.approx(1.0)
    assert p == 0.0
    rho, _ = ra.spearman([1, 2, 3], [9, 4, 1])
    assert rho == pytest.approx(-1.0)


def test_spearman_ties_match_scipy():
    x = [1.0, 2.0, 2.0, 3.0]
    y = [10.0, 20.0, 20.0, 40.0]
    rho, p = ra.spearman(x, y)
    want = stats.spearmanr(x, y)
    assert rho == pytest.approx(want.statistic, abs=1e-12)
    assert p == pytest.approx(want.pvalue, abs=1e-9)


def test_spearman_random_matches_scipy(rng):
    for _ in range(20):
        x = rng.standard_normal(25)
        y = rng.standard_normal(25) + 0.3 * x
        rho, p = ra.spearman(x, y)
        want = stats.spearmanr(x, y)
        assert rho == pytest.approx(want.statistic, abs=1e-12)
        assert p == pytest.approx(want.pvalue, rel=1e-9)


def test_spearman_monotone_transform_invariance(rng):
    x = rng.standard_normal(40)
    y = rng.standard_normal(40)
    r1, _ = ra.spearman(x, y)
    r2, _ = ra.spearman(np.exp(x), y)
    r3, _ = ra.spearman(x, y ** 3)
    assert r1 == pytest.approx(r2, abs=1e-12)
    assert r1 == pytest.approx(r3, abs=1e-12)


def test_spearman_constant_errors():
    with pytest.raises(ValidationError, match="undefined correlation"):
        ra.spearman([1, 1, 1], [1, 2, 3])


def test_spearman_needs_three():
    with pytest.raises(ValidationError, match="n >= 3"):
        ra.spearman([1, 2], [3, 4])


def test_spearman_permutation_mode(rng):
    x = rng.standard_normal(30)
    y = 0.9 * x + rng.standard_normal(30) * 0.1
    rho_t, p_t = ra.spearman(x, y)
    rho_p, p_p = ra.spearman(x, y, permutations=200, seed=1)
    assert rho_t == rho_p
    assert p_p <= 0.02  # strong correlation -> tiny permutation p


# --- exports -----------------------------------------------------------------------

def test_percentage_rounding_rule():
    m = np.array([[934999999, 65000001, 0], [0, 1, 0], [0, 0, 1]])
    rows = ra.confusion_percent_rows(m)
    assert rows[0][0] == "93.5"


def test_cka_csv_export(tmp_path, rng):
    reps = {f"b{i}": rng.standard_normal((20, 4)) for i in range(4)}
    names, m = ra.cka_matrix(reps)
    ra.export_cka_csv(names, m, tmp_path / "cka.csv")
    lines = (tmp_path / "cka.csv").read_text().strip().split("\n")
    assert lines[0] == "backbone,b0,b1,b2,b3"
    assert len(lines) == 5


def test_knn_csv_export(tmp_path):
    ra.export_knn_csv({"a": {"a": 0.75, "b": 0.25}}, tmp_path / "knn.csv")
    lines = (tmp_path / "knn.csv").read_text().strip().split("\n")
    assert lines[0] == "fine_label,neighbour_label,fraction"
    assert len(lines) == 3


def test_confusion_percent_export(tmp_path):
    m = np.array([[90, 10, 0], [5, 90, 5], [0, 0, 100]])
    ra.export_confusion_percent_csv(m, tmp_path / "cp.csv")
    lines = (tmp_path / "cp.csv").read_text().strip().split("\n")
    assert lines[1] == "other,90.0,10.0,0.0"
