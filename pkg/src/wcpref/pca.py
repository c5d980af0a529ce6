"""Principal component analysis for pre- and post-learning feature reduction.

Two reduction modes feed the learner:

* *indirect*: fit on standardized data, keep the first ``n`` components,
  and retain only original features with a salient loading somewhere in
  them (``|w| >= mean + 2 * population-std`` of the component's absolute
  loadings); the learner then runs on the surviving original features.
* *direct*: project items onto the first ``k`` components, integerize the
  scores, and learn over synthetic ``pc1..pck`` features;
  :func:`retro_project` later maps each learned component back to its
  salient original features for explanation rendering.

The eigensolver is a deterministic cyclic Jacobi iteration; tests verify
it against an independent solver.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .asp import Theory
from .dataset import FeatureSpec, Item, Quantization, Schema, quantize

#: Equality slack for the salience threshold, so degenerate all-equal
#: loading columns (threshold == every value) keep every feature.
_THRESHOLD_SLACK = 1e-12


class PcaError(ValueError):
    """Raised for unfittable data or out-of-range component requests."""


def jacobi_eigh(matrix, tol: float = 1e-12, max_sweeps: int = 200):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues descending
    and eigenvectors as columns.  Iterates full sweeps until the
    off-diagonal Frobenius norm is at most ``tol``.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise PcaError(f"matrix must be square, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10):
        raise PcaError("matrix must be symmetric")
    p = a.shape[0]
    v = np.eye(p)
    for _sweep in range(max_sweeps):
        # sum only off-diagonal squares: subtracting the diagonal sum from
        # the total cancels catastrophically and floors the norm near 1e-7
        off_diag = a - np.diag(np.diag(a))
        if math.sqrt(np.sum(off_diag * off_diag)) <= tol:
            break
        for i in range(p - 1):
            for j in range(i + 1, p):
                if abs(a[i, j]) <= 1e-300:
                    a[i, j] = a[j, i] = 0.0
                    continue
                theta = (a[j, j] - a[i, i]) / (2.0 * a[i, j])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_i, col_j = a[:, i].copy(), a[:, j].copy()
                a[:, i] = c * col_i - s * col_j
                a[:, j] = s * col_i + c * col_j
                row_i, row_j = a[i, :].copy(), a[j, :].copy()
                a[i, :] = c * row_i - s * row_j
                a[j, :] = s * row_i + c * row_j
                a[i, j] = a[j, i] = 0.0
                vec_i, vec_j = v[:, i].copy(), v[:, j].copy()
                v[:, i] = c * vec_i - s * vec_j
                v[:, j] = s * vec_i + c * vec_j
    else:
        raise PcaError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    order = np.argsort(-np.diag(a), kind="stable")
    return np.diag(a)[order].copy(), v[:, order].copy()


@dataclass(frozen=True, eq=False)
class PcaModel:
    """A fitted decomposition: standardization constants plus loadings.

    ``loadings`` has one row per feature and one unit-norm eigenvector per
    column; eigenvalues are descending.
    """

    feature_names: tuple
    mean: np.ndarray
    std: np.ndarray
    loadings: np.ndarray
    eigenvalues: tuple
    explained_variance_ratio: tuple
    standardized: bool

    def __post_init__(self) -> None:
        gram = self.loadings.T @ self.loadings
        if not np.allclose(gram, np.eye(self.n_components), atol=1e-8):
            raise PcaError("loading columns must be orthonormal")
        ev = self.eigenvalues
        if any(ev[i] < ev[i + 1] for i in range(len(ev) - 1)):
            raise PcaError("eigenvalues must be sorted descending")
        if any(v < -1e-10 for v in ev):
            raise PcaError("covariance eigenvalues must be non-negative")
        if sum(self.explained_variance_ratio) > 1 + 1e-8:
            raise PcaError("explained variance ratios must sum to at most 1")

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]


@dataclass(frozen=True)
class ReductionReport:
    """What a reduction kept, and the per-component salience thresholds."""

    mode: str
    n_components: int
    kept_features: tuple
    mu_primes: tuple
    sigma_primes: tuple

    def __post_init__(self) -> None:
        if self.mode not in ("indirect", "direct"):
            raise PcaError(f"mode must be 'indirect' or 'direct', got {self.mode!r}")


def matrix_from_items(items: Sequence[Item], feature_names: Sequence[str]) -> np.ndarray:
    return np.array(
        [[float(item.values[name]) for name in feature_names] for item in items], dtype=float
    )


def fit(
    data,
    feature_names: Optional[Sequence[str]] = None,
    standardize: bool = True,
) -> PcaModel:
    """Fit a full decomposition of the covariance (or correlation) matrix.

    With ``standardize`` the data are z-scored first, so the decomposed
    matrix is the correlation matrix and the Kaiser rule applies.
    Constant columns get unit scale with a warning.  Eigenvector signs are
    fixed deterministically: each column's largest-magnitude entry is
    positive.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise PcaError(f"data must be 2-D, got shape {x.shape}")
    rows, cols = x.shape
    if rows < 2:
        raise PcaError("need at least 2 rows to fit")
    if feature_names is None:
        feature_names = tuple(f"f{i + 1}" for i in range(cols))
    else:
        feature_names = tuple(feature_names)
        if len(feature_names) != cols:
            raise PcaError("feature_names length must match data width")
    mean = x.mean(axis=0)
    if standardize:
        std = x.std(axis=0, ddof=1)
        constant = std == 0
        if constant.any():
            names = [feature_names[i] for i in np.flatnonzero(constant)]
            warnings.warn(f"constant column(s) {names} standardized with unit scale")
            std = np.where(constant, 1.0, std)
    else:
        std = np.ones(cols)
    centered = (x - mean) / std
    cov = centered.T @ centered / (rows - 1)
    eigenvalues, vectors = jacobi_eigh(cov)
    eigenvalues = np.where((eigenvalues < 0) & (eigenvalues > -1e-10), 0.0, eigenvalues)
    for j in range(cols):
        lead = np.argmax(np.abs(vectors[:, j]))
        if vectors[lead, j] < 0:
            vectors[:, j] = -vectors[:, j]
    total = eigenvalues.sum()
    ratios = eigenvalues / total if total > 0 else np.zeros(cols)
    return PcaModel(
        feature_names=feature_names,
        mean=mean,
        std=std,
        loadings=vectors,
        eigenvalues=tuple(float(v) for v in eigenvalues),
        explained_variance_ratio=tuple(float(r) for r in ratios),
        standardized=standardize,
    )


def kaiser_select(model: PcaModel) -> int:
    """Number of components with eigenvalue >= 1 (standardized fits only)."""
    if not model.standardized:
        raise PcaError("the Kaiser rule applies to standardized (correlation) fits only")
    return sum(1 for v in model.eigenvalues if v >= 1)


def transform(model: PcaModel, data, k: Optional[int] = None) -> np.ndarray:
    """Scores of ``data`` on the first ``k`` components (all by default)."""
    x = np.asarray(data, dtype=float)
    if x.shape[-1] != len(model.feature_names):
        raise PcaError(
            f"data width {x.shape[-1]} does not match the model's {len(model.feature_names)} features"
        )
    if k is None:
        k = model.n_components
    if not 1 <= k <= model.n_components:
        raise PcaError(f"k must lie in [1, {model.n_components}], got {k}")
    return ((x - model.mean) / model.std) @ model.loadings[:, :k]


def salience_select(loadings) -> tuple:
    """Indices passing the salience threshold of one loading column.

    The threshold is mean + 2 * population standard deviation of the
    absolute loadings; equality counts as selected.
    """
    w = np.abs(np.asarray(loadings, dtype=float))
    mu = float(w.mean())
    sigma = float(w.std())  # population: the column is the whole population
    threshold = mu + 2.0 * sigma
    kept = tuple(int(i) for i in np.flatnonzero(w >= threshold - _THRESHOLD_SLACK))
    return kept, mu, sigma


def indirect_select(model: PcaModel, n: int):
    """Original features salient in the first ``n`` components.

    Returns ``(kept_feature_names, report)``; a feature is kept when any
    of the first ``n`` columns gives it an absolute loading at or above
    that column's mean + 2 * population-std threshold.
    """
    if not 1 <= n <= model.n_components:
        raise PcaError(f"n must lie in [1, {model.n_components}], got {n}")
    kept_indices = set()
    mus, sigmas = [], []
    for j in range(n):
        kept, mu, sigma = salience_select(model.loadings[:, j])
        kept_indices.update(kept)
        mus.append(mu)
        sigmas.append(sigma)
    kept_features = tuple(
        name for i, name in enumerate(model.feature_names) if i in kept_indices
    )
    report = ReductionReport(
        mode="indirect",
        n_components=n,
        kept_features=kept_features,
        mu_primes=tuple(mus),
        sigma_primes=tuple(sigmas),
    )
    return kept_features, report


def pc_feature_names(k: int) -> tuple:
    return tuple(f"pc{j + 1}" for j in range(k))


def pc_schema(k: int) -> Schema:
    inf = math.inf
    return Schema(tuple(FeatureSpec(name, "continuous", (-inf, inf)) for name in pc_feature_names(k)))


def project(
    model: PcaModel,
    items: Sequence[Item],
    k: int,
    factor: int = 100,
    quantization: Optional[Quantization] = None,
):
    """Integerized component scores of ``items``, as ``pc1..pck`` items.

    Returns ``(pc_items, quantization)``; pass a previous run's
    ``quantization`` to place new items on the same integer grid.
    """
    scores = transform(model, matrix_from_items(items, model.feature_names), k)
    names = pc_feature_names(k)
    pc_items = [
        Item(item.id, item.name, dict(zip(names, row)), item.link)
        for item, row in zip(items, scores)
    ]
    return quantize(pc_items, factor, pc_schema(k), quantization)


def retro_project(theory: Theory, model: PcaModel, n: int = 8) -> Mapping[str, tuple]:
    """Map each component feature a theory mentions to its salient original features.

    Only components up to ``n`` may appear; the same per-column salience
    threshold as :func:`indirect_select` decides which original features
    represent a component at explanation time.
    """
    mapping: dict = {}
    for wc in theory.constraints:
        for atom in wc.body:
            if atom.predicate != "value" or not atom.args:
                continue
            name = atom.args[0]
            if not isinstance(name, str) or not name.startswith("pc"):
                continue
            suffix = name[2:]
            if not suffix.isdigit():
                continue
            j = int(suffix)
            if not 1 <= j <= model.n_components:
                raise PcaError(f"{name} does not name a component of this model")
            if j > n:
                raise PcaError(f"{name} exceeds the retro-projection cap n={n}")
            if name not in mapping:
                kept, _, _ = salience_select(model.loadings[:, j - 1])
                mapping[name] = tuple(model.feature_names[i] for i in kept)
    return mapping


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_dict(model: PcaModel) -> dict:
    return {
        "feature_names": list(model.feature_names),
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "loadings": model.loadings.tolist(),
        "eigenvalues": list(model.eigenvalues),
        "explained_variance_ratio": list(model.explained_variance_ratio),
        "standardized": model.standardized,
    }


def model_from_dict(data: Mapping) -> PcaModel:
    return PcaModel(
        feature_names=tuple(data["feature_names"]),
        mean=np.array(data["mean"], dtype=float),
        std=np.array(data["std"], dtype=float),
        loadings=np.array(data["loadings"], dtype=float),
        eigenvalues=tuple(data["eigenvalues"]),
        explained_variance_ratio=tuple(data["explained_variance_ratio"]),
        standardized=data["standardized"],
    )


def save_model(path, model: PcaModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path) -> PcaModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
