"""Classical comparison procedures: BH, Storey-BH, and a grouped stand-in for IHW."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError, Dataset, GroupedRule, ValidationError

DEFAULT_STOREY_LAMBDA = 0.4
MIN_GROUP_OCCUPANCY = 100


def bh_threshold(pvals, alpha: float) -> float:
    """Step-up threshold: p(k*) for the largest k with p(k) <= alpha*k/n, else 0.

    Discoveries are {i : p_i <= returned threshold}.
    """
    pvals = np.asarray(pvals, dtype=np.float64)
    if pvals.size == 0:
        raise ValidationError("bh_threshold needs at least one p-value")
    if not (0.0 < alpha):
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    n = pvals.size
    ps = np.sort(pvals)
    ok = np.flatnonzero(ps <= alpha * np.arange(1, n + 1) / n)
    return float(ps[ok[-1]]) if ok.size else 0.0


def bh_discoveries(pvals, alpha: float) -> tuple[np.ndarray, float]:
    """Indices discovered by BH at level alpha, plus the threshold used."""
    thr = bh_threshold(pvals, alpha)
    return np.flatnonzero(np.asarray(pvals) <= thr), thr


def storey_pi0(pvals, lam: float = DEFAULT_STOREY_LAMBDA) -> tuple[float, bool]:
    """Plug-in null-proportion estimate min(1, #{p > lam} / ((1-lam) n)).

    When no p-value exceeds lam the estimate degenerates to 0; it is floored
    at 1/((1-lam) n) instead and flagged.
    """
    pvals = np.asarray(pvals, dtype=np.float64)
    if not (0.0 < lam < 1.0):
        raise ConfigurationError(f"lambda must lie in (0,1), got {lam}")
    n = pvals.size
    above = int(np.count_nonzero(pvals > lam))
    if above == 0:
        return 1.0 / ((1.0 - lam) * n), True
    return min(1.0, above / ((1.0 - lam) * n)), False


def storey_bh(pvals, alpha: float, lam: float = DEFAULT_STOREY_LAMBDA) -> float:
    """BH at the adjusted level alpha / pi0_hat.

    With pi0_hat capped at 1 this never discovers less than plain BH.
    """
    pi0, _ = storey_pi0(pvals, lam)
    return bh_threshold(pvals, alpha / pi0)


# ---------------------------------------------------------------------------
# k-means grouping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupAssignment:
    """Hypotheses mapped to their nearest of k centroids (Euclidean)."""

    k: int
    group_of: np.ndarray
    centers: np.ndarray

    def assign(self, features: np.ndarray) -> np.ndarray:
        return _nearest(np.asarray(features, dtype=np.float64), self.centers)


def _nearest(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = _sq_dists(X, centers)
    return d2.argmin(axis=1)


def _sq_dists(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # |x|^2 - 2 x.c + |c|^2; clip tiny negatives from cancellation
    d2 = (
        (X * X).sum(axis=1)[:, None]
        - 2.0 * (X @ centers.T)
        + (centers * centers).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_seed(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[rng.integers(n)]
    d2 = _sq_dists(X, centers[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = X[rng.integers(n)]
        else:
            centers[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, _sq_dists(X, centers[j : j + 1])[:, 0])
    return centers


def kmeans(features, k: int, seed: int, max_iter: int = 100) -> GroupAssignment:
    """Lloyd's algorithm with k-means++ seeding; deterministic given seed.

    An emptied cluster is reseeded to the point farthest from its assigned
    centroid.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ConfigurationError("features must be a 2-d array")
    n = X.shape[0]
    if not (1 <= k <= n):
        raise ConfigurationError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_seed(X, k, rng)
    labels = _nearest(X, centers)
    for _ in range(max_iter):
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new_centers[j] = X[mask].mean(axis=0)
            else:
                d2 = _sq_dists(X, new_centers)
                per_point = d2[np.arange(n), labels]
                new_centers[j] = X[per_point.argmax()]
        new_labels = _nearest(X, new_centers)
        centers = new_centers
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return GroupAssignment(k=k, group_of=labels, centers=centers)


def kmeans_objective(features, assignment: GroupAssignment) -> float:
    X = np.asarray(features, dtype=np.float64)
    diffs = X - assignment.centers[assignment.group_of]
    return float((diffs * diffs).sum())


# ---------------------------------------------------------------------------
# Grouped piecewise-constant procedure (IHW-style competitor)
# ---------------------------------------------------------------------------


def group_bh(
    data: Dataset,
    groups: GroupAssignment,
    alpha: float,
    min_group: int = MIN_GROUP_OCCUPANCY,
    t_cap: float = 0.5,
) -> GroupedRule:
    """Per-group constant thresholds from the grouped optimal-threshold search.

    Groups below the occupancy floor fall back to the global BH threshold;
    mirror counts in tiny groups are too noisy to trust.
    """
    from .oracle import GroupDensity, group_optimal_thresholds

    if groups.group_of.shape[0] != data.n:
        raise ConfigurationError("group assignment does not cover the dataset")
    density = GroupDensity.from_assignment(data.pvals, groups.group_of, groups.k)
    values = group_optimal_thresholds(density, alpha, t_cap=t_cap)
    notes = []
    small = density.sizes < min_group
    if small.any():
        global_thr = bh_threshold(data.pvals, alpha)
        values = np.where(small, global_thr, values)
        notes.append(f"{int(small.sum())} group(s) below occupancy {min_group}; used global BH threshold")
    return GroupedRule(groups.centers, values, t_cap=t_cap, notes=tuple(notes))
