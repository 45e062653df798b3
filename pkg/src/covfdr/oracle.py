"""Optimal per-group decision thresholds.

Two routes to the same object:

* ``group_optimal_thresholds`` works from histogram estimates of the p-value
  density per group.  It parameterizes candidate rules by the density ratio
  r >= 1, setting each group's threshold to the widest prefix where the
  (monotone-flattened) density stays above r times the density at p = 1, and
  scans r until the pooled false-discovery estimate meets the target level.
* ``closed_form_optimal`` solves the same construction exactly on a known
  uniform + Beta mixture; it is the ground-truth oracle used in tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc, betaln

from .core import ConfigurationError, ValidationError

DEFAULT_BINS = 100
DEFAULT_TAIL_WIDTH = 0.1
RATIO_GRID_POINTS = 400


def _pava_nonincreasing(y: np.ndarray) -> np.ndarray:
    """Project onto non-increasing sequences (equal weights, L2)."""
    # pool-adjacent-violators on the reversed sequence (non-decreasing there)
    vals = list(y[::-1])
    levels: list[float] = []
    counts: list[int] = []
    for v in vals:
        levels.append(v)
        counts.append(1)
        while len(levels) > 1 and levels[-1] <= levels[-2]:
            v2, c2 = levels.pop(), counts.pop()
            v1, c1 = levels.pop(), counts.pop()
            levels.append((v1 * c1 + v2 * c2) / (c1 + c2))
            counts.append(c1 + c2)
    out = np.repeat(levels, counts)
    return out[::-1]


@dataclass(frozen=True)
class GroupDensity:
    """Histogram p-value densities per group plus the tail estimate at p = 1.

    ``counts[g]`` holds the histogram masses for group g (they sum to the
    group size); ``f1[g]`` is the mean density over the top tail of width
    ``tail_width``, floored at one count when the tail is empty (flagged).
    """

    counts: np.ndarray
    sizes: np.ndarray
    f1: np.ndarray
    f1_floored: np.ndarray
    n_bins: int
    tail_width: float

    @property
    def bin_width(self) -> float:
        return 1.0 / self.n_bins

    def densities(self) -> np.ndarray:
        """Per-bin density estimates, rows normalized to integrate to 1."""
        sizes = np.maximum(self.sizes, 1)[:, None]
        return self.counts / (sizes * self.bin_width)

    @classmethod
    def from_assignment(
        cls,
        pvals,
        group_of,
        k: int,
        n_bins: int = DEFAULT_BINS,
        tail_width: float = DEFAULT_TAIL_WIDTH,
    ) -> "GroupDensity":
        pvals = np.asarray(pvals, dtype=np.float64)
        group_of = np.asarray(group_of)
        counts = np.zeros((k, n_bins), dtype=np.float64)
        bins = np.minimum((pvals * n_bins).astype(np.int64), n_bins - 1)
        np.add.at(counts, (group_of, bins), 1.0)
        return cls._finish(counts, n_bins, tail_width)

    @classmethod
    def from_bin_masses(
        cls, masses, tail_width: float = DEFAULT_TAIL_WIDTH
    ) -> "GroupDensity":
        """Build from exact per-bin masses (rows sum to group sizes); for tests."""
        counts = np.asarray(masses, dtype=np.float64)
        return cls._finish(counts, counts.shape[1], tail_width)

    @classmethod
    def _finish(cls, counts: np.ndarray, n_bins: int, tail_width: float) -> "GroupDensity":
        sizes = counts.sum(axis=1)
        tail_bins = max(1, int(round(tail_width * n_bins)))
        width = tail_bins / n_bins
        tail_mass = counts[:, n_bins - tail_bins :].sum(axis=1)
        floored = tail_mass == 0.0
        tail_mass = np.where(floored, 1.0, tail_mass)
        f1 = tail_mass / (np.maximum(sizes, 1.0) * width)
        return cls(
            counts=counts,
            sizes=sizes,
            f1=f1,
            f1_floored=floored,
            n_bins=n_bins,
            tail_width=width,
        )


def group_optimal_thresholds(
    density: GroupDensity,
    alpha: float,
    t_cap: float = 0.5,
    n_ratio: int = RATIO_GRID_POINTS,
) -> np.ndarray:
    """Per-group thresholds from the ratio scan described above.

    The pooled estimate at ratio r is sum_g n_g t_g(r) f1_g over the total
    discoveries; among ratio-grid points with estimate <= alpha the one with
    the most discoveries wins.  Returns zeros when nothing is feasible.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must lie in (0,1), got {alpha}")
    dens = np.apply_along_axis(_pava_nonincreasing, 1, density.densities())
    k, n_bins = dens.shape
    edges = np.arange(1, n_bins + 1) / n_bins
    cum = np.cumsum(density.counts, axis=1)
    max_bin = int(np.floor(t_cap * n_bins + 1e-9))  # quantize the cap to the grid

    ratio_hi = max(float((dens[:, 0] / density.f1).max()), 1.0)
    ratios = np.geomspace(1.0, ratio_hi * 1.0001, n_ratio)

    best_D = -1
    best_thresholds = np.zeros(k)
    for r in ratios:
        # widest prefix of bins with density >= r * f1, then quantized cap
        j = (dens >= (r * density.f1)[:, None]).sum(axis=1)
        j = np.minimum(j, max_bin)
        t = np.where(j > 0, edges[np.maximum(j, 1) - 1], 0.0)
        D = np.where(j > 0, cum[np.arange(k), np.maximum(j, 1) - 1], 0.0)
        total_D = D.sum()
        if total_D <= 0:
            continue
        fdhat = (density.sizes * t * density.f1).sum()
        if fdhat / total_D <= alpha and total_D > best_D:
            best_D = total_D
            best_thresholds = t
    return best_thresholds


# ---------------------------------------------------------------------------
# Closed-form oracle on known mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixtureGroup:
    """One group's generating model: pi0 uniform nulls + Beta mixture alternatives.

    Beta components are (a, b, weight) with a <= 1 and b >= 1 so the
    alternative density is monotone non-increasing.  ``mass`` is the group's
    share of hypotheses.
    """

    pi0: float
    beta: tuple[tuple[float, float, float], ...] = ()
    mass: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.pi0 <= 1.0):
            raise ValidationError(f"pi0 must lie in [0,1], got {self.pi0}")
        for a, b, w in self.beta:
            if a > 1.0 or b < 1.0 or w < 0.0:
                raise ValidationError(
                    f"beta component (a={a}, b={b}) must satisfy a <= 1, b >= 1 for a non-increasing density"
                )
        if self.pi0 < 1.0 and abs(sum(w for _, _, w in self.beta) - 1.0) > 1e-9:
            raise ValidationError("beta component weights must sum to 1")

    def alt_pdf(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for a, b, w in self.beta:
            with np.errstate(divide="ignore", over="ignore"):
                logp = (a - 1.0) * np.log(t)
                if b != 1.0:  # avoid 0 * -inf at t = 1
                    logp = logp + (b - 1.0) * np.log1p(-t)
                out = out + w * np.exp(logp - betaln(a, b))
        return out

    def alt_cdf(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for a, b, w in self.beta:
            out = out + w * betainc(a, b, t)
        return out

    def pdf(self, t):
        return self.pi0 + (1.0 - self.pi0) * self.alt_pdf(t)

    def cdf(self, t):
        return self.pi0 * np.asarray(t, dtype=np.float64) + (1.0 - self.pi0) * self.alt_cdf(t)

    def pdf_at_one(self) -> float:
        return float(self.pdf(np.array(1.0)))


def _threshold_at_ratio(group: MixtureGroup, r: float, t_cap: float) -> float:
    """Largest t with pdf(t) >= r * pdf(1), capped; bisection on the monotone pdf."""
    f1 = group.pdf_at_one()
    target = r * f1
    if group.pdf(np.array(t_cap)) >= target:
        return t_cap
    if group.pdf(np.array(1e-300)) < target:
        return 0.0
    lo, hi = 1e-300, t_cap  # pdf(lo) >= target > pdf(hi)
    for _ in range(200):
        mid = np.sqrt(lo * hi)  # geometric bisection; thresholds span decades
        if group.pdf(np.array(mid)) >= target:
            lo = mid
        else:
            hi = mid
    return lo


def _pooled_fdr(groups: Sequence[MixtureGroup], thresholds: np.ndarray) -> float:
    num = sum(g.mass * g.pi0 * t for g, t in zip(groups, thresholds))
    den = sum(g.mass * float(g.cdf(np.array(t))) for g, t in zip(groups, thresholds))
    return num / den if den > 0 else float("inf")


def closed_form_optimal(
    groups: Sequence[MixtureGroup] | MixtureGroup,
    alpha: float,
    t_cap: float = 0.5,
) -> np.ndarray:
    """Exact optimal thresholds on known mixtures: root-find pooled FDR = alpha.

    Candidate rules keep the density ratio pdf(1)/pdf(t_g) constant across
    groups; the scalar ratio is bisected until the pooled FDR hits alpha.
    Returns zeros when no positive threshold is feasible (e.g. all-null).
    """
    if isinstance(groups, MixtureGroup):
        groups = [groups]
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must lie in (0,1), got {alpha}")

    def thresholds(r: float) -> np.ndarray:
        return np.array([_threshold_at_ratio(g, r, t_cap) for g in groups])

    t_lo = thresholds(1.0)  # most permissive candidate: everything at the cap
    if _pooled_fdr(groups, t_lo) <= alpha:
        return t_lo

    # expand until the ratio is strict enough to control, then bisect log r
    r_hi = 2.0
    for _ in range(80):
        ts = thresholds(r_hi)
        if ts.max() <= 0.0:
            break
        if _pooled_fdr(groups, ts) <= alpha:
            break
        r_hi *= 2.0
    else:
        return np.zeros(len(groups))
    ts = thresholds(r_hi)
    if ts.max() <= 0.0 or _pooled_fdr(groups, ts) > alpha:
        return np.zeros(len(groups))

    lo, hi = 1.0, r_hi  # FDR(lo) > alpha >= FDR(hi)
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if _pooled_fdr(groups, thresholds(mid)) <= alpha:
            hi = mid
        else:
            lo = mid
    return thresholds(hi)
