"""Synthetic hypothesis generators with ground-truth labels.

Features are uniform on the unit hypercube; labels are Bernoulli with a
family-specific alternative proportion; null p-values are Unif(0,1) and
alternative p-values come from a monotone Beta mixture (Gaussian one-sided
tests for the ihw_like family).  Families:

    gm_1d, gm_2d   bumps: pi1(x) = sum_k h * exp(-|x - mu_k|^2 / (2 s^2))
    gm_5d          the gm_2d bumps in the first two of five dimensions
    slope_1d/2d    pi1(x) = intercept + gradient * mean(x)
    pure_null      pi1 = 0
    two_group      pi1 = signal_frac * 1{x >= 0.5}; one dead and one live group
    ihw_like       constant pi1; Gaussian shift mu(x) grows with x, so the
                   covariate carries power, not prevalence (a rough analog of
                   an external weighting benchmark, not a replication)
    weak_dep       slope_1d signal with equicorrelated Gaussian null blocks

All numeric defaults are artifact choices recorded in the emitted metadata.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .core import Dataset, ValidationError

FAMILIES = (
    "gm_1d",
    "gm_2d",
    "slope_1d",
    "slope_2d",
    "gm_5d",
    "ihw_like",
    "weak_dep",
    "pure_null",
    "two_group",
)

_FAMILY_DIM = {
    "gm_1d": 1,
    "gm_2d": 2,
    "slope_1d": 1,
    "slope_2d": 2,
    "gm_5d": 5,
    "ihw_like": 1,
    "weak_dep": 1,
    "pure_null": 1,
    "two_group": 1,
}

_DEFAULT_BUMPS = {
    "gm_1d": ((0.3,), (0.7,)),
    "gm_2d": ((0.25, 0.25), (0.75, 0.75), (0.25, 0.75)),
    "gm_5d": ((0.25, 0.25), (0.75, 0.75), (0.25, 0.75)),
}

# One bounded-density component and one spiked component.  The bounded
# Beta(1, b) part keeps the alternative CDF responsive to threshold changes,
# which is what makes covariate-adaptive thresholds pay off; an all-spike
# mixture leaves nearly nothing to gain over a constant rule.
DEFAULT_BETA = ((1.0, 100.0, 0.5), (0.5, 15.0, 0.5))


@dataclass(frozen=True)
class GenSpec:
    """Fully-parameterized generator configuration; defaults fill per family."""

    family: str
    n: int
    seed: int = 0
    bump_centers: tuple[tuple[float, ...], ...] | None = None
    bump_height: float = 0.6
    bump_width: float = 0.1
    slope_intercept: float = 0.05
    slope_gradient: float = 0.25
    beta_components: tuple[tuple[float, float, float], ...] = DEFAULT_BETA
    signal_frac: float = 0.4
    ihw_pi1: float = 0.1
    gauss_mean_base: float = 1.0
    gauss_mean_slope: float = 2.0
    block_size: int = 10
    rho: float = 0.5

    @property
    def dim(self) -> int:
        return _FAMILY_DIM[self.family]

    def centers(self) -> tuple[tuple[float, ...], ...]:
        if self.bump_centers is not None:
            return self.bump_centers
        return _DEFAULT_BUMPS[self.family]

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}; valid: {', '.join(FAMILIES)}")
        if self.n < 1:
            raise ValidationError("n must be at least 1")
        weights = [w for _, _, w in self.beta_components]
        if abs(sum(weights) - 1.0) > 1e-9 or any(w < 0 for w in weights):
            raise ValidationError("beta component weights must be nonnegative and sum to 1")
        for a, b, _ in self.beta_components:
            if a > 1.0 or b < 1.0 or a <= 0.0:
                raise ValidationError(
                    f"beta component (a={a}, b={b}) needs 0 < a <= 1 and b >= 1 for a non-increasing density"
                )
        if self.family == "weak_dep":
            if self.block_size < 2:
                raise ValidationError("weak_dep needs block_size >= 2")
            if not (0.0 <= self.rho < 1.0):
                raise ValidationError("weak_dep needs rho in [0, 1)")
        pi1 = alternative_proportion(self)
        grid = _probe_grid(self)
        vals = pi1(grid)
        if vals.max() > 1.0 + 1e-12 or vals.min() < -1e-12:
            raise ValidationError(
                f"alternative proportion leaves [0,1] (range {vals.min():.4f}..{vals.max():.4f})"
            )

    def metadata(self) -> dict:
        meta = asdict(self)
        meta["dim"] = self.dim
        if self.family in _DEFAULT_BUMPS:
            meta["bump_centers"] = [list(c) for c in self.centers()]
        meta["beta_components"] = [list(c) for c in self.beta_components]
        return meta


def _probe_grid(spec: GenSpec) -> np.ndarray:
    d = spec.dim
    if d == 1:
        return np.linspace(0.0, 1.0, 2001)[:, None]
    g = np.linspace(0.0, 1.0, 201)
    xx, yy = np.meshgrid(g, g)
    grid2 = np.column_stack([xx.ravel(), yy.ravel()])
    if d == 2:
        return grid2
    # informative structure lives in the first two dims; pad the rest
    return np.column_stack([grid2, np.full((grid2.shape[0], d - 2), 0.5)])


def alternative_proportion(spec: GenSpec):
    """The exact pi1(x) used by the family, as a vectorized callable."""
    family = spec.family
    if family in ("gm_1d", "gm_2d", "gm_5d"):
        centers = np.asarray(spec.centers(), dtype=np.float64)
        h, s = spec.bump_height, spec.bump_width
        ci = centers.shape[1]

        def pi1(X):
            X = np.atleast_2d(np.asarray(X, dtype=np.float64))
            d2 = ((X[:, None, :ci] - centers[None, :, :]) ** 2).sum(axis=2)
            return (h * np.exp(-d2 / (2.0 * s * s))).sum(axis=1)

        return pi1
    if family in ("slope_1d", "slope_2d", "weak_dep"):
        a, b = spec.slope_intercept, spec.slope_gradient

        def pi1(X):
            X = np.atleast_2d(np.asarray(X, dtype=np.float64))
            return a + b * X.mean(axis=1)

        return pi1
    if family == "pure_null":
        return lambda X: np.zeros(np.atleast_2d(X).shape[0])
    if family == "two_group":
        frac = spec.signal_frac
        return lambda X: frac * (np.atleast_2d(X)[:, 0] >= 0.5).astype(np.float64)
    if family == "ihw_like":
        level = spec.ihw_pi1
        return lambda X: np.full(np.atleast_2d(X).shape[0], level)
    raise ValidationError(f"unknown family {family!r}")


def _draw_beta_mixture(rng: np.random.Generator, spec: GenSpec, size: int) -> np.ndarray:
    comps = spec.beta_components
    out = np.empty(size)
    choice = rng.choice(len(comps), size=size, p=[w for _, _, w in comps])
    for ci, (a, b, _) in enumerate(comps):
        mask = choice == ci
        out[mask] = rng.beta(a, b, int(mask.sum()))
    return out


def _resample_boundary(rng: np.random.Generator, p: np.ndarray, redraw) -> np.ndarray:
    # exact 0/1 p-values are invalid; redraw them from their own distribution
    for _ in range(64):
        bad = (p == 0.0) | (p == 1.0)
        if not bad.any():
            return p
        p[bad] = redraw(int(bad.sum()))
    raise ValidationError("could not draw p-values strictly inside (0,1)")


def generate(spec: GenSpec) -> Dataset:
    """Draw one labeled dataset; deterministic given spec.seed."""
    spec.validate()
    if spec.family == "weak_dep":
        return generate_weak_dep(spec)
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n, spec.dim
    X = rng.random((n, d))
    pi1 = alternative_proportion(spec)(X)
    H = rng.random(n) < pi1
    n_alt = int(H.sum())
    if spec.family == "ihw_like":
        z = rng.standard_normal(n)
        mu = spec.gauss_mean_base + spec.gauss_mean_slope * X[:, 0]
        z[H] += mu[H]
        p = ndtr(-z)
        p = _resample_boundary(rng, p, lambda k: ndtr(-rng.standard_normal(k)))
    else:
        p = rng.random(n)
        if n_alt:
            p[H] = _draw_beta_mixture(rng, spec, n_alt)
        p = _resample_boundary(rng, p, lambda k: rng.random(k))
    return Dataset(p, X, H.astype(np.int8))


def write_with_metadata(csv_path, meta_path, data: Dataset, spec: GenSpec) -> None:
    """Write the dataset CSV plus a JSON sidecar with every generator parameter."""
    from . import dataio

    dataio.write_dataset(csv_path, data)
    dataio.write_json(meta_path, spec.metadata())


def generate_weak_dep(spec: GenSpec) -> Dataset:
    """Slope-style signal with equicorrelated Gaussian nulls in index blocks.

    Null test statistics share a block factor (correlation rho within blocks
    of block_size) and convert to p-values through the upper Gaussian tail,
    so marginals match the independent generator exactly.  This is an analog
    of dependent-benchmark generators, not a replication of any of them.
    """
    spec.validate()
    if spec.family != "weak_dep":
        raise ValidationError(f"generate_weak_dep expects family 'weak_dep', got {spec.family!r}")
    rng = np.random.default_rng(spec.seed)
    n, b, rho = spec.n, spec.block_size, spec.rho
    X = rng.random((n, 1))
    pi1 = alternative_proportion(spec)(X)
    H = rng.random(n) < pi1
    n_blocks = math.ceil(n / b)
    shared = rng.standard_normal(n_blocks)
    noise = rng.standard_normal(n)
    z = np.sqrt(rho) * shared[np.arange(n) // b] + np.sqrt(1.0 - rho) * noise
    p = ndtr(-z)
    n_alt = int(H.sum())
    if n_alt:
        p[H] = _draw_beta_mixture(rng, spec, n_alt)
    p = _resample_boundary(rng, p, lambda k: rng.random(k))
    return Dataset(p, X, H.astype(np.int8))
