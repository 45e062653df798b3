"""Domain types, dataset container, decision rules, and exact discovery accounting."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

# Thresholds of exactly 0 would violate the rule contract t > 0; an epsilon
# this small discovers nothing because p-values are strictly positive.
TINY_THRESHOLD = 1e-12


class ConfigurationError(ValueError):
    """Invalid configuration: mismatched dimensions, bad fold counts, etc."""


class ValidationError(ValueError):
    """Invalid input data: out-of-range p-values, malformed rows, etc."""


@dataclass(frozen=True)
class HypothesisRecord:
    """One unit of testing: a p-value, its covariates, and an optional label."""

    p_value: float
    features: tuple[float, ...]
    truth: int | None = None

    def __post_init__(self):
        if not (0.0 < self.p_value < 1.0):
            raise ValidationError(f"p-value must lie strictly in (0,1), got {self.p_value}")
        if len(self.features) < 1:
            raise ValidationError("feature vector must have dimension >= 1")
        if self.truth is not None and self.truth not in (0, 1):
            raise ValidationError(f"truth label must be 0 or 1, got {self.truth}")


@dataclass(frozen=True)
class FeatureStats:
    """Per-dimension location/scale used to standardize features.

    Uses the population (1/n) standard deviation.  Constant columns get their
    std forced to 1 and are flagged in ``constant``.
    """

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


class Dataset:
    """Immutable array-backed collection of hypotheses sharing one feature dimension."""

    __slots__ = ("pvals", "features", "truth", "applied_transform", "_stats")

    def __init__(
        self,
        pvals,
        features,
        truth=None,
        applied_transform: FeatureStats | None = None,
    ):
        pvals = np.asarray(pvals, dtype=np.float64)
        features = np.asarray(features, dtype=np.float64)
        if pvals.ndim != 1 or pvals.size == 0:
            raise ValidationError("pvals must be a nonempty 1-d array")
        if features.ndim != 2 or features.shape[0] != pvals.size or features.shape[1] < 1:
            raise ValidationError("features must be (n, d) with d >= 1 matching pvals")
        if np.any(pvals <= 0.0) or np.any(pvals >= 1.0):
            bad = int(np.flatnonzero((pvals <= 0.0) | (pvals >= 1.0))[0])
            raise ValidationError(f"p-value at index {bad} not strictly inside (0,1)")
        if not np.all(np.isfinite(features)):
            raise ValidationError("features contain non-finite values")
        if truth is not None:
            truth = np.asarray(truth, dtype=np.int8)
            if truth.shape != pvals.shape:
                raise ValidationError("truth labels must match pvals length")
            if np.any((truth != 0) & (truth != 1)):
                raise ValidationError("truth labels must be 0 or 1")
        self.pvals = pvals
        self.features = features
        self.truth = truth
        self.applied_transform = applied_transform
        self._stats = None

    # -- basic container protocol -------------------------------------------------
    @property
    def n(self) -> int:
        return self.pvals.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def record(self, i: int) -> HypothesisRecord:
        t = None if self.truth is None else int(self.truth[i])
        return HypothesisRecord(float(self.pvals[i]), tuple(self.features[i]), t)

    def __iter__(self) -> Iterator[HypothesisRecord]:
        return (self.record(i) for i in range(self.n))

    @classmethod
    def from_records(cls, records: Sequence[HypothesisRecord]) -> "Dataset":
        if not records:
            raise ValidationError("cannot build a dataset from zero records")
        dim = len(records[0].features)
        if any(len(r.features) != dim for r in records):
            raise ValidationError("all records must share one feature dimension")
        truths = [r.truth for r in records]
        has_truth = any(t is not None for t in truths)
        if has_truth and any(t is None for t in truths):
            raise ValidationError("truth labels must be present for all records or none")
        return cls(
            [r.p_value for r in records],
            [r.features for r in records],
            truths if has_truth else None,
        )

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(
            self.pvals[indices],
            self.features[indices],
            None if self.truth is None else self.truth[indices],
            applied_transform=self.applied_transform,
        )

    @property
    def feature_stats(self) -> FeatureStats:
        """Mean/std per dimension, recomputed deterministically from the data."""
        if self._stats is None:
            mean = self.features.mean(axis=0)
            std = self.features.std(axis=0)  # population (1/n) convention
            constant = std == 0.0
            std = np.where(constant, 1.0, std)
            self._stats = FeatureStats(mean=mean, std=std, constant=constant)
        return self._stats


def standardize(data: Dataset) -> Dataset:
    """Shift/scale each feature dimension to sample mean 0 and std 1.

    P-values and labels are untouched.  The transform parameters are retained
    on the returned dataset so rules trained in standardized coordinates can
    be wrapped for application to raw inputs (see StandardizingRule).
    """
    stats = data.feature_stats
    return Dataset(
        data.pvals,
        stats.transform(data.features),
        data.truth,
        applied_transform=stats,
    )


# ---------------------------------------------------------------------------
# Decision rules
# ---------------------------------------------------------------------------


class DecisionRule(ABC):
    """A pure threshold function x -> t(x) in (0, t_cap], t_cap <= 0.5.

    The cap keeps the rejection region (0, t(x)) and its mirrored counterpart
    (1 - t(x), 1) disjoint.
    """

    t_cap: float
    dim: int | None = None  # None accepts any input dimension

    @abstractmethod
    def thresholds(self, features: np.ndarray) -> np.ndarray:
        """Vectorized evaluation over an (n, d) feature matrix."""

    def evaluate(self, x) -> float:
        return float(self.thresholds(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0])

    def to_config(self) -> dict:
        raise ConfigurationError(f"{type(self).__name__} is not serializable")

    @staticmethod
    def _check_cap(t_cap: float) -> float:
        if not (0.0 < t_cap <= 0.5):
            raise ConfigurationError(f"t_cap must lie in (0, 0.5], got {t_cap}")
        return float(t_cap)


class ConstantRule(DecisionRule):
    """The same threshold everywhere."""

    def __init__(self, value: float, t_cap: float = 0.5):
        self.t_cap = self._check_cap(t_cap)
        if not (0.0 < value <= self.t_cap):
            raise ConfigurationError(f"constant threshold {value} outside (0, {self.t_cap}]")
        self.value = float(value)

    def thresholds(self, features):
        return np.full(np.asarray(features).shape[0], self.value)

    def to_config(self):
        return {"kind": "constant", "value": self.value, "t_cap": self.t_cap}


class GroupedRule(DecisionRule):
    """Piecewise-constant thresholds keyed by nearest centroid."""

    def __init__(self, centers, values, t_cap: float = 0.5, notes: tuple[str, ...] = ()):
        self.t_cap = self._check_cap(t_cap)
        self.centers = np.asarray(centers, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if self.centers.ndim != 2 or values.shape != (self.centers.shape[0],):
            raise ConfigurationError("centers must be (k, d) with one value per center")
        self.values = np.clip(values, TINY_THRESHOLD, self.t_cap)
        self.dim = self.centers.shape[1]
        self.notes = tuple(notes)

    def assign(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        d2 = ((features[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    def thresholds(self, features):
        return self.values[self.assign(features)]

    def to_config(self):
        return {
            "kind": "grouped",
            "centers": self.centers.tolist(),
            "values": self.values.tolist(),
            "t_cap": self.t_cap,
            "notes": list(self.notes),
        }


class ScaledRule(DecisionRule):
    """gamma * base(x), capped at t_cap and floored above zero."""

    def __init__(self, base: DecisionRule, gamma: float, t_cap: float | None = None):
        self.t_cap = self._check_cap(base.t_cap if t_cap is None else t_cap)
        if gamma <= 0.0:
            raise ConfigurationError(f"gamma must be positive, got {gamma}")
        self.base = base
        self.gamma = float(gamma)
        self.dim = base.dim

    def thresholds(self, features):
        t = self.gamma * self.base.thresholds(features)
        return np.clip(t, TINY_THRESHOLD, self.t_cap)

    def to_config(self):
        return {
            "kind": "scaled",
            "gamma": self.gamma,
            "t_cap": self.t_cap,
            "base": self.base.to_config(),
        }


class StandardizingRule(DecisionRule):
    """Applies a stored feature transform before delegating to an inner rule.

    Lets rules trained on standardized features evaluate raw inputs.
    """

    def __init__(self, stats: FeatureStats, base: DecisionRule):
        self.stats = stats
        self.base = base
        self.t_cap = base.t_cap
        self.dim = stats.mean.shape[0]

    def thresholds(self, features):
        return self.base.thresholds(self.stats.transform(features))

    def to_config(self):
        return {
            "kind": "standardized_input",
            "mean": self.stats.mean.tolist(),
            "std": self.stats.std.tolist(),
            "constant": self.stats.constant.astype(int).tolist(),
            "base": self.base.to_config(),
        }


class CallableRule(DecisionRule):
    """Wraps an arbitrary vectorized function; used for oracles and tests."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], t_cap: float = 0.5, dim=None):
        self.t_cap = self._check_cap(t_cap)
        self.fn = fn
        self.dim = dim

    def thresholds(self, features):
        t = np.asarray(self.fn(np.asarray(features, dtype=np.float64)), dtype=np.float64)
        return np.clip(t, TINY_THRESHOLD, self.t_cap)


# Registry so serialized rules can be reloaded without import cycles;
# mlp.py registers its own kind at import time.
_RULE_LOADERS: dict[str, Callable[[dict], DecisionRule]] = {}


def register_rule_kind(kind: str, loader: Callable[[dict], DecisionRule]) -> None:
    _RULE_LOADERS[kind] = loader


def rule_from_config(cfg: dict) -> DecisionRule:
    kind = cfg.get("kind")
    if kind == "constant":
        return ConstantRule(cfg["value"], cfg["t_cap"])
    if kind == "grouped":
        return GroupedRule(cfg["centers"], cfg["values"], cfg["t_cap"], tuple(cfg.get("notes", ())))
    if kind == "scaled":
        return ScaledRule(rule_from_config(cfg["base"]), cfg["gamma"], cfg["t_cap"])
    if kind == "standardized_input":
        stats = FeatureStats(
            mean=np.asarray(cfg["mean"], dtype=np.float64),
            std=np.asarray(cfg["std"], dtype=np.float64),
            constant=np.asarray(cfg["constant"], dtype=bool),
        )
        return StandardizingRule(stats, rule_from_config(cfg["base"]))
    if kind in _RULE_LOADERS:
        return _RULE_LOADERS[kind](cfg)
    raise ConfigurationError(f"unknown rule kind {kind!r}")


# ---------------------------------------------------------------------------
# Folds and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    """Random balanced partition of {0..n-1} into M folds.

    For fold j the test set is fold j, the cross-validation set is fold
    (j+1) mod M, and the training set is everything else.
    """

    n: int
    M: int
    assignment: np.ndarray

    def test_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def cv_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == (j + 1) % self.M)

    def train_indices(self, j: int) -> np.ndarray:
        cv = (j + 1) % self.M
        return np.flatnonzero((self.assignment != j) & (self.assignment != cv))


def make_folds(n: int, M: int, seed: int) -> FoldPlan:
    """Uniformly random partition with fold sizes differing by at most one."""
    if M < 3:
        raise ConfigurationError(f"need M >= 3 folds for disjoint train/cv/test, got {M}")
    if n < M:
        raise ConfigurationError(f"need n >= M, got n={n}, M={M}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for j, chunk in enumerate(np.array_split(perm, M)):
        assignment[chunk] = j
    return FoldPlan(n=n, M=M, assignment=assignment)


@dataclass
class DiscoveryReport:
    """Discovery accounting for one rule on one dataset.

    FDP and its estimate use the 0/0 -> 0 convention at D = 0, so a rule that
    discovers nothing trivially reports control.
    """

    discovered: np.ndarray
    D: int
    FDhat: float
    FDPhat: float
    alpha: float | None = None
    FD: int | None = None
    FDP: float | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "D": self.D,
            "FD": self.FD,
            "FDP": self.FDP,
            "FDhat": self.FDhat,
            "FDPhat": self.FDPhat,
            "alpha": self.alpha,
            "flags": list(self.flags),
        }


def apply_rule(data: Dataset, rule: DecisionRule, alpha: float | None = None) -> DiscoveryReport:
    """Discover {i : p_i < t(x_i)} and account exactly.

    Ties p_i == t(x_i) are non-discoveries.  FDhat comes from the mirror
    count; FD/FDP are filled only when truth labels exist.
    """
    if rule.dim is not None and rule.dim != data.dim:
        raise ConfigurationError(f"rule expects dimension {rule.dim}, dataset has {data.dim}")
    t = rule.thresholds(data.features)
    discovered = np.flatnonzero(data.pvals < t)
    D = int(discovered.size)
    from .estimator import mirror_fd  # late import; estimator depends on core types

    fdhat = mirror_fd(data, rule)
    fd = fdp = None
    if data.truth is not None:
        fd = int(np.count_nonzero(data.truth[discovered] == 0))
        fdp = fd / D if D > 0 else 0.0
    return DiscoveryReport(
        discovered=discovered,
        D=D,
        FDhat=fdhat,
        FDPhat=fdhat / D if D > 0 else 0.0,
        alpha=alpha,
        FD=fd,
        FDP=fdp,
    )
