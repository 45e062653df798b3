"""End-to-end learning of a covariate-dependent discovery threshold.

Per fold: warm-start the network by regressing onto cluster-smoothed optimal
thresholds, then run Adagrad on the smoothed penalty objective

    maximize  D_s - lambda1 * max(FD_s - alpha * D_s, 0)

where D_s and FD_s replace the discovery/mirror indicator counts with
sigmoids of sharpness lambda2.  The trained rule is rescaled by a scalar
gamma chosen on the held-out CV fold so its estimated FDP meets the target
level, then applied to the test fold.  Discoveries from all folds are merged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mlp
from .baselines import bh_threshold, kmeans
from .core import (
    ConfigurationError,
    Dataset,
    DecisionRule,
    DiscoveryReport,
    ScaledRule,
    StandardizingRule,
    make_folds,
    standardize,
)
from .mlp import AdagradState, BatchWorkspace, MlpParams, MlpRule, adagrad_step
from .oracle import GroupDensity, group_optimal_thresholds

LAMBDA2_FLOOR = 1e-5  # BH thresholds below this would make the sigmoids needlessly sharp
TARGET_FLOOR_FRAC = 1e-4  # regression targets floored at this fraction of the cap
FALLBACK_GAMMA = 1e-9  # effectively discovers nothing; used when even BH finds nothing


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of the training procedure."""

    alpha: float = 0.1
    M: int = 3
    lambda1: float = 20.0
    lambda2: float | None = None  # None: adaptive, 2 / max(BH threshold, 1e-5)
    lambda3: float = 1.0
    init_clusters: int = 10
    batch_size: int = 10000
    fit_iters: int = 6000
    opt_iters: int = 12000
    lr: float = 0.01
    min_discoveries: int = 10
    gamma_grid: int = 200
    gamma_min: float = 1e-3
    gamma_max_factor: float = 2.0
    t_cap: float = 0.5
    estimator: str = "mirror"
    clip_bound: float | None = None
    seed: int = 0
    hidden: tuple[int, ...] = (10,) * 10
    min_group: int = 100
    min_fold: int = 300
    prefilter: bool = False
    snapshot_every: int = 0  # 0 trains a single candidate; >0 keeps periodic snapshots
    log_every: int = 500
    dtype: str = "float32"

    def validate(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ConfigurationError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.M < 3:
            raise ConfigurationError("need M >= 3 folds")
        if not (0.0 < self.t_cap <= 0.5):
            raise ConfigurationError(f"t_cap must lie in (0, 0.5], got {self.t_cap}")
        if self.estimator not in ("mirror", "expected"):
            raise ConfigurationError(f"estimator must be 'mirror' or 'expected', got {self.estimator!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        for name in ("lambda1", "lambda3", "lr", "gamma_min", "gamma_max_factor"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        for name in ("init_clusters", "batch_size", "fit_iters", "opt_iters", "gamma_grid", "min_fold"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive count")
        if self.lambda2 is not None and self.lambda2 <= 0:
            raise ConfigurationError("lambda2 must be positive when given")


def _subseed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence((seed, *key)).generate_state(1)[0])


def _subrng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


def adaptive_lambda2(pvals, alpha: float) -> float:
    """Sigmoid sharpness tied to the dataset: transition width of half the BH threshold."""
    return 2.0 / max(bh_threshold(pvals, alpha), LAMBDA2_FLOOR)


# ---------------------------------------------------------------------------
# Smoothed counts and the penalty objective
# ---------------------------------------------------------------------------


@dataclass
class SmoothedCounts:
    """Differentiable surrogates of the discovery and mirror counts."""

    d_smooth: float
    fd_smooth: float
    t: np.ndarray
    dd_dt: np.ndarray
    dfd_dt: np.ndarray


def _sigmoid64(u: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(u, -36.0, 36.0)))


def smoothed_counts(params: MlpParams, features, pvals, lambda2: float) -> SmoothedCounts:
    """D_s = sum sigmoid(lambda2 (t - p)), FD_s = sum sigmoid(lambda2 (p - (1 - t))).

    Also returns the partials of both counts w.r.t. each per-point threshold,
    for chaining into the network backward pass.
    """
    if lambda2 <= 0:
        raise ConfigurationError("lambda2 must be positive")
    t = np.asarray(mlp.forward(params, features), dtype=np.float64)
    p = np.asarray(pvals, dtype=np.float64)
    sD = _sigmoid64(lambda2 * (t - p))
    sF = _sigmoid64(lambda2 * (p - (1.0 - t)))
    return SmoothedCounts(
        d_smooth=float(sD.sum()),
        fd_smooth=float(sF.sum()),
        t=t,
        dd_dt=lambda2 * sD * (1.0 - sD),
        dfd_dt=lambda2 * sF * (1.0 - sF),
    )


def penalty_loss(
    params: MlpParams,
    features,
    pvals,
    alpha: float,
    lambda1: float,
    lambda2: float,
) -> tuple[float, np.ndarray]:
    """Negated penalty objective and its exact parameter gradient.

    The hinge subgradient uses the active branch; at exact equality it is 0.
    """
    sc = smoothed_counts(params, features, pvals, lambda2)
    hinge = sc.fd_smooth - alpha * sc.d_smooth
    if hinge > 0.0:
        loss = -sc.d_smooth + lambda1 * hinge
        g_t = -(1.0 + lambda1 * alpha) * sc.dd_dt + lambda1 * sc.dfd_dt
    else:
        loss = -sc.d_smooth
        g_t = -sc.dd_dt
    grad = mlp.backward(params, features, g_t)
    return float(loss), grad


class _PenaltyWorkspace:
    """Buffer-reusing loss/gradient evaluation for the training loop."""

    def __init__(self, params: MlpParams, batch_size: int, alpha: float, lambda1: float, lambda2: float):
        self.ws = BatchWorkspace(params, batch_size)
        dt = params.dtype
        self.alpha = dt.type(alpha)
        self.lambda1 = dt.type(lambda1)
        self.lambda2 = dt.type(lambda2)
        B = batch_size
        self.sD = np.empty(B, dtype=dt)
        self.sF = np.empty(B, dtype=dt)
        self.gt = np.empty(B, dtype=dt)
        self.tmp = np.empty(B, dtype=dt)
        self.zclip = self.ws.zclip
        self.one = dt.type(1.0)

    def _sigmoid_into(self, u: np.ndarray, out: np.ndarray) -> np.ndarray:
        np.clip(u, -self.zclip, self.zclip, out=out)
        np.exp(np.negative(out, out=out), out=out)
        out += self.one
        np.reciprocal(out, out=out)
        return out

    def step(self, X: np.ndarray, p: np.ndarray) -> tuple[float, float, float]:
        """Forward + backward on one batch; gradient lands in self.ws.grad."""
        t = self.ws.forward(X)
        np.subtract(t, p, out=self.tmp)
        self.tmp *= self.lambda2
        self._sigmoid_into(self.tmp, self.sD)
        np.subtract(p, self.one, out=self.tmp)
        self.tmp += t
        self.tmp *= self.lambda2
        self._sigmoid_into(self.tmp, self.sF)
        d_smooth = float(self.sD.sum())
        fd_smooth = float(self.sF.sum())
        hinge = fd_smooth - float(self.alpha) * d_smooth
        # dD/dt_i and dFD/dt_i, combined per the active hinge branch
        np.subtract(self.one, self.sD, out=self.gt)
        self.gt *= self.sD
        self.gt *= self.lambda2
        if hinge > 0.0:
            loss = -d_smooth + float(self.lambda1) * hinge
            self.gt *= -(self.one + self.lambda1 * self.alpha)
            np.subtract(self.one, self.sF, out=self.tmp)
            self.tmp *= self.sF
            self.tmp *= self.lambda2 * self.lambda1
            self.gt += self.tmp
        else:
            loss = -d_smooth
            np.negative(self.gt, out=self.gt)
        self.ws.backward(self.gt)
        return loss, d_smooth, fd_smooth


# ---------------------------------------------------------------------------
# Cluster-based initialization
# ---------------------------------------------------------------------------


def cluster_init_targets(
    train: Dataset, config: TrainConfig, kmeans_seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-hypothesis regression targets: softmax-weighted per-cluster thresholds.

    Returns (targets, per-cluster thresholds, cluster centers).  Clusters
    below the occupancy floor fall back to the train-fold BH threshold.
    """
    n = train.n
    k = min(config.init_clusters, max(1, n // config.min_group), n)
    groups = kmeans(train.features, k, seed=kmeans_seed)
    density = GroupDensity.from_assignment(train.pvals, groups.group_of, k)
    t_opt = group_optimal_thresholds(density, config.alpha, t_cap=config.t_cap)
    small = density.sizes < config.min_group
    if small.any():
        t_opt = np.where(small, bh_threshold(train.pvals, config.alpha), t_opt)
    d2 = ((train.features[:, None, :] - groups.centers[None, :, :]) ** 2).sum(axis=2)
    logw = -config.lambda3 * d2
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    targets = w @ t_opt
    floor = config.t_cap * TARGET_FLOOR_FRAC
    targets = np.clip(targets, floor, config.t_cap * (1.0 - 1e-6))
    return targets, t_opt, groups.centers


def k_cluster_init(train: Dataset, config: TrainConfig, fold: int = 0) -> MlpParams:
    """Warm start: fit the network to the cluster-smoothed threshold landscape."""
    targets, _, _ = cluster_init_targets(train, config, _subseed(config.seed, 1, fold))
    params = mlp.init_params(
        train.dim,
        hidden=config.hidden,
        seed=_subseed(config.seed, 2, fold),
        output_cap=config.t_cap,
        clip_bound=config.clip_bound,
        dtype=np.dtype(config.dtype),
    )
    mlp.fit_regression(
        params,
        train.features,
        targets,
        iters=config.fit_iters,
        seed=_subseed(config.seed, 3, fold),
        batch_size=config.batch_size if config.batch_size < train.n else None,
        lr=config.lr,
    )
    return params


# ---------------------------------------------------------------------------
# Gamma rescaling on the CV fold
# ---------------------------------------------------------------------------


def rescale_gamma(
    rule: DecisionRule,
    cv_data: Dataset,
    alpha: float,
    n_grid: int = 200,
    gamma_min: float = 1e-3,
    gamma_max_factor: float = 2.0,
    min_discoveries: int = 10,
    estimator: str = "mirror",
) -> tuple[float, bool]:
    """Largest grid gamma whose scaled rule has estimated FDP <= alpha on CV.

    The estimate is a step function of gamma, so the grid is scanned rather
    than root-found.  Feasibility also requires at least ``min_discoveries``
    CV discoveries.  When nothing is feasible, gamma falls back so the scaled
    rule is dominated by the CV-fold BH threshold (flagged).
    """
    t = np.asarray(rule.thresholds(cv_data.features), dtype=np.float64)
    p = cv_data.pvals
    t_cap = rule.t_cap
    max_t = float(t.max())
    hi = min(gamma_max_factor, t_cap / max_t) if max_t > 0 else gamma_max_factor
    if hi <= gamma_min:
        grid = np.array([hi])
    else:
        grid = np.geomspace(gamma_min, hi, n_grid)
    tg = np.minimum(grid[:, None] * t[None, :], t_cap)
    D = (p[None, :] < tg).sum(axis=1)
    if estimator == "mirror":
        est = (p[None, :] > 1.0 - tg).sum(axis=1).astype(np.float64)
    else:
        est = tg.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        fdp_hat = np.where(D > 0, est / np.maximum(D, 1), 0.0)
    feasible = (fdp_hat <= alpha) & (D >= min_discoveries)
    if feasible.any():
        return float(grid[np.flatnonzero(feasible)[-1]]), False
    bh_thr = bh_threshold(p, alpha)
    if bh_thr > 0.0 and max_t > 0.0:
        return bh_thr / max_t, True
    return FALLBACK_GAMMA, True


# ---------------------------------------------------------------------------
# The full procedure
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    """Merged discoveries plus the per-fold artifacts behind them."""

    report: DiscoveryReport
    fold_rules: list[DecisionRule]
    gammas: list[float]
    fold_assignment: np.ndarray  # per original index; -1 when prefiltered out
    disc_thresholds: np.ndarray  # threshold at each discovered hypothesis
    logs: list[list[tuple[int, float, float, float]]]
    flags: tuple[str, ...]
    config: TrainConfig


def neural_fdr(data: Dataset, config: TrainConfig) -> TrainResult:
    """Train per-fold threshold rules and merge their test-fold discoveries."""
    config.validate()
    alpha = config.alpha
    flags: list[str] = []

    if config.prefilter:
        keep = (data.pvals < config.t_cap) | (data.pvals > 1.0 - config.t_cap)
        if not keep.any():
            raise ConfigurationError("prefilter removed every hypothesis")
        work_idx = np.flatnonzero(keep)
        work = data.subset(work_idx)
        flags.append(f"prefilter kept {work.n} of {data.n} hypotheses")
    else:
        work_idx = np.arange(data.n)
        work = data

    if work.n < config.M * config.min_fold:
        raise ConfigurationError(
            f"need at least M*{config.min_fold} = {config.M * config.min_fold} hypotheses, got {work.n}"
        )

    lambda2 = config.lambda2 if config.lambda2 is not None else adaptive_lambda2(data.pvals, alpha)
    std = standardize(work)
    stats = std.applied_transform
    folds = make_folds(work.n, config.M, seed=_subseed(config.seed, 0))
    dtype = np.dtype(config.dtype)

    fold_rules: list[DecisionRule] = []
    gammas: list[float] = []
    logs: list[list[tuple[int, float, float, float]]] = []
    fold_assignment = np.full(data.n, -1, dtype=np.int64)
    fold_assignment[work_idx] = folds.assignment
    disc_parts: list[np.ndarray] = []
    thr_parts: list[np.ndarray] = []
    fdhat_total = 0.0

    for j in range(config.M):
        tr = std.subset(folds.train_indices(j))
        cv = std.subset(folds.cv_indices(j))
        te_idx = folds.test_indices(j)
        te = std.subset(te_idx)

        params = k_cluster_init(tr, config, fold=j)

        pw = _PenaltyWorkspace(params, config.batch_size, alpha, config.lambda1, lambda2)
        state = AdagradState.for_params(params, lr=config.lr)
        rng = _subrng(config.seed, 4, j)
        Xtr = np.ascontiguousarray(tr.features, dtype=dtype)
        ptr = np.ascontiguousarray(tr.pvals, dtype=dtype)
        log: list[tuple[int, float, float, float]] = []
        candidates: list[MlpParams] = []
        for it in range(config.opt_iters):
            idx = rng.integers(0, tr.n, config.batch_size)
            loss, d_s, fd_s = pw.step(Xtr[idx], ptr[idx])
            adagrad_step(params, state, pw.ws.grad)
            if config.log_every and it % config.log_every == 0:
                log.append((it, d_s, fd_s, loss))
            if config.snapshot_every and (it + 1) % config.snapshot_every == 0:
                candidates.append(params.copy())
        candidates.append(params.copy())  # the fully-trained rule is always a candidate
        logs.append(log)

        # pick the candidate with the most feasible CV discoveries at its gamma
        best = None
        for cand in candidates:
            rule = MlpRule(cand)
            gamma, flagged = rescale_gamma(
                rule,
                cv,
                alpha,
                n_grid=config.gamma_grid,
                gamma_min=config.gamma_min,
                gamma_max_factor=config.gamma_max_factor,
                min_discoveries=config.min_discoveries,
                estimator=config.estimator,
            )
            scaled = ScaledRule(rule, gamma, t_cap=config.t_cap)
            d_cv = int(np.count_nonzero(cv.pvals < scaled.thresholds(cv.features)))
            key = (not flagged, d_cv)
            if best is None or key >= best[0]:
                best = (key, scaled, gamma, flagged)
        _, scaled, gamma, flagged = best
        if flagged:
            flags.append(f"fold {j}: no feasible gamma; fell back to the CV BH threshold scale")
        gammas.append(gamma)
        fold_rules.append(StandardizingRule(stats, scaled))

        t_te = scaled.thresholds(te.features)
        local_disc = te.pvals < t_te
        disc_parts.append(work_idx[te_idx[local_disc]])
        thr_parts.append(t_te[local_disc])
        if config.estimator == "mirror":
            fdhat_total += float(np.count_nonzero(te.pvals > 1.0 - t_te))
        else:
            fdhat_total += float(t_te.sum())

    discovered = np.concatenate(disc_parts) if disc_parts else np.array([], dtype=np.int64)
    thresholds = np.concatenate(thr_parts) if thr_parts else np.array([])
    order = np.argsort(discovered)
    discovered = discovered[order]
    thresholds = thresholds[order]
    D = int(discovered.size)
    fd = fdp = None
    if data.truth is not None:
        fd = int(np.count_nonzero(data.truth[discovered] == 0))
        fdp = fd / D if D > 0 else 0.0
    report = DiscoveryReport(
        discovered=discovered,
        D=D,
        FDhat=fdhat_total,
        FDPhat=fdhat_total / D if D > 0 else 0.0,
        alpha=alpha,
        FD=fd,
        FDP=fdp,
        flags=tuple(flags),
    )
    return TrainResult(
        report=report,
        fold_rules=fold_rules,
        gammas=gammas,
        fold_assignment=fold_assignment,
        disc_thresholds=thresholds,
        logs=logs,
        flags=tuple(flags),
        config=config,
    )
