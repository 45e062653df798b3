import numpy as np
import pytest

from covfdr import mlp
from covfdr.core import CallableRule, ConfigurationError, ConstantRule, Dataset
from covfdr.simgen import GenSpec, generate
from covfdr.trainer import (
    TrainConfig,
    adaptive_lambda2,
    cluster_init_targets,
    k_cluster_init,
    neural_fdr,
    penalty_loss,
    rescale_gamma,
    smoothed_counts,
)

FAST = dict(batch_size=800, fit_iters=300, opt_iters=200, init_clusters=3, log_every=0, min_fold=100)


def fast_config(**overrides):
    merged = {**FAST, **overrides}
    return TrainConfig(**merged)


class TestSmoothedCounts:
    def test_sharp_limit_matches_exact_counts(self):
        rng = np.random.default_rng(0)
        params = mlp.zeros_params(1)  # t = 0.25 everywhere
        p = rng.uniform(0.0001, 0.9999, 400)
        # keep every point at least 0.01 from both boundaries
        p = p[(np.abs(p - 0.25) >= 0.01) & (np.abs(p - 0.75) >= 0.01)]
        X = np.zeros((p.size, 1))
        sc = smoothed_counts(params, X, p, lambda2=2000.0)
        exact_d = np.count_nonzero(p < 0.25)
        exact_fd = np.count_nonzero(p > 0.75)
        assert abs(sc.d_smooth - exact_d) <= 1e-3
        assert abs(sc.fd_smooth - exact_fd) <= 1e-3

    def test_boundary_point_contributes_half(self):
        params = mlp.zeros_params(1)
        sc = smoothed_counts(params, np.zeros((1, 1)), np.array([0.25]), lambda2=50.0)
        assert sc.d_smooth == pytest.approx(0.5)

    def test_mirrored_symmetry(self):
        # p and its mirror 1-p contribute equal amounts to D and FD resp.
        params = mlp.zeros_params(1)
        sc = smoothed_counts(params, np.zeros((2, 1)), np.array([0.2, 0.8]), lambda2=40.0)
        sD = 1.0 / (1.0 + np.exp(-40.0 * (0.25 - 0.2)))
        assert sc.d_smooth == pytest.approx(sD + 1.0 / (1.0 + np.exp(-40.0 * (0.25 - 0.8))))
        assert sc.fd_smooth == pytest.approx(sc.d_smooth)


class TestPenaltyLoss:
    def test_inactive_hinge_is_negative_d(self):
        params = mlp.zeros_params(1)
        p = np.full(30, 0.01)  # everything well below t=0.25: FD ~ 0
        X = np.zeros((30, 1))
        loss, _ = penalty_loss(params, X, p, alpha=0.9, lambda1=20.0, lambda2=100.0)
        sc = smoothed_counts(params, X, p, 100.0)
        assert sc.fd_smooth - 0.9 * sc.d_smooth < 0
        assert loss == pytest.approx(-sc.d_smooth)

    def test_active_hinge_formula(self):
        params = mlp.zeros_params(1)
        rng = np.random.default_rng(1)
        p = rng.uniform(0.001, 0.999, 200)
        X = np.zeros((200, 1))
        sc = smoothed_counts(params, X, p, 60.0)
        hinge = sc.fd_smooth - 0.05 * sc.d_smooth
        assert hinge > 0
        loss, _ = penalty_loss(params, X, p, alpha=0.05, lambda1=20.0, lambda2=60.0)
        assert loss == pytest.approx(-sc.d_smooth + 20.0 * hinge)

    def test_no_penalty_drives_thresholds_up(self):
        rng = np.random.default_rng(2)
        params = mlp.init_params(1, hidden=(6, 6), seed=3)
        X = rng.normal(size=(500, 1))
        p = rng.uniform(0.001, 0.999, 500)
        before = mlp.forward(params, X).mean()
        state = mlp.AdagradState.for_params(params)
        for _ in range(100):
            _, grad = penalty_loss(params, X, p, alpha=0.1, lambda1=0.0, lambda2=50.0)
            mlp.adagrad_step(params, state, grad)
        after = mlp.forward(params, X).mean()
        assert after > before

    def test_gradient_matches_finite_differences_both_branches(self):
        rng = np.random.default_rng(4)
        for alpha, p_gen in ((0.05, lambda: rng.uniform(0.001, 0.999, 60)),
                             (0.95, lambda: rng.uniform(0.001, 0.05, 60))):
            params = mlp.init_params(2, hidden=(5, 4), seed=11)
            X = rng.normal(size=(60, 2))
            p = p_gen()
            sc = smoothed_counts(params, X, p, 30.0)
            hinge = sc.fd_smooth - alpha * sc.d_smooth
            assert abs(hinge) > 0.5  # clearly on one branch
            loss, grad = penalty_loss(params, X, p, alpha=alpha, lambda1=20.0, lambda2=30.0)

            def loss_at(theta):
                q = mlp.MlpParams(params.widths, theta, params.leaky_slope, params.output_cap)
                return penalty_loss(q, X, p, alpha=alpha, lambda1=20.0, lambda2=30.0)[0]

            h = 1e-6
            num = np.empty_like(grad)
            for i in range(grad.size):
                up, dn = params.theta.copy(), params.theta.copy()
                up[i] += h
                dn[i] -= h
                num[i] = (loss_at(up) - loss_at(dn)) / (2 * h)
            scale = np.maximum(np.maximum(np.abs(grad), np.abs(num)), 1e-7)
            assert float((np.abs(grad - num) / scale).max()) <= 1e-3


class TestAdaptiveLambda2:
    def test_uses_bh_threshold(self):
        p = [0.01, 0.02, 0.5, 0.9]
        assert adaptive_lambda2(p, 0.1) == pytest.approx(2.0 / 0.02)

    def test_floor_when_bh_empty(self):
        assert adaptive_lambda2([0.5, 0.9], 0.1) == pytest.approx(2.0 / 1e-5)


class TestClusterInit:
    def test_single_cluster_targets_equal_group_threshold(self):
        data = generate(GenSpec(family="slope_1d", n=3000, seed=5))
        cfg = fast_config(init_clusters=1)
        targets, t_opt, _ = cluster_init_targets(data, cfg, kmeans_seed=0)
        assert t_opt.size == 1
        assert np.all(targets == targets[0])
        assert targets[0] == pytest.approx(t_opt[0])

    def test_equal_cluster_thresholds_give_constant_targets(self):
        # exchangeable feature blobs with identical p-value mix: per-cluster
        # thresholds coincide, so the convex combination is constant
        rng = np.random.default_rng(6)
        n = 6000
        x = np.concatenate([rng.normal(-5, 0.1, n // 2), rng.normal(5, 0.1, n // 2)])[:, None]
        p = np.clip(np.concatenate([rng.beta(1, 80, n // 4), rng.uniform(0, 1, n // 4)] * 2), 1e-12, 1 - 1e-12)
        data = Dataset(p, x)
        cfg = fast_config(init_clusters=2)
        targets, t_opt, _ = cluster_init_targets(data, cfg, kmeans_seed=1)
        if t_opt[0] == t_opt[1]:  # exact symmetric case
            assert np.allclose(targets, t_opt[0])
        else:
            assert np.ptp(targets) <= abs(t_opt[0] - t_opt[1]) + 1e-12

    def test_far_cluster_softmax_weight_is_one(self):
        rng = np.random.default_rng(7)
        n = 2000
        x = np.concatenate([rng.normal(0, 0.05, n // 2), rng.normal(6, 0.05, n // 2)])[:, None]
        p = np.clip(np.concatenate([rng.beta(1, 100, n // 2), rng.uniform(0, 1, n // 2)]), 1e-12, 1 - 1e-12)
        data = Dataset(p, x)
        cfg = fast_config(init_clusters=2, lambda3=1.0, min_group=50)
        targets, t_opt, centers = cluster_init_targets(data, cfg, kmeans_seed=2)
        # a point at a center picks up that cluster's threshold almost exactly
        at_center = np.argmin(np.abs(data.features[:, 0] - centers[0, 0]))
        own = np.argmin(np.abs(centers[:, 0] - data.features[at_center, 0]))
        assert targets[at_center] == pytest.approx(
            np.clip(t_opt[own], cfg.t_cap * 1e-4, cfg.t_cap), rel=1e-6
        )

    def test_fit_produces_network_near_targets(self):
        data = generate(GenSpec(family="slope_1d", n=2000, seed=8))
        from covfdr.core import standardize

        std = standardize(data)
        cfg = fast_config(fit_iters=800)
        params = k_cluster_init(std, cfg, fold=0)
        targets, _, _ = cluster_init_targets(std, cfg, kmeans_seed=np.random.SeedSequence((cfg.seed, 1, 0)).generate_state(1)[0])
        t = mlp.forward(params, std.features.astype(np.float32)).astype(np.float64)
        assert float(np.mean((t - targets) ** 2)) < 1e-4


class TestRescaleGamma:
    def _cv_data(self, seed=9, n=4000):
        return generate(GenSpec(family="slope_1d", n=n, seed=seed))

    def test_selected_gamma_is_feasible(self):
        cv = self._cv_data()
        rule = ConstantRule(0.02)
        gamma, flagged = rescale_gamma(rule, cv, alpha=0.1)
        assert not flagged
        scaled_t = np.minimum(gamma * rule.thresholds(cv.features), 0.5)
        D = np.count_nonzero(cv.pvals < scaled_t)
        fd = np.count_nonzero(cv.pvals > 1 - scaled_t)
        assert D >= 10
        assert fd / D <= 0.1

    def test_largest_feasible_on_grid(self):
        cv = self._cv_data(seed=10)
        rule = ConstantRule(0.02)
        gamma, _ = rescale_gamma(rule, cv, alpha=0.1, n_grid=50)
        t = rule.thresholds(cv.features)
        grid = np.geomspace(1e-3, min(2.0, 0.5 / t.max()), 50)
        larger = grid[grid > gamma]
        for g in larger:
            tg = np.minimum(g * t, 0.5)
            D = np.count_nonzero(cv.pvals < tg)
            fd = np.count_nonzero(cv.pvals > 1 - tg)
            assert D < 10 or fd / max(D, 1) > 0.1

    def test_discoveries_monotone_in_gamma(self):
        cv = self._cv_data(seed=11)
        rule = CallableRule(lambda X: 0.01 + 0.02 * (X[:, 0] > 0.5))
        t = rule.thresholds(cv.features)
        counts = []
        for g in np.geomspace(1e-3, 2.0, 40):
            counts.append(int(np.count_nonzero(cv.pvals < np.minimum(g * t, 0.5))))
        assert counts == sorted(counts)

    def test_pure_null_falls_back(self):
        cv = generate(GenSpec(family="pure_null", n=4000, seed=12))
        rule = ConstantRule(0.05)
        gamma, flagged = rescale_gamma(rule, cv, alpha=0.05, min_discoveries=10)
        assert flagged
        # fallback is dominated by the CV-fold BH rule
        from covfdr.baselines import bh_threshold

        bh = bh_threshold(cv.pvals, 0.05)
        assert gamma * 0.05 <= max(bh, 1e-6) + 1e-12

    def test_expected_estimator_variant(self):
        cv = self._cv_data(seed=13)
        rule = ConstantRule(0.02)
        gamma, flagged = rescale_gamma(rule, cv, alpha=0.1, estimator="expected")
        assert not flagged
        scaled_t = np.minimum(gamma * rule.thresholds(cv.features), 0.5)
        D = np.count_nonzero(cv.pvals < scaled_t)
        assert scaled_t.sum() / D <= 0.1


class TestNeuralFDR:
    def test_deterministic(self):
        data = generate(GenSpec(family="slope_1d", n=1500, seed=14))
        cfg = fast_config(seed=3)
        a = neural_fdr(data, cfg)
        b = neural_fdr(data, cfg)
        assert np.array_equal(a.report.discovered, b.report.discovered)
        assert a.gammas == b.gammas

    def test_pure_null_discovers_almost_nothing(self):
        for s in (15, 16):
            data = generate(GenSpec(family="pure_null", n=30000, seed=s))
            res = neural_fdr(data, fast_config(seed=4))
            assert res.report.D / data.n <= 0.002

    def test_merged_report_consistency(self):
        data = generate(GenSpec(family="slope_1d", n=2000, seed=16))
        res = neural_fdr(data, fast_config(seed=5))
        rep = res.report
        assert rep.D == rep.discovered.size
        assert rep.discovered.size == np.unique(rep.discovered).size
        if rep.D > 0:
            assert rep.FDP * rep.D == rep.FD
        assert len(res.fold_rules) == 3
        assert res.disc_thresholds.size == rep.D
        # each discovery is below its own fold rule's threshold on raw features
        for idx, t in zip(rep.discovered, res.disc_thresholds):
            assert data.pvals[idx] < t

    def test_fold_rules_apply_to_raw_features(self):
        data = generate(GenSpec(family="slope_1d", n=2000, seed=17))
        res = neural_fdr(data, fast_config(seed=6))
        j0 = np.flatnonzero(res.fold_assignment == 0)
        t = res.fold_rules[0].thresholds(data.features[j0])
        disc_manual = set(j0[data.pvals[j0] < t])
        disc_reported = set(res.report.discovered) & set(j0)
        assert disc_manual == disc_reported

    def test_per_fold_independence_under_test_permutation(self):
        data = generate(GenSpec(family="slope_1d", n=1800, seed=18))
        cfg = fast_config(seed=7)
        res = neural_fdr(data, cfg)
        fold0 = np.flatnonzero(res.fold_assignment == 0)
        rng = np.random.default_rng(99)
        perm = rng.permutation(fold0)
        pv = data.pvals.copy()
        ft = data.features.copy()
        tr = data.truth.copy()
        pv[fold0], ft[fold0], tr[fold0] = pv[perm], ft[perm], tr[perm]
        res2 = neural_fdr(Dataset(pv, ft, tr), cfg)

        def fold0_records(res_, pvals, feats):
            ids = set(res_.report.discovered) & set(np.flatnonzero(res_.fold_assignment == 0))
            return sorted((pvals[i], feats[i, 0]) for i in ids)

        assert fold0_records(res, data.pvals, data.features) == fold0_records(res2, pv, ft)

    def test_expected_estimator_end_to_end(self):
        data = generate(GenSpec(family="slope_1d", n=2000, seed=19))
        res = neural_fdr(data, fast_config(seed=8, estimator="expected"))
        assert res.report.D > 0
        assert res.report.FDP <= 0.3

    def test_prefilter_maps_to_original_indices(self):
        data = generate(GenSpec(family="slope_1d", n=4000, seed=20))
        cfg = fast_config(seed=9, prefilter=True, t_cap=0.1, min_fold=100)
        res = neural_fdr(data, cfg)
        assert any("prefilter" in f for f in res.flags)
        kept = (data.pvals < 0.1) | (data.pvals > 0.9)
        assert np.all(kept[res.report.discovered])
        assert np.all(data.pvals[res.report.discovered] < 0.1)
        assert np.all(res.fold_assignment[~kept] == -1)

    def test_too_small_dataset_rejected(self):
        data = generate(GenSpec(family="slope_1d", n=500, seed=21))
        with pytest.raises(ConfigurationError):
            neural_fdr(data, TrainConfig())  # default min_fold 300 needs n >= 900

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(alpha=1.5).validate()
        with pytest.raises(ConfigurationError):
            TrainConfig(M=2).validate()
        with pytest.raises(ConfigurationError):
            TrainConfig(estimator="bogus").validate()
        with pytest.raises(ConfigurationError):
            TrainConfig(t_cap=0.7).validate()

    def test_snapshot_mode_runs(self):
        data = generate(GenSpec(family="slope_1d", n=1500, seed=22))
        res = neural_fdr(data, fast_config(seed=10, snapshot_every=100))
        assert res.report.D >= 0
        assert len(res.gammas) == 3

    def test_training_log_emitted(self):
        data = generate(GenSpec(family="slope_1d", n=1500, seed=23))
        res = neural_fdr(data, fast_config(seed=11, log_every=50))
        assert len(res.logs) == 3
        assert len(res.logs[0]) == 4  # iterations 0, 50, 100, 150
        it, d_s, fd_s, loss = res.logs[0][0]
        assert it == 0 and d_s >= 0 and fd_s >= 0

    def test_selected_gammas_calibrated_on_cv(self):
        # the chosen rescaling always satisfies the estimate on its CV fold
        data = generate(GenSpec(family="slope_1d", n=3000, seed=24))
        cfg = fast_config(seed=12)
        res = neural_fdr(data, cfg)
        assert not res.flags  # no fallbacks on signal-bearing data
        for j, rule in enumerate(res.fold_rules):
            cv_idx = np.flatnonzero(res.fold_assignment == (j + 1) % cfg.M)
            t = rule.thresholds(data.features[cv_idx])
            D = int(np.count_nonzero(data.pvals[cv_idx] < t))
            fd = int(np.count_nonzero(data.pvals[cv_idx] > 1.0 - t))
            assert D >= cfg.min_discoveries
            assert fd / D <= cfg.alpha

    def test_expected_estimator_controls_at_scale(self):
        # moderate-scale check of the expected-count variant's control
        ok = 0
        for s in range(5):
            data = generate(GenSpec(family="gm_1d", n=12000, seed=40 + s))
            res = neural_fdr(
                data,
                TrainConfig(
                    alpha=0.1, fit_iters=1500, opt_iters=1000, estimator="expected",
                    seed=s, log_every=0,
                ),
            )
            ok += res.report.FDP <= 0.15
        assert ok >= 4
