"""Shared test helpers."""
import numpy as np

from covfdr import mlp

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def finite_diff_grad(params, X, upstream, h=1e-5):
    theta = params.theta.copy()
    grad = np.empty_like(theta)

    def loss(th):
        p = mlp.MlpParams(params.widths, th, params.leaky_slope, params.output_cap)
        return float((np.asarray(upstream) * mlp.forward(p, X)).sum())

    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (loss(up) - loss(dn)) / (2 * h)
    return grad


def min_abs_preactivation(params, X):
    a = np.asarray(X, dtype=np.float64)
    worst = np.inf
    for i in range(params.n_layers - 1):
        z = a @ params.weights[i] + params.biases[i]
        worst = min(worst, float(np.abs(z).min()))
        a = np.where(z >= 0, z, params.leaky_slope * z)
    return worst


def gradcheck_once(rng, hidden=None, dim=None, batch=6):
    """Analytic vs central-difference gradients on one random configuration.

    Returns the worst elementwise relative error (entries with both gradients
    below 1e-10 are skipped).  Batches are resampled away from LeakyReLU
    kinks so the finite-difference oracle stays valid.
    """
    if hidden is None:
        n_hidden = int(rng.integers(1, 4))
        hidden = tuple(int(rng.integers(2, 9)) for _ in range(n_hidden))
    if dim is None:
        dim = int(rng.integers(1, 4))
    params = mlp.init_params(dim, hidden=hidden, seed=int(rng.integers(1 << 31)))
    for _ in range(80):
        X = rng.normal(size=(batch, dim))
        if min_abs_preactivation(params, X) > 1e-3:
            break
    else:
        raise AssertionError("could not sample a batch away from activation kinks")
    upstream = rng.normal(size=batch)
    analytic = mlp.backward(params, X, upstream)
    numeric = finite_diff_grad(params, X, upstream)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-10)
    rel = np.abs(analytic - numeric) / scale
    mask = np.maximum(np.abs(analytic), np.abs(numeric)) > 1e-10
    return float(rel[mask].max())
