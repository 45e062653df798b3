"""False-discovery estimators for arbitrary decision rules.

The mirror count uses the region (1 - t(x), 1): nulls land there about as
often as in the rejection region (0, t(x)) because the null p-value density
is symmetric about 0.5, while alternatives rarely do.  The expected-count
estimator sums the thresholds themselves, which bounds E[FD] from above.
"""
from __future__ import annotations

import numpy as np

from .core import ConfigurationError, Dataset, DecisionRule


def mirror_fd(data: Dataset, rule: DecisionRule) -> int:
    """Count of p-values strictly inside the mirrored region (1 - t(x), 1)."""
    if rule.t_cap > 0.5:
        raise ConfigurationError("mirror estimation needs t_cap <= 0.5")
    t = rule.thresholds(data.features)
    return int(np.count_nonzero(data.pvals > 1.0 - t))


def mirror_fdp(data: Dataset, rule: DecisionRule) -> float:
    """mirror_fd / D with the 0/0 -> 0 convention."""
    t = rule.thresholds(data.features)
    D = int(np.count_nonzero(data.pvals < t))
    if D == 0:
        return 0.0
    fd = int(np.count_nonzero(data.pvals > 1.0 - t))
    return fd / D


def expected_fd(data: Dataset, rule: DecisionRule) -> float:
    """Sum of thresholds over the dataset; an overestimate of E[FD]."""
    return float(rule.thresholds(data.features).sum())
