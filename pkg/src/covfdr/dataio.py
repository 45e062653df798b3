"""Dataset and rule file formats.

Dataset CSV: header ``pvalue,f1,...,fd[,h]``, UTF-8, decimal points, one row
per hypothesis; ``h`` is an optional 0/1 truth column.  Floats are written
with repr so files round-trip bit-exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Dataset, DecisionRule, ValidationError, rule_from_config


def dataset_header(dim: int, with_truth: bool) -> str:
    cols = ["pvalue"] + [f"f{i + 1}" for i in range(dim)]
    if with_truth:
        cols.append("h")
    return ",".join(cols)


def write_dataset(path, data: Dataset) -> None:
    path = Path(path)
    with_truth = data.truth is not None
    lines = [dataset_header(data.dim, with_truth)]
    for i in range(data.n):
        parts = [repr(float(data.pvals[i]))]
        parts.extend(repr(float(v)) for v in data.features[i])
        if with_truth:
            parts.append(str(int(data.truth[i])))
        lines.append(",".join(parts))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ValidationError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if header[0] != "pvalue":
        raise ValidationError(f"{path}: first column must be 'pvalue', got {header[0]!r}")
    with_truth = header[-1] == "h"
    feat_cols = header[1:-1] if with_truth else header[1:]
    dim = len(feat_cols)
    if dim < 1 or feat_cols != [f"f{i + 1}" for i in range(dim)]:
        raise ValidationError(f"{path}: feature columns must be f1..fd, got {feat_cols}")
    n_cols = len(header)
    pvals = np.empty(len(lines) - 1)
    features = np.empty((len(lines) - 1, dim))
    truth = np.empty(len(lines) - 1, dtype=np.int8) if with_truth else None
    for row, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != n_cols:
            raise ValidationError(f"{path}: line {row}: expected {n_cols} fields, got {len(parts)}")
        try:
            pvals[row - 2] = float(parts[0])
            for d in range(dim):
                features[row - 2, d] = float(parts[1 + d])
            if with_truth:
                h = parts[-1].strip()
                if h not in ("0", "1"):
                    raise ValueError(f"truth column must be 0 or 1, got {h!r}")
                truth[row - 2] = int(h)
        except ValueError as exc:
            raise ValidationError(f"{path}: line {row}: {exc}") from exc
    try:
        return Dataset(pvals, features, truth)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_rule(path, rule: DecisionRule) -> None:
    write_json(path, rule.to_config())


def read_rule(path) -> DecisionRule:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"rule file not found: {path}")
    return rule_from_config(read_json(path))
