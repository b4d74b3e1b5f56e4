"""Synthetic heavy-tailed benchmark scenarios with analytic quantile oracles.

Seven generators share one location-scale template: covariates are uniform
on the unit cube, responses are location(x) + scale(x) * noise.  Because
location, scale, and the noise quantile function are all known in closed
form (or by accurate numeric inversion), the exact conditional quantiles
are available for evaluation.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np

from .nn import as_matrix
from .tdist import student_t2_quantile, student_t_quantile

_TINY_UNIFORM = 2.0 ** -53


# ---------------------------------------------------------------------------
# Noise families


@dataclass(frozen=True)
class StudentT:
    df: int

    def __post_init__(self):
        if self.df not in (2, 3):
            raise ValueError(f"supported Student-t degrees of freedom are 2 and 3, got {self.df}")


@dataclass(frozen=True)
class Laplace:
    scale: float

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError(f"Laplace scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class MultivariateT:
    """Spherical multivariate t: one chi-square mixing draw shared per sample."""

    df: int
    dim: int

    def __post_init__(self):
        if self.df not in (2, 3):
            raise ValueError(f"supported degrees of freedom are 2 and 3, got {self.df}")
        if self.dim < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class LaplaceIID:
    scale: float
    dim: int

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError(f"Laplace scale must be positive, got {self.scale}")
        if self.dim < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dim}")


NoiseKind = StudentT | Laplace | MultivariateT | LaplaceIID


@dataclass(frozen=True)
class Scenario:
    id: int
    input_dim: int
    output_dim: int
    noise: NoiseKind


SCENARIOS: dict[int, Scenario] = {
    1: Scenario(1, 2, 1, StudentT(2)),
    2: Scenario(2, 2, 1, Laplace(2.0)),
    3: Scenario(3, 2, 1, StudentT(2)),
    4: Scenario(4, 5, 1, Laplace(2.0)),
    5: Scenario(5, 10, 1, StudentT(3)),
    6: Scenario(6, 2, 2, MultivariateT(3, 2)),
    7: Scenario(7, 4, 2, LaplaceIID(2.0, 2)),
}


def get_scenario(scenario_id: int) -> Scenario:
    try:
        return SCENARIOS[int(scenario_id)]
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"unknown scenario id {scenario_id!r}; valid ids are 1..7") from None


def _check_points(scenario_id: int, x) -> np.ndarray:
    sc = get_scenario(scenario_id)
    x = as_matrix(x, "x")
    if x.shape[1] != sc.input_dim:
        raise ValueError(
            f"scenario {sc.id} expects {sc.input_dim}-dimensional inputs, got {x.shape[1]}"
        )
    return x


def _require_nonneg(values: np.ndarray, what: str) -> np.ndarray:
    if np.any(values < 0.0):
        worst = float(values.min())
        raise ValueError(f"{what}: square-root argument went negative (min {worst})")
    return values


def location(scenario_id: int, x) -> np.ndarray:
    """Conditional location surface; (n, d) points in, (n, p) values out."""
    x = _check_points(scenario_id, x)
    sid = int(scenario_id)
    if sid == 1:
        a = np.sqrt(_require_nonneg(x[:, 0], "scenario 1 inner map")) + x[:, 0] * x[:, 1]
        b = np.cos(2.0 * np.pi * x[:, 1])
        rad = _require_nonneg(a + b * b, "scenario 1 outer map")
        return (np.sqrt(rad) + a * a * b)[:, None]
    if sid == 2:
        return (x[:, 0] ** 2 + x[:, 1] ** 2)[:, None]
    if sid == 3:
        base = np.sqrt(_require_nonneg(x[:, 0] + x[:, 1], "scenario 3"))
        return (base + (x[:, 0] < 0.5))[:, None]
    if sid == 4:
        return np.sqrt(_require_nonneg(x.sum(axis=1), "scenario 4"))[:, None]
    if sid == 5:
        a = np.sqrt(_require_nonneg(x[:, 0] ** 2 + x[:, 1:].sum(axis=1), "scenario 5 inner map"))
        b = x.sum(axis=1) ** 3
        c = np.abs(a)
        d = b * a
        rad = _require_nonneg(c + d, "scenario 5 outer map")
        return (c + np.sqrt(rad))[:, None]
    if sid == 6:
        a = np.abs(x[:, 0])
        b = x[:, 1] * x[:, 0]
        rad = _require_nonneg(b * b + a, "scenario 6 outer map")
        return np.column_stack([np.sqrt(rad), (a + b) ** 3])
    if sid == 7:
        return np.column_stack([
            np.sqrt(x[:, 0] ** 2 + x[:, 1] ** 2),
            np.sqrt(x[:, 2] ** 2 + x[:, 3] ** 2),
        ])
    raise ValueError(f"unknown scenario id {scenario_id!r}")


def scale(scenario_id: int, x) -> np.ndarray:
    """Heteroscedastic noise multiplier; (n,) vector, identically 1 where absent."""
    x = _check_points(scenario_id, x)
    sid = int(scenario_id)
    if sid == 1:
        return np.sqrt((x[:, 0] - 0.5) ** 2 + (x[:, 1] - 0.5) ** 2)
    if sid == 3:
        return np.sqrt(_require_nonneg(x[:, 0] + 0.5 * x[:, 1], "scenario 3 scale"))
    return np.ones(x.shape[0])


def laplace_quantile(scale_b: float, tau) -> float | np.ndarray:
    """Analytic Laplace(0, b) quantile; accepts scalar or array tau."""
    if scale_b <= 0.0:
        raise ValueError(f"Laplace scale must be positive, got {scale_b}")
    t = np.asarray(tau, dtype=np.float64)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise ValueError("quantile level must lie in (0, 1)")
    out = np.where(t < 0.5, scale_b * np.log(2.0 * t),
                   -scale_b * np.log(2.0 * (1.0 - t)))
    out = np.where(t == 0.5, 0.0, out)
    return float(out) if out.ndim == 0 else out


def noise_quantile(kind: NoiseKind, tau: float) -> float:
    """Marginal per-component quantile of the noise family at level tau."""
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    if isinstance(kind, (Laplace, LaplaceIID)):
        return float(laplace_quantile(kind.scale, tau))
    if isinstance(kind, (StudentT, MultivariateT)):
        # components of a spherical multivariate t are marginally t(df)
        if kind.df == 2:
            return student_t2_quantile(tau)
        return student_t_quantile(kind.df, tau)
    raise TypeError(f"unknown noise kind {kind!r}")


def true_quantile(scenario_id: int, x, tau: float) -> np.ndarray:
    """Exact conditional quantile surface f0(x) + scale(x) * Q_noise(tau).

    For the multivariate scenarios the result is the vector of marginal
    quantiles; symmetric noise makes tau = 0.5 the location itself.
    """
    sc = get_scenario(scenario_id)
    f0 = location(scenario_id, x)
    q = noise_quantile(sc.noise, tau)
    if sc.output_dim == 1:
        return f0 + (scale(scenario_id, x) * q)[:, None]
    return f0 + q


# ---------------------------------------------------------------------------
# Sampling


def _uniform_open(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    # rng.random() covers [0, 1); nudge exact zeros so inverse CDFs stay finite
    return np.maximum(u, _TINY_UNIFORM)


def _sample_student_t(rng: np.random.Generator, df: int, n: int) -> np.ndarray:
    z = rng.standard_normal(n)
    w = rng.chisquare(df, n)
    return z / np.sqrt(w / df)


def _sample_noise(rng: np.random.Generator, kind: NoiseKind, n: int) -> np.ndarray:
    """(n,) draws for univariate kinds, (n, dim) for multivariate kinds."""
    if isinstance(kind, StudentT):
        return _sample_student_t(rng, kind.df, n)
    if isinstance(kind, Laplace):
        return laplace_quantile(kind.scale, _uniform_open(rng, n))
    if isinstance(kind, MultivariateT):
        z = rng.standard_normal((n, kind.dim))
        w = rng.chisquare(kind.df, n)
        return z / np.sqrt(w / kind.df)[:, None]
    if isinstance(kind, LaplaceIID):
        return laplace_quantile(kind.scale, _uniform_open(rng, (n, kind.dim)))
    raise TypeError(f"unknown noise kind {kind!r}")


@dataclass
class Dataset:
    """Covariates and responses, with provenance when generated here."""

    x: np.ndarray
    y: np.ndarray
    scenario_id: int | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]


def generate(scenario_id: int, n: int, seed: int) -> Dataset:
    """Draw a dataset from the scenario's generative model; deterministic in seed."""
    sc = get_scenario(scenario_id)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.random((n, sc.input_dim))
    f0 = location(sc.id, x)
    eps = _sample_noise(rng, sc.noise, n)
    if sc.output_dim == 1:
        y = f0 + (scale(sc.id, x) * eps)[:, None]
    else:
        y = f0 + eps
    return Dataset(x, y, sc.id, seed)


# ---------------------------------------------------------------------------
# CSV exchange format: optional '# scenario=.. seed=.. n=..' line, then header


_META_RE = re.compile(r"#\s*scenario=(\S+)\s+seed=(\S+)\s+n=(\S+)\s*$")


def save_dataset(ds: Dataset, path) -> None:
    d = ds.x.shape[1]
    p = ds.y.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as f:
        if ds.scenario_id is not None:
            f.write(f"# scenario={ds.scenario_id} seed={ds.seed} n={ds.n}\n")
        writer = csv.writer(f)
        writer.writerow([f"x{i + 1}" for i in range(d)] + [f"y{j + 1}" for j in range(p)])
        for xi, yi in zip(ds.x, ds.y):
            writer.writerow([repr(v) for v in xi] + [repr(v) for v in yi])


def load_dataset(path) -> Dataset:
    scenario_id = None
    seed = None
    with open(path, "r", encoding="utf-8", newline="") as f:
        first = f.readline()
        if first.startswith("#"):
            match = _META_RE.match(first.strip())
            if match:
                scenario_id = int(match.group(1))
                seed = int(match.group(2))
            header_line = f.readline()
        else:
            header_line = first
        header = next(csv.reader([header_line]))
        d = sum(1 for name in header if name.startswith("x"))
        p = sum(1 for name in header if name.startswith("y"))
        if d == 0 or p == 0 or d + p != len(header):
            raise ValueError(f"unrecognized dataset header {header!r}")
        rows = list(csv.reader(f))
    data = np.asarray(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != d + p:
        raise ValueError(f"dataset rows do not match header width {d + p}")
    return Dataset(data[:, :d].copy(), data[:, d:].copy(), scenario_id, seed)
