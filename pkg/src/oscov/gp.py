"""Gaussian-process regression on space-time data with oscillator kernels.

The module covers the dense, desk-scale workflow: build the Gram matrix of a
covariance model over scattered space-time points, factorize it, and compute
conditional means and variances at query points.  A small demonstrator,
:func:`prediction_ratio`, quantifies how much a non-separable model shifts a
single-point forecast relative to its separable surrogate.

The process mean is a known constant; estimating it is out of scope, as are
sparse or inducing-point approximations.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import (
    DimensionMismatch,
    DomainError,
    NegativeVariance,
    NotPositiveDefinite,
)
from .kernel_core import KernelModel, interaction_ratio

__all__ = [
    "SpaceTimePoint",
    "SpaceTimeDataset",
    "GramMatrix",
    "gram",
    "predict",
    "prediction_ratio",
    "load_dataset_csv",
    "write_predictions_csv",
]

# Relative tolerance used to flag coincident sample points when the model has
# no nugget to absorb them.
_DUPLICATE_RTOL = 1e-12

# Predictive variances may undershoot zero by a tiny amount through rounding;
# anything below -_VARIANCE_SLACK * prior variance is treated as a failure.
_VARIANCE_SLACK = 1e-10


@dataclass(frozen=True)
class SpaceTimePoint:
    """A location ``s`` in R^d paired with a time instant ``t``."""

    s: tuple[float, ...]
    t: float

    def __post_init__(self):
        coords = tuple(float(c) for c in np.atleast_1d(np.asarray(self.s, dtype=float)))
        if len(coords) == 0:
            raise DomainError("a space-time point needs at least one spatial coordinate")
        object.__setattr__(self, "s", coords)
        object.__setattr__(self, "t", float(self.t))

    @property
    def dim(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class SpaceTimeDataset:
    """Observations ``z_i`` of a weakly stationary field at scattered points.

    Parameters
    ----------
    points : tuple of SpaceTimePoint
        Sample locations.  All points must share one spatial dimension.
    values : tuple of float
        Observed values, one per point.
    mean : float, optional
        Known constant mean of the process.  Defaults to zero.

    Notes
    -----
    Coincident points are legal only for models with a positive nugget;
    :func:`predict` enforces this because the nugget lives on the model,
    not on the data.
    """

    points: tuple[SpaceTimePoint, ...]
    values: tuple[float, ...]
    mean: float = 0.0

    def __post_init__(self):
        pts = tuple(
            p if isinstance(p, SpaceTimePoint) else SpaceTimePoint(*p) for p in self.points
        )
        vals = tuple(float(v) for v in self.values)
        if len(pts) == 0:
            raise DomainError("a dataset needs at least one observation")
        if len(pts) != len(vals):
            raise DomainError(
                f"{len(pts)} points but {len(vals)} values; they must pair up"
            )
        d = pts[0].dim
        for p in pts[1:]:
            if p.dim != d:
                raise DimensionMismatch(
                    f"points mix spatial dimensions {d} and {p.dim}"
                )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mean", float(self.mean))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points[0].dim

    @classmethod
    def from_arrays(cls, coords, times, values, mean: float = 0.0) -> "SpaceTimeDataset":
        """Build a dataset from an ``(n, d)`` coordinate array and flat vectors."""
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        times = np.asarray(times, dtype=float).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if coords.shape[0] != times.size:
            raise DimensionMismatch(
                f"{coords.shape[0]} coordinate rows but {times.size} times"
            )
        pts = tuple(
            SpaceTimePoint(tuple(row), t) for row, t in zip(coords, times)
        )
        return cls(points=pts, values=tuple(values), mean=mean)


@dataclass(frozen=True)
class GramMatrix:
    """Dense symmetric covariance matrix of a point set under one model."""

    matrix: np.ndarray
    model_key: str

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DomainError(f"Gram matrix must be square, got shape {mat.shape}")
        object.__setattr__(self, "matrix", mat)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _point_arrays(points) -> tuple[np.ndarray, np.ndarray]:
    pts = [p if isinstance(p, SpaceTimePoint) else SpaceTimePoint(*p) for p in points]
    if len(pts) == 0:
        raise DomainError("need at least one point")
    coords = np.array([p.s for p in pts], dtype=float)
    times = np.array([p.t for p in pts], dtype=float)
    return coords, times


def _check_dim(m: KernelModel, coords: np.ndarray, what: str) -> None:
    if coords.shape[1] != m.dim:
        raise DimensionMismatch(
            f"model is {m.dim}-dimensional but {what} points have "
            f"{coords.shape[1]} spatial coordinates"
        )


def gram(m: KernelModel, points) -> GramMatrix:
    """Covariance (Gram) matrix ``K_ij = C(|s_i - s_j|, t_i - t_j)``.

    The nugget is added on the diagonal.  Only the upper triangle is
    evaluated; the lower one is mirrored, so the result is exactly symmetric.
    """
    coords, times = _point_arrays(points)
    _check_dim(m, coords, "sample")
    n = coords.shape[0]
    r = squareform(pdist(coords)) if n > 1 else np.zeros((1, 1))
    dt = times[:, None] - times[None, :]
    iu = np.triu_indices(n)
    upper = np.asarray(m.covariance(r[iu], dt[iu]), dtype=float)
    K = np.zeros((n, n))
    K[iu] = upper
    K = K + K.T - np.diag(np.diag(K))
    K[np.diag_indices(n)] += m.nugget
    return GramMatrix(matrix=K, model_key=m.model_key())


def _find_duplicates(coords: np.ndarray, times: np.ndarray) -> tuple[int, int] | None:
    """First pair of sample points that coincide within rounding, if any."""
    n = coords.shape[0]
    if n < 2:
        return None
    s_tol = _DUPLICATE_RTOL * (1.0 + float(np.abs(coords).max()))
    t_tol = _DUPLICATE_RTOL * (1.0 + float(np.abs(times).max()))
    r = squareform(pdist(coords))
    dt = np.abs(times[:, None] - times[None, :])
    dup = (r <= s_tol) & (dt <= t_tol)
    dup[np.tril_indices(n)] = False
    hits = np.argwhere(dup)
    if hits.size:
        return int(hits[0, 0]), int(hits[0, 1])
    return None


_PIVOT_RE = re.compile(r"(\d+)")


def _chol_with_jitter(K: np.ndarray, m: KernelModel):
    """Cholesky factorization with an escalating diagonal jitter.

    The first attempt factorizes ``K`` as assembled (the nugget is already on
    the diagonal).  On failure a jitter is added, starting at the nugget (or
    at 1e-12 of the prior variance for nugget-free models, since escalating
    from zero goes nowhere) and growing tenfold until it would exceed
    1e-6 C(0,0).  Beyond that the matrix is declared not positive definite;
    the offending pivot (zero-based) is reported when the backend names one.
    """
    variance = m.variance()
    jitter = 0.0
    ceiling = 1e-6 * variance
    last_err: LinAlgError | None = None
    while True:
        try:
            mat = K if jitter == 0.0 else K + jitter * np.eye(K.shape[0])
            return cho_factor(mat, lower=True)
        except LinAlgError as exc:
            last_err = exc
        if jitter == 0.0:
            jitter = m.nugget if m.nugget > 0.0 else 1e-12 * variance
        else:
            jitter *= 10.0
        if jitter > ceiling:
            break
    match = _PIVOT_RE.search(str(last_err))
    pivot = int(match.group(1)) - 1 if match else None
    raise NotPositiveDefinite(
        f"Gram matrix is not positive definite (jitter escalated to "
        f"{ceiling:.3e} without success)",
        pivot=pivot,
    )


def predict(m: KernelModel, data: SpaceTimeDataset, query) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and variance of the field at query points.

    Parameters
    ----------
    m : KernelModel
        Covariance model; its nugget acts as observation noise.
    data : SpaceTimeDataset
        Conditioning observations with known constant mean.
    query : sequence of SpaceTimePoint
        Points at which to predict.

    Returns
    -------
    means, variances : ndarray
        Conditional mean ``m + k*^T K^{-1} (z - m)`` and variance
        ``C(0,0) + nugget - k*^T K^{-1} k*`` for each query point.

    Raises
    ------
    DomainError
        If the data contain coincident points and the model has no nugget.
    NotPositiveDefinite
        If the factorization fails even after jitter escalation.
    NegativeVariance
        If a predictive variance undershoots zero beyond rounding slack.
    """
    coords, times = _point_arrays(data.points)
    _check_dim(m, coords, "sample")
    q_coords, q_times = _point_arrays(query)
    _check_dim(m, q_coords, "query")

    if m.nugget == 0.0:
        pair = _find_duplicates(coords, times)
        if pair is not None:
            raise DomainError(
                f"data points {pair[0]} and {pair[1]} coincide; with a zero "
                "nugget the Gram matrix is singular"
            )

    K = gram(m, data.points).matrix
    factor = _chol_with_jitter(K, m)

    z = np.asarray(data.values, dtype=float)
    alpha = cho_solve(factor, z - data.mean)

    r_star = cdist(q_coords, coords)
    dt_star = q_times[:, None] - times[None, :]
    k_star = np.asarray(m.covariance(r_star, dt_star), dtype=float)
    k_star = k_star.reshape(q_coords.shape[0], coords.shape[0])

    means = data.mean + k_star @ alpha

    prior = m.variance() + m.nugget
    solved = cho_solve(factor, k_star.T)
    variances = prior - np.einsum("ij,ji->i", k_star, solved)
    floor = -_VARIANCE_SLACK * prior
    if np.any(variances < floor):
        worst = float(variances.min())
        raise NegativeVariance(
            f"predictive variance {worst:.6e} is below the rounding slack "
            f"{floor:.6e}; the system is too ill-conditioned to trust"
        )
    return means, np.maximum(variances, 0.0)


def prediction_ratio(m: KernelModel, obs: SpaceTimePoint, query: SpaceTimePoint) -> float:
    """Forecast amplification of the full model over its separable surrogate.

    For a single observation at ``obs`` and a forecast at ``query``, the
    conditional mean fluctuation under the full model divided by the one
    under the separable surrogate equals the interaction ratio
    ``Q_int(r, tau)`` at the separating lag: both predictors share the prior
    variance and the observed fluctuation, so everything cancels except the
    covariance-to-marginal ratio.  With more observations the identity is
    only approximate; this helper implements the exact one-point case.
    """
    if not isinstance(obs, SpaceTimePoint):
        obs = SpaceTimePoint(*obs)
    if not isinstance(query, SpaceTimePoint):
        query = SpaceTimePoint(*query)
    if obs.dim != m.dim or query.dim != m.dim:
        raise DimensionMismatch(
            f"model is {m.dim}-dimensional but the points are "
            f"{obs.dim}- and {query.dim}-dimensional"
        )
    r = float(np.linalg.norm(np.asarray(query.s) - np.asarray(obs.s)))
    tau = query.t - obs.t
    return float(interaction_ratio(m, r, tau))


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------


def load_dataset_csv(path, mean: float = 0.0) -> SpaceTimeDataset:
    """Read a dataset from CSV with header ``s1,...,sd,t,z``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{path}: empty dataset file")
    header = [c.strip() for c in rows[0]]
    if len(header) < 3 or header[-2:] != ["t", "z"]:
        raise DomainError(
            f"{path}: expected header 's1,...,sd,t,z', got {','.join(header)}"
        )
    d = len(header) - 2
    expected = [f"s{i + 1}" for i in range(d)]
    if header[:d] != expected:
        raise DomainError(
            f"{path}: spatial columns must be {','.join(expected)}, got "
            f"{','.join(header[:d])}"
        )
    body = [r for r in rows[1:] if r]
    if not body:
        raise DomainError(f"{path}: dataset contains zero observations")
    try:
        table = np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise DomainError(f"{path}: non-numeric cell ({exc})") from exc
    if table.ndim != 2 or table.shape[1] != d + 2:
        raise DomainError(f"{path}: rows do not match the {d + 2}-column header")
    return SpaceTimeDataset.from_arrays(
        table[:, :d], table[:, d], table[:, d + 1], mean=mean
    )


def write_predictions_csv(path, query, means, variances) -> None:
    """Write predictions as CSV with header ``s1,...,sd,t,mean,variance``."""
    coords, times = _point_arrays(query)
    d = coords.shape[1]
    means = np.asarray(means, dtype=float).ravel()
    variances = np.asarray(variances, dtype=float).ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"s{i + 1}" for i in range(d)] + ["t", "mean", "variance"])
        for row, t, mu, var in zip(coords, times, means, variances):
            writer.writerow(
                [f"{c:.17g}" for c in row] + [f"{t:.17g}", f"{mu:.17g}", f"{var:.17g}"]
            )
