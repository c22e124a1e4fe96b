"""Method-of-moments hyperparameter estimation from space-time data.

The pipeline mirrors classical geostatistical practice: estimate empirical
semivariograms (marginal spatial, marginal temporal, and joint space-time),
then fit closed-form model variograms by approximate weighted least squares
with Cressie weights ``N (gamma_hat / gamma_model - 1)^2``.  Fitting happens
in two stages: the marginal variograms pin down the spatial and temporal
hyperparameters separately, and the joint variogram refines the full vector
starting from the marginal estimates.

All hyperparameters are positive, so the simplex search runs in log
coordinates; the overdamped branch parametrizes the damping ratio through a
logistic map so the regime constraint never binds.  Because the damping
regime of real data is unknown a priori, the fitting entry points try all
three regimes and keep the lowest objective.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist

from .errors import (
    AllBinsSkipped,
    DomainError,
    EmptyBin,
    EmptyBinError,
    OptimizerStalled,
    OscovError,
)
from .gp import SpaceTimeDataset
from .kernel_core import (
    Dispersion,
    KernelModel,
    LdhoParams,
    OuParams,
    Regime,
)
from .simulate import FieldRealization

__all__ = [
    "VariogramKind",
    "EmpiricalVariogram",
    "WlsObjective",
    "FitResult",
    "spatial_marginal_variogram",
    "temporal_marginal_variogram",
    "space_time_variogram",
    "model_variogram",
    "wls_objective",
    "fit_marginals",
    "fit_full",
]

# Bins whose model variogram falls below this fraction of the sill carry no
# information for the relative-error weights and are skipped.
_WLS_FLOOR = 1e-12

# Simplex search budget and tolerances (relative objective change).
_MAX_EVALS = 10_000
_REL_TOL = 1e-4
_RESTARTS = 3
_SHRINK = 0.5


class VariogramKind(str, Enum):
    SPATIAL_MARGINAL = "spatial_marginal"
    TEMPORAL_MARGINAL = "temporal_marginal"
    SPACE_TIME = "space_time"


@dataclass(frozen=True)
class EmpiricalVariogram:
    """Binned semivariance estimates with pair counts.

    ``r`` holds spatial bin centers, ``tau`` temporal ones; marginal kinds
    carry only the relevant axis (the other is ``None``).  Bins with no
    contributing pairs are dropped before construction, so every retained bin
    has ``counts >= 1``.
    """

    kind: VariogramKind
    gamma: np.ndarray
    counts: np.ndarray
    r: np.ndarray | None = None
    tau: np.ndarray | None = None
    tolerance: float = 0.0

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        if gamma.shape != counts.shape or gamma.ndim != 1:
            raise DomainError("gamma and counts must be equal-length vectors")
        if gamma.size == 0:
            raise EmptyBinError("variogram has no populated bins")
        if np.any(gamma < 0.0):
            raise DomainError("semivariance estimates cannot be negative")
        if np.any(counts < 1):
            raise DomainError("retained bins must have at least one pair")
        kind = VariogramKind(self.kind)
        r = None if self.r is None else np.asarray(self.r, dtype=float)
        tau = None if self.tau is None else np.asarray(self.tau, dtype=float)
        if kind is VariogramKind.SPATIAL_MARGINAL and (r is None or tau is not None):
            raise DomainError("spatial marginal variograms carry r bins only")
        if kind is VariogramKind.TEMPORAL_MARGINAL and (tau is None or r is not None):
            raise DomainError("temporal marginal variograms carry tau bins only")
        if kind is VariogramKind.SPACE_TIME and (r is None or tau is None):
            raise DomainError("space-time variograms need r and tau per bin")
        for arr in (r, tau):
            if arr is not None and arr.shape != gamma.shape:
                raise DomainError("bin centers must align with gamma")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "tolerance", float(self.tolerance))

    def __len__(self) -> int:
        return self.gamma.size

    def lags(self) -> tuple[np.ndarray, np.ndarray]:
        """Spatial and temporal lag vectors, zero-filled on the missing axis."""
        n = self.gamma.size
        r = self.r if self.r is not None else np.zeros(n)
        tau = self.tau if self.tau is not None else np.zeros(n)
        return r, tau

    def to_dict(self) -> dict:
        bins = []
        for i in range(len(self)):
            entry: dict = {}
            if self.r is not None:
                entry["r"] = float(self.r[i])
            if self.tau is not None:
                entry["tau"] = float(self.tau[i])
            entry["gamma"] = float(self.gamma[i])
            entry["n"] = int(self.counts[i])
            bins.append(entry)
        return {"kind": self.kind.value, "bins": bins, "tolerance": self.tolerance}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "EmpiricalVariogram":
        try:
            kind = VariogramKind(data["kind"])
            bins = data["bins"]
            tol = data.get("tolerance", 0.0)
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed variogram description: {exc}") from exc
        gamma = [b["gamma"] for b in bins]
        counts = [b["n"] for b in bins]
        r = [b["r"] for b in bins] if bins and "r" in bins[0] else None
        tau = [b["tau"] for b in bins] if bins and "tau" in bins[0] else None
        return cls(kind=kind, gamma=gamma, counts=counts, r=r, tau=tau, tolerance=tol)

    @classmethod
    def from_json(cls, text: str) -> "EmpiricalVariogram":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DomainError(f"variogram JSON does not parse: {exc}") from exc


class WlsObjective(float):
    """WLS objective value that also reports how many bins were skipped."""

    n_skipped: int
    n_used: int

    def __new__(cls, value: float, n_skipped: int = 0, n_used: int = 0):
        obj = super().__new__(cls, value)
        obj.n_skipped = int(n_skipped)
        obj.n_used = int(n_used)
        return obj


@dataclass(frozen=True)
class FitResult:
    """Outcome of a variogram fit.

    ``objective`` is the WLS value at ``model``; it never exceeds the value
    at the initial guess because failed searches fall back to the guess.
    ``trace`` records the best objective after each simplex stage.
    """

    model: KernelModel
    objective: float
    n_evaluations: int
    converged: bool
    theta0: dict
    theta_star: dict
    trace: tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "objective": float(self.objective),
            "n_evaluations": self.n_evaluations,
            "converged": self.converged,
            "theta0": self.theta0,
            "theta_star": self.theta_star,
            "trace": list(self.trace),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


# ---------------------------------------------------------------------------
# empirical variograms
# ---------------------------------------------------------------------------


def _sq_diff_sum(z: np.ndarray, shift: tuple[int, ...]) -> tuple[float, int]:
    """Sum of squared increments and pair count for one integer lattice shift."""
    head, tail = [], []
    for h, count in zip(shift, z.shape):
        if h >= 0:
            head.append(slice(None, count - h))
            tail.append(slice(h, None))
        else:
            head.append(slice(-h, None))
            tail.append(slice(None, count + h))
    diff = z[tuple(tail)] - z[tuple(head)]
    return float(np.sum(diff * diff)), diff.size


def _grid_offsets(grid, r_max: float):
    """All signed spatial offsets with distance <= r_max, excluding the origin.

    Returns integer offset rows and their distances.  Offsets are bounded by
    the axis sizes, so every returned shift has at least one in-grid pair.
    """
    axes = []
    for n, s in zip(grid.ns, grid.ds):
        reach = min(n - 1, int(math.floor(r_max / s + 1e-9)))
        axes.append(np.arange(-reach, reach + 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    offsets = np.stack([m.ravel() for m in mesh], axis=1)
    steps = np.asarray(grid.ds)
    dist = np.sqrt(((offsets * steps) ** 2).sum(axis=1))
    keep = (dist <= r_max) & ~np.all(offsets == 0, axis=1)
    return offsets[keep], dist[keep]


def _drop_empty(kind, centers_r, centers_t, gamma, counts, tolerance):
    """Assemble an EmpiricalVariogram, warning for and dropping empty bins."""
    gamma = np.asarray(gamma, dtype=float)
    counts = np.asarray(counts, dtype=np.int64)
    keep = counts >= 1
    for idx in np.nonzero(~keep)[0]:
        where = []
        if centers_r is not None:
            where.append(f"r={centers_r[idx]:g}")
        if centers_t is not None:
            where.append(f"tau={centers_t[idx]:g}")
        warnings.warn(f"variogram bin ({', '.join(where)}) has no pairs; dropped", EmptyBin)
    if not np.any(keep):
        raise EmptyBinError("every requested variogram bin is empty")
    return EmpiricalVariogram(
        kind=kind,
        gamma=gamma[keep] / np.maximum(counts[keep], 1),
        counts=counts[keep],
        r=None if centers_r is None else np.asarray(centers_r, dtype=float)[keep],
        tau=None if centers_t is None else np.asarray(centers_t, dtype=float)[keep],
        tolerance=tolerance,
    )


def _default_spatial_tolerance(data) -> float:
    if isinstance(data, FieldRealization):
        return 0.5 * min(data.grid.ds)
    coords = np.array([p.s for p in data.points], dtype=float)
    n = coords.shape[0]
    if n < 2:
        raise DomainError("need at least two points for spatial lags")
    sample = coords if n <= 500 else coords[:: max(1, n // 500)]
    d = cdist(sample, coords)
    d[d == 0.0] = np.inf
    nn = np.median(d.min(axis=1))
    return 0.5 * float(nn)


def default_spatial_bins(data, n_bins: int = 8) -> np.ndarray:
    """Evenly spaced spatial lag centers suited to the sampling geometry."""
    if isinstance(data, FieldRealization):
        g = data.grid
        step = min(g.ds)
        r_cap = 0.5 * min(n * s for n, s in zip(g.ns, g.ds))
        count = min(n_bins, int(r_cap / step))
        return step * np.arange(1, max(count, 1) + 1)
    coords = np.array([p.s for p in data.points], dtype=float)
    d = pdist(coords)
    if d.size == 0:
        raise DomainError("need at least two points for spatial lags")
    lo, hi = np.quantile(d[d > 0], [0.02, 0.6])
    return np.linspace(lo, hi, n_bins)


def default_temporal_bins(data, n_bins: int = 40) -> np.ndarray:
    """Temporal lag centers: grid multiples, or quantiles for scattered data."""
    if isinstance(data, FieldRealization):
        g = data.grid
        count = min(n_bins, g.nt - 1)
        return g.dt * np.arange(1, count + 1)
    times = np.unique([p.t for p in data.points])
    if times.size < 2:
        raise DomainError("need at least two distinct times for temporal lags")
    gaps = np.abs(times[:, None] - times[None, :])[np.triu_indices(times.size, 1)]
    lo, hi = np.quantile(gaps, [0.02, 0.6])
    return np.linspace(lo, hi, min(n_bins, 12))


def _as_time_steps(tau_bins, dt: float) -> list[int]:
    steps = []
    for tau in np.atleast_1d(np.asarray(tau_bins, dtype=float)):
        ratio = abs(tau) / dt
        m = round(ratio)
        if abs(ratio - m) > 1e-9 * max(1.0, ratio):
            raise DomainError(
                f"temporal lag {tau} is not a multiple of the grid step {dt}"
            )
        steps.append(int(m))
    return steps


def _slice_groups(data: SpaceTimeDataset):
    coords = np.array([p.s for p in data.points], dtype=float)
    times = np.array([p.t for p in data.points], dtype=float)
    values = np.asarray(data.values, dtype=float)
    uniq, inverse = np.unique(times, return_inverse=True)
    groups = [np.nonzero(inverse == i)[0] for i in range(uniq.size)]
    return coords, times, values, uniq, groups


def spatial_marginal_variogram(data, bins=None, tolerance=None) -> EmpiricalVariogram:
    """Omnidirectional spatial semivariance, averaged over time slices.

    Each bin collects pairs whose separation falls within ``tolerance`` of
    the bin center; pairs are formed within time slices only.  On a grid the
    per-slice geometry repeats, so the slice average reduces to one pooled
    ratio; for scattered data each slice is normalized separately and slices
    are averaged, matching the estimator's definition.
    """
    if bins is None:
        bins = default_spatial_bins(data)
    bins = np.sort(np.atleast_1d(np.asarray(bins, dtype=float)))
    if tolerance is None:
        tolerance = _default_spatial_tolerance(data)
    tolerance = float(tolerance)

    if isinstance(data, FieldRealization):
        g = data.grid
        z = data.values
        offsets, dist = _grid_offsets(g, float(bins.max()) + tolerance)
        sums = np.zeros(bins.size)
        counts = np.zeros(bins.size, dtype=np.int64)
        # half-space representatives: each unordered pair once
        lead = np.zeros(offsets.shape[0], dtype=bool)
        for axis in range(offsets.shape[1]):
            col = offsets[:, axis]
            undecided = ~lead & np.all(offsets[:, :axis] == 0, axis=1)
            lead |= undecided & (col > 0)
        cache: dict[tuple[int, ...], tuple[float, int]] = {}
        for k, center in enumerate(bins):
            members = np.nonzero(
                lead & (dist >= center - tolerance) & (dist <= center + tolerance)
            )[0]
            for idx in members:
                shift = (0,) + tuple(int(h) for h in offsets[idx])
                if shift not in cache:
                    cache[shift] = _sq_diff_sum(z, shift)
                s, n = cache[shift]
                sums[k] += s
                counts[k] += n
        gamma_num = 0.5 * sums
        return _drop_empty(
            VariogramKind.SPATIAL_MARGINAL, bins, None, gamma_num, counts, tolerance
        )

    coords, _, values, _, groups = _slice_groups(data)
    ratio_sum = np.zeros(bins.size)
    slice_hits = np.zeros(bins.size, dtype=np.int64)
    counts = np.zeros(bins.size, dtype=np.int64)
    for idx in groups:
        if idx.size < 2:
            continue
        pts = coords[idx]
        vals = values[idx]
        iu = np.triu_indices(idx.size, 1)
        d = cdist(pts, pts)[iu]
        sq = (vals[:, None] - vals[None, :])[iu] ** 2
        for k, center in enumerate(bins):
            mask = (d >= center - tolerance) & (d <= center + tolerance)
            n = int(mask.sum())
            if n:
                ratio_sum[k] += float(sq[mask].sum()) / (2.0 * n)
                slice_hits[k] += 1
                counts[k] += n
    gamma = np.where(slice_hits > 0, ratio_sum / np.maximum(slice_hits, 1), 0.0)
    return _drop_empty(
        VariogramKind.SPATIAL_MARGINAL,
        bins,
        None,
        gamma * np.maximum(counts, 1),  # _drop_empty divides by counts
        counts,
        tolerance,
    )


def temporal_marginal_variogram(data, bins=None, tolerance=None) -> EmpiricalVariogram:
    """Temporal semivariance at each lag, averaged over locations."""
    if bins is None:
        bins = default_temporal_bins(data)
    bins = np.sort(np.atleast_1d(np.asarray(bins, dtype=float)))

    if isinstance(data, FieldRealization):
        g = data.grid
        z = data.values
        steps = _as_time_steps(bins, g.dt)
        sums = np.zeros(bins.size)
        counts = np.zeros(bins.size, dtype=np.int64)
        for k, m in enumerate(steps):
            if m == 0 or m >= g.nt:
                continue
            shift = (m,) + (0,) * g.dim
            s, n = _sq_diff_sum(z, shift)
            sums[k] += s
            counts[k] += n
        return _drop_empty(
            VariogramKind.TEMPORAL_MARGINAL, None, bins, 0.5 * sums, counts, 0.0
        )

    if tolerance is None:
        times = np.unique([p.t for p in data.points])
        diffs = np.diff(times)
        tolerance = 0.5 * float(np.median(diffs)) if diffs.size else 0.0
    tolerance = float(tolerance)
    coords = np.array([p.s for p in data.points], dtype=float)
    times = np.array([p.t for p in data.points], dtype=float)
    values = np.asarray(data.values, dtype=float)
    _, inverse = np.unique(coords, axis=0, return_inverse=True)
    ratio_sum = np.zeros(bins.size)
    loc_hits = np.zeros(bins.size, dtype=np.int64)
    counts = np.zeros(bins.size, dtype=np.int64)
    for loc in range(inverse.max() + 1):
        idx = np.nonzero(inverse == loc)[0]
        if idx.size < 2:
            continue
        t = times[idx]
        v = values[idx]
        iu = np.triu_indices(idx.size, 1)
        dt = np.abs(t[:, None] - t[None, :])[iu]
        sq = (v[:, None] - v[None, :])[iu] ** 2
        for k, center in enumerate(bins):
            mask = (dt >= center - tolerance) & (dt <= center + tolerance)
            n = int(mask.sum())
            if n:
                ratio_sum[k] += float(sq[mask].sum()) / (2.0 * n)
                loc_hits[k] += 1
                counts[k] += n
    gamma = np.where(loc_hits > 0, ratio_sum / np.maximum(loc_hits, 1), 0.0)
    return _drop_empty(
        VariogramKind.TEMPORAL_MARGINAL,
        None,
        bins,
        gamma * np.maximum(counts, 1),
        counts,
        tolerance,
    )


def space_time_variogram(data, r_bins=None, tau_bins=None, tolerance=None) -> EmpiricalVariogram:
    """Joint semivariance over a grid of spatial and temporal lag classes.

    The (0, 0) class is excluded by construction: a point is never paired
    with itself.  Temporal lags use their absolute value, so the estimate is
    symmetric under reversing the time ordering.  On grids the bin count is
    ``(N_T - m) N(r_k)`` with ``N(r_k)`` the per-slice pair count of the
    spatial class, matching the marginal estimators' conventions.
    """
    if r_bins is None:
        r_bins = np.concatenate([[0.0], default_spatial_bins(data, n_bins=6)])
    if tau_bins is None:
        if isinstance(data, FieldRealization):
            g = data.grid
            top = min(24, g.nt - 1)
            tau_bins = g.dt * np.arange(0, top + 1, 2)
        else:
            tau_bins = np.concatenate([[0.0], default_temporal_bins(data)])
    r_bins = np.sort(np.atleast_1d(np.asarray(r_bins, dtype=float)))
    tau_bins = np.sort(np.atleast_1d(np.asarray(tau_bins, dtype=float)))
    if tolerance is None:
        tolerance = _default_spatial_tolerance(data)
    tolerance = float(tolerance)

    pairs = [
        (rk, tm)
        for tm in tau_bins
        for rk in r_bins
        if not (rk == 0.0 and tm == 0.0)
    ]
    centers_r = np.array([p[0] for p in pairs])
    centers_t = np.array([p[1] for p in pairs])
    sums = np.zeros(len(pairs))
    counts = np.zeros(len(pairs), dtype=np.int64)

    if isinstance(data, FieldRealization):
        g = data.grid
        z = data.values
        offsets, dist = _grid_offsets(g, float(r_bins.max()) + tolerance)
        # bin membership per spatial class, origin handled separately
        members = {
            rk: np.nonzero((dist >= rk - tolerance) & (dist <= rk + tolerance))[0]
            for rk in r_bins
        }
        zero_in = {rk: (rk - tolerance <= 0.0 <= rk + tolerance) for rk in r_bins}
        for i, (rk, tm) in enumerate(pairs):
            m = _as_time_steps([tm], g.dt)[0]
            if m >= g.nt:
                continue
            shifts = [(m,) + tuple(int(h) for h in offsets[j]) for j in members[rk]]
            if zero_in[rk] and (m > 0):
                shifts.append((m,) + (0,) * g.dim)
            for shift in shifts:
                s, n = _sq_diff_sum(z, shift)
                sums[i] += s
                counts[i] += n
        return _drop_empty(
            VariogramKind.SPACE_TIME, centers_r, centers_t, 0.5 * sums, counts, tolerance
        )

    coords = np.array([p.s for p in data.points], dtype=float)
    times = np.array([p.t for p in data.points], dtype=float)
    values = np.asarray(data.values, dtype=float)
    uniq_t = np.unique(times)
    diffs = np.diff(uniq_t)
    t_tol = 0.5 * float(np.median(diffs)) if diffs.size else 0.0
    n_pts = coords.shape[0]
    iu = np.triu_indices(n_pts, 1)
    d = cdist(coords, coords)[iu]
    dt = np.abs(times[:, None] - times[None, :])[iu]
    sq = (values[:, None] - values[None, :])[iu] ** 2
    for i, (rk, tm) in enumerate(pairs):
        mask = (
            (d >= rk - tolerance)
            & (d <= rk + tolerance)
            & (np.abs(dt - tm) <= t_tol)
        )
        if rk == 0.0 and tm == 0.0:
            continue
        n = int(mask.sum())
        sums[i] = float(sq[mask].sum()) * 0.5
        counts[i] = n
    return _drop_empty(
        VariogramKind.SPACE_TIME, centers_r, centers_t, sums, counts, tolerance
    )


# ---------------------------------------------------------------------------
# model variogram and objective
# ---------------------------------------------------------------------------


def model_variogram(m: KernelModel, r, tau) -> np.ndarray | float:
    """Semivariance of a covariance model: ``C(0,0) - C(r,tau)`` plus nugget.

    The nugget contributes only away from the origin, producing the usual
    discontinuity at zero lag.
    """
    r_arr = np.asarray(r, dtype=float)
    tau_arr = np.asarray(tau, dtype=float)
    scalar = r_arr.ndim == 0 and tau_arr.ndim == 0
    r_b, tau_b = np.broadcast_arrays(r_arr, tau_arr)
    cov = np.asarray(m.covariance(r_b, tau_b), dtype=float)
    sill = m.variance()
    off_origin = (r_b != 0.0) | (tau_b != 0.0)
    out = sill - cov + m.nugget * off_origin
    return float(out.reshape(())) if scalar else out


def wls_objective(m: KernelModel, v: EmpiricalVariogram) -> WlsObjective:
    """Cressie's approximate weighted least squares criterion.

    ``sum_bins N (gamma_hat / gamma_model - 1)^2``; bins whose model value is
    below 1e-12 of the sill are skipped (their relative error is meaningless)
    and reported through the result's ``n_skipped``.
    """
    r, tau = v.lags()
    gam_model = np.asarray(model_variogram(m, r, tau), dtype=float)
    floor = _WLS_FLOOR * (m.variance() + m.nugget)
    usable = gam_model > floor
    n_skipped = int((~usable).sum())
    if not np.any(usable):
        raise AllBinsSkipped(
            "model variogram vanishes on every bin; nothing to fit against"
        )
    ratio = v.gamma[usable] / gam_model[usable]
    value = float(np.sum(v.counts[usable] * (ratio - 1.0) ** 2))
    return WlsObjective(value, n_skipped=n_skipped, n_used=int(usable.sum()))


# ---------------------------------------------------------------------------
# simplex search in transformed coordinates
# ---------------------------------------------------------------------------


def _nelder_mead(func, x0: np.ndarray, budget: int = _MAX_EVALS):
    """Nelder-Mead with shrinking restarts and a relative stopping rule.

    Runs up to ``1 + _RESTARTS`` simplex stages, halving the initial simplex
    scale each stage, stopping early when a stage improves the objective by
    less than ``_REL_TOL`` relatively.  Returns the best point, its value,
    the evaluation count, a convergence flag, and the per-stage trace.
    """
    x_best = np.asarray(x0, dtype=float)
    f_best = float(func(x_best))
    evals = 1
    trace = [f_best]
    converged = False
    scale = 0.25
    for stage in range(1 + _RESTARTS):
        remaining = budget - evals
        if remaining < 2 * (x_best.size + 1):
            break
        simplex = np.vstack([x_best] + [
            x_best + scale * np.eye(x_best.size)[i] for i in range(x_best.size)
        ])
        res = minimize(
            func,
            x_best,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "maxfev": remaining,
                "fatol": _REL_TOL * max(1.0, abs(f_best)),
                "xatol": 1e-4,
            },
        )
        evals += res.nfev
        improved = res.fun < f_best
        gain = f_best - res.fun if improved else 0.0
        if improved:
            x_best, f_best = np.asarray(res.x, dtype=float), float(res.fun)
        trace.append(f_best)
        scale *= _SHRINK
        if gain <= _REL_TOL * max(1.0, abs(f_best)):
            converged = True
            break
    return x_best, f_best, evals, converged, trace


def _objective_factory(build_model, variogram, bounds):
    """Wrap model construction + WLS into a penalized vector objective."""

    def func(x):
        try:
            theta = build_model.from_vector(x)
        except (OscovError, ValueError, OverflowError, FloatingPointError):
            return float("inf")
        for name, value in theta.items():
            lo, hi = bounds.get(name, (0.0, float("inf")))
            if not (lo <= value <= hi) or not math.isfinite(value):
                return float("inf")
        try:
            m = build_model.to_model(theta)
            return float(wls_objective(m, variogram))
        except (OscovError, ValueError, OverflowError, FloatingPointError):
            return float("inf")

    return func


class _Parametrization:
    """Maps between named positive hyperparameters and search vectors.

    Plain parameters travel through ``log``; a parameter named in
    ``logistic`` is a ratio in (0, 1) and travels through ``log(u/(1-u))``.
    """

    def __init__(self, names, to_model, logistic=()):
        self.names = list(names)
        self.to_model = to_model
        self.logistic = set(logistic)

    def to_vector(self, theta: dict) -> np.ndarray:
        out = []
        for name in self.names:
            v = float(theta[name])
            if name in self.logistic:
                v = min(max(v, 1e-12), 1.0 - 1e-12)
                out.append(math.log(v / (1.0 - v)))
            else:
                out.append(math.log(max(v, 1e-300)))
        return np.array(out)

    def from_vector(self, x) -> dict:
        theta = {}
        for name, xi in zip(self.names, np.asarray(x, dtype=float)):
            if name in self.logistic:
                theta[name] = 1.0 / (1.0 + math.exp(-xi))
            else:
                theta[name] = math.exp(xi)
        return theta


def _search(param: _Parametrization, theta0: dict, variogram, bounds, budget=_MAX_EVALS):
    """Run the simplex search from one start; fall back to the start on failure."""
    bounds = bounds or {}
    func = _objective_factory(param, variogram, bounds)
    x0 = param.to_vector(theta0)
    f0 = func(x0)
    if not math.isfinite(f0):
        raise OptimizerStalled(
            f"objective is not finite at the initial guess {theta0}"
        )
    x, f, evals, converged, trace = _nelder_mead(func, x0, budget)
    if f >= f0 and not np.allclose(x, x0):
        x, f = x0, f0
    theta = param.from_vector(x)
    return theta, float(f), evals, converged, trace


# ---------------------------------------------------------------------------
# marginal-stage parametrizations
# ---------------------------------------------------------------------------


def _ldho_regime_builder(dispersion, dim, regime, spatial=None):
    """Parametrization of an LDHO model for one damping regime.

    ``spatial`` freezes (c0, epsilon) at the marginal-stage estimates; when
    it is None both are part of the search vector.
    """
    disp = Dispersion(dispersion)

    base = [] if spatial else ["c0", "epsilon"]
    if regime is Regime.UNDERDAMPED:
        names = base + ["omega_d", "tau_c", "interaction", "nugget"]
    elif regime is Regime.CRITICAL:
        names = base + ["tau_c", "interaction", "nugget"]
    else:
        names = base + ["damping_ratio", "tau_c", "interaction", "nugget"]

    def to_model(theta: dict) -> KernelModel:
        c0 = spatial["c0"] if spatial else theta["c0"]
        epsilon = spatial["epsilon"] if spatial else theta["epsilon"]
        tau_c = theta["tau_c"]
        if regime is Regime.UNDERDAMPED:
            omega_d = theta["omega_d"]
        elif regime is Regime.CRITICAL:
            omega_d = 0.0
        else:
            omega_d = theta["damping_ratio"] / (2.0 * tau_c)
        params = LdhoParams.from_damped_frequency(
            c0=c0,
            tau_c=tau_c,
            omega_d=omega_d,
            regime=regime,
            epsilon=epsilon,
            interaction=theta["interaction"],
            dispersion=disp,
            dim=dim,
        )
        return KernelModel(params=params, nugget=theta["nugget"])

    logistic = ("damping_ratio",) if regime is Regime.OVERDAMPED else ()
    return _Parametrization(names, to_model, logistic=logistic)


def _ou_builder(dispersion, dim, spatial=None):
    disp = Dispersion(dispersion)
    base = [] if spatial else ["sigma0_sq", "beta"]
    names = base + ["tau_c", "scale", "nugget"]

    def to_model(theta: dict) -> KernelModel:
        sigma0_sq = spatial["sigma0_sq"] if spatial else theta["sigma0_sq"]
        beta = spatial["beta"] if spatial else theta["beta"]
        params = OuParams(
            sigma0_sq=sigma0_sq,
            tau_c=theta["tau_c"],
            a=1.0,
            scale=theta["scale"],
            beta=beta,
            dispersion=disp,
            dim=dim,
        )
        return KernelModel(params=params, nugget=theta["nugget"])

    return _Parametrization(names, to_model)


def _spatial_builder(family, dispersion, dim):
    """Spatial-stage parametrization: amplitude, spatial range, nugget."""
    disp = Dispersion(dispersion)
    if family == "ldho":
        names = ["c0", "epsilon", "nugget"]

        def to_model(theta: dict) -> KernelModel:
            # temporal constants are placeholders: the spatial marginal is
            # independent of them in every regime
            params = LdhoParams.from_damped_frequency(
                c0=theta["c0"],
                tau_c=1.0,
                omega_d=1.0,
                regime=Regime.UNDERDAMPED,
                epsilon=theta["epsilon"],
                interaction=1.0,
                dispersion=disp,
                dim=dim,
            )
            return KernelModel(params=params, nugget=theta["nugget"])

    else:
        names = ["sigma0_sq", "beta", "nugget"]

        def to_model(theta: dict) -> KernelModel:
            params = OuParams(
                sigma0_sq=theta["sigma0_sq"],
                tau_c=1.0,
                a=1.0,
                scale=1.0,
                beta=theta["beta"],
                dispersion=disp,
                dim=dim,
            )
            return KernelModel(params=params, nugget=theta["nugget"])

    return _Parametrization(names, to_model)


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------


def _sill_and_nugget_guess(v: EmpiricalVariogram) -> tuple[float, float]:
    gam = v.gamma
    sill = float(np.mean(gam[max(0, gam.size * 3 // 4):]))
    first = float(gam[0])
    nugget0 = max(min(0.5 * first, 0.9 * sill), 1e-6 * max(sill, 1e-300))
    return max(sill, 1e-300), nugget0


def _spatial_half_range(v: EmpiricalVariogram, sill: float, nugget0: float) -> float:
    """Lag where the centered variogram first crosses half its plateau."""
    r = v.r
    target = nugget0 + 0.5 * (sill - nugget0)
    above = np.nonzero(v.gamma >= target)[0]
    if above.size:
        return max(float(r[above[0]]), float(r[0]))
    return float(r[-1])


def _spatial_theta0(v, family, dispersion, dim) -> dict:
    sill, nugget0 = _sill_and_nugget_guess(v)
    r_half = _spatial_half_range(v, sill, nugget0)
    amp = max(sill - nugget0, 1e-6 * sill)
    if Dispersion(dispersion) is Dispersion.QUADRATIC:
        eps0 = r_half * r_half / (4.0 * math.log(2.0))
    else:
        eps0 = r_half / math.sqrt(2.0 ** (2.0 / (dim + 1)) - 1.0)
    eps0 = max(eps0, 1e-12)
    if family == "ldho":
        if Dispersion(dispersion) is Dispersion.QUADRATIC:
            c00 = amp * (4.0 * math.pi * eps0) ** (0.5 * dim)
        else:
            gd = math.gamma(0.5 * (dim + 1))
            c00 = amp * math.pi ** (0.5 * (dim + 1)) * eps0**dim / gd
        return {"c0": c00, "epsilon": eps0, "nugget": nugget0}
    if Dispersion(dispersion) is Dispersion.QUADRATIC:
        s00 = amp * (4.0 * math.pi * eps0) ** (0.5 * dim)
    else:
        gd = math.gamma(0.5 * (dim + 1))
        s00 = amp * math.pi ** (0.5 * (dim + 1)) * eps0**dim / gd
    return {"sigma0_sq": s00, "beta": eps0, "nugget": nugget0}


def _temporal_frequency_guess(v: EmpiricalVariogram, sill: float) -> float | None:
    """Damped-oscillation frequency from the first overshoot of the sill.

    The variogram of an oscillatory kernel overshoots its plateau near the
    kernel's first hole; the overshoot peak sits close to half a period.
    Returns None when no overshoot is visible (monotone decay regimes).
    """
    tau = v.tau
    gam = v.gamma
    above = gam > 1.02 * sill
    if not np.any(above):
        return None
    start = np.argmax(above)
    # first local maximum at or after the crossing
    k = start
    while k + 1 < gam.size and gam[k + 1] >= gam[k]:
        k += 1
    t_peak = float(tau[k])
    if t_peak <= 0.0:
        return None
    return math.pi / t_peak


def _temporal_corr_time_guess(v: EmpiricalVariogram, sill: float, nugget0: float) -> float:
    target = nugget0 + (1.0 - math.exp(-1.0)) * (sill - nugget0)
    above = np.nonzero(v.gamma >= target)[0]
    t_corr = float(v.tau[above[0]]) if above.size else float(v.tau[-1])
    return max(0.5 * t_corr, float(v.tau[0]))


def _default_bounds(theta0: dict, span: float = 1e3) -> dict:
    out = {}
    for name, value in theta0.items():
        if name == "damping_ratio":
            out[name] = (1e-6, 1.0 - 1e-6)
        else:
            out[name] = (value / span, value * span)
    return out


def _merge_bounds(defaults: dict, override) -> dict:
    merged = dict(defaults)
    if override:
        merged.update(override)
    return merged


# ---------------------------------------------------------------------------
# fitting pipelines
# ---------------------------------------------------------------------------


def _temporal_starts(family, dispersion, dim, v_t, spatial):
    """Regime-tagged initial guesses for the temporal-stage search."""
    sill, nugget0 = _sill_and_nugget_guess(v_t)
    t_corr = _temporal_corr_time_guess(v_t, sill, nugget0)
    omega0 = _temporal_frequency_guess(v_t, sill)
    eps_like = spatial.get("epsilon", spatial.get("beta", 1.0))

    if family == "ou":
        theta = {"tau_c": t_corr, "scale": eps_like, "nugget": nugget0}
        return [("ou", theta)]

    starts = []
    if omega0 is not None:
        b0 = eps_like / (1.0 + omega0 * t_corr)
        for mult in (0.5, 1.0, 2.0):
            starts.append(
                (
                    Regime.UNDERDAMPED,
                    {
                        "omega_d": mult * omega0,
                        "tau_c": t_corr,
                        "interaction": b0,
                        "nugget": nugget0,
                    },
                )
            )
    else:
        starts.append(
            (
                Regime.UNDERDAMPED,
                {
                    "omega_d": 1.0 / max(t_corr, 1e-12),
                    "tau_c": t_corr,
                    "interaction": eps_like,
                    "nugget": nugget0,
                },
            )
        )
    starts.append(
        (
            Regime.CRITICAL,
            {"tau_c": t_corr, "interaction": eps_like, "nugget": nugget0},
        )
    )
    starts.append(
        (
            Regime.OVERDAMPED,
            {
                "damping_ratio": 0.5,
                "tau_c": t_corr,
                "interaction": eps_like,
                "nugget": nugget0,
            },
        )
    )
    return starts


def fit_marginals(
    data,
    family: str = "ldho",
    dispersion=Dispersion.QUADRATIC,
    bounds=None,
    r_bins=None,
    tau_bins=None,
) -> FitResult:
    """Two-marginal estimation stage: spatial parameters, then temporal.

    The spatial marginal determines the amplitude, the spatial range, and a
    spatial nugget; the temporal marginal determines the oscillator (or
    relaxation) constants, the interaction strength, and a temporal nugget.
    The combined model takes the smaller of the two nuggets.  For oscillator
    models every damping regime is tried and the best temporal objective
    wins.  The reported objective is the sum of the two stage optima.
    """
    if family not in ("ldho", "ou"):
        raise DomainError(f"unknown kernel family {family!r}")
    dim = data.grid.dim if isinstance(data, FieldRealization) else data.dim

    v_s = spatial_marginal_variogram(data, bins=r_bins)
    v_t = temporal_marginal_variogram(data, bins=tau_bins)

    # stage A: spatial marginal
    sp_param = _spatial_builder(family, dispersion, dim)
    sp_theta0 = _spatial_theta0(v_s, family, dispersion, dim)
    sp_bounds = _merge_bounds(_default_bounds(sp_theta0), bounds)
    sp_theta, sp_obj, sp_evals, sp_conv, sp_trace = _search(
        sp_param, sp_theta0, v_s, sp_bounds
    )
    nugget_s = sp_theta["nugget"]
    spatial = {k: v for k, v in sp_theta.items() if k != "nugget"}

    # stage B: temporal marginal, all regimes
    best = None
    evals = sp_evals
    trace = list(sp_trace)
    theta0_record = {"spatial": sp_theta0}
    for tag, theta0 in _temporal_starts(family, dispersion, dim, v_t, spatial):
        if family == "ou":
            param = _ou_builder(dispersion, dim, spatial=spatial)
        else:
            param = _ldho_regime_builder(dispersion, dim, tag, spatial=spatial)
        t_bounds = _merge_bounds(_default_bounds(theta0), bounds)
        try:
            theta, obj, n_ev, conv, tr = _search(param, theta0, v_t, t_bounds)
        except OptimizerStalled:
            continue
        evals += n_ev
        trace.extend(tr)
        key = tag if isinstance(tag, str) else tag.value
        theta0_record.setdefault("temporal", {})[key] = theta0
        if best is None or obj < best[1]:
            best = (theta, obj, conv, param, tag)
    if best is None:
        raise OptimizerStalled("no temporal-stage start produced a finite objective")

    t_theta, t_obj, t_conv, t_param, _ = best
    nugget = min(nugget_s, t_theta["nugget"])
    final_theta = dict(t_theta)
    final_theta["nugget"] = nugget
    model = t_param.to_model(final_theta)
    theta_star = {"spatial": spatial, "temporal": t_theta, "nugget": nugget}
    return FitResult(
        model=model,
        objective=float(sp_obj + t_obj),
        n_evaluations=evals,
        converged=bool(sp_conv and t_conv),
        theta0=theta0_record,
        theta_star=theta_star,
        trace=tuple(trace),
    )


def _full_theta_from_model(m: KernelModel, regime: Regime | None) -> dict:
    """Joint-stage start vector for one regime branch, derived from a model."""
    if isinstance(m.params, OuParams):
        p = m.params
        # the kernel depends on a only through a/tau_c and scale/tau_c, so a
        # is pinned to 1 and the two ratios are preserved
        return {
            "sigma0_sq": p.sigma0_sq,
            "beta": p.beta,
            "tau_c": p.tau_c / p.a,
            "scale": p.scale / p.a if p.scale > 0 else 1e-6,
            "nugget": max(m.nugget, 1e-12),
        }
    p = m.params
    from .kernel_core import classify_regime, damped_frequency

    own = classify_regime(p)
    omega_d = damped_frequency(p) if own is not Regime.CRITICAL else 0.0
    theta = {
        "c0": p.c0,
        "epsilon": p.epsilon,
        "tau_c": p.tau_c,
        "interaction": p.interaction,
        "nugget": max(m.nugget, 1e-12),
    }
    if regime is Regime.UNDERDAMPED:
        theta["omega_d"] = omega_d if omega_d > 0.0 else 0.25 / p.tau_c
    elif regime is Regime.OVERDAMPED:
        u = 2.0 * p.tau_c * omega_d
        theta["damping_ratio"] = min(max(u, 0.05), 0.95)
    return theta


def fit_full(
    data,
    theta0: KernelModel | FitResult | None = None,
    bounds=None,
    r_bins=None,
    tau_bins=None,
    family: str = "ldho",
    dispersion=Dispersion.QUADRATIC,
) -> FitResult:
    """Joint space-time variogram fit, warm-started from marginal estimates.

    When ``theta0`` is omitted the marginal pipeline runs first; its model
    seeds every regime branch of the joint search.  The winning branch's
    objective never exceeds the objective of the warm start, because each
    branch falls back to its start on failure.
    """
    marginal_result = None
    if theta0 is None:
        marginal_result = fit_marginals(
            data, family=family, dispersion=dispersion, bounds=bounds
        )
        start_model = marginal_result.model
    elif isinstance(theta0, FitResult):
        marginal_result = theta0
        start_model = theta0.model
    else:
        start_model = theta0
    if isinstance(start_model.params, OuParams):
        family = "ou"
    dispersion = start_model.params.dispersion
    dim = start_model.dim

    v_st = space_time_variogram(data, r_bins=r_bins, tau_bins=tau_bins)

    if family == "ou":
        branches = [("ou", _ou_builder(dispersion, dim))]
    else:
        branches = [
            (regime, _ldho_regime_builder(dispersion, dim, regime))
            for regime in (Regime.UNDERDAMPED, Regime.CRITICAL, Regime.OVERDAMPED)
        ]

    best = None
    evals = 0
    trace: list[float] = []
    theta0_record: dict = {}
    for tag, param in branches:
        regime = None if isinstance(tag, str) else tag
        start = _full_theta_from_model(start_model, regime)
        key = tag if isinstance(tag, str) else tag.value
        theta0_record[key] = start
        b = _merge_bounds(_default_bounds(start), bounds)
        try:
            theta, obj, n_ev, conv, tr = _search(param, start, v_st, b)
        except OptimizerStalled:
            continue
        evals += n_ev
        trace.extend(tr)
        if best is None or obj < best[1]:
            best = (theta, obj, conv, param)
    if best is None:
        raise OptimizerStalled("no regime branch produced a finite joint objective")

    theta, obj, conv, param = best
    model = param.to_model(theta)
    if marginal_result is not None:
        evals += marginal_result.n_evaluations
    return FitResult(
        model=model,
        objective=float(obj),
        n_evaluations=evals,
        converged=bool(conv),
        theta0=theta0_record,
        theta_star=theta,
        trace=tuple(trace),
    )
