"""First-stage estimators of the control variable ``V = F_D(D | W, Z)``.

Three interchangeable methods, each refittable under observation weights:

* ``ols``  -- weighted least squares of D on R, then the (weighted, midpoint)
  empirical CDF of the residuals;
* ``qr``   -- quantile regressions of D on R over a probability grid; the
  control is the share of grid points whose fitted quantile lies at or below D;
* ``dr``   -- distribution regression: one binary GLM of ``1{D <= d}`` on R per
  threshold ``d``; the control is the fitted probability at the first retained
  threshold at or above D.

Evaluated controls are clamped to ``[1/(2n), 1 - 1/(2n)]`` so that the normal
quantile transform stays finite.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numkit
from .data import Dataset
from .errors import CqivError, NotFitted, RankDeficient

log = logging.getLogger(__name__)

METHODS = ("ols", "qr", "dr")
TRANSFORMS = ("identity", "normal_quantile")
QR_GRID = np.round(np.arange(1, 100) / 100.0, 2)
DR_MAX_THRESHOLDS = 200


@dataclass(frozen=True)
class FirstStageSpec:
    grid_resolution: int | None = None
    link: str = "probit"
    full_grid: bool = False

    def __post_init__(self):
        if self.grid_resolution is not None and self.grid_resolution < 2:
            raise ValueError("grid_resolution must be at least 2")
        if self.link not in ("probit", "logit"):
            raise ValueError(f"unknown link {self.link!r}")


@dataclass(frozen=True, eq=False)
class ControlFunction:
    """Fitted first stage.  ``params`` is ``(p,)`` for ``ols`` and ``(G, p)``
    for the grid methods, one row per entry of ``grid``."""

    method: str
    params: np.ndarray
    grid: np.ndarray
    n: int
    transform: str = "identity"
    link: str = "probit"
    residuals: np.ndarray | None = None
    residual_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown control method {self.method!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.method != "ols" and np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    @property
    def eps(self):
        return 1.0 / (2 * self.n)

    def with_transform(self, transform):
        return ControlFunction(self.method, self.params, self.grid, self.n, transform,
                               self.link, self.residuals, self.residual_weights)

    def rank(self, d, R):
        """Untransformed control V-hat for rows ``(d, R)``, clamped."""
        d = np.asarray(d, dtype=float).ravel()
        R = np.asarray(R, dtype=float).reshape(d.size, -1)
        if self.method == "ols":
            if self.residuals is None:
                raise NotFitted("ols control has no residual sample")
            v = numkit.empirical_cdf_rank(self.residuals, d - R @ self.params,
                                          mode="midpoint", weights=self.residual_weights)
        elif self.method == "qr":
            v = np.mean(R @ self.params.T <= d[:, None], axis=1)
        else:
            g = np.searchsorted(self.grid, d, side="left")
            g = np.minimum(g, self.grid.size - 1)
            eta = np.einsum("ij,ij->i", R, self.params[g])
            v = numkit.link_cdf(eta, self.link)
        return np.clip(np.asarray(v, dtype=float), self.eps, 1.0 - self.eps)

    def evaluate(self, d, R):
        v = self.rank(d, R)
        if self.transform == "normal_quantile":
            return numkit.normal_quantile(v)
        return v

    def raw_residual(self, d, R):
        """Additive first-stage residual ``d - R'pi`` (``ols`` only)."""
        if self.method != "ols":
            raise CqivError("raw residuals are defined for the ols control only")
        return np.asarray(d, dtype=float) - np.asarray(R, dtype=float) @ self.params


def _weights(data, w):
    return np.ones(data.n) if w is None else np.asarray(w, dtype=float)


def fit_control_ols(data: Dataset, spec: FirstStageSpec | None = None, w=None,
                    transform="identity"):
    w = _weights(data, w)
    R = data.first_stage_design()
    pi = numkit.solve_ols(R, data.d, w)
    resid = data.d - R @ pi
    return ControlFunction("ols", pi, np.empty(0), data.n, transform,
                           residuals=resid, residual_weights=w)


def fit_control_qr(data: Dataset, spec: FirstStageSpec | None = None, w=None,
                   transform="identity"):
    spec = spec or FirstStageSpec()
    w = _weights(data, w)
    R = data.first_stage_design()
    if spec.grid_resolution is None:
        grid = QR_GRID
    else:
        G = spec.grid_resolution
        grid = np.arange(1, G + 1) / (G + 1.0)
    try:
        fits = numkit.solve_weighted_qr_grid(R, data.d, grid, w)
        params = np.array([f.beta for f in fits])
        kept = grid
    except RankDeficient:
        numkit._check_rank(R[w > 0])  # a collinear design is fatal at every point
        rows, kept = [], []
        for v in grid:
            try:
                rows.append(numkit.solve_weighted_qr(R, data.d, v, w).beta)
                kept.append(v)
            except RankDeficient:
                log.warning("first-stage quantile regression failed at v=%.3f", v)
        if len(kept) < 0.95 * grid.size:
            raise RankDeficient(
                f"first-stage quantile regression failed at {grid.size - len(kept)} "
                f"of {grid.size} grid points"
            )
        params, kept = np.array(rows), np.array(kept)
    return ControlFunction("qr", params, np.asarray(kept), data.n, transform)


def dr_thresholds(d, resolution=None, full=False):
    values = np.unique(d)
    if full:
        return values
    G = min(values.size, resolution or DR_MAX_THRESHOLDS)
    idx = np.unique(np.round(np.linspace(0, values.size - 1, G)).astype(int))
    return values[idx]


def fit_control_dr(data: Dataset, spec: FirstStageSpec | None = None, w=None,
                   transform="identity"):
    spec = spec or FirstStageSpec()
    w = _weights(data, w)
    R = data.first_stage_design()
    numkit._check_rank(R[w > 0])
    thr = dr_thresholds(data.d, spec.grid_resolution, spec.full_grid)
    T = (data.d[None, :] <= thr[:, None]).astype(float)
    pos = w > 0
    share = T[:, pos].mean(axis=1)
    usable = (share > 0) & (share < 1)
    delta = np.zeros((thr.size, R.shape[1]))
    ok = np.zeros(thr.size, dtype=bool)
    if usable.any():
        dl, _, conv, _, _, _ = numkit.fit_glm_batch(R, T[usable], spec.link, w)
        delta[usable] = dl
        ok[usable] = conv
    if not ok.any():
        raise RankDeficient("distribution regression produced no usable threshold")
    dropped = int((~ok).sum())
    if dropped:
        log.debug("distribution regression dropped %d of %d thresholds", dropped, thr.size)
    return ControlFunction("dr", delta[ok], thr[ok], data.n, transform, link=spec.link)


_FITTERS = {"ols": fit_control_ols, "qr": fit_control_qr, "dr": fit_control_dr}


def fit_control(method, data: Dataset, spec: FirstStageSpec | None = None, w=None,
                transform="identity"):
    try:
        fitter = _FITTERS[method]
    except KeyError:
        raise ValueError(f"unknown control method {method!r}") from None
    return fitter(data, spec, w, transform)


def evaluate_control(cf: ControlFunction | None, d, wz_row):
    """Control value (after ``cf.transform``) at a single point ``(d, w, z)``."""
    if cf is None:
        raise NotFitted("control function has not been fitted")
    R = np.concatenate([[1.0], np.asarray(wz_row, dtype=float).ravel()])[None, :]
    return float(cf.evaluate([d], R)[0])
