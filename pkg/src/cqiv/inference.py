"""Weighted (multiplier) bootstrap for CQIV and percentile confidence intervals.

Each draw multiplies every observation by an i.i.d. nonnegative weight with
unit mean and variance, refits the control variable under those weights, and
runs one weighted quantile regression on the observations picked out by the
point estimate's selection rule evaluated at the reweighted regressors.  The
Step-1 selector and the cutoffs stay at their point-estimate values.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numkit
from .data import Dataset
from .errors import CqivError, SpecMismatch, TooFewDraws
from .estimator import (CqivConfig, CqivFit, elasticity_indices, elasticity_rows, fit_cqiv,
                        fit_step0, regressors)

log = logging.getLogger(__name__)

SELECTIONS = ("refit_J1b", "fixed_J1")
MIN_DRAWS = 20
MAX_FAIL_SHARE = 0.10


@dataclass(frozen=True)
class WeightScheme:
    """Law of the bootstrap multipliers.

    ``custom`` draws come from ``sampler(rng, n)``; with ``normalize`` they are
    mapped to ``1 + (e - 1) / sd`` using the sampler's known standard deviation.
    """

    distribution: str = "standard_exponential"
    normalize: bool = True
    sampler: Callable | None = None
    sd: float = 1.0

    def __post_init__(self):
        if self.distribution not in ("standard_exponential", "custom"):
            raise ValueError(f"unknown weight distribution {self.distribution!r}")
        if self.distribution == "custom" and self.sampler is None:
            raise ValueError("a custom weight scheme needs a sampler")
        if self.sd < 0:
            raise ValueError("sd must be nonnegative")


def draw_weights(n, scheme: WeightScheme | None = None, rng=None):
    if n < 1:
        raise ValueError("n must be at least 1")
    scheme = scheme or WeightScheme()
    rng = np.random.default_rng(rng)
    if scheme.distribution == "standard_exponential":
        return rng.standard_exponential(n)
    e = np.asarray(scheme.sampler(rng, n), dtype=float).reshape(n)
    if scheme.normalize and scheme.sd > 0 and scheme.sd != 1.0:
        e = 1.0 + (e - 1.0) / scheme.sd
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("bootstrap weights must be finite and nonnegative")
    return e


@dataclass(frozen=True, eq=False)
class BootstrapDraws:
    """Successful draws for one quantile (rows of ``betas``) plus failure log."""

    u: float
    betas: np.ndarray
    names: list
    point: CqivFit
    refit_selection: str
    seed: int
    scheme: WeightScheme
    draw_index: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def B(self):
        return len(self.draw_index) + len(self.failures)

    @property
    def count(self):
        return self.betas.shape[0]


@dataclass(frozen=True)
class ConfidenceInterval:
    level: float
    lower: float
    upper: float
    functional: str


@dataclass(frozen=True)
class Elasticity:
    """Average quantile elasticity ``mean_i 1{x_i'b > c_i}(b_d + 2 b_dd d_i)``."""

    d: np.ndarray
    c: np.ndarray
    d_index: int | None = None
    dsq_index: int | None = None
    label: str = "elasticity"

    @classmethod
    def of(cls, data: Dataset):
        return cls(data.d, data.c)


def _select(point: CqivFit, mode, X, data, w):
    if mode == "fixed_J1":
        return point.selected & (w > 0)
    return point.steps[point.selected_step].reselect(X, data.c, w)


def _one_draw(data, cfg, points, mode, scheme, child):
    rng = np.random.default_rng(child)
    w = draw_weights(data.n, scheme, rng)
    X = regressors(data, cfg, fit_step0(data, cfg, w))
    out = []
    for fit in points:
        J = _select(fit, mode, X, data, w)
        try:
            if not J.any():
                raise CqivError("bootstrap selection is empty")
            out.append(numkit.solve_weighted_qr(X[J], data.y[J], fit.u, w[J]).beta)
        except CqivError as exc:
            out.append(exc)
    return out


def _draw_safe(args):
    data, cfg, points, mode, scheme, child = args
    try:
        return _one_draw(data, cfg, points, mode, scheme, child)
    except CqivError as exc:
        return [exc] * len(points)


def bootstrap_cqiv_path(data: Dataset, cfg: CqivConfig, quantiles, B=200,
                        scheme: WeightScheme | None = None, refit_selection="refit_J1b",
                        seed=0, point_fits=None, n_jobs=1):
    """Bootstrap several quantiles with shared weight draws and control refits.

    Draw ``b`` uses child stream ``b`` of ``SeedSequence(seed)``, so results do
    not depend on ``n_jobs``.  Returns ``{u: BootstrapDraws}``.
    """
    if refit_selection not in SELECTIONS:
        raise ValueError(f"refit_selection must be one of {SELECTIONS}")
    if B < 0:
        raise ValueError("B must be nonnegative")
    scheme = scheme or WeightScheme()
    quantiles = [float(u) for u in quantiles]
    if point_fits is None:
        cf = fit_step0(data, cfg)
        point_fits = [fit_cqiv(data, cfg.at(u), control=cf) for u in quantiles]
    children = np.random.SeedSequence(seed).spawn(B)
    jobs = [(data, cfg, point_fits, refit_selection, scheme, ch) for ch in children]
    if n_jobs > 1 and B > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_draw_safe, jobs, chunksize=max(1, B // (4 * n_jobs))))
    else:
        results = [_draw_safe(j) for j in jobs]

    out = {}
    for k, fit in enumerate(point_fits):
        rows, idx, failures = [], [], []
        for b, res in enumerate(results):
            r = res[k]
            if isinstance(r, Exception):
                failures.append((b, f"{type(r).__name__}: {r}"))
            else:
                rows.append(r)
                idx.append(b)
        if B and len(failures) > MAX_FAIL_SHARE * B:
            raise TooFewDraws(
                f"{len(failures)} of {B} bootstrap draws failed at u={fit.u}; "
                f"first failure: {failures[0][1]}"
            )
        if failures:
            log.warning("%d of %d bootstrap draws failed at u=%s", len(failures), B, fit.u)
        betas = np.array(rows) if rows else np.empty((0, fit.beta.size))
        out[fit.u] = BootstrapDraws(fit.u, betas, list(fit.names), fit, refit_selection,
                                    seed, scheme, np.array(idx, dtype=int), failures)
    return out


def bootstrap_cqiv(data: Dataset, cfg: CqivConfig, B=200, scheme: WeightScheme | None = None,
                   refit_selection="refit_J1b", seed=0, point_fit: CqivFit | None = None,
                   n_jobs=1):
    fits = None if point_fit is None else [point_fit]
    u = cfg.u if point_fit is None else point_fit.u
    return bootstrap_cqiv_path(data, cfg, [u], B, scheme, refit_selection, seed,
                               fits, n_jobs)[u]


def functional_values(draws: BootstrapDraws, functional):
    """Evaluate ``functional`` on every draw.  Accepts a column index, a
    coefficient name, an :class:`Elasticity`, or a callable of the coefficients."""
    if isinstance(functional, Elasticity):
        di, dd = functional.d_index, functional.dsq_index
        if di is None:
            di, dd = elasticity_indices(draws.point.config.second_stage)
        X = draws.point.X
        vals = [elasticity_rows(b, X, functional.d, functional.c, di, dd).mean()
                for b in draws.betas]
        return np.array(vals), functional.label
    if isinstance(functional, str):
        if functional not in draws.names:
            raise SpecMismatch(f"no coefficient named {functional!r}")
        return draws.betas[:, draws.names.index(functional)], functional
    if isinstance(functional, (int, np.integer)):
        return draws.betas[:, functional], draws.names[functional]
    if callable(functional):
        return np.array([functional(b) for b in draws.betas], dtype=float), \
            getattr(functional, "__name__", "g")
    raise TypeError(f"unsupported functional {functional!r}")


def percentile_interval(values, level=0.95):
    """``(q_{a/2}, q_{1-a/2})`` of ``values`` with linear interpolation between
    order statistics (``h = (m - 1) p``)."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(values, dtype=float), [a, 1.0 - a], method="linear")
    return float(lo), float(hi)


def percentile_ci(draws: BootstrapDraws, functional, level=0.95):
    """Uncentred percentile interval for ``functional`` of the draws."""
    if draws.count < MIN_DRAWS:
        raise TooFewDraws(f"need at least {MIN_DRAWS} successful draws, have {draws.count}")
    vals, label = functional_values(draws, functional)
    lo, hi = percentile_interval(vals, level)
    return ConfidenceInterval(level, lo, hi, label)
