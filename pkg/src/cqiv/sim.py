"""Monte Carlo harness: simulation designs, tobit-cmle, bias/RMSE aggregation."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .control import FirstStageSpec, fit_control
from .data import Dataset, SecondStageSpec
from .errors import CqivError, NonConvergence
from .estimator import CqivConfig, fit_cqiv

log = logging.getLogger(__name__)

ESTIMATORS = ("cqiv-ols", "cqiv-qr", "cqiv-dr", "cqr", "qiv-ols", "qr", "tobit-cmle")
PAPER_QUANTILES = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


@dataclass(frozen=True)
class McDesign:
    variant: str = "homoskedastic"
    n: int = 1000
    rho0: float = 0.9
    pi: tuple = (0.0, 1.0, 1.0, 1.0, 1.0)
    beta: tuple = (0.0, 1.0, 1.0)
    censor_quantile: float = 0.38
    w_cap_quantile: float = 0.95

    def __post_init__(self):
        if self.variant not in ("homoskedastic", "heteroskedastic"):
            raise ValueError(f"unknown design variant {self.variant!r}")
        if not -1.0 < self.rho0 < 1.0:
            raise ValueError("rho0 must lie in (-1, 1)")
        if self.n < 10:
            raise ValueError("n must be at least 10")


@dataclass(frozen=True, eq=False)
class Truth:
    v: np.ndarray
    eps: np.ndarray
    ystar: np.ndarray
    beta: tuple
    rho0: float

    @property
    def control_coefficient(self):
        return self.rho0


def generate_design(design: McDesign, rng):
    """Draw one sample.  Returns ``(Dataset, Truth)``."""
    rng = np.random.default_rng(rng)
    n = design.n
    z = rng.standard_normal(n)
    ew = np.exp(rng.standard_normal(n))
    w = np.minimum(ew, np.quantile(ew, design.w_cap_quantile))
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    phi_v = a
    phi_eps = design.rho0 * a + np.sqrt(1.0 - design.rho0 ** 2) * b
    p00, p01, p02, p03, p04 = design.pi
    scale = 1.0 if design.variant == "homoskedastic" else p03 + p04 * w
    d = p00 + p01 * z + p02 * w + scale * phi_v
    b00, b01, b02 = design.beta
    ystar = b00 + b01 * d + b02 * w + phi_eps
    c = np.quantile(ystar, design.censor_quantile)
    y = np.maximum(ystar, c)
    data = Dataset(y, d, w[:, None], z[:, None], np.full(n, c), ("w",), ("z",))
    truth = Truth(special.ndtr(phi_v), special.ndtr(phi_eps), ystar, design.beta, design.rho0)
    return data, truth


# ---------------------------------------------------------------------------
# tobit with a least-squares control (conditional MLE)

@dataclass(frozen=True, eq=False)
class TobitFit:
    beta: np.ndarray
    sigma: float
    loglik: float
    names: list


def tobit_loglik(theta, X, y, c, censored):
    b, log_sigma = theta[:-1], theta[-1]
    sigma = np.exp(log_sigma)
    xb = X @ b
    zc = (c[censored] - xb[censored]) / sigma
    zu = (y[~censored] - xb[~censored]) / sigma
    return (special.log_ndtr(zc).sum()
            - 0.5 * (zu ** 2).sum() - zu.size * (0.5 * np.log(2 * np.pi) + log_sigma))


def _tobit_grad(theta, X, y, c, censored):
    b, log_sigma = theta[:-1], theta[-1]
    sigma = np.exp(log_sigma)
    xb = X @ b
    zc = (c[censored] - xb[censored]) / sigma
    zu = (y[~censored] - xb[~censored]) / sigma
    mills = np.exp(-0.5 * zc ** 2 - 0.5 * np.log(2 * np.pi) - special.log_ndtr(zc))
    gb = -(mills @ X[censored]) / sigma + (zu @ X[~censored]) / sigma
    gs = -(mills * zc).sum() + (zu ** 2 - 1.0).sum()
    return np.append(gb, gs)


def fit_tobit(X, y, c, max_iter=200):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), y.shape)
    censored = ~(y > c)
    b0, *_ = np.linalg.lstsq(X, y, rcond=None)
    s0 = np.std(y - X @ b0) + 1e-8
    theta0 = np.append(b0, np.log(s0))
    res = optimize.minimize(
        lambda t: -tobit_loglik(t, X, y, c, censored),
        theta0,
        jac=lambda t: -_tobit_grad(t, X, y, c, censored),
        method="BFGS",
        options={"maxiter": max_iter, "gtol": 1e-7},
    )
    grad = _tobit_grad(res.x, X, y, c, censored)
    if not res.success and np.max(np.abs(grad)) > 1e-4 * y.size:
        raise NonConvergence(f"tobit likelihood did not converge: {res.message}")
    return res.x[:-1], float(np.exp(res.x[-1])), float(-res.fun)


def tobit_cmle(data: Dataset, control=None):
    """Tobit on ``(1, D, W, v)`` with ``v`` the raw first-stage OLS residual."""
    cf = control if control is not None else fit_control("ols", data)
    v = cf.raw_residual(data.d, data.first_stage_design())
    X = np.column_stack([np.ones(data.n), data.d, data.w, v])
    beta, sigma, ll = fit_tobit(X, data.y, data.c)
    names = ["const", "d"] + [f"w:{nm}" for nm in data.w_names] + ["v"]
    return TobitFit(beta, sigma, ll, names)


# ---------------------------------------------------------------------------
# Monte Carlo

def estimator_config(name, first_stage: FirstStageSpec | None = None):
    if name not in ESTIMATORS or name == "tobit-cmle":
        raise ValueError(f"no quantile configuration for estimator {name!r}")
    method = name.split("-")[1] if "-" in name else None
    correction = name.startswith("cq")
    return CqivConfig(
        control_method=method,
        censoring_correction=correction,
        second_stage=SecondStageSpec(control_transform="normal_quantile"),
        first_stage=first_stage or FirstStageSpec(),
    )


@dataclass(eq=False)
class McResult:
    design: McDesign
    estimators: tuple
    quantiles: tuple
    replications: int
    estimates: dict = field(default_factory=dict)
    names: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def coefficient(self, estimator, u, name="d"):
        arr = self.estimates[(estimator, u)]
        names = self.names.get(estimator)
        if names is None:  # no replication produced a fit
            return np.full(arr.shape[0], np.nan)
        return arr[:, names.index(name)]

    def errors(self, estimator, u):
        return self.coefficient(estimator, u, "d") - self.design.beta[1]

    def cell(self, estimator, u):
        e = self.errors(estimator, u)
        ok = e[~np.isnan(e)]
        if ok.size == 0:
            return {"mean_bias": np.nan, "rmse": np.nan,
                    "replication_count": 0, "failure_count": int(e.size)}
        return {
            "mean_bias": float(ok.mean()),
            "rmse": float(np.sqrt(np.mean(ok ** 2))),
            "replication_count": int(ok.size),
            "failure_count": int(e.size - ok.size),
        }

    def summary(self):
        return [dict(estimator=est, quantile=u, **self.cell(est, u))
                for est in self.estimators for u in self.quantiles]


def run_replication(design, estimators, quantiles, seed_seq, keep_diagnostics=False,
                    first_stage=None):
    data, _ = generate_design(design, np.random.default_rng(seed_seq))
    out, names, diags = {}, {}, {}
    controls = {}
    for est in estimators:
        if est == "tobit-cmle":
            try:
                cf = controls.get("ols") or fit_control("ols", data)
                controls["ols"] = cf
                fit = tobit_cmle(data, cf)
                names[est] = fit.names
                for u in quantiles:
                    out[(est, u)] = fit.beta
            except CqivError as exc:
                log.debug("tobit-cmle failed: %s", exc)
            continue
        cfg = estimator_config(est, first_stage)
        cf = None
        if cfg.control_method is not None:
            key = cfg.control_method
            try:
                if key not in controls:
                    controls[key] = fit_control(key, data, cfg.first_stage)
            except CqivError as exc:
                log.debug("%s first stage failed: %s", est, exc)
                continue
            cf = controls[key].with_transform(cfg.second_stage.control_transform)
        names[est] = cfg.second_stage.names(data, cf is not None)
        for u in quantiles:
            try:
                fit = fit_cqiv(data, cfg.at(u), control=cf)
            except CqivError as exc:
                log.debug("%s failed at u=%s: %s", est, u, exc)
                continue
            out[(est, u)] = fit.beta
            if keep_diagnostics:
                diags[(est, u)] = fit.diagnostics
    return out, names, diags


def _worker(args):
    return run_replication(*args)


def run_monte_carlo(design: McDesign, estimators=ESTIMATORS, quantiles=PAPER_QUANTILES,
                    replications=100, seed=0, n_jobs=1, keep_diagnostics=False,
                    first_stage: FirstStageSpec | None = None):
    """Replicate ``design`` and fit every estimator at every quantile.

    Replication ``r`` draws from child stream ``r`` of ``SeedSequence(seed)``,
    so results do not depend on execution order or ``n_jobs``.
    """
    if not estimators:
        raise ValueError("estimator list must be nonempty")
    estimators = tuple(estimators)
    quantiles = tuple(float(u) for u in quantiles)
    children = np.random.SeedSequence(seed).spawn(replications)
    jobs = [(design, estimators, quantiles, ch, keep_diagnostics, first_stage) for ch in children]
    if n_jobs > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]

    res = McResult(design, estimators, quantiles, replications)
    for est in estimators:
        width = max((len(r[1][est]) for r in results if est in r[1]), default=0)
        for name_map in (r[1] for r in results):
            if est in name_map:
                res.names[est] = name_map[est]
                break
        for u in quantiles:
            arr = np.full((replications, width), np.nan)
            diag = []
            for i, (out, _, diags) in enumerate(results):
                if (est, u) in out:
                    arr[i] = out[(est, u)]
                diag.append(diags.get((est, u)))
            res.estimates[(est, u)] = arr
            if keep_diagnostics:
                res.diagnostics[(est, u)] = diag
    return res
