"""Censored quantile instrumental variable estimator.

For each quantile index ``u`` the estimator

0. fits a control variable ``V-hat`` from the first stage and forms the
   regressors ``X-hat = x(D, W, V-hat)``;
1. fits a binary model for ``P(Y > C | X-hat, C)`` and keeps ``J0``, the
   observations whose fitted uncensoring probability clears ``1 - u`` by a
   margin ``k0`` chosen to drop the lowest ``q0`` percent of the candidates;
2. runs quantile regression on ``J0``;
3. keeps ``J1 = {X-hat'b > C + s1}`` with ``s1`` the ``q1``-th percentile of
   the positive slack, and re-runs quantile regression on ``J1``;
4. optionally repeats step 3 with the newest coefficients.

The censored (Powell) check loss on the full sample is recorded after every
step; iteration stops once it increases, and the coefficients with the lowest
objective are reported.  Switching the control off gives censored QR (cqr);
switching the censoring correction off gives qiv (with a control) or plain QR.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import numkit
from .control import ControlFunction, FirstStageSpec, fit_control
from .data import Dataset, SecondStageSpec
from .errors import EmptySelection, NotFitted, SpecMismatch


@dataclass(frozen=True)
class CqivConfig:
    u: float = 0.5
    control_method: str | None = "qr"
    censoring_correction: bool = True
    second_stage: SecondStageSpec = field(default_factory=SecondStageSpec)
    first_stage: FirstStageSpec = field(default_factory=FirstStageSpec)
    selector_link: str = "probit"
    q0: float = 10.0
    q1: float = 3.0
    max_extra_iterations: int = 5
    retain_best_by_powell: bool = True

    def __post_init__(self):
        if not 0.0 < self.u < 1.0:
            raise ValueError(f"quantile index must lie in (0, 1), got {self.u}")
        if not 0.0 <= self.q1 < self.q0 < 100.0:
            raise ValueError(f"need 0 <= q1 < q0 < 100, got q0={self.q0}, q1={self.q1}")
        if self.control_method not in (None, "ols", "qr", "dr"):
            raise ValueError(f"unknown control method {self.control_method!r}")
        if self.selector_link not in ("probit", "logit"):
            raise ValueError(f"unknown selector link {self.selector_link!r}")
        if self.max_extra_iterations < 0:
            raise ValueError("max_extra_iterations must be nonnegative")

    def at(self, u):
        return replace(self, u=u)

    @property
    def label(self):
        if self.censoring_correction:
            return "cqr" if self.control_method is None else f"cqiv-{self.control_method}"
        return "qr" if self.control_method is None else f"qiv-{self.control_method}"


@dataclass(frozen=True, eq=False)
class StepRecord:
    """One estimation step.  The sample it used is ``{S'rule_coef - offset > cutoff}``
    where ``S`` is the regressor matrix (plus C for the Step-1 probit) and the offset
    is C for the slack rule; ``rule_coef`` None means every observation."""

    step: int
    beta: np.ndarray
    selected: np.ndarray
    cutoff: float | None
    powell: float
    rule_coef: np.ndarray | None = None

    def reselect(self, X, c, w=None):
        """Apply this step's selection rule to new regressors ``X``."""
        n = X.shape[0]
        keep = np.ones(n, dtype=bool) if w is None else np.asarray(w) > 0
        if self.rule_coef is None:
            return keep
        c = np.broadcast_to(np.asarray(c, dtype=float), (n,))
        if self.step == 2:
            index = selector_design(X, c) @ self.rule_coef
        else:
            index = X @ self.rule_coef - c
        return keep & (index > self.cutoff)


@dataclass(frozen=True)
class StepDiagnostics:
    """Selector diagnostics after steps 1-3 (percentages of the full sample)."""

    k0: float
    varsigma1: float
    pct_J0: float
    pct_J1: float
    pct_pred_above_C: float
    pct_J0_in_J1: float
    count_J1_not_in_J0: int
    powell_objective: tuple


@dataclass(frozen=True, eq=False)
class CqivFit:
    u: float
    beta: np.ndarray
    names: list
    steps: list
    selected_step: int
    diagnostics: StepDiagnostics | None
    control: ControlFunction | None
    config: CqivConfig
    X: np.ndarray
    n_w: int

    @property
    def selected(self):
        return self.steps[self.selected_step].selected

    @property
    def varsigma1(self):
        return None if self.diagnostics is None else self.diagnostics.varsigma1

    @property
    def powell(self):
        return self.steps[self.selected_step].powell

    def coef(self, name):
        return float(self.beta[self.names.index(name)])


# ---------------------------------------------------------------------------

def regressors(data: Dataset, cfg: CqivConfig, cf: ControlFunction | None):
    v = None if cf is None else cf.evaluate(data.d, data.first_stage_design())
    return cfg.second_stage.build(data.d, data.w, v)


def fit_step0(data: Dataset, cfg: CqivConfig, w=None):
    if cfg.control_method is None:
        return None
    return fit_control(cfg.control_method, data, cfg.first_stage, w,
                       transform=cfg.second_stage.control_transform)


def powell_objective(beta, X, data: Dataset, u, w=None):
    """Weight-averaged censored check loss ``rho_u(Y - max(X'b, C))``."""
    if X is None:
        raise NotFitted("regressors unavailable: fit the control variable first")
    pred = np.maximum(np.asarray(X) @ np.asarray(beta), data.c)
    loss = numkit.check_loss(data.y - pred, u)
    if w is None:
        return float(loss.mean())
    w = np.asarray(w, dtype=float)
    return float(np.dot(w, loss) / w.sum())


def selector_design(X, c):
    c = np.asarray(c, dtype=float)
    if np.ptp(c) == 0.0:
        return X
    return np.column_stack([X, c])


def select_J0(data: Dataset, X, cfg: CqivConfig, w=None):
    """Step 1.  Returns ``(mask, k0, glm, threshold)``; ``glm`` is None without
    censoring, ``threshold`` is on the linear-index scale."""
    t = data.uncensored
    pos = np.ones(data.n, dtype=bool) if w is None else np.asarray(w) > 0
    if t[pos].all():
        return pos.copy(), 0.0, None, None
    if not t[pos].any():
        raise EmptySelection("every observation is censored")
    S = selector_design(X, data.c)
    glm = numkit.fit_binary_glm(S, t.astype(float), cfg.selector_link, w)
    eta = S @ glm.delta
    # percentile taken on the index scale: Phi(eta) saturates at 1.0 in float64
    cut = numkit.link_quantile(1.0 - cfg.u, cfg.selector_link)
    cand = (eta > cut) & pos
    if not cand.any():
        raise EmptySelection(
            f"no observation has fitted uncensoring probability above 1-u={1 - cfg.u:.3f} "
            f"(censoring rate {100 * data.censoring_rate:.1f}%); choose a higher quantile"
        )
    thr = np.percentile(eta[cand], cfg.q0)
    J0 = (eta > thr) & pos
    if not J0.any():
        raise EmptySelection("J0 is empty after removing the q0 share of candidates")
    k0 = float(numkit.link_cdf(thr, cfg.selector_link) - (1.0 - cfg.u))
    return J0, k0, glm, float(thr)


def select_J_next(beta_prev, data: Dataset, X, q1, w=None):
    """Step 2 selector.  Returns ``(mask, varsigma)``."""
    slack = np.asarray(X) @ np.asarray(beta_prev) - data.c
    pos = slack > 0
    if w is not None:
        pos &= np.asarray(w) > 0
    if not pos.any():
        raise EmptySelection(
            f"no observation is predicted above its censoring point "
            f"(censoring rate {100 * data.censoring_rate:.1f}%)"
        )
    varsigma = float(np.percentile(slack[pos], q1))
    J = pos & (slack > varsigma)
    if not J.any():
        raise EmptySelection("selection above C + varsigma is empty")
    return J, varsigma


def _qr(X, data, mask, u, w):
    wj = None if w is None else np.asarray(w)[mask]
    return numkit.solve_weighted_qr(X[mask], data.y[mask], u, wj).beta


def fit_cqiv(data: Dataset, cfg: CqivConfig, w=None, control: ControlFunction | None = None):
    """Run the full algorithm at ``cfg.u``.

    ``control`` may carry a pre-fitted first stage (shared across quantiles);
    otherwise Step 0 is run here under the weights ``w``.
    """
    cf = control if control is not None else fit_step0(data, cfg, w)
    X = regressors(data, cfg, cf)
    names = cfg.second_stage.names(data, cf is not None)
    u = cfg.u
    everyone = np.ones(data.n, dtype=bool) if w is None else np.asarray(w) > 0

    if not cfg.censoring_correction:
        beta = _qr(X, data, everyone, u, w)
        rec = StepRecord(0, beta, everyone, None, powell_objective(beta, X, data, u, w))
        return CqivFit(u, beta, names, [rec], 0, None, cf, cfg, X, data.w.shape[1])

    J0, k0, glm, thr = select_J0(data, X, cfg, w)
    beta0 = _qr(X, data, J0, u, w)
    steps = [StepRecord(2, beta0, J0, thr, powell_objective(beta0, X, data, u, w),
                        None if glm is None else glm.delta)]
    J1 = None
    varsigma1 = np.nan
    prev = beta0
    for k in range(1 + cfg.max_extra_iterations):
        J, vs = select_J_next(prev, data, X, cfg.q1, w)
        if k == 0:
            J1, varsigma1 = J, vs
        elif np.array_equal(J, steps[-1].selected):
            break
        beta = _qr(X, data, J, u, w)
        steps.append(StepRecord(3 + k, beta, J, vs, powell_objective(beta, X, data, u, w), prev))
        if steps[-1].powell > steps[-2].powell:
            break
        prev = beta

    if cfg.retain_best_by_powell:
        objs = np.array([s.powell for s in steps])
        # ties go to the later (larger-sample) step
        sel = int(len(objs) - 1 - np.argmin(objs[::-1]))
    else:
        sel = len(steps) - 1

    above = X @ beta0 > data.c
    n = data.n
    diag = StepDiagnostics(
        k0=k0,
        varsigma1=varsigma1,
        pct_J0=100.0 * J0.sum() / n,
        pct_J1=100.0 * J1.sum() / n,
        pct_pred_above_C=100.0 * above.sum() / n,
        pct_J0_in_J1=100.0 * (J0 & J1).sum() / J0.sum(),
        count_J1_not_in_J0=int((J1 & ~J0).sum()),
        powell_objective=tuple(s.powell for s in steps),
    )
    return CqivFit(u, steps[sel].beta, names, steps, sel, diag, cf, cfg, X, data.w.shape[1])


def fit_cqiv_path(data: Dataset, cfg: CqivConfig, quantiles, w=None):
    """Independent fits at several quantiles sharing one Step-0 control fit."""
    cf = fit_step0(data, cfg, w)
    return [fit_cqiv(data, cfg.at(u), w, control=cf) for u in quantiles]


# ---------------------------------------------------------------------------
# functionals

def predict_quantile(fit: CqivFit, d, wz_row, c=-np.inf, v=None):
    """``max(x(d, w, V)'b, c)``; V is evaluated from the first stage unless the
    untransformed control value ``v`` is given."""
    if fit is None or fit.beta is None:
        raise NotFitted("no fitted coefficients")
    d = np.atleast_1d(np.asarray(d, dtype=float))
    wz = np.asarray(wz_row, dtype=float).ravel()
    w_row = np.broadcast_to(wz[: fit.n_w], (d.size, fit.n_w))
    vt = None
    if fit.control is not None:
        if v is None:
            R = np.column_stack([np.ones(d.size), np.broadcast_to(wz, (d.size, wz.size))])
            vt = fit.control.evaluate(d, R)
        else:
            vv = np.full(d.size, float(v))
            vt = numkit.normal_quantile(vv) if fit.control.transform == "normal_quantile" else vv
    elif v is not None:
        raise SpecMismatch("fit has no control term; v must not be given")
    x = fit.config.second_stage.build(d, w_row, vt)
    out = np.maximum(x @ fit.beta, c)
    return out if out.size > 1 else float(out[0])


def elasticity_rows(beta, X, d, c, d_index, dsq_index=None):
    beta = np.asarray(beta)
    active = X @ beta > c
    slope = beta[d_index] if dsq_index is None else beta[d_index] + 2.0 * beta[dsq_index] * d
    return active * slope


def elasticity_indices(spec: SecondStageSpec):
    """Positions of the D and D^2 coefficients; SpecMismatch if either is absent."""
    return spec.index_of(1), spec.index_of(2)


def quantile_elasticity(fit: CqivFit, data: Dataset, d_index=None, dsq_index=None):
    """Average and per-row ``1{x'b > c} (b_d + 2 b_dd d)``."""
    if d_index is None:
        d_index, dsq_index = elasticity_indices(fit.config.second_stage)
    rows = elasticity_rows(fit.beta, fit.X, data.d, data.c, d_index, dsq_index)
    return float(rows.mean()), rows
