"""Numerical kernels: weighted quantile regression, OLS, binary GLMs, ECDFs.

The quantile-regression solver is a primal-dual interior point method on the
bounded dual LP (Frisch-Newton with Mehrotra predictor-corrector steps).  Each
interior solution is rounded to a vertex of the LP: the ``p`` observations the
dual marks as basic are interpolated exactly and the resulting objective is
certified against the dual value.  When the certificate fails (degenerate
designs, ties) the problem is handed to a dual simplex solver.

Everything in this module is a pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse, special
from scipy.optimize import linprog

from .errors import DomainError, NonFinite, RankDeficient, Separation

RANK_TOL = 1e-10
GAP_TOL = 1e-7
TIGHT_GAP_TOL = 1e-10
OBJ_TOL = 1e-9
ETA_CAP = 30.0
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def check_loss(z, u):
    """Asymmetric absolute loss ``(u - 1{z<0}) z``; vectorised over ``z``."""
    z = np.asarray(z, dtype=float)
    return z * (u - (z < 0))


def normal_cdf(x):
    return special.ndtr(x)


def normal_quantile(q):
    q = np.asarray(q, dtype=float)
    if np.any(~((q > 0.0) & (q < 1.0))):
        raise DomainError("normal_quantile requires probabilities strictly inside (0, 1)")
    out = special.ndtri(q)
    return out if out.ndim else float(out)


def empirical_cdf_rank(values, at, mode="plain", weights=None):
    """Rank of ``at`` in the (weighted) empirical distribution of ``values``.

    ``plain``: share of mass at or below ``at``.
    ``midpoint``: ``(W_< + (W_= + wbar)/2) / (W + wbar)`` with ``wbar`` the mean
    weight; with unit weights this is ``(#< + (#= + 1)/2) / (n + 1)`` and never
    touches 0 or 1.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("values must be nonempty")
    at_arr = np.asarray(at, dtype=float)
    if weights is None:
        weights = np.ones(values.size)
    weights = np.asarray(weights, dtype=float).ravel()
    order = np.argsort(values, kind="stable")
    sv = values[order]
    cw = np.concatenate([[0.0], np.cumsum(weights[order])])
    total = cw[-1]
    lo = np.searchsorted(sv, at_arr, side="left")
    hi = np.searchsorted(sv, at_arr, side="right")
    below, upto = cw[lo], cw[hi]
    if mode == "plain":
        out = upto / total
    elif mode == "midpoint":
        wbar = total / values.size
        out = (below + 0.5 * (upto - below + wbar)) / (total + wbar)
    else:
        raise ValueError(f"unknown ECDF mode {mode!r}")
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# input validation

def _prepare(X, y, w):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if y.size != n:
        raise ValueError(f"X has {n} rows but y has {y.size} entries")
    w = np.ones(n) if w is None else np.asarray(w, dtype=float).ravel()
    if w.size != n:
        raise ValueError(f"weights have {w.size} entries, expected {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise NonFinite("design, response and weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return X, y, w


def _check_rank(X):
    n, p = X.shape
    if n < p:
        raise RankDeficient(f"{n} positively weighted rows for {p} columns")
    s = np.linalg.svd(X, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]:
        raise RankDeficient("design is collinear on its weighted support")


# ---------------------------------------------------------------------------
# quantile regression

@dataclass(frozen=True)
class QuantileFit:
    beta: np.ndarray
    u: float
    objective: float
    active_count: int
    method: str = "interior-point"


def _interior_point(X, y, taus, tol=GAP_TOL, max_iter=80, step=0.99995):
    """Batched Frisch-Newton solve of ``max y'a s.t. X'a=(1-u)X'1, 0<=a<=1``.

    Returns ``(beta, a)`` with shapes ``(G, p)`` and ``(G, n)``.
    """
    n, p = X.shape
    taus = np.asarray(taus, dtype=float)
    G = taus.size
    c = -y
    b = (1.0 - taus)[:, None] * X.sum(axis=0)[None, :]
    x = np.repeat((1.0 - taus)[:, None], n, axis=1)
    s = 1.0 - x
    yd0 = -np.linalg.solve(X.T @ X, X.T @ y)
    r = c - X @ yd0
    offset = 0.1 * (np.mean(np.abs(r)) + 1e-8)
    z = np.repeat((np.maximum(r, 0.0) + offset)[None, :], G, axis=0)
    w = np.repeat((np.maximum(-r, 0.0) + offset)[None, :], G, axis=0)
    yd = np.repeat(yd0[None, :], G, axis=0)

    active = np.arange(G)
    for _ in range(max_iter):
        xa, sa, za, wa, ya, ba = x[active], s[active], z[active], w[active], yd[active], b[active]
        gap = xa @ c - np.einsum("gp,gp->g", ba, ya) + wa.sum(axis=1)
        done = gap <= tol * (1.0 + np.abs(xa @ c))
        if np.all(done):
            break
        active = active[~done]
        xa, sa, za, wa, ya, ba = xa[~done], sa[~done], za[~done], wa[~done], ya[~done], ba[~done]

        rp = ba - xa @ X
        rd = c[None, :] - ya @ X.T - za + wa
        q = 1.0 / (za / xa + wa / sa)
        M = np.matmul((q[:, :, None] * X).transpose(0, 2, 1), X)

        def direction(rz, rw):
            v = rz / xa - rw / sa - rd
            dy = np.linalg.solve(M, (rp - (q * v) @ X)[..., None])[..., 0]
            dx = q * (dy @ X.T + v)
            dz = (rz - za * dx) / xa
            dw = (rw + wa * dx) / sa
            return dx, dy, dz, dw

        def max_step(v, dv):
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(dv < 0, -v / dv, np.inf)
            return ratio.min(axis=1)

        dx, dy, dz, dw = direction(-xa * za, -sa * wa)
        ap = np.minimum(1.0, step * np.minimum(max_step(xa, dx), max_step(sa, -dx)))
        ad = np.minimum(1.0, step * np.minimum(max_step(za, dz), max_step(wa, dw)))
        mu = np.einsum("gn,gn->g", xa, za) + np.einsum("gn,gn->g", sa, wa)
        mu_aff = (
            np.einsum("gn,gn->g", xa + ap[:, None] * dx, za + ad[:, None] * dz)
            + np.einsum("gn,gn->g", sa - ap[:, None] * dx, wa + ad[:, None] * dw)
        )
        sigma = (mu_aff / mu) ** 3
        target = (sigma * mu / (2 * n))[:, None]
        dx2, dy, dz, dw = direction(
            -xa * za - dx * dz + target, -sa * wa + dx * dw + target
        )
        ap = np.minimum(1.0, step * np.minimum(max_step(xa, dx2), max_step(sa, -dx2)))
        ad = np.minimum(1.0, step * np.minimum(max_step(za, dz), max_step(wa, dw)))
        x[active] = xa + ap[:, None] * dx2
        s[active] = sa - ap[:, None] * dx2
        yd[active] = ya + ad[:, None] * dy
        z[active] = za + ad[:, None] * dz
        w[active] = wa + ad[:, None] * dw
        stalled = np.maximum(ap, ad) < 1e-12
        if np.any(stalled):
            active = active[~stalled]
            if active.size == 0:
                break
    return -yd, x


def _pick_basis(X, order, p):
    chosen = []
    Q = np.zeros((0, X.shape[1]))
    for i in order:
        v = X[i]
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        res = v - Q.T @ (Q @ v)
        res = res - Q.T @ (Q @ res)
        nr = np.linalg.norm(res)
        if nr > 1e-9 * nv:
            Q = np.vstack([Q, res / nr])
            chosen.append(i)
            if len(chosen) == p:
                return np.array(chosen)
    return None


def _objective(X, y, w, u, beta):
    return float(np.dot(w, check_loss(y - X @ beta, u)))


def _active_count(X, y, beta):
    r = y - X @ beta
    scale = 1.0 + np.max(np.abs(y))
    return int(np.sum(np.abs(r) <= 1e-9 * scale))


def _vertex(X, y, w, u, a):
    """Round an interior dual solution to a vertex and certify it by KKT.

    At a vertex with basic rows ``h`` optimality holds iff the multipliers
    solving ``X_h' (w_h a_h) = -sum_{i not in h} w_i psi_u(r_i) x_i`` lie in
    ``[u-1, u]``.  Returns ``(beta, objective)`` or None.
    """
    p = X.shape[1]
    score = np.minimum(a, 1.0 - a)
    order = np.argsort(-score, kind="stable")
    h = _pick_basis(X, order, p)
    if h is None:
        return None
    # canonical row order: identical basic rows give bit-identical solves
    h = h[np.lexsort(np.column_stack([X[h], y[h]]).T[::-1])]
    Xh = X[h]
    try:
        beta = np.linalg.solve(Xh, y[h])
    except np.linalg.LinAlgError:
        return None
    r = y - X @ beta
    nonbasic = np.ones(r.size, dtype=bool)
    nonbasic[h] = False
    scale = 1.0 + np.max(np.abs(y))
    if np.any(np.abs(r[nonbasic]) <= 1e-11 * scale):
        return None  # degenerate vertex: leave it to the simplex solver
    psi = u - (r < 0)
    g = (w * psi * nonbasic) @ X
    try:
        mult = np.linalg.solve(Xh.T, -g) / w[h]
    except np.linalg.LinAlgError:
        return None
    tol = 1e-9
    if np.all((mult >= u - 1.0 - tol) & (mult <= u + tol)):
        return beta, float(np.dot(w, check_loss(r, u)))
    return None


def _simplex(X, y, w, u):
    n, p = X.shape
    cost = np.concatenate([np.zeros(p), u * w, (1.0 - u) * w])
    eye = sparse.identity(n, format="csr")
    A = sparse.hstack([sparse.csr_matrix(X), eye, -eye], format="csr")
    bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    res = linprog(cost, A_eq=A, b_eq=y, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise RankDeficient(f"simplex fallback failed: {res.message}")
    beta = res.x[:p]
    # re-interpolate the basic rows so the returned point is an exact vertex
    r = np.abs(y - X @ beta)
    h = _pick_basis(X, np.argsort(r, kind="stable"), p)
    if h is not None:
        cand = np.linalg.solve(X[h], y[h])
        if _objective(X, y, w, u, cand) <= _objective(X, y, w, u, beta) + 1e-12 * (1 + res.fun):
            beta = cand
    return beta


def _solve_grid(X, y, us, w):
    keep = w > 0
    Xk, yk, wk = X[keep], y[keep], w[keep]
    _check_rank(Xk)
    Xw, yw = wk[:, None] * Xk, wk * yk
    _, duals = _interior_point(Xw, yw, us)
    found = [_vertex(Xk, yk, wk, u, duals[g]) for g, u in enumerate(us)]
    retry = [g for g, got in enumerate(found) if got is None]
    if retry:
        _, tight = _interior_point(Xw, yw, us[retry], tol=TIGHT_GAP_TOL)
        for j, g in enumerate(retry):
            found[g] = _vertex(Xk, yk, wk, us[g], tight[j])
    fits = []
    for u, got in zip(us, found):
        if got is None:
            beta = _simplex(Xk, yk, wk, u)
            method = "simplex"
            obj = _objective(Xk, yk, wk, u, beta)
        else:
            beta, obj = got
            method = "interior-point"
        fits.append(QuantileFit(beta, float(u), obj, _active_count(Xk, yk, beta), method))
    return fits


def solve_weighted_qr(X, y, u, w=None):
    """Minimise ``sum_i w_i rho_u(y_i - x_i'b)`` over ``b``.

    Rows with zero weight are ignored.  The returned coefficients are a vertex
    of the LP (at least ``p`` exact-fit rows).
    """
    if not 0.0 < u < 1.0:
        raise DomainError(f"quantile index must lie in (0, 1), got {u}")
    X, y, w = _prepare(X, y, w)
    return _solve_grid(X, y, np.array([float(u)]), w)[0]


def solve_weighted_qr_grid(X, y, us, w=None):
    """Batched :func:`solve_weighted_qr` over a grid of quantile indices."""
    us = np.asarray(us, dtype=float).ravel()
    if np.any((us <= 0) | (us >= 1)):
        raise DomainError("quantile indices must lie in (0, 1)")
    X, y, w = _prepare(X, y, w)
    return _solve_grid(X, y, us, w)


# ---------------------------------------------------------------------------
# least squares

def solve_ols(X, y, w=None):
    X, y, w = _prepare(X, y, w)
    keep = w > 0
    sw = np.sqrt(w[keep])
    Xs, ys = sw[:, None] * X[keep], sw * y[keep]
    _check_rank(Xs)
    beta, *_ = np.linalg.lstsq(Xs, ys, rcond=None)
    return beta


# ---------------------------------------------------------------------------
# binary response GLMs

@dataclass(frozen=True)
class GlmFit:
    delta: np.ndarray
    link: str
    loglik: float
    converged: bool
    iterations: int = 0
    quasi_separated: bool = False

    def predict(self, X):
        return link_cdf(np.asarray(X, dtype=float) @ self.delta, self.link)


def link_cdf(eta, link):
    if link == "probit":
        return special.ndtr(eta)
    if link == "logit":
        return special.expit(eta)
    raise ValueError(f"unknown link {link!r}")


def link_quantile(p, link):
    if link == "probit":
        return special.ndtri(p)
    if link == "logit":
        return special.logit(p)
    raise ValueError(f"unknown link {link!r}")


def _glm_parts(eta, t, link):
    """Log-likelihood terms, score and negative Hessian with respect to eta."""
    q = 2.0 * t - 1.0
    if link == "probit":
        qe = q * eta
        ll = special.log_ndtr(qe)
        lam = np.exp(-0.5 * qe * qe - _LOG_SQRT_2PI - ll)
        return ll, q * lam, lam * (qe + lam)
    if link == "logit":
        ll = special.log_expit(q * eta)
        pr = special.expit(eta)
        return ll, t - pr, pr * (1 - pr)
    raise ValueError(f"unknown link {link!r}")


def fit_glm_batch(X, T, link="probit", w=None, max_iter=100, tol=1e-8):
    """Fit one binary GLM per row of ``T`` (shape ``(G, n)``) on a shared design.

    Returns ``(delta, loglik, converged, quasi, perfect, iterations)``; ``tol`` bounds the
    max-norm of the score of the weight-averaged log-likelihood.
    """
    X = np.asarray(X, dtype=float)
    T = np.atleast_2d(np.asarray(T, dtype=float))
    G, n = T.shape
    p = X.shape[1]
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    wsum = w.sum()
    delta = np.zeros((G, p))
    const = np.flatnonzero(np.all(X == 1.0, axis=0))
    if const.size:
        rate = np.clip((T * w).sum(axis=1) / wsum, 1e-6, 1 - 1e-6)
        delta[:, const[0]] = link_quantile(rate, link)
    eta = delta @ X.T
    parts = _glm_parts(eta, T, link)
    ll = (w * parts[0]).sum(axis=1)
    score, hess = parts[1], parts[2]
    converged = np.zeros(G, dtype=bool)
    iters = np.zeros(G, dtype=int)
    quasi = np.zeros(G, dtype=bool)
    perfect = np.zeros(G, dtype=bool)
    active = np.arange(G)
    pos = (T > 0.5) & (w > 0)
    neg = (T < 0.5) & (w > 0)
    for _ in range(max_iter):
        if active.size == 0:
            break
        grad = (w * score[active]) @ X
        small = np.max(np.abs(grad), axis=1) <= tol * wsum
        converged[active[small]] = True
        active = active[~small]
        if active.size == 0:
            break
        grad, ta = grad[~small], T[active]
        H = np.einsum("gn,ni,nj->gij", w * hess[active], X, X)
        H += 1e-12 * np.trace(H, axis1=1, axis2=2)[:, None, None] * np.eye(p)
        step = np.linalg.solve(H, grad[..., None])[..., 0]
        base = delta[active]
        old = ll[active]
        t_len = np.ones(active.size)
        new_delta = base + step
        new_eta = new_delta @ X.T
        new_parts = list(_glm_parts(new_eta, ta, link))
        new_ll = (w * new_parts[0]).sum(axis=1)
        for _ in range(40):
            worse = ~(new_ll >= old - 1e-12 * np.abs(old))
            if not np.any(worse):
                break
            t_len[worse] *= 0.5
            new_delta[worse] = base[worse] + t_len[worse, None] * step[worse]
            new_eta[worse] = new_delta[worse] @ X.T
            redo = _glm_parts(new_eta[worse], ta[worse], link)
            for k in range(3):
                new_parts[k][worse] = redo[k]
            new_ll[worse] = (w * redo[0]).sum(axis=1)
        delta[active], eta[active], ll[active] = new_delta, new_eta, new_ll
        score[active], hess[active] = new_parts[1], new_parts[2]
        iters[active] += 1
        # quasi-separation: one class pushed beyond the linear-predictor cap
        pa, na = pos[active], neg[active]
        up = np.all((new_eta > ETA_CAP) | ~pa, axis=1) & pa.any(axis=1)
        down = np.all((new_eta < -ETA_CAP) | ~na, axis=1) & na.any(axis=1)
        sep = up | down
        lo_pos = np.where(pa, new_eta, np.inf).min(axis=1)
        hi_neg = np.where(na, new_eta, -np.inf).max(axis=1)
        perfect[active[sep & (lo_pos > hi_neg)]] = True
        quasi[active[sep]] = True
        active = active[~sep]
    # a separating index means no finite maximiser exists, however small the score
    lo_pos = np.where(pos, eta, np.inf).min(axis=1)
    hi_neg = np.where(neg, eta, -np.inf).max(axis=1)
    perfect |= pos.any(axis=1) & neg.any(axis=1) & (lo_pos > hi_neg)
    return delta, ll, converged & ~quasi & ~perfect, quasi, perfect, iters


def fit_binary_glm(X, t, link="probit", w=None, max_iter=100, tol=1e-8):
    """Weighted Bernoulli maximum likelihood with a probit or logit link.

    Newton iterations with step-halving.  A fit whose linear predictor exceeds
    the cap of 30 in magnitude on every row of one class is stopped and flagged
    (``quasi_separated``, not converged); perfect separation raises.
    """
    X, t, w = _prepare(X, t, w)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("binary response must contain only 0 and 1")
    keep = w > 0
    _check_rank(X[keep])
    tk = t[keep]
    if tk.min() == tk.max():
        raise Separation("binary response has a single class on the weighted support")
    delta, ll, conv, quasi, perfect, iters = fit_glm_batch(X, t[None, :], link, w, max_iter, tol)
    if perfect[0]:
        raise Separation("binary response is perfectly separated by the design")
    return GlmFit(delta[0], link, float(ll[0]), bool(conv[0]), int(iters[0]), bool(quasi[0]))
