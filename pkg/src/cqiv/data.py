"""Observation table and second-stage regressor layout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, SpecMismatch


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` censored from below at ``c``, endogenous ``d``,
    exogenous covariates ``w`` (n x kw) and excluded instruments ``z`` (n x kz).
    """

    y: np.ndarray
    d: np.ndarray
    w: np.ndarray
    z: np.ndarray
    c: np.ndarray
    w_names: tuple = ()
    z_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.size
        d = np.asarray(self.d, dtype=float).ravel()
        w = np.asarray(self.w, dtype=float).reshape(n, -1)
        z = np.asarray(self.z, dtype=float).reshape(n, -1)
        c = np.broadcast_to(np.asarray(self.c, dtype=float), (n,)).copy()
        if d.size != n:
            raise ValueError(f"d has {d.size} entries, y has {n}")
        for name, arr in (("y", y), ("d", d), ("w", w), ("z", z), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise NonFinite(f"column block {name!r} contains non-finite values")
        if np.any(y < c - 1e-12 * (1 + np.abs(c))):
            raise ValueError("observed response lies below its censoring point")
        w_names = tuple(self.w_names) or tuple(f"w{j + 1}" for j in range(w.shape[1]))
        z_names = tuple(self.z_names) or tuple(f"z{j + 1}" for j in range(z.shape[1]))
        for attr, val in (("y", y), ("d", d), ("w", w), ("z", z), ("c", c),
                          ("w_names", w_names), ("z_names", z_names)):
            object.__setattr__(self, attr, val)

    @property
    def n(self):
        return self.y.size

    @property
    def uncensored(self):
        return self.y > self.c

    @property
    def censoring_rate(self):
        return float(np.mean(~self.uncensored))

    def first_stage_design(self):
        """R = (1, W, Z)."""
        return np.column_stack([np.ones(self.n), self.w, self.z])


@dataclass(frozen=True)
class SecondStageSpec:
    """Regressors ``x(D, W, V)``: intercept, powers of D, W columns, control term.

    ``control_transform`` is ``identity`` (enter V-hat) or ``normal_quantile``
    (enter Phi^{-1}(V-hat)).
    """

    d_powers: tuple = (1,)
    include_w: bool = True
    control_transform: str = "normal_quantile"
    intercept: bool = True

    def names(self, data: Dataset, with_control: bool):
        out = ["const"] if self.intercept else []
        out += ["d" if k == 1 else f"d{k}" for k in self.d_powers]
        if self.include_w:
            out += [f"w:{nm}" for nm in data.w_names]
        if with_control:
            out.append("v")
        return out

    def build(self, d, w, v=None):
        d = np.asarray(d, dtype=float).ravel()
        cols = [np.ones(d.size)] if self.intercept else []
        cols += [d ** k for k in self.d_powers]
        if self.include_w:
            cols.append(np.asarray(w, dtype=float).reshape(d.size, -1))
        if v is not None:
            cols.append(np.asarray(v, dtype=float).ravel())
        return np.column_stack(cols)

    def index_of(self, power):
        if power not in self.d_powers:
            raise SpecMismatch(f"second-stage spec has no D^{power} column")
        return int(self.intercept) + self.d_powers.index(power)
