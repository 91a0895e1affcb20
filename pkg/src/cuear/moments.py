"""Moment functions g_t(beta, gamma) and the concrete model adapters.

Models are evaluated for all observations at once: ``moments`` returns an
``(n, d)`` array whose row ``t`` is g_t(beta, gamma), and the Jacobians are
``(n, d, d_gamma)`` / ``(n, d, d_beta)`` arrays.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    InsufficientSample,
    InvalidHorizon,
    MomentEvaluationError,
    OrderConditionViolated,
    UsageError,
)

DEFAULT_BOX = (-50.0, 50.0)


@dataclass(frozen=True)
class Dataset:
    """Named real series of common length plus a role -> column-names map."""

    columns: Mapping[str, np.ndarray]
    roles: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        lengths = set()
        for name, values in self.columns.items():
            arr = np.array(values, dtype=float)
            if arr.ndim != 1:
                raise UsageError(f"column {name!r} must be one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise UsageError(f"column {name!r} has non-finite entries")
            arr.setflags(write=False)
            cols[name] = arr
            lengths.add(arr.size)
        if len(lengths) > 1:
            raise UsageError(f"columns have different lengths: {sorted(lengths)}")
        if lengths and lengths.pop() < 1:
            raise InsufficientSample("dataset is empty")
        if not cols:
            raise InsufficientSample("dataset has no columns")
        roles = {k: tuple(v) for k, v in self.roles.items()}
        for role, names in roles.items():
            missing = [c for c in names if c not in cols]
            if missing:
                raise UsageError(f"role {role!r} refers to unknown columns {missing}")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "roles", roles)

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).size

    def role(self, name: str, required: bool = True) -> np.ndarray:
        """Columns assigned to ``name`` as an (n, k) matrix."""
        names = self.roles.get(name, ())
        if not names:
            if required:
                raise UsageError(f"dataset has no columns assigned to role {name!r}")
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[c] for c in names])


def read_csv(path, roles: Mapping[str, Sequence[str]]) -> Dataset:
    """Read a headed, comma-separated, UTF-8 numeric table."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InsufficientSample(f"{path}: file is empty") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UsageError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise UsageError(f"{path}: non-numeric cell in row {lineno}") from None
    if not rows:
        raise InsufficientSample(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset({h: arr[:, j] for j, h in enumerate(header)}, roles)


@dataclass(frozen=True)
class ParamPoint:
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.gamma))):
            raise UsageError("parameter point must be finite")


class MomentModel:
    """Moment function defined by vectorized callables.

    ``g(beta, gamma)`` returns (n, d); ``jac_gamma`` and ``jac_beta`` return
    (n, d, d_gamma) and (n, d, d_beta). ``box`` bounds every coordinate of
    the parameter space.
    """

    def __init__(
        self,
        g: Callable,
        jac_gamma: Callable,
        jac_beta: Callable,
        d: int,
        d_beta: int,
        d_gamma: int,
        n: int,
        linear_in_gamma: bool = False,
        first_step_weight: np.ndarray | None = None,
        box: tuple[float, float] = DEFAULT_BOX,
        name: str = "custom",
    ):
        if d - d_gamma <= 0:
            raise OrderConditionViolated(f"need d - d_gamma > 0 (d={d}, d_gamma={d_gamma})")
        self._g, self._jg, self._jb = g, jac_gamma, jac_beta
        self.d, self.d_beta, self.d_gamma, self.n = d, d_beta, d_gamma, n
        self.linear_in_gamma = linear_in_gamma
        self.first_step_weight = first_step_weight
        self.box = box
        self.name = name

    def moments(self, beta, gamma) -> np.ndarray:
        return np.asarray(self._g(np.atleast_1d(beta), np.atleast_1d(gamma)), dtype=float)

    def jac_gamma(self, beta, gamma) -> np.ndarray:
        return np.asarray(self._jg(np.atleast_1d(beta), np.atleast_1d(gamma)), dtype=float)

    def jac_beta(self, beta, gamma) -> np.ndarray:
        return np.asarray(self._jb(np.atleast_1d(beta), np.atleast_1d(gamma)), dtype=float)

    def eval_g(self, t: int, beta, gamma) -> np.ndarray:
        return self.moments(beta, gamma)[t]

    @property
    def df(self) -> int:
        return self.d - self.d_gamma


class AffineMomentModel(MomentModel):
    """g_t(beta, gamma) = a_t + B_t beta + C_t gamma with constant Jacobians."""

    def __init__(self, a, jb, jg, first_step_weight=None, box=DEFAULT_BOX, name="affine",
                 check_order=True):
        a = np.asarray(a, dtype=float)
        jb = np.asarray(jb, dtype=float).reshape(a.shape + (-1,))
        jg = np.asarray(jg, dtype=float).reshape(a.shape + (-1,))
        n, d = a.shape
        if check_order and d - jg.shape[2] <= 0:
            raise OrderConditionViolated(f"need d - d_gamma > 0 (d={d}, d_gamma={jg.shape[2]})")
        self.a, self.jb, self.jg = a, jb, jg
        self.d, self.n = d, n
        self.d_beta, self.d_gamma = jb.shape[2], jg.shape[2]
        self.linear_in_gamma = True
        self.first_step_weight = first_step_weight
        self.box = box
        self.name = name

    def moments(self, beta, gamma):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        return self.a + self.jb @ beta + self.jg @ gamma

    def offset(self, beta) -> np.ndarray:
        """Moments at gamma = 0 for the given beta."""
        return self.a + self.jb @ np.atleast_1d(np.asarray(beta, dtype=float))

    def jac_gamma(self, beta=None, gamma=None):
        return self.jg

    def jac_beta(self, beta=None, gamma=None):
        return self.jb

    def reparametrize(self, beta_index: Sequence[int]) -> "AffineMomentModel":
        """Treat theta[beta_index] as the tested block and the rest of theta as nuisance.

        theta is (beta', gamma')'; the new nuisance is ordered as the
        remaining beta components followed by gamma.
        """
        full = np.concatenate([self.jb, self.jg], axis=2)
        idx = list(beta_index)
        rest = [j for j in range(full.shape[2]) if j not in idx]
        return AffineMomentModel(
            self.a, full[:, :, idx], full[:, :, rest],
            first_step_weight=self.first_step_weight, box=self.box,
            name=f"{self.name}[beta={idx}]", check_order=False,
        )


def average_moments(model: MomentModel, point: ParamPoint) -> np.ndarray:
    """Sample average n^{-1} sum_t g_t(beta, gamma)."""
    g = model.moments(point.beta, point.gamma)
    if g.shape[0] < 1:
        raise InsufficientSample("no observations")
    bad = ~np.all(np.isfinite(g), axis=1)
    if np.any(bad):
        t = int(np.argmax(bad))
        raise MomentEvaluationError(f"non-finite moment at observation {t}", t=t)
    return g.mean(axis=0)


def _instrument_weight(z: np.ndarray, dq: int = 1) -> np.ndarray:
    zz = z.T @ z / z.shape[0]
    return np.kron(np.eye(dq), np.linalg.pinv(zz))


def make_linear_iv_model(data: Dataset, box=DEFAULT_BOX) -> AffineMomentModel:
    """g_t = (y_t - x_t beta - w_t' gamma) z_t."""
    y = data.role("y")[:, 0]
    x = data.role("x")
    if x.shape[1] != 1:
        raise UsageError("linear IV model takes a univariate x")
    w, z = data.role("w"), data.role("z")
    if w.shape[1] < 1:
        raise UsageError("linear IV model needs at least one w column")
    if z.shape[1] <= w.shape[1]:
        raise OrderConditionViolated(f"need d_z > d_w (d_z={z.shape[1]}, d_w={w.shape[1]})")
    a = y[:, None] * z
    jb = -(z * x)[:, :, None]
    jg = -z[:, :, None] * w[:, None, :]
    return AffineMomentModel(a, jb, jg, first_step_weight=_instrument_weight(z), box=box,
                             name="linear-iv")


class InstrumentSet(str, enum.Enum):
    LAGS3 = "lags3"        # [pi_{t-1}, x_{t-1}, pi_{t-2}, x_{t-2}, pi_{t-3}, x_{t-3}]
    XLAGS = "xlags"        # [x_{t-1}, x_{t-2}]
    XLAGS_TEXT = "xlags-text"  # [x_t, x_{t-1}]

    @property
    def max_lag(self) -> int:
        return {"lags3": 3, "xlags": 2, "xlags-text": 1}[self.value]


def nkpc_instruments(pi: np.ndarray, x: np.ndarray, instrument_set: InstrumentSet):
    """Instrument matrix and index range of usable t (all lags and the lead exist)."""
    inst = InstrumentSet(instrument_set)
    T = pi.size
    L = inst.max_lag
    if T < L + 2:
        raise InsufficientSample(f"series of length {T} too short for {inst.value} (needs {L + 2})")
    t = np.arange(L, T - 1)
    if inst is InstrumentSet.LAGS3:
        cols = []
        for lag in (1, 2, 3):
            cols += [pi[t - lag], x[t - lag]]
    elif inst is InstrumentSet.XLAGS:
        cols = [x[t - 1], x[t - 2]]
    else:
        cols = [x[t], x[t - 1]]
    return np.column_stack(cols), t


def make_nkpc_model(data: Dataset, instrument_set=InstrumentSet.XLAGS, box=DEFAULT_BOX):
    """g_t = z_t (pi_t - lambda x_t - gamma_f pi_{t+1}); beta = gamma_f, gamma = lambda.

    Uses role ``y`` for inflation and ``x`` for the output gap.
    """
    pi = data.role("y")[:, 0]
    x = data.role("x")[:, 0]
    z, t = nkpc_instruments(pi, x, instrument_set)
    a = pi[t][:, None] * z
    jb = -(pi[t + 1][:, None] * z)[:, :, None]
    jg = -(x[t][:, None] * z)[:, :, None]
    return AffineMomentModel(a, jb, jg, first_step_weight=_instrument_weight(z), box=box,
                             name=f"nkpc-{InstrumentSet(instrument_set).value}")


def make_local_projection_model(data: Dataset, horizon: int, box=DEFAULT_BOX):
    """Stacked LP-IV moments g_t = q_t kron z_t over horizons 0..H.

    beta = (beta(0), ..., beta(H)), gamma = (gamma(0)', ..., gamma(H)')'.
    """
    if horizon < 0:
        raise InvalidHorizon(f"horizon must be >= 0, got {horizon}")
    y = data.role("y")[:, 0]
    x = data.role("x")
    if x.shape[1] != 1:
        raise UsageError("local projection model takes a univariate x")
    x = x[:, 0]
    w, z = data.role("w"), data.role("z")
    H1 = horizon + 1
    n = data.n - horizon
    if n < 1:
        raise InsufficientSample(f"{data.n} observations cannot cover horizon {horizon}")
    dz, dw = z.shape[1], w.shape[1]
    d = H1 * dz
    if d - H1 * dw <= 0:
        raise OrderConditionViolated(f"need d_z > d_w (d_z={dz}, d_w={dw})")
    Y = np.column_stack([y[h:h + n] for h in range(H1)])
    x, w, z = x[:n], w[:n], z[:n]
    a = (Y[:, :, None] * z[:, None, :]).reshape(n, d)
    eye = np.eye(H1)
    # d g_{h,k} / d beta_j = -x_t z_k [h == j]
    jb = -(eye[None, :, None, :] * (x[:, None] * z)[:, None, :, None]).reshape(n, d, H1)
    # d g_{h,k} / d gamma_{j,m} = -w_m z_k [h == j]
    zw = z[:, :, None] * w[:, None, :]
    jg = -(eye[None, :, None, :, None] * zw[:, None, :, None, :]).reshape(n, d, H1 * dw)
    return AffineMomentModel(a, jb, jg, first_step_weight=_instrument_weight(z, H1), box=box,
                             name=f"local-projection-H{horizon}")


class ReparametrizedModel(MomentModel):
    """View of ``base`` with theta[beta_index] tested and the rest of theta as nuisance."""

    def __init__(self, base: MomentModel, beta_index: Sequence[int]):
        self.base = base
        p = base.d_beta + base.d_gamma
        self.beta_index = list(beta_index)
        self.rest_index = [j for j in range(p) if j not in self.beta_index]
        self.d, self.n = base.d, base.n
        self.d_beta, self.d_gamma = len(self.beta_index), len(self.rest_index)
        self.linear_in_gamma = base.linear_in_gamma
        self.first_step_weight = base.first_step_weight
        self.box = base.box
        self.name = f"{base.name}[beta={self.beta_index}]"

    def _theta(self, beta, gamma):
        theta = np.empty(self.base.d_beta + self.base.d_gamma)
        theta[self.beta_index] = np.atleast_1d(beta)
        theta[self.rest_index] = np.atleast_1d(gamma)
        return theta[: self.base.d_beta], theta[self.base.d_beta:]

    def _full_jac(self, beta, gamma):
        b, c = self._theta(beta, gamma)
        return np.concatenate([self.base.jac_beta(b, c), self.base.jac_gamma(b, c)], axis=2)

    def moments(self, beta, gamma):
        return self.base.moments(*self._theta(beta, gamma))

    def jac_gamma(self, beta, gamma):
        return self._full_jac(beta, gamma)[:, :, self.rest_index]

    def jac_beta(self, beta, gamma):
        return self._full_jac(beta, gamma)[:, :, self.beta_index]


def reparametrize(model: MomentModel, beta_index: Sequence[int]) -> MomentModel:
    if isinstance(model, AffineMomentModel):
        return model.reparametrize(beta_index)
    return ReparametrizedModel(model, beta_index)
