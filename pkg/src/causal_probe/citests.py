"""Conditional-independence tests behind one interface.

Three tests are provided:

* :func:`fisher_z` - partial correlation with Fisher's z transform.
* :func:`kcit` - kernel conditional independence test with Gaussian kernels,
  median-heuristic bandwidths and a gamma approximation to the null.
* :func:`oracle_test` - exact d-separation in a known DAG.

The stateful wrappers (:class:`FisherZTest`, :class:`KcitTest`,
:class:`OracleTest`) bind a data source, cache results per query and are what
the FCI engine consumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist

from .data import FeatureTable, standardize
from .errors import (
    DegenerateKernel,
    SingularCovariance,
    TooFewRows,
    UnknownNode,
    ValidationError,
)
from .graph import Dag, d_separated


@dataclass(frozen=True)
class CiResult:
    statistic: float
    p_value: float
    independent: bool


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")


def _result(stat, p, alpha):
    p = float(min(max(p, 0.0), 1.0))
    return CiResult(float(stat), p, bool(p > alpha))


def _canonical(table, x, y, z):
    """Order (x, y) by column position so every test is exactly symmetric."""
    z = tuple(z)
    if x == y:
        raise ValidationError("x and y must be distinct columns")
    if x in z or y in z:
        raise ValidationError("x and y must not appear in the conditioning set")
    if len(set(z)) != len(z):
        raise ValidationError("conditioning set has repeated columns")
    if table.index_of(x) > table.index_of(y):
        x, y = y, x
    return x, y, z


# ---------------------------------------------------------------------------
# Fisher z

def partial_correlation(cov, i=0, j=1, cond=()):
    """Partial correlation of ``i`` and ``j`` given ``cond`` from a covariance matrix.

    Uses the Schur complement, so only the conditioning block is inverted.
    """
    cov = np.asarray(cov, dtype=float)
    cond = list(cond)
    idx = [i, j]
    s = cov[np.ix_(idx, idx)]
    if cond:
        szz = cov[np.ix_(cond, cond)]
        sxz = cov[np.ix_(idx, cond)]
        if np.linalg.cond(szz) > 1e12:
            raise SingularCovariance("conditioning covariance block is singular")
        s = s - sxz @ np.linalg.solve(szz, sxz.T)
    vx, vy = s[0, 0], s[1, 1]
    scale = max(abs(cov[i, i]), abs(cov[j, j]), 1e-300)
    if vx <= 1e-12 * scale or vy <= 1e-12 * scale:
        raise SingularCovariance("a tested variable is determined by the conditioning set")
    rho = 0.5 * (s[0, 1] + s[1, 0]) / math.sqrt(vx * vy)
    return float(min(max(rho, -1.0), 1.0))


def fisher_z(table: FeatureTable, x, y, z=(), alpha=0.05):
    """Fisher-z test of ``x _||_ y | z`` on a Gaussian-ish table."""
    _check_alpha(alpha)
    x, y, z = _canonical(table, x, y, z)
    n = table.n_rows
    dof = n - len(z) - 3
    if dof <= 0:
        raise TooFewRows(f"fisher_z needs more than {len(z) + 3} rows, got {n}")
    data = table.columns([x, y, *z])
    cov = np.cov(data, rowvar=False)
    rho = partial_correlation(cov, 0, 1, range(2, 2 + len(z)))
    rho = min(max(rho, -1.0 + 1e-15), 1.0 - 1e-15)
    stat = math.sqrt(dof) * math.atanh(rho)
    p = 2.0 * stats.norm.sf(abs(stat))
    return _result(stat, p, alpha)


# ---------------------------------------------------------------------------
# KCIT

@dataclass(frozen=True)
class KcitParams:
    """Tuning knobs for :func:`kcit`.

    ``epsilon`` is the kernel-ridge regulariser applied after scaling the
    centred conditioning kernel to trace n. ``lowrank_tol`` bounds the largest
    diagonal residual of the pivoted Cholesky kernel factorisation.
    """

    epsilon: float = 1e-3
    null: str = "gamma"
    n_permutations: int = 200
    seed: int = 0
    lowrank_tol: float = 1e-8

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError("kcit epsilon must be positive")
        if self.null not in ("gamma", "permutation"):
            raise ValidationError(f"kcit null must be 'gamma' or 'permutation', got {self.null!r}")
        if self.n_permutations < 1:
            raise ValidationError("n_permutations must be positive")
        if not 0 < self.lowrank_tol < 1:
            raise ValidationError("lowrank_tol must be in (0, 1)")


def median_bandwidth(x):
    """Median pairwise Euclidean distance between rows of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = pdist(x)
    med = float(np.median(d)) if d.size else 0.0
    if not med > 0.0:
        raise DegenerateKernel("median pairwise distance is zero")
    return med


def gaussian_gram(x, sigma):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def gaussian_factor(x, sigma, tol=1e-8):
    """Pivoted incomplete Cholesky factor ``G`` with ``G @ G.T ~= K``.

    Stops once every diagonal entry of ``K - G G^T`` is below ``tol``; since
    the residual is positive semi-definite, every entry is then below ``tol``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    diag = np.ones(n)
    cols = []
    g = np.zeros((n, min(n, 64)))
    k = 0
    while k < n:
        i = int(np.argmax(diag))
        if diag[i] <= tol:
            break
        if k == g.shape[1]:
            g = np.hstack([g, np.zeros((n, min(n - k, g.shape[1])))])
        d2 = np.sum((x - x[i]) ** 2, axis=1)
        col = np.exp(-d2 * inv2s2) - g[:, :k] @ g[i, :k]
        col /= math.sqrt(diag[i])
        g[:, k] = col
        diag -= col * col
        diag[i] = 0.0
        cols.append(i)
        k += 1
    return g[:, :k]


def _kernel_features(x, tol):
    f = gaussian_factor(x, median_bandwidth(x), tol)
    return f - f.mean(axis=0)


def _residualizer(fz, epsilon):
    """Return a function applying ``R = eps (Kz + eps I)^-1`` to a feature matrix.

    ``fz`` are centred features of the conditioning kernel. The kernel is
    rescaled to trace n first; Woodbury turns the n x n inverse into an r x r one.
    """
    n = fz.shape[0]
    tr = float(np.sum(fz * fz))
    if tr <= 0.0:
        raise DegenerateKernel("conditioning kernel is zero after centring")
    psi = fz * math.sqrt(n / tr)
    core = psi.T @ psi + epsilon * np.eye(psi.shape[1])
    chol = np.linalg.cholesky(core)

    def apply(f):
        w = np.linalg.solve(chol.T, np.linalg.solve(chol, psi.T @ f))
        return f - psi @ w

    return apply


def _gamma_sf(stat, mean, var):
    if mean <= 0.0 or var <= 0.0:
        return 1.0
    shape = mean * mean / var
    scale = var / mean
    return float(stats.gamma.sf(stat, shape, scale=scale))


def _kcit_core(fx, fy, fz, params, n):
    """Statistic and p-value from centred kernel features."""
    if fz is None:
        a, b = fx, fy
    else:
        r = _residualizer(fz, params.epsilon)
        a, b = r(fx), r(fy)
    stat = float(np.sum((a.T @ b) ** 2)) / n
    if params.null == "permutation":
        rng = np.random.default_rng(params.seed)
        exceed = 0
        for _ in range(params.n_permutations):
            perm = rng.permutation(n)
            if float(np.sum((a.T @ b[perm]) ** 2)) / n >= stat:
                exceed += 1
        return stat, (exceed + 1.0) / (params.n_permutations + 1.0)
    if fz is None:
        tr_x, tr_y = float(np.sum(a * a)), float(np.sum(b * b))
        fro_x = float(np.sum((a.T @ a) ** 2))
        fro_y = float(np.sum((b.T @ b) ** 2))
        mean = tr_x * tr_y / n ** 2
        var = 2.0 * fro_x * fro_y / n ** 4
    else:
        kx = a @ a.T
        ky = b @ b.T
        mean = float(np.dot(np.diag(kx), np.diag(ky))) / n
        var = 2.0 * float(np.sum((kx * ky) ** 2)) / n ** 2
    return stat, _gamma_sf(stat, mean, var)


def kcit(table: FeatureTable, x, y, z=(), alpha=0.05, params: KcitParams | None = None):
    """Kernel conditional independence test of ``x _||_ y | z``.

    The tested columns are standardised internally, so the result does not
    depend on location or scale of the inputs.
    """
    _check_alpha(alpha)
    params = params or KcitParams()
    x, y, z = _canonical(table, x, y, z)
    n = table.n_rows
    if n < 10:
        raise TooFewRows(f"kcit needs at least 10 rows, got {n}")
    std = standardize(table.select([x, y, *z]))
    v = std.values
    fx = _kernel_features(v[:, 0], params.lowrank_tol)
    fy = _kernel_features(v[:, 1], params.lowrank_tol)
    fz = _kernel_features(v[:, 2:], params.lowrank_tol) if z else None
    stat, p = _kcit_core(fx, fy, fz, params, n)
    return _result(stat, p, alpha)


# ---------------------------------------------------------------------------
# d-separation oracle

def oracle_test(dag: Dag, x, y, z=(), alpha=0.05):
    """Exact test: independent iff d-separated in ``dag`` (latents included)."""
    for v in (x, y, *z):
        dag.index(v)
        if dag.is_latent(v):
            raise UnknownNode(f"{v!r} is latent and cannot be tested")
    sep = d_separated(dag, x, y, z)
    return CiResult(0.0 if sep else 1.0, 1.0 if sep else 0.0, sep)


# ---------------------------------------------------------------------------
# stateful wrappers

class CiTest:
    """Cached CI test over a fixed set of named variables.

    Subclasses implement :meth:`_run`. Calls are symmetric in ``x`` and ``y``
    and memoised on ``(pair, conditioning set)``.
    """

    name = "abstract"

    def __init__(self, variables: Sequence[str], alpha=0.05):
        _check_alpha(alpha)
        self.variables = tuple(variables)
        self.alpha = alpha
        self._pos = {v: i for i, v in enumerate(self.variables)}
        self._cache = {}
        self.n_calls = 0

    def test(self, x, y, z=()):
        for v in (x, y, *z):
            if v not in self._pos:
                raise UnknownNode(f"unknown variable {v!r}")
        if self._pos[x] > self._pos[y]:
            x, y = y, x
        z = tuple(sorted(z, key=self._pos.__getitem__))
        key = (x, y, z)
        hit = self._cache.get(key)
        if hit is None:
            self.n_calls += 1
            hit = self._run(x, y, z)
            self._cache[key] = hit
        return hit

    __call__ = test

    def _run(self, x, y, z):
        raise NotImplementedError


class FisherZTest(CiTest):
    name = "fisherz"

    def __init__(self, table: FeatureTable, alpha=0.05, variables=None):
        super().__init__(variables or table.column_names, alpha)
        self.table = table

    def _run(self, x, y, z):
        return fisher_z(self.table, x, y, z, self.alpha)


class KcitTest(CiTest):
    """KCIT with kernel factors cached per column set.

    The whole table is standardised once up front.
    """

    name = "kcit"

    def __init__(self, table: FeatureTable, alpha=0.05, params: KcitParams | None = None,
                 variables=None):
        variables = tuple(variables or table.column_names)
        super().__init__(variables, alpha)
        if table.n_rows < 10:
            raise TooFewRows(f"kcit needs at least 10 rows, got {table.n_rows}")
        self.params = params or KcitParams()
        self.table = standardize(table.select(variables))
        self._features = {}

    def _feat(self, cols):
        f = self._features.get(cols)
        if f is None:
            f = _kernel_features(self.table.columns(cols), self.params.lowrank_tol)
            self._features[cols] = f
        return f

    def _run(self, x, y, z):
        fz = self._feat(z) if z else None
        stat, p = _kcit_core(self._feat((x,)), self._feat((y,)), fz, self.params,
                             self.table.n_rows)
        return _result(stat, p, self.alpha)


class OracleTest(CiTest):
    name = "oracle"

    def __init__(self, dag: Dag, alpha=0.05, variables=None):
        super().__init__(variables or dag.observed, alpha)
        self.dag = dag

    def _run(self, x, y, z):
        return oracle_test(self.dag, x, y, z, self.alpha)


TEST_NAMES = ("fisherz", "kcit", "oracle")


def make_test(name, table=None, alpha=0.05, dag=None, variables=None, kcit_params=None):
    """Build a :class:`CiTest` from its command-line name."""
    if name == "fisherz":
        if table is None:
            raise ValidationError("fisherz needs a data table")
        return FisherZTest(table, alpha, variables)
    if name == "kcit":
        if table is None:
            raise ValidationError("kcit needs a data table")
        return KcitTest(table, alpha, kcit_params, variables)
    if name == "oracle":
        if dag is None:
            raise ValidationError("oracle test needs a ground-truth DAG")
        return OracleTest(dag, alpha, variables)
    raise ValidationError(f"unknown test {name!r}; choose from {TEST_NAMES}")
