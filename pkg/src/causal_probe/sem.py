"""Structural equation models: specification, estimation and fit indices.

Measurement part ``x = Lambda eta + eps`` and structural part
``eta = B eta + zeta`` give the implied covariance

    Sigma(theta) = Lambda (I - B)^-1 Psi (I - B)^-T Lambda^T + Theta

with ``Psi = cov(zeta)`` and ``Theta = cov(eps)``. Exogenous latents (no
incoming paths) play the role of xi, endogenous ones of eta.

Model specification text::

    # comment
    latent ROSAS = ROSAS_warmth + ROSAS_competence + ROSAS_discomfort
    ROSAS ~ SpectralFlux + Loudness
    ROSAS_warmth ~~ ROSAS_competence

``latent F = ...`` (or ``F =~ ...``) declares a latent and its indicators;
the first indicator's loading is fixed to 1 unless a term carries an explicit
``value*name`` fixed loading. ``y ~ x1 + x2`` adds structural paths; an
observed variable used there is wrapped in a single-indicator latent of the
same name (loading 1, error variance 0). ``a ~~ b`` frees a covariance
between two latents or between two indicators' errors.
"""
from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import FeatureTable
from .errors import (
    DimensionMismatch,
    ModelSpecError,
    NonConvergence,
    NonInvertibleStructure,
    NonPositiveDefiniteS,
    UnidentifiedModel,
    ValidationError,
    ZeroDf,
)

_NAME = r"[A-Za-z_][A-Za-z0-9_.]*"
_TERM = re.compile(rf"^\s*(?:([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*\*\s*)?({_NAME})\s*$")


@dataclass(frozen=True)
class Param:
    kind: str       # loading | path | psi | theta
    row: int
    col: int
    label: str


@dataclass
class SemModel:
    """Parsed model with its free-parameter layout.

    Matrices are indexed by ``observed`` (rows of Lambda, Theta) and
    ``latents`` (columns of Lambda, B, Psi). ``B[i, j]`` is the effect of
    latent ``j`` on latent ``i``.
    """

    observed: list
    latents: list
    phantoms: set
    lambda_fixed: np.ndarray
    b_fixed: np.ndarray
    psi_fixed: np.ndarray
    theta_fixed: np.ndarray
    params: list = field(default_factory=list)

    @property
    def n_free(self):
        return len(self.params)

    @property
    def n_moments(self):
        p = len(self.observed)
        return p * (p + 1) // 2

    @property
    def df(self):
        return self.n_moments - self.n_free

    @property
    def exogenous(self):
        return [v for i, v in enumerate(self.latents)
                if not np.any(self.b_fixed[i]) and
                not any(q.kind == "path" and q.row == i for q in self.params)]

    @property
    def endogenous(self):
        exo = set(self.exogenous)
        return [v for v in self.latents if v not in exo]

    def structural_paths(self):
        """``(to, from, param index or None, fixed value)`` for every path."""
        out = []
        free = {(q.row, q.col): k for k, q in enumerate(self.params) if q.kind == "path"}
        m = len(self.latents)
        for i in range(m):
            for j in range(m):
                if (i, j) in free:
                    out.append((self.latents[i], self.latents[j], free[(i, j)], None))
                elif self.b_fixed[i, j] != 0:
                    out.append((self.latents[i], self.latents[j], None, self.b_fixed[i, j]))
        return out

    def matrices(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_free,):
            raise DimensionMismatch(
                f"theta has shape {theta.shape}, model has {self.n_free} free parameters")
        lam = self.lambda_fixed.copy()
        b = self.b_fixed.copy()
        psi = self.psi_fixed.copy()
        th = self.theta_fixed.copy()
        for v, q in zip(theta, self.params):
            if q.kind == "loading":
                lam[q.row, q.col] = v
            elif q.kind == "path":
                b[q.row, q.col] = v
            elif q.kind == "psi":
                psi[q.row, q.col] = psi[q.col, q.row] = v
            else:
                th[q.row, q.col] = th[q.col, q.row] = v
        return lam, b, psi, th

    def start_values(self, s):
        """Loadings 1, paths 0, error variances ``0.5 * diag(S)``.

        Latent variances start at ``0.5 * var`` of the first indicator (the
        full variance for single-indicator wrappers) and covariances at 0.
        """
        diag = np.diag(s)
        first = {}
        for j in range(len(self.latents)):
            rows = np.flatnonzero(self.lambda_fixed[:, j])
            if rows.size == 0:
                rows = [q.row for q in self.params if q.kind == "loading" and q.col == j]
            first[j] = rows[0] if len(rows) else None
        out = np.zeros(self.n_free)
        for k, q in enumerate(self.params):
            if q.kind == "loading":
                out[k] = 1.0
            elif q.kind == "path":
                out[k] = 0.0
            elif q.kind == "theta":
                out[k] = 0.5 * diag[q.row] if q.row == q.col else 0.0
            elif q.row == q.col:
                r = first[q.row]
                scale = 1.0 if self.latents[q.row] in self.phantoms else 0.5
                out[k] = scale * diag[r] if r is not None else 1.0
            else:
                out[k] = 0.0
        return out

    def to_dict(self):
        return {"observed": list(self.observed), "latents": list(self.latents),
                "exogenous": self.exogenous, "endogenous": self.endogenous,
                "free_parameters": [param_name(self, q) for q in self.params]}


def param_name(model, q):
    lat, obs = model.latents, model.observed
    if q.kind == "loading":
        return f"{lat[q.col]} =~ {obs[q.row]}"
    if q.kind == "path":
        return f"{lat[q.row]} ~ {lat[q.col]}"
    if q.kind == "psi":
        return f"{lat[q.row]} ~~ {lat[q.col]}"
    return f"{obs[q.row]} ~~ {obs[q.col]}"


def _split_terms(rhs, lineno):
    terms = []
    for raw in rhs.split("+"):
        m = _TERM.match(raw)
        if not m:
            raise ModelSpecError(f"line {lineno}: cannot parse term {raw.strip()!r}")
        terms.append((None if m.group(1) is None else float(m.group(1)), m.group(2)))
    return terms


def parse_model(text):
    """Parse model-specification text into a :class:`SemModel`."""
    measurement = {}    # latent -> [(fixed value or None, indicator)]
    paths = []          # (to, from, fixed or None)
    covs = []           # (a, b)
    latent_order = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(rf"^latent\s+({_NAME})\s*=\s*(.+)$", line) or \
            re.match(rf"^({_NAME})\s*=~\s*(.+)$", line)
        if m:
            name = m.group(1)
            if name in measurement:
                raise ModelSpecError(f"line {lineno}: latent {name!r} declared twice")
            measurement[name] = _split_terms(m.group(2), lineno)
            latent_order.append(name)
            continue
        m = re.match(rf"^({_NAME})\s*~~\s*({_NAME})$", line)
        if m:
            covs.append((m.group(1), m.group(2)))
            continue
        m = re.match(rf"^({_NAME})\s*~\s*(.+)$", line)
        if m:
            for val, pred in _split_terms(m.group(2), lineno):
                paths.append((m.group(1), pred, val))
            continue
        raise ModelSpecError(f"line {lineno}: unrecognised statement {line!r}")

    observed, indicators = [], set()
    for lat in latent_order:
        for _, ind in measurement[lat]:
            if ind in measurement:
                raise ModelSpecError(f"{ind!r} is a latent and cannot be an indicator")
            if ind not in indicators:
                indicators.add(ind)
                observed.append(ind)

    latents = list(latent_order)
    phantoms = set()

    def as_latent(name):
        if name in measurement or name in phantoms:
            return name
        if name in indicators:
            raise ModelSpecError(
                f"{name!r} is an indicator; structural statements must use latents "
                "or observed variables that are not indicators")
        phantoms.add(name)
        latents.append(name)
        observed.append(name)
        return name

    for to, frm, _ in paths:
        if to == frm:
            raise ModelSpecError(f"self-regression {to} ~ {frm}")
        as_latent(to)
        as_latent(frm)
    cov_kinds = []
    for a, b in covs:
        if a in indicators and b in indicators:
            cov_kinds.append(("theta", a, b))
        elif a in indicators or b in indicators:
            raise ModelSpecError(f"covariance {a} ~~ {b} mixes an indicator with a latent")
        else:
            cov_kinds.append(("psi", as_latent(a), as_latent(b)))

    if not observed:
        raise ModelSpecError("model has no observed variables")

    p, m = len(observed), len(latents)
    oi = {v: i for i, v in enumerate(observed)}
    li = {v: i for i, v in enumerate(latents)}
    lam = np.zeros((p, m))
    bmat = np.zeros((m, m))
    psi = np.zeros((m, m))
    theta = np.zeros((p, p))
    params = []

    for lat in latent_order:
        terms = measurement[lat]
        has_fixed = any(v is not None for v, _ in terms)
        for k, (val, ind) in enumerate(terms):
            if val is not None:
                lam[oi[ind], li[lat]] = val
            elif k == 0 and not has_fixed:
                lam[oi[ind], li[lat]] = 1.0
            else:
                params.append(Param("loading", oi[ind], li[lat], ""))
    for name in latents:
        if name in phantoms:
            lam[oi[name], li[name]] = 1.0

    seen_paths = set()
    for to, frm, val in paths:
        key = (li[to], li[frm])
        if key in seen_paths:
            raise ModelSpecError(f"duplicate path {to} ~ {frm}")
        seen_paths.add(key)
        if val is None:
            params.append(Param("path", key[0], key[1], ""))
        else:
            bmat[key] = val

    free_psi = set()
    for j in range(m):
        free_psi.add((j, j))
    endo = {li[to] for to, _, _ in paths}
    exo = [j for j in range(m) if j not in endo]
    for i in range(len(exo)):
        for j in range(i + 1, len(exo)):
            free_psi.add((exo[i], exo[j]))
    free_theta = {(oi[v], oi[v]) for v in observed if v not in phantoms}
    for kind, a, b in cov_kinds:
        if kind == "psi":
            i, j = sorted((li[a], li[b]))
            free_psi.add((i, j))
        else:
            i, j = sorted((oi[a], oi[b]))
            free_theta.add((i, j))
    for i, j in sorted(free_psi):
        params.append(Param("psi", i, j, ""))
    for i, j in sorted(free_theta):
        params.append(Param("theta", i, j, ""))

    for j, lat in enumerate(latents):
        if not np.any(lam[:, j]) and not any(
                q.kind == "loading" and q.col == j for q in params):
            raise ModelSpecError(f"latent {lat!r} has no indicators")

    model = SemModel(observed, latents, phantoms, lam, bmat, psi, theta, params)
    model.params = [Param(q.kind, q.row, q.col, param_name(model, q)) for q in params]
    return model


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


# ---------------------------------------------------------------------------
# implied covariance and derivatives

def _structure_inverse(b):
    m = b.shape[0]
    ib = np.eye(m) - b
    if m and np.linalg.cond(ib) > 1e12:
        raise NonInvertibleStructure("I - B is singular")
    return np.linalg.inv(ib)


def implied_covariance(model: SemModel, theta):
    """Model-implied covariance of the observed variables."""
    lam, b, psi, th = model.matrices(theta)
    a = _structure_inverse(b)
    sig = lam @ a @ psi @ a.T @ lam.T + th
    return 0.5 * (sig + sig.T)


def covariance_derivatives(model: SemModel, theta):
    """Stack of ``d Sigma / d theta_k`` matrices, shape ``(q, p, p)``."""
    lam, b, psi, _ = model.matrices(theta)
    a = _structure_inverse(b)
    sig_eta = a @ psi @ a.T
    p, m = lam.shape
    out = np.zeros((model.n_free, p, p))
    for k, q in enumerate(model.params):
        i, j = q.row, q.col
        if q.kind == "loading":
            d = np.zeros((p, p))
            d[i, :] = sig_eta[j] @ lam.T
            out[k] = d + d.T
        elif q.kind == "path":
            da = np.outer(a[:, i], a[j, :])
            inner = da @ psi @ a.T
            out[k] = lam @ (inner + inner.T) @ lam.T
        elif q.kind == "psi":
            la = lam @ a
            d = np.outer(la[:, i], la[:, j])
            out[k] = d + d.T if i != j else d
        else:
            d = np.zeros((p, p))
            d[i, j] = 1.0
            d[j, i] = 1.0
            out[k] = d
    return out


def _vech_index(p):
    return np.triu_indices(p)


def _weights(method, p, w):
    if method != "gls":
        return None
    m = p * (p + 1) // 2
    if w is None:
        return np.eye(m)
    w = np.asarray(w, dtype=float)
    if w.shape != (m, m):
        raise DimensionMismatch(f"W must be {m}x{m} for {p} observed variables")
    return w


def discrepancy(model: SemModel, theta, s, method="ml", w=None):
    """Fit function value: F_ML or the weighted quadratic form on vech(S - Sigma)."""
    sig = implied_covariance(model, theta)
    p = s.shape[0]
    if method == "ml":
        sign, logdet = np.linalg.slogdet(sig)
        if sign <= 0:
            return math.inf
        try:
            c = np.linalg.cholesky(sig)
        except np.linalg.LinAlgError:
            return math.inf
        _, logdet_s = np.linalg.slogdet(s)
        tr = float(np.trace(np.linalg.solve(sig, s)))
        return float(logdet + tr - logdet_s - p)
    if method == "gls":
        r = (s - sig)[_vech_index(p)]
        return float(r @ _weights(method, p, w) @ r)
    raise ValidationError(f"unknown method {method!r}")


def gradient(model: SemModel, theta, s, method="ml", w=None):
    """Analytic gradient of :func:`discrepancy`."""
    sig = implied_covariance(model, theta)
    ds = covariance_derivatives(model, theta)
    p = s.shape[0]
    if method == "ml":
        inv = np.linalg.inv(sig)
        g = inv @ (sig - s) @ inv
        return np.einsum("ab,kab->k", g, ds)
    if method == "gls":
        idx = _vech_index(p)
        r = (s - sig)[idx]
        jac = ds[:, idx[0], idx[1]]
        return -2.0 * jac @ (_weights(method, p, w) @ r)
    raise ValidationError(f"unknown method {method!r}")


def _information(model, theta, s, method, w):
    sig = implied_covariance(model, theta)
    ds = covariance_derivatives(model, theta)
    p = s.shape[0]
    if method == "ml":
        inv = np.linalg.inv(sig)
        t = np.einsum("ab,kbc->kac", inv, ds)
        return np.einsum("kab,lba->kl", t, t)
    idx = _vech_index(p)
    jac = ds[:, idx[0], idx[1]]
    return 2.0 * jac @ _weights(method, p, w) @ jac.T


def _minimize(model, s, method, w, max_iter, tol):
    """Fisher scoring with step halving. Returns ``(theta, f, grad, iterations)``."""
    theta = model.start_values(s)
    f = discrepancy(model, theta, s, method, w)
    if not math.isfinite(f):
        theta = theta.copy()
        for k, q in enumerate(model.params):
            if q.kind in ("psi", "theta") and q.row == q.col:
                theta[k] = max(theta[k], 1.0)
        f = discrepancy(model, theta, s, method, w)
    for it in range(max_iter):
        g = gradient(model, theta, s, method, w)
        if np.max(np.abs(g), initial=0.0) < tol:
            return theta, f, g, it
        info = _information(model, theta, s, method, w)
        info = info + 1e-10 * np.eye(len(theta)) * max(1.0, float(np.max(np.abs(np.diag(info)))))
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, g, rcond=None)[0]
        if not np.dot(step, g) > 0:
            step = g
        t = 1.0
        for _ in range(60):
            cand = theta - t * step
            try:
                fc = discrepancy(model, cand, s, method, w)
            except (NonInvertibleStructure, np.linalg.LinAlgError):
                fc = math.inf
            if fc <= f + 1e-4 * t * float(np.dot(g, -step)) or (fc <= f and t < 1e-8):
                break
            t *= 0.5
        else:
            break
        theta, f = cand, fc
    g = gradient(model, theta, s, method, w)
    if np.max(np.abs(g), initial=0.0) < tol:
        return theta, f, g, max_iter
    raise NonConvergence(
        f"no convergence after {max_iter} iterations (max |gradient| = {np.max(np.abs(g)):.3g})")


# ---------------------------------------------------------------------------
# fit indices

@dataclass(frozen=True)
class FitIndices:
    cfi: float | None
    tli: float | None
    rmsea: float | None
    cmin_df: float | None

    def to_dict(self):
        return {"CFI": self.cfi, "TLI": self.tli, "RMSEA": self.rmsea, "CMIN_DF": self.cmin_df}


def fit_indices(chi_m, df_m, chi_b, df_b, n):
    """CFI, TLI, RMSEA and CMIN/DF from model and baseline chi-squares.

    Undefined values come back as ``None``: everything except CFI when
    ``df_m == 0`` (CFI is then 1 by convention, with a :class:`ZeroDf`
    warning), and TLI when the baseline has ``chi_b / df_b == 1``.
    """
    if df_m < 0 or df_b < 0:
        raise ValidationError("degrees of freedom must be nonnegative")
    if n < 2:
        raise ValidationError("n must be at least 2")
    if df_m == 0:
        warnings.warn("model has zero degrees of freedom; only CFI is reported", ZeroDf,
                      stacklevel=2)
        return FitIndices(1.0, None, None, None)
    excess_m = max(chi_m - df_m, 0.0)
    denom = max(chi_b - df_b, chi_m - df_m, 0.0)
    cfi = 1.0 if denom <= 0 else 1.0 - excess_m / denom
    cfi = min(max(cfi, 0.0), 1.0)
    tli = None
    if df_b > 0:
        rb = chi_b / df_b
        if abs(rb - 1.0) > 1e-12:
            tli = (rb - chi_m / df_m) / (rb - 1.0)
    rmsea = math.sqrt(excess_m / (df_m * (n - 1)))
    return FitIndices(cfi, tli, rmsea, chi_m / df_m)


# ---------------------------------------------------------------------------
# fitting

@dataclass
class SemFit:
    model: SemModel
    method: str
    theta: np.ndarray
    implied_cov: np.ndarray
    sample_cov: np.ndarray
    n: int
    chi_square: float
    df: int
    p_value: float | None
    baseline_chi_square: float
    baseline_df: int
    indices: FitIndices
    paths: list
    iterations: int

    def estimates(self):
        return {q.label: float(v) for q, v in zip(self.model.params, self.theta)}

    def to_dict(self):
        return {
            "method": self.method,
            "n": self.n,
            "chi_square": self.chi_square,
            "df": self.df,
            "p_value": self.p_value,
            "baseline": {"chi_square": self.baseline_chi_square, "df": self.baseline_df},
            "indices": self.indices.to_dict(),
            "paths": [{"metric": to, "feature": frm, "estimate": est, "std_estimate": std}
                      for to, frm, est, std in self.paths],
            "estimates": self.estimates(),
            "iterations": self.iterations,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _baseline(s, method, w, n):
    p = s.shape[0]
    df_b = p * (p - 1) // 2
    if method == "ml":
        _, logdet = np.linalg.slogdet(s)
        f = float(np.sum(np.log(np.diag(s))) - logdet)
    else:
        idx = _vech_index(p)
        r0 = s[idx]
        e = (idx[0] == idx[1]).astype(float)
        e = np.eye(len(r0))[:, e.astype(bool)]
        wm = _weights(method, p, w)
        d = np.linalg.solve(e.T @ wm @ e, e.T @ wm @ r0)
        r = r0 - e @ d
        f = float(r @ wm @ r)
    return (n - 1) * max(f, 0.0), df_b


def _paths(model, theta):
    lam, b, psi, _ = model.matrices(theta)
    a = _structure_inverse(b)
    sig_eta = a @ psi @ a.T
    li = {v: i for i, v in enumerate(model.latents)}
    rows = []
    for to, frm, k, fixed in model.structural_paths():
        est = float(theta[k]) if k is not None else float(fixed)
        vt, vf = sig_eta[li[to], li[to]], sig_eta[li[frm], li[frm]]
        std = est * math.sqrt(vf / vt) if vt > 0 and vf >= 0 else float("nan")
        rows.append((to, frm, est, std))
    return rows


def fit(model: SemModel, table: FeatureTable, method="ml", w=None, max_iter=500, tol=1e-6):
    """Estimate ``model`` on ``table``.

    ``method="ml"`` minimises ``ln|Sigma| + tr(S Sigma^-1) - ln|S| - p``;
    ``method="gls"`` minimises ``vech(S - Sigma)^T W vech(S - Sigma)`` with
    ``W`` the identity unless given. ``chi_square = (n - 1) * F`` at the
    optimum. Raises :class:`NonConvergence` if ``max |gradient| >= tol``
    after ``max_iter`` iterations.
    """
    if method not in ("ml", "gls"):
        raise ValidationError(f"unknown method {method!r}")
    if model.df < 0:
        raise UnidentifiedModel(
            f"{model.n_free} free parameters exceed {model.n_moments} covariance moments")
    x = table.columns(model.observed)
    n, p = x.shape
    if n <= p:
        raise ValidationError(f"need more rows ({n}) than observed variables ({p})")
    s = np.cov(x, rowvar=False).reshape(p, p)
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise NonPositiveDefiniteS("sample covariance is not positive definite") from None
    if np.linalg.cond(s) > 1e14:
        raise NonPositiveDefiniteS("sample covariance is numerically singular")
    theta, f, _, iters = _minimize(model, s, method, w, max_iter, tol)
    chi = (n - 1) * max(f, 0.0)
    df = model.df
    chi_b, df_b = _baseline(s, method, w, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroDf)
        idx = fit_indices(chi, df, chi_b, df_b, n)
    pval = float(stats.chi2.sf(chi, df)) if df > 0 else None
    return SemFit(model, method, theta, implied_covariance(model, theta), s, n, chi, df, pval,
                  chi_b, df_b, idx, _paths(model, theta), iters)


def path_report(result: SemFit):
    """One ``(metric, feature, estimate)`` row per structural path."""
    return [(to, frm, est) for to, frm, est, _ in result.paths]


def format_path_report(result: SemFit):
    rows = path_report(result)
    w1 = max([len("Metric")] + [len(r[0]) for r in rows])
    w2 = max([len("Feature")] + [len(r[1]) for r in rows])
    lines = [f"{'Metric':<{w1}}  {'Feature':<{w2}}  Estimated Path Coefficient"]
    for to, frm, est in rows:
        lines.append(f"{to:<{w1}}  {frm:<{w2}}  {est:.3f}")
    return "\n".join(lines)


def simulate(model: SemModel, theta, n, seed=0):
    """Multivariate-normal sample with covariance ``implied_covariance(model, theta)``."""
    sig = implied_covariance(model, theta)
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal(np.zeros(len(model.observed)), sig, size=n, method="cholesky")
    return FeatureTable(tuple(model.observed), x)
