"""Regression fits feeding the Bayes-factor scan.

Traits regress on centered local-ancestry columns plus optional covariates,
with an intercept always included.  Continuous traits use exact least
squares; binary and count traits use iteratively reweighted least squares
with canonical links and dispersion fixed at one.  Every fit also runs the
matching null model (ancestry coefficients pinned to zero, covariates
retained) so likelihoods are comparable downstream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit, gammaln

from .errors import DegenerateDesignError

TRAIT_KINDS = ("continuous", "binary", "count")

_IRLS_MAX_ITER = 100
_IRLS_TOL = 1e-10          # relative log-likelihood change
_SEPARATION_LIMIT = 15.0   # |coefficient| on the link scale flagging separation


@dataclass
class TraitData:
    """Response vector plus covariates; rows must already be complete."""

    y: np.ndarray
    kind: str
    covariates: np.ndarray | None = None
    covariate_names: list | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 1:
            raise ValueError("trait must be one-dimensional")
        if not np.isfinite(self.y).all():
            raise ValueError("trait contains non-finite values")
        if self.kind not in TRAIT_KINDS:
            raise ValueError(f"unknown trait kind {self.kind!r}")
        if self.kind == "binary" and not np.isin(self.y, (0.0, 1.0)).all():
            raise ValueError("binary trait must take values in {0, 1}")
        if self.kind == "count":
            if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
                raise ValueError("count trait must hold nonnegative integers")
        if self.covariates is None:
            self.covariates = np.empty((self.y.shape[0], 0))
        self.covariates = np.asarray(self.covariates, dtype=np.float64)
        if self.covariates.ndim != 2 or self.covariates.shape[0] != self.y.shape[0]:
            raise ValueError("covariate matrix must be (n_subjects, q)")
        if not np.isfinite(self.covariates).all():
            raise ValueError("covariates contain non-finite values")

    @property
    def n_subjects(self):
        return self.y.shape[0]

    @property
    def n_covariates(self):
        return self.covariates.shape[1]


@dataclass
class AncestryDesign:
    """Column-centered ancestry values for the loci under test."""

    s: np.ndarray
    locus_ids: list

    @property
    def n_subjects(self):
        return self.s.shape[0]

    @property
    def n_loci(self):
        return self.s.shape[1]


def center_ancestries(raw, locus_ids=None) -> AncestryDesign:
    """Center raw ancestry counts column-wise.

    A constant column cannot be centered into a usable regressor and raises
    :class:`DegenerateDesignError` naming the locus.
    """
    raw = np.asarray(raw)
    if raw.ndim == 1:
        raw = raw[:, None]
    if np.any((raw < 0) | (raw > 2)) or np.any(raw != np.round(raw)):
        raise ValueError("raw ancestry values must be integers in {0, 1, 2}")
    if locus_ids is None:
        locus_ids = list(range(raw.shape[1]))
    spread = raw.max(axis=0) - raw.min(axis=0)
    if np.any(spread == 0):
        j = int(np.flatnonzero(spread == 0)[0])
        raise DegenerateDesignError(
            f"ancestry column {locus_ids[j]!r} is constant"
        )
    s = raw.astype(np.float64)
    s -= s.mean(axis=0)
    return AncestryDesign(s=s, locus_ids=list(locus_ids))


@dataclass
class FitResult:
    beta_hat: np.ndarray          # ancestry coefficients, length p
    alpha_hat: np.ndarray         # covariate coefficients, length q
    intercept: float
    sigma_beta_hat: np.ndarray    # estimated covariance of beta_hat, (p, p)
    sigma2_hat: float             # residual variance (continuous) or 1.0
    loglik_alt: float
    loglik_null: float
    converged: bool
    n_used: int
    flag: str | None = None

    @property
    def p(self):
        return self.beta_hat.shape[0]


def _solve_spd(a, b):
    try:
        factor = cho_factor(a)
    except LinAlgError as exc:
        raise DegenerateDesignError(f"singular information matrix: {exc}") from exc
    return cho_solve(factor, b), factor


def _inv_spd(a):
    sol, _ = _solve_spd(a, np.eye(a.shape[0]))
    return sol


def _gaussian_loglik(rss, n):
    s2 = max(rss / n, 1e-300)
    return -0.5 * n * (np.log(2.0 * np.pi * s2) + 1.0)


def _ols(y, z):
    n, k = z.shape
    ztz = z.T @ z
    coef, _ = _solve_spd(ztz, z.T @ y)
    resid = y - z @ coef
    rss = float(resid @ resid)
    return coef, rss, ztz


def _irls(y, z, kind):
    n, k = z.shape
    coef = np.zeros(k)
    loglik = -np.inf
    converged = False
    info = None
    for _ in range(_IRLS_MAX_ITER):
        eta = z @ coef
        if kind == "binary":
            mu = np.clip(expit(eta), 1e-12, 1.0 - 1e-12)
            w = np.maximum(mu * (1.0 - mu), 1e-10)
            new_loglik = float(y @ np.log(mu) + (1.0 - y) @ np.log1p(-mu))
        else:
            mu = np.clip(np.exp(np.clip(eta, -500, 30)), 1e-12, None)
            w = mu
            new_loglik = float(y @ np.log(mu) - mu.sum() - gammaln(y + 1.0).sum())
        adj = eta + (y - mu) / w
        wz = z * w[:, None]
        info = z.T @ wz
        coef, _ = _solve_spd(info, wz.T @ adj)
        if np.isfinite(loglik) and abs(new_loglik - loglik) <= _IRLS_TOL * max(
            1.0, abs(loglik)
        ):
            loglik = new_loglik
            converged = True
            break
        loglik = new_loglik
    # refresh the information at the final coefficients
    eta = z @ coef
    if kind == "binary":
        mu = np.clip(expit(eta), 1e-12, 1.0 - 1e-12)
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        loglik = float(y @ np.log(mu) + (1.0 - y) @ np.log1p(-mu))
    else:
        mu = np.clip(np.exp(np.clip(eta, -500, 30)), 1e-12, None)
        w = mu
        loglik = float(y @ np.log(mu) - mu.sum() - gammaln(y + 1.0).sum())
    info = z.T @ (z * w[:, None])
    return coef, loglik, info, converged


def fit_glm(trait: TraitData, design: AncestryDesign) -> FitResult:
    """Fit the trait on centered ancestries plus covariates.

    Binary fits showing separation (a coefficient beyond
    ``_SEPARATION_LIMIT`` on the logit scale) or failing to converge come
    back flagged rather than raising, so a scan can skip the locus and keep
    going.
    """
    y = trait.y
    n = trait.n_subjects
    if design.n_subjects != n:
        raise ValueError("trait and ancestry design are not row-aligned")
    p = design.n_loci
    q = trait.n_covariates
    if n <= p + q + 1:
        raise DegenerateDesignError(
            f"{n} subjects cannot identify {p + q + 1} coefficients"
        )
    z = np.column_stack([np.ones(n), design.s, trait.covariates])
    z_null = np.column_stack([np.ones(n), trait.covariates])
    sl = slice(1, 1 + p)

    if trait.kind == "continuous":
        coef, rss, ztz = _ols(y, z)
        dof = n - (1 + p + q)
        sigma2 = rss / dof
        cov = sigma2 * _inv_spd(ztz)
        _, rss0, _ = _ols(y, z_null)
        return FitResult(
            beta_hat=coef[sl],
            alpha_hat=coef[1 + p:],
            intercept=float(coef[0]),
            sigma_beta_hat=cov[sl, sl],
            sigma2_hat=float(sigma2),
            loglik_alt=_gaussian_loglik(rss, n),
            loglik_null=_gaussian_loglik(rss0, n),
            converged=True,
            n_used=n,
        )

    coef, loglik, info, converged = _irls(y, z, trait.kind)
    flag = None
    if not converged:
        flag = "irls did not converge"
    elif np.max(np.abs(coef)) > _SEPARATION_LIMIT:
        flag = "separation"
        converged = False
    cov = _inv_spd(info)
    _, loglik0, _, null_ok = _irls(y, z_null, trait.kind)
    return FitResult(
        beta_hat=coef[sl],
        alpha_hat=coef[1 + p:],
        intercept=float(coef[0]),
        sigma_beta_hat=cov[sl, sl],
        sigma2_hat=1.0,
        loglik_alt=loglik,
        loglik_null=loglik0 if null_ok else float("nan"),
        converged=converged,
        n_used=n,
        flag=flag,
    )
