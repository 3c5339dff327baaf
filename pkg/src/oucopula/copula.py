"""Gaussian copula machinery over the four label residuals.

The residual matrix has a fixed column order (OS-SE, OS-AL, OD-SE, OD-AL).
Marginal SDs and the Pearson correlation matrix are estimated from
residuals, assembled into a covariance, and frozen; the loss is the
negative log density of a centered multivariate normal, differentiable
with respect to the residuals only.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erfc

from .errors import EstimationError, ShapeError
from .tensor import Tensor, apply_op

__all__ = [
    "LABEL_COLUMNS",
    "CopulaParams",
    "standard_normal_cdf",
    "standard_normal_quantile",
    "estimate_params",
    "repair_correlation",
    "copula_nll",
    "copula_nll_per_sample",
    "copula_density",
]

LABEL_COLUMNS = ("os_se", "os_al", "od_se", "od_al")

_LOG_2PI = float(np.log(2.0 * np.pi))
_SQRT2 = float(np.sqrt(2.0))

# Acklam's rational approximation to the standard normal quantile.
_ACK_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACK_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACK_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACK_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)
_ACK_SPLIT = 0.02425


def standard_normal_cdf(x):
    """CDF of N(0, 1), accurate in both tails (erfc-based)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * erfc(-x / _SQRT2)


def _polyval(coeffs, x):
    out = np.full_like(x, coeffs[0])
    for c in coeffs[1:]:
        out = out * x + c
    return out


def standard_normal_quantile(u):
    """Inverse CDF of N(0, 1) for u in the open interval (0, 1).

    Rational approximation refined by one Halley step against the
    erfc-based CDF; |CDF(quantile(u)) - u| stays below 1e-9.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    scalar = u_arr.ndim == 0
    u_arr = np.atleast_1d(u_arr)
    if np.any(~np.isfinite(u_arr)) or np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
        raise ValueError("standard_normal_quantile: u must lie strictly inside (0, 1)")

    # reflect into the lower half: 1 - u is exact there, and the CDF used by
    # the refinement is relatively accurate near 0, unlike near 1
    flip = u_arr > 0.5
    v = np.where(flip, 1.0 - u_arr, u_arr)

    x = np.empty_like(v)
    lo = v < _ACK_SPLIT
    mid = ~lo
    if np.any(mid):
        q = v[mid] - 0.5
        r = q * q
        x[mid] = q * _polyval(_ACK_A, r) / (_polyval(_ACK_B, r) * r + 1.0)
    if np.any(lo):
        q = np.sqrt(-2.0 * np.log(v[lo]))
        x[lo] = _polyval(_ACK_C, q) / (_polyval(_ACK_D, q) * q + 1.0)

    # one Halley step: e = CDF(x) - v, correction e/pdf(x) with curvature term
    e = standard_normal_cdf(x) - v
    w = e * np.sqrt(2.0 * np.pi) * np.exp(0.5 * x * x)
    x = x - w / (1.0 + 0.5 * x * w)
    x = np.where(flip, -x, x)
    return float(x[0]) if scalar else x


def _gaussian_scores(t, sigma):
    """q = quantile(CDF(t/sigma)), mapped through the nearer tail.

    Mathematically the identity t/sigma; routed through the CDF/quantile
    pair so the copula-density formula is evaluated as written, without
    losing precision for |z| up to ~37.
    """
    z = np.asarray(t, dtype=np.float64) / sigma
    a = -np.abs(z)
    q = standard_normal_quantile(standard_normal_cdf(a))
    return np.where(z > 0, -q, q)


class CopulaParams:
    """Frozen marginal SDs, correlation matrix, and derived covariance.

    Construction validates the invariants (positive sigma; symmetric
    correlation with unit diagonal and entries in [-1, 1]) and, unless
    ``factorize=False``, assembles the covariance and its Cholesky factor.
    Instances are immutable and safe to share.
    """

    __slots__ = ("sigma", "gamma", "covariance", "chol", "log_det",
                 "corr_chol", "corr_log_det", "repaired")

    def __init__(self, sigma, gamma, repaired: bool = False, factorize: bool = True):
        sigma = np.array(sigma, dtype=np.float64)
        gamma = np.array(gamma, dtype=np.float64)
        p = sigma.shape[0]
        if sigma.ndim != 1 or gamma.shape != (p, p):
            raise ShapeError(f"sigma shape {sigma.shape} and gamma shape {gamma.shape} disagree")
        if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0.0):
            raise EstimationError("marginal SDs must be finite and strictly positive")
        if np.any(~np.isfinite(gamma)):
            raise EstimationError("correlation matrix has non-finite entries")
        if np.max(np.abs(gamma - gamma.T)) > 1e-10:
            raise EstimationError("correlation matrix is not symmetric")
        if np.max(np.abs(np.diag(gamma) - 1.0)) > 1e-10:
            raise EstimationError("correlation matrix diagonal is not unit")
        if np.max(np.abs(gamma)) > 1.0 + 1e-12:
            raise EstimationError("correlation entries must lie in [-1, 1]")
        self.sigma = sigma
        self.gamma = gamma
        self.repaired = bool(repaired)
        if factorize:
            cov = np.outer(sigma, sigma) * gamma
            try:
                chol = np.linalg.cholesky(cov)
                corr_chol = np.linalg.cholesky(gamma)
            except np.linalg.LinAlgError as exc:
                raise EstimationError(
                    "covariance is not positive definite; repair the correlation first"
                ) from exc
            rel = np.linalg.norm(chol @ chol.T - cov) / np.linalg.norm(cov)
            if rel > 1e-10:
                raise EstimationError(f"Cholesky reconstruction error {rel:.2e} exceeds 1e-10")
            self.covariance = cov
            self.chol = chol
            self.log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
            self.corr_chol = corr_chol
            self.corr_log_det = 2.0 * float(np.sum(np.log(np.diag(corr_chol))))
        else:
            self.covariance = None
            self.chol = None
            self.log_det = None
            self.corr_chol = None
            self.corr_log_det = None
        for name in ("sigma", "gamma", "covariance", "chol", "corr_chol"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def factorized(self) -> bool:
        return self.chol is not None

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma.tolist(),
            "gamma": self.gamma.tolist(),
            "repaired": self.repaired,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CopulaParams":
        return cls(d["sigma"], d["gamma"], repaired=bool(d.get("repaired", False)))


def repair_correlation(gamma, floor: float = 1e-8):
    """Clip eigenvalues to the floor and rescale back to unit diagonal.

    Returns the input unchanged when its minimum eigenvalue already meets
    the floor, so the repair is idempotent. Rejects asymmetric input.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
        raise ShapeError(f"repair_correlation: need a square matrix, got {gamma.shape}")
    if np.max(np.abs(gamma - gamma.T)) > 1e-10:
        raise EstimationError("repair_correlation: input is not symmetric")
    if np.max(np.abs(np.diag(gamma) - 1.0)) > 1e-10:
        raise EstimationError("repair_correlation: diagonal is not unit")
    if np.linalg.eigvalsh(gamma).min() >= floor:
        return gamma
    # clip slightly above the floor so the diagonal rescaling cannot drop
    # the smallest eigenvalue back below it
    lift = floor * 1.0625
    m = gamma
    for _ in range(100):
        w, v = np.linalg.eigh(m)
        if w.min() >= floor:
            return m
        w = np.maximum(w, lift)
        m = (v * w) @ v.T
        d = np.sqrt(np.diag(m))
        m = m / np.outer(d, d)
        m = 0.5 * (m + m.T)
        np.fill_diagonal(m, 1.0)
    raise EstimationError("repair_correlation: did not reach the eigenvalue floor")


def estimate_params(residuals, column_names=LABEL_COLUMNS) -> CopulaParams:
    """Marginal sample SDs (n-1 denominator) and Pearson correlations.

    Rejects matrices with fewer than 3 rows, non-finite entries, or a
    zero-variance column (named in the diagnostic). The correlation matrix
    is repaired to the eigenvalue floor if sampling noise made it
    indefinite.
    """
    e = np.asarray(residuals, dtype=np.float64)
    if e.ndim != 2:
        raise ShapeError(f"estimate_params: need a 2-D residual matrix, got shape {e.shape}")
    n, p = e.shape
    if n < 3:
        raise EstimationError(f"estimate_params: need at least 3 rows, got {n}")
    if not np.all(np.isfinite(e)):
        raise EstimationError("estimate_params: residuals contain non-finite entries")
    sigma = e.std(axis=0, ddof=1)
    for j in range(p):
        if sigma[j] <= 0.0:
            name = column_names[j] if j < len(column_names) else f"column {j}"
            raise EstimationError(f"estimate_params: zero-variance residual column {name!r}")
    gamma = np.corrcoef(e, rowvar=False)
    gamma = np.clip(0.5 * (gamma + gamma.T), -1.0, 1.0)
    np.fill_diagonal(gamma, 1.0)
    repaired_gamma = repair_correlation(gamma)
    repaired = repaired_gamma is not gamma
    return CopulaParams(sigma, repaired_gamma, repaired=repaired)


def _require_factorized(params: CopulaParams) -> None:
    if not isinstance(params, CopulaParams) or not params.factorized:
        raise EstimationError("copula params are not factorized")


def copula_nll_per_sample(e: np.ndarray, params: CopulaParams) -> np.ndarray:
    """Per-row negative log density of N(0, covariance) at the residuals."""
    _require_factorized(params)
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != params.dim:
        raise ShapeError(f"residual width {e.shape} does not match copula dimension {params.dim}")
    half = solve_triangular(params.chol, e.T, lower=True)
    quad = np.einsum("ij,ij->j", half, half)
    return 0.5 * (params.dim * _LOG_2PI + params.log_det + quad)


def copula_nll(residuals, params: CopulaParams) -> Tensor:
    """Mean per-sample Gaussian copula negative log-likelihood.

    Differentiable with respect to the residuals; the copula parameters
    are constants of the loss (the gradient of the mean NLL at residual
    row i is ``covariance^{-1} e_i / batch``).
    """
    _require_factorized(params)
    e = residuals if isinstance(residuals, Tensor) else Tensor(residuals)
    if e.ndim != 2 or e.shape[1] != params.dim:
        raise ShapeError(f"residual batch {e.shape} does not match copula dimension {params.dim}")
    n = e.shape[0]
    half = solve_triangular(params.chol, e.data.T, lower=True)
    quad_mean = float(np.einsum("ij,ij->", half, half)) / n
    nll = 0.5 * (params.dim * _LOG_2PI + params.log_det + quad_mean)
    sol = solve_triangular(params.chol.T, half, lower=False).T  # covariance^{-1} e

    def bwd(g):
        return (g * sol / n,)

    return apply_op("copula_nll", np.asarray(nll), (e,), bwd)


def copula_density(t, params: CopulaParams, marginals: str = "gaussian") -> float:
    """Joint density of the residual vector under the Gaussian copula.

    Evaluates the copula-density form: Gaussian scores q from the marginal
    CDFs, the exp(q'(I - gamma^{-1})q / 2) coupling with its normalizing
    constant |gamma|^{-1/2}, times the product of marginal densities.
    Only centered Gaussian marginals N(0, sigma_jk) are supported; with
    them the value equals the multivariate normal density N(t; 0, cov).
    """
    if marginals != "gaussian":
        raise ValueError(f"unsupported marginals {marginals!r}: only 'gaussian' is implemented")
    _require_factorized(params)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (params.dim,):
        raise ShapeError(f"point shape {t.shape} does not match copula dimension {params.dim}")
    q = _gaussian_scores(t, params.sigma)
    w = solve_triangular(params.corr_chol, q, lower=True)
    coupling = 0.5 * (q @ q - w @ w) - 0.5 * params.corr_log_det
    z = t / params.sigma
    log_marginals = -0.5 * (z * z + _LOG_2PI) - np.log(params.sigma)
    return float(np.exp(coupling + log_marginals.sum()))
