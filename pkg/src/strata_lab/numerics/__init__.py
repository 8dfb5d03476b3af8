"""Numerical kernel: normal special functions, quadrature, RNG streams, solvers."""

from .mle import LinearFit, ProbitFit, linear_gaussian_mle, probit_mle
from .quadrature import DEFAULT_ORDER, QuadratureRule, gauss_hermite, gh_expectation, gh_log_expectation
from .rng import SeedSpec, generator, rng_bernoulli, rng_mvn2, rng_normal
from .solvers import GmmProblem, GmmReport, GmmResult, central_jacobian, gmm_solve, root_find_1d
from .special import normal_cdf, normal_logcdf, normal_pdf, normal_quantile

__all__ = [
    "DEFAULT_ORDER",
    "GmmProblem",
    "GmmReport",
    "GmmResult",
    "LinearFit",
    "ProbitFit",
    "QuadratureRule",
    "SeedSpec",
    "central_jacobian",
    "gauss_hermite",
    "generator",
    "gh_expectation",
    "gh_log_expectation",
    "gmm_solve",
    "linear_gaussian_mle",
    "normal_cdf",
    "normal_logcdf",
    "normal_pdf",
    "normal_quantile",
    "probit_mle",
    "rng_bernoulli",
    "rng_mvn2",
    "rng_normal",
    "root_find_1d",
]
