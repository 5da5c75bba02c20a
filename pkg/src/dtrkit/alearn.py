"""Doubly-robust contrast estimation for optimal regimes.

Each stage models the treatment contrast C_k(h) = x_c(h)' psi_k, a nuisance
action-free mean x_h(h)' beta_k, and the propensity pi_k(h).  The stage
coefficients solve the stacked estimating equations

    sum_i (a_i - pihat_i) x_c_i (v_i - a_i x_c_i' psi - x_h_i' beta) = 0
    sum_i            x_h_i (v_i - a_i x_c_i' psi - x_h_i' beta) = 0

whose solution is consistent for psi when either the propensity model or
the action-free mean model is correct (the contrast model itself being
correct).  Both sums are linear in (psi, beta), so the solve is one linear
system; the propensity is fit first by maximum likelihood, which reproduces
the simultaneous root exactly because the likelihood score does not involve
(psi, beta).

The fitted stage induces the pseudo-outcome

    v_i <- v_i + chat_i * (1{chat_i > 0} - a_i),    chat_i = x_c_i' psi_hat,

the observed response corrected by the regret of the action actually taken,
which becomes the response one stage earlier.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import (
    Dataset,
    DecisionRule,
    KnownPropensity,
    LogisticPropensity,
    Regime,
    StageFit,
    build_design,
)
from .errors import ExtremePropensityWarning, InvalidParameterError
from .numerics import FitResult, logistic_fit, solve_linear

__all__ = ["ALearnResult", "a_pseudo_outcome", "alearn_fit", "alearn_stage_solve", "propensity_eval"]

# Stacked moment sums at the solution must vanish to solver precision.
MOMENT_TOL = 1e-8
# Fitted propensities closer to 0 or 1 than this trigger a warning.
PROPENSITY_EPS = 1e-6


def propensity_eval(propensity, dataset: Dataset, stage: int):
    """Evaluate or fit the stage propensity.

    Returns ``(pihat, fit)`` where ``fit`` is the logistic
    :class:`~dtrkit.numerics.FitResult` when a model was fit and None when
    the propensity is known.  Values within ``PROPENSITY_EPS`` of 0 or 1
    are left untouched but raise :class:`ExtremePropensityWarning`.
    """
    if isinstance(propensity, KnownPropensity):
        pihat = propensity.evaluate(dataset, stage)
        fit = None
    elif isinstance(propensity, LogisticPropensity):
        propensity.features.check_stage(stage)
        design = propensity.features.evaluate(dataset)
        fit = logistic_fit(design, dataset.action_col(stage))
        pihat = fit.fitted
    else:
        raise InvalidParameterError(
            f"stage {stage} has no usable propensity specification ({propensity!r})"
        )
    if np.any(pihat < PROPENSITY_EPS) or np.any(pihat > 1.0 - PROPENSITY_EPS):
        warnings.warn(
            f"stage {stage}: fitted propensities within {PROPENSITY_EPS:g} of 0 or 1; "
            "contrast estimates may be unstable",
            ExtremePropensityWarning,
            stacklevel=2,
        )
    return pihat, fit


def alearn_stage_solve(design_h, design_c, actions, pihat, v, stage: int = 0) -> StageFit:
    """Solve one stage's stacked estimating equations for (psi, beta).

    The system is linear: with g_i = [(a_i - pihat_i) x_c_i ; x_h_i] and
    regression vector x_i = [a_i x_c_i ; x_h_i], the solution solves
    (sum_i g_i x_i') theta = sum_i g_i v_i.  The covariance reported is the
    model-based M-estimator form sigma2_hat M^{-1} (sum_i g_i g_i') M^{-T}
    with M = sum_i g_i x_i', treating the propensity as fixed.

    The residual moment sums are checked to vanish (infinity norm below
    ``MOMENT_TOL * (1 + max |v|)``) and their norm is stored on the fit.
    """
    design_h = np.asarray(design_h, dtype=float)
    design_c = np.asarray(design_c, dtype=float)
    actions = np.asarray(actions, dtype=float)
    pihat = np.asarray(pihat, dtype=float)
    v = np.asarray(v, dtype=float)
    n = design_h.shape[0]
    if design_c.shape[0] != n or actions.shape != (n,) or pihat.shape != (n,) or v.shape != (n,):
        raise InvalidParameterError("stage inputs must share one row per trajectory")
    p_c = design_c.shape[1]
    p_h = design_h.shape[1]
    resid_ip = actions - pihat
    g = np.hstack([resid_ip[:, None] * design_c, design_h])
    xreg = np.hstack([actions[:, None] * design_c, design_h])
    m = g.T @ xreg
    rhs = g.T @ v
    theta = solve_linear(m, rhs)
    psi, beta = theta[:p_c], theta[p_c:]
    resid = v - xreg @ theta
    moments = g.T @ resid
    moment_norm = float(np.max(np.abs(moments)))
    scale = 1.0 + float(np.max(np.abs(v))) if n else 1.0
    if moment_norm > MOMENT_TOL * scale:
        raise InvalidParameterError(
            f"stage {stage}: estimating equations not solved "
            f"(moment norm {moment_norm:.3e} exceeds {MOMENT_TOL:g} * {scale:.3g})"
        )
    dof = n - (p_c + p_h)
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    m_inv = solve_linear(m, np.eye(p_c + p_h))
    cov = sigma2 * m_inv @ (g.T @ g) @ m_inv.T
    cov = 0.5 * (cov + cov.T)
    return StageFit(
        stage=stage,
        psi=psi,
        beta=beta,
        psi_cov=cov[:p_c, :p_c],
        beta_cov=cov[p_c:, p_c:],
        v=v,
        residuals=resid,
        pihat=pihat,
        moment_inf_norm=moment_norm,
        n_used=n,
    )


def a_pseudo_outcome(prev_v, contrast, actions) -> np.ndarray:
    """Regret-correct the response for the action actually taken.

    Returns ``prev_v + contrast * (1{contrast > 0} - actions)``: rows whose
    action already matches the rule implied by the fitted contrast are left
    unchanged.
    """
    prev_v = np.asarray(prev_v, dtype=float)
    contrast = np.asarray(contrast, dtype=float)
    actions = np.asarray(actions, dtype=float)
    return prev_v + contrast * ((contrast > 0.0) - actions)


@dataclass
class ALearnResult:
    """Per-stage fits and the estimated regime they induce."""

    stage_fits: list
    regime: Regime


def alearn_fit(dataset: Dataset, specs) -> ALearnResult:
    """Backward recursion over all stages of ``dataset``.

    Each spec must carry a propensity (known or logistic).  Logistic
    propensity coefficients and their covariance are stored on the stage
    fit alongside the fitted probabilities.
    """
    n_stages = dataset.n_stages
    if len(specs) != n_stages:
        raise InvalidParameterError("need one stage spec per dataset stage")
    fits: list[StageFit | None] = [None] * n_stages
    v = dataset.y
    for k in range(n_stages, 0, -1):
        spec = specs[k - 1]
        design_h = build_design(dataset, k, spec.h_features)
        design_c = build_design(dataset, k, spec.c_features)
        actions = dataset.action_col(k)
        pihat, pfit = propensity_eval(spec.propensity, dataset, k)
        fit = alearn_stage_solve(design_h, design_c, actions, pihat, v, stage=k)
        if isinstance(pfit, FitResult):
            fit.phi = pfit.coefficients
            fit.phi_cov = pfit.covariance
        fits[k - 1] = fit
        if k > 1:
            v = a_pseudo_outcome(v, design_c @ fit.psi, actions)
    regime = Regime(
        tuple(
            DecisionRule(specs[k].c_features, fits[k].psi) for k in range(n_stages)
        )
    )
    return ALearnResult(stage_fits=fits, regime=regime)
