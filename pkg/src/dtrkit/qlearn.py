"""Regression-based backward recursion for optimal-regime estimation.

At the last stage the observed outcome is regressed on a stage model that is
linear in an action-free part and an action-by-contrast part,

    Q_K(h, a) = x_h(h)' beta_K + a * x_c(h)' psi_K,

by (weighted) least squares on the stacked design [x_h | a * x_c].  The
fitted stage then induces the pseudo-outcome

    v_i = x_h(h_i)' beta_hat + max(0, x_c(h_i)' psi_hat),

the value of acting optimally from that stage on, which becomes the response
one stage earlier.  The estimated regime treats at stage k exactly when
x_c' psi_hat_k > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, DecisionRule, Regime, StageFit, StageSpec, build_design
from .errors import InvalidParameterError
from .numerics import wls_fit

__all__ = ["QLearnResult", "q_pseudo_outcome", "q_stage_fit", "qlearn_fit"]


def q_stage_fit(design_h, design_c, actions, v, weights=None, stage: int = 0) -> StageFit:
    """Fit one stage by least squares of ``v`` on ``[design_h | a * design_c]``.

    Returns a :class:`StageFit` with the coefficient vector partitioned into
    ``beta`` (action-free part) and ``psi`` (contrast part) and the matching
    blocks of the model-based covariance.
    """
    design_h = np.asarray(design_h, dtype=float)
    design_c = np.asarray(design_c, dtype=float)
    actions = np.asarray(actions, dtype=float)
    v = np.asarray(v, dtype=float)
    n = design_h.shape[0]
    if design_c.shape[0] != n or actions.shape != (n,) or v.shape != (n,):
        raise InvalidParameterError("stage inputs must share one row per trajectory")
    design = np.hstack([design_h, actions[:, None] * design_c])
    fit = wls_fit(design, v, weights)
    p_h = design_h.shape[1]
    return StageFit(
        stage=stage,
        psi=fit.coefficients[p_h:],
        beta=fit.coefficients[:p_h],
        psi_cov=fit.covariance[p_h:, p_h:],
        beta_cov=fit.covariance[:p_h, :p_h],
        v=v,
        residuals=fit.residuals,
        n_used=n,
    )


def q_pseudo_outcome(stage_fit: StageFit, design_h, design_c) -> np.ndarray:
    """Predicted value of acting optimally from this stage on.

    Computes ``design_h @ beta + max(0, design_c @ psi)`` row-wise; the
    result is never below the no-treatment prediction ``design_h @ beta``.
    """
    baseline = np.asarray(design_h, dtype=float) @ stage_fit.beta
    contrast = np.asarray(design_c, dtype=float) @ stage_fit.psi
    return baseline + np.maximum(contrast, 0.0)


@dataclass
class QLearnResult:
    """Per-stage fits and the estimated regime they induce."""

    stage_fits: list
    regime: Regime


def qlearn_fit(dataset: Dataset, specs, weights=None, masks=None) -> QLearnResult:
    """Backward recursion over all stages of ``dataset``.

    Parameters
    ----------
    dataset : Dataset
    specs : sequence of StageSpec
        One working model per stage; propensity entries are ignored here.
    weights : sequence of ndarray or None
        Optional per-stage case weights (None for OLS, the default).
    masks : sequence of ndarray or None
        Optional per-stage boolean row masks; a stage is fit on its masked
        rows while pseudo-outcomes are still produced for every row.
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
        w = None if weights is None else weights[k - 1]
        mask = None if masks is None else masks[k - 1]
        if mask is None:
            fit = q_stage_fit(design_h, design_c, actions, v, w, stage=k)
        else:
            mask = np.asarray(mask, dtype=bool)
            fit = q_stage_fit(
                design_h[mask],
                design_c[mask],
                actions[mask],
                v[mask],
                None if w is None else w[mask],
                stage=k,
            )
        fits[k - 1] = fit
        if k > 1:
            v = q_pseudo_outcome(fit, design_h, design_c)
    regime = Regime(
        tuple(
            DecisionRule(specs[k].c_features, fits[k].psi) for k in range(n_stages)
        )
    )
    return QLearnResult(stage_fits=fits, regime=regime)
