"""Regime values and Monte Carlo study machinery.

The population value H(d) of a regime d is the mean outcome were everyone
treated according to d.  For each built-in scenario H(d) has a closed form
built from normal half-line moments; ``value_gcomputation`` evaluates any
regime on any scenario by forward simulation from the true state laws,
averaging the true conditional mean outcome (no outcome noise is drawn, so
its Monte Carlo error comes from the state draws alone).

``run_mc_study`` repeats: draw a dataset (one stream per replication, keyed
by the replication index, so results do not depend on scheduling), fit the
requested estimators, record contrast coefficients and the value of the
estimated regime.  Summaries follow: means, SDs, componentwise MSE and the
A/Q MSE ratio, mean and median value efficiencies R = H(d-hat)/H(d-opt),
mean decision thresholds for two-coefficient rules, and the within-dataset
SD of fitted propensities.  Every summary carries its own Monte Carlo
standard error (SD over replications divided by sqrt of replications).

Replications that fail (singular stage system, non-convergent propensity)
are excluded and counted; more than 1% failed flags a warning in the
results, more than 10% raises ``StudyError``.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .alearn import alearn_fit
from .data import ArrayColumns, Regime
from .errors import (
    ExtremePropensityWarning,
    InvalidParameterError,
    NonConvergenceError,
    SingularSystemError,
    StudyError,
)
from .numerics import expit, trunc_norm_moments
from .qlearn import qlearn_fit
from .rng import RngStream, make_stream
from .scenarios import (
    MoodieParams,
    OneDecisionParams,
    TwoDecisionParams,
    scenario_registry,
    true_psi,
    true_regime,
)

__all__ = [
    "EstimatorSummary",
    "StudyConfig",
    "StudyResults",
    "median_efficiency",
    "propensity_sd_diagnostic",
    "regime_value_analytic",
    "run_mc_study",
    "value_gcomputation",
    "value_moodie_analytic",
    "value_one_decision_analytic",
    "value_two_decision_analytic",
]

ESTIMATOR_NAMES = ("qlearn", "alearn")
# Study failure-rate policy: warn above 1%, refuse to summarize above 10%.
FAILURE_WARN_RATE = 0.01
FAILURE_ERROR_RATE = 0.10


# ---------------------------------------------------------------------------
# Analytic regime values
# ---------------------------------------------------------------------------


def _linear_indicator_mean(c0, c1, r0, r1, mu, sd):
    """E[(c0 + c1 X) 1{r0 + r1 X > 0}] for X ~ N(mu, sd^2).

    A zero rule slope makes the indicator constant (strict inequality, so
    r0 = 0 means the indicator is 0).
    """
    if r1 == 0.0:
        return (c0 + c1 * mu) if r0 > 0.0 else 0.0
    cut = -r0 / r1
    side = "above" if r1 > 0.0 else "below"
    prob, partial = trunc_norm_moments(mu, sd, cut, side)
    return c0 * prob + c1 * partial


def value_one_decision_analytic(psi, params: OneDecisionParams | None = None) -> float:
    """Population value of the rule 1{psi0 + psi1 s1 > 0} in the one-stage
    scenario.

    H(d) = beta0 + beta1 E(S1) + beta2 E(S1^2)
           + E[1{psi0 + psi1 S1 > 0} (psi0* + psi1* S1)]

    with S1 ~ N(0, 1) and starred coefficients the true contrast.
    """
    if params is None:
        params = OneDecisionParams()
    psi = np.asarray(psi, dtype=float)
    b = np.asarray(params.beta)
    p0 = np.asarray(params.psi)
    base = b[0] + b[2]
    return float(base + _linear_indicator_mean(p0[0], p0[1], psi[0], psi[1], 0.0, 1.0))


def value_two_decision_analytic(psi1, psi2, params: TwoDecisionParams | None = None) -> float:
    """Population value of the two-stage rule pair in the two-stage scenario.

    Averages over the two equally likely values of S1.  Within each branch
    the stage-1 action a1 follows the stage-1 rule, S2 | s1, a1 is normal,
    and the expected outcome adds the true action-free mean (including the
    quadratic term against E S2^2 = mu^2 + var) to the true contrast gained
    on the event the stage-2 rule treats.
    """
    if params is None:
        params = TwoDecisionParams()
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    d = np.asarray(params.delta)
    b2 = np.asarray(params.beta2)
    p2 = np.asarray(params.psi2)
    sd2 = float(np.sqrt(params.s2_var))
    total = 0.0
    for s1 in (0.0, 1.0):
        a1 = 1.0 if psi1[0] + psi1[1] * s1 > 0.0 else 0.0
        mu = d[0] + d[1] * s1 + d[2] * a1 + d[3] * s1 * a1
        h_mean = (
            b2[0]
            + b2[1] * s1
            + b2[2] * a1
            + b2[3] * s1 * a1
            + b2[4] * mu
            + b2[5] * (mu * mu + sd2 * sd2)
        )
        gain = _linear_indicator_mean(
            p2[0] + p2[1] * a1, p2[2], psi2[0] + psi2[1] * a1, psi2[2], mu, sd2
        )
        total += 0.5 * (h_mean + gain)
    return float(total)


def value_moodie_analytic(psi1, psi2, params: MoodieParams | None = None) -> float:
    """Population value of the two-stage rule pair in the clinical scenario.

    The generative outcome is the potential optimal outcome minus the regret
    of each stage's action, and each stage's state has a normal marginal
    (S2 = s2_coef * S1 + noise), so

    H(d) = E(Yopt) - sum_k E[C_k(S_k) (1{C_k(S_k) > 0} - 1{rule_k treats})]

    with every term a normal half-line moment.  Equals
    yopt_intercept + yopt_slope * s1_mean exactly when both rules match the
    true contrasts' signs.
    """
    if params is None:
        params = MoodieParams()
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    p1 = np.asarray(params.psi1)
    p2 = np.asarray(params.psi2)
    mu1, sd1 = params.s1_mean, params.s1_sd
    mu2 = params.s2_coef * params.s1_mean
    sd2 = float(np.hypot(params.s2_coef * params.s1_sd, params.s2_sd))
    value = params.yopt_intercept + params.yopt_slope * params.s1_mean
    for true_c, rule, mu, sd in ((p1, psi1, mu1, sd1), (p2, psi2, mu2, sd2)):
        optimal = _linear_indicator_mean(true_c[0], true_c[1], true_c[0], true_c[1], mu, sd)
        achieved = _linear_indicator_mean(true_c[0], true_c[1], rule[0], rule[1], mu, sd)
        value -= optimal - achieved
    return float(value)


def regime_value_analytic(params, psi_list) -> float:
    """Closed-form H(d) for a stage-rule coefficient list on a built-in
    scenario."""
    if isinstance(params, OneDecisionParams):
        (psi,) = psi_list
        return value_one_decision_analytic(psi, params)
    if isinstance(params, TwoDecisionParams):
        psi1, psi2 = psi_list
        return value_two_decision_analytic(psi1, psi2, params)
    if isinstance(params, MoodieParams):
        psi1, psi2 = psi_list
        return value_moodie_analytic(psi1, psi2, params)
    raise InvalidParameterError(f"unknown scenario parameters {type(params).__name__}")


# ---------------------------------------------------------------------------
# g-computation
# ---------------------------------------------------------------------------


def value_gcomputation(params, regime: Regime, n_draws: int, stream: RngStream):
    """Estimate H(d) by forward simulation from the true state laws.

    States are drawn in time order from ``stream``; actions follow the
    regime; each draw contributes the true conditional mean outcome given
    its generated history.  Returns ``(value, se)``: the mean and its Monte
    Carlo standard error (None when ``n_draws`` is 1).
    """
    if n_draws < 1:
        raise InvalidParameterError("n_draws must be >= 1")
    if isinstance(params, OneDecisionParams):
        b = np.asarray(params.beta)
        p0 = np.asarray(params.psi)
        s1 = stream.normal(n_draws)
        cols = ArrayColumns(n_draws, states={1: s1})
        a1 = regime.actions(1, cols)
        u = b[0] + b[1] * s1 + b[2] * s1 * s1 + a1 * (p0[0] + p0[1] * s1)
    elif isinstance(params, TwoDecisionParams):
        d = np.asarray(params.delta)
        b2 = np.asarray(params.beta2)
        p2 = np.asarray(params.psi2)
        s1 = stream.bernoulli(0.5, n_draws).astype(float)
        cols = ArrayColumns(n_draws, states={1: s1})
        a1 = regime.actions(1, cols)
        mu2 = d[0] + d[1] * s1 + d[2] * a1 + d[3] * s1 * a1
        s2 = stream.normal(n_draws, loc=mu2, scale=np.sqrt(params.s2_var))
        cols.states[2] = s2
        cols.actions[1] = a1
        a2 = regime.actions(2, cols)
        h2 = (
            b2[0]
            + b2[1] * s1
            + b2[2] * a1
            + b2[3] * s1 * a1
            + b2[4] * s2
            + b2[5] * s2 * s2
        )
        u = h2 + a2 * (p2[0] + p2[1] * a1 + p2[2] * s2)
    elif isinstance(params, MoodieParams):
        p1 = np.asarray(params.psi1)
        p2 = np.asarray(params.psi2)
        s1 = stream.normal(n_draws, loc=params.s1_mean, scale=params.s1_sd)
        cols = ArrayColumns(n_draws, states={1: s1})
        a1 = regime.actions(1, cols)
        s2 = stream.normal(n_draws, loc=params.s2_coef * s1, scale=params.s2_sd)
        cols.states[2] = s2
        cols.actions[1] = a1
        a2 = regime.actions(2, cols)
        c1 = p1[0] + p1[1] * s1
        c2 = p2[0] + p2[1] * s2
        u = (
            params.yopt_intercept
            + params.yopt_slope * s1
            - c1 * ((c1 > 0.0) - a1)
            - c2 * ((c2 > 0.0) - a2)
        )
    else:
        raise InvalidParameterError(f"unknown scenario parameters {type(params).__name__}")
    value = float(np.mean(u))
    se = float(np.std(u, ddof=1) / np.sqrt(n_draws)) if n_draws > 1 else None
    return value, se


# ---------------------------------------------------------------------------
# Monte Carlo studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    """Configuration of one Monte Carlo study.

    ``estimators`` is a subset of ("qlearn", "alearn").  ``specs`` of None
    means the scenario's standard working models.  ``value_method`` is
    "analytic" or "gcomp"; the latter uses ``gcomp_draws`` state draws per
    replication.  ``threads`` parallelizes over replications without
    changing any result (each replication owns the stream keyed by its
    index).
    """

    scenario: str
    params: object | None = None
    n: int | None = None
    reps: int = 10000
    master_seed: int = 0
    estimators: tuple = ESTIMATOR_NAMES
    specs: tuple | None = None
    value_method: str = "analytic"
    gcomp_draws: int = 10000
    threads: int = 1

    def resolve(self):
        definition = scenario_registry(self.scenario)
        params = self.params if self.params is not None else definition.params_cls()
        if not isinstance(params, definition.params_cls):
            raise InvalidParameterError(
                f"params for {self.scenario} must be {definition.params_cls.__name__}"
            )
        n = self.n if self.n is not None else definition.default_n
        if n < 1 or self.reps < 1:
            raise InvalidParameterError("n and reps must be >= 1")
        specs = tuple(self.specs) if self.specs is not None else tuple(definition.working_specs())
        if len(specs) != definition.n_stages:
            raise InvalidParameterError("need one stage spec per scenario stage")
        estimators = tuple(self.estimators)
        if not estimators or any(e not in ESTIMATOR_NAMES for e in estimators):
            raise InvalidParameterError(f"estimators must be drawn from {ESTIMATOR_NAMES}")
        if self.value_method not in ("analytic", "gcomp"):
            raise InvalidParameterError("value_method must be 'analytic' or 'gcomp'")
        if self.threads < 1:
            raise InvalidParameterError("threads must be >= 1")
        return definition, params, n, specs, estimators


@dataclass
class EstimatorSummary:
    """Summary of one estimator over the included replications."""

    estimator: str
    n_included: int
    mean_psi: np.ndarray
    sd_psi: np.ndarray
    se_mean_psi: np.ndarray
    bias_psi: np.ndarray
    mse_psi: np.ndarray
    se_mse_psi: np.ndarray
    value_mean: float
    value_se: float
    value_median: float
    r_mean: float
    r_mean_se: float
    r_median: float
    threshold_mean: dict = field(default_factory=dict)
    threshold_se: dict = field(default_factory=dict)


@dataclass
class StudyResults:
    """Everything a study produced: per-replication records and summaries.

    ``psi_rep[e]`` is the (reps, p) array of contrast estimates for
    estimator ``e`` (rows of failed replications are NaN), ``value_rep[e]``
    the matching H(d-hat), and ``failed[e]`` the failure mask.  ``psi_true``
    concatenates the true stage contrasts in stage order.
    """

    config: StudyConfig
    psi_true: np.ndarray
    psi_labels: list
    h_opt: float
    psi_rep: dict
    value_rep: dict
    failed: dict
    summaries: dict
    mse_ratio: np.ndarray | None
    mse_ratio_se: np.ndarray | None
    propensity_sd: dict
    propensity_sd_se: dict
    n_failed: int
    failure_rate: float
    high_failure_warning: bool
    n_extreme_propensity: int = 0


def _within_sd(values: np.ndarray) -> float:
    # Sample SD (n-1 denominator): the two-point vector (0.4, 0.6) has SD
    # 0.1414..., and a constant vector has SD 0.
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def propensity_sd_diagnostic(per_rep_pihat) -> float:
    """Average over replications of the within-dataset SD of fitted
    propensities."""
    sds = [_within_sd(p) for p in per_rep_pihat]
    return float(np.mean(sds)) if sds else 0.0


def median_efficiency(results: StudyResults) -> dict:
    """Median over replications of H(d-hat), relative to H(d-opt), per
    estimator."""
    out = {}
    for est, summary in results.summaries.items():
        out[est] = summary.r_median
    return out


def _fit_one(estimator: str, dataset, specs):
    if estimator == "qlearn":
        return qlearn_fit(dataset, specs)
    return alearn_fit(dataset, specs)


def _run_one_rep(scenario, params, n, specs, estimators, value_method, gcomp_draws, master_seed, r):
    definition = scenario_registry(scenario)
    stream = make_stream(master_seed, r)
    dataset = definition.generate(params, n, stream)
    record = {}
    extreme = False
    for est in estimators:
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ExtremePropensityWarning)
                result = _fit_one(est, dataset, specs)
            extreme = extreme or any(
                issubclass(w.category, ExtremePropensityWarning) for w in caught
            )
        except (SingularSystemError, NonConvergenceError):
            record[est] = None
            continue
        psi_hat = np.concatenate([f.psi for f in result.stage_fits])
        if value_method == "analytic":
            value = regime_value_analytic(params, [f.psi for f in result.stage_fits])
        else:
            value, _ = value_gcomputation(params, result.regime, gcomp_draws, stream.substream(8))
        pihat_sd = None
        if est == "alearn":
            pihat_sd = [
                _within_sd(f.pihat) if f.pihat is not None else 0.0 for f in result.stage_fits
            ]
        record[est] = (psi_hat, value, pihat_sd)
    record["extreme_propensity"] = extreme
    return record


def _threshold_stats(psi_block: np.ndarray):
    """Mean and MC SE of the decision threshold -psi0/psi1 across
    replications, for a two-coefficient rule."""
    slopes = psi_block[:, 1]
    ok = slopes != 0.0
    if not np.any(ok):
        return float("nan"), float("nan")
    thr = -psi_block[ok, 0] / slopes[ok]
    se = float(np.std(thr, ddof=1) / np.sqrt(thr.size)) if thr.size > 1 else float("nan")
    return float(np.mean(thr)), se


def run_mc_study(config: StudyConfig) -> StudyResults:
    """Run a full Monte Carlo study.  See the module docstring."""
    definition, params, n, specs, estimators = config.resolve()
    psi_true_stages = true_psi(params)
    psi_true = np.concatenate(psi_true_stages)
    psi_labels = [
        f"psi{k}_{j}"
        for k, stage_psi in enumerate(psi_true_stages, start=1)
        for j in range(len(stage_psi))
    ]
    # The bias summaries and the analytic value compare fitted rule
    # coefficients against the scenario's canonical rule parameterization,
    # so the working contrast features must be exactly the canonical ones.
    canonical = [r.c_features.names() for r in true_regime(params).rules]
    supplied = [s.c_features.names() for s in specs]
    if supplied != canonical:
        raise InvalidParameterError(
            f"working contrast features must match the scenario rules: "
            f"expected {canonical}, got {supplied}"
        )
    h_opt = regime_value_analytic(params, psi_true_stages)

    reps = config.reps
    args = (
        config.scenario,
        params,
        n,
        specs,
        estimators,
        config.value_method,
        config.gcomp_draws,
        config.master_seed,
    )
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            records = list(
                pool.map(_rep_worker, [(args, r) for r in range(reps)], chunksize=256)
            )
    else:
        records = [_run_one_rep(*args, r) for r in range(reps)]

    p_total = psi_true.size
    psi_rep = {e: np.full((reps, p_total), np.nan) for e in estimators}
    value_rep = {e: np.full(reps, np.nan) for e in estimators}
    failed = {e: np.zeros(reps, dtype=bool) for e in estimators}
    pihat_sds = {e: [] for e in estimators}
    n_extreme = 0
    for r, record in enumerate(records):
        n_extreme += bool(record.get("extreme_propensity"))
        for est in estimators:
            entry = record[est]
            if entry is None:
                failed[est][r] = True
                continue
            psi_hat, value, pihat_sd = entry
            psi_rep[est][r] = psi_hat
            value_rep[est][r] = value
            if pihat_sd is not None:
                pihat_sds[est].append(pihat_sd)

    any_failed = np.zeros(reps, dtype=bool)
    for est in estimators:
        any_failed |= failed[est]
    n_failed = int(any_failed.sum())
    failure_rate = n_failed / reps
    if failure_rate > FAILURE_ERROR_RATE:
        raise StudyError(
            f"{n_failed} of {reps} replications failed ({failure_rate:.1%}); "
            "refusing to summarize"
        )

    # Per-stage slices of the concatenated psi vector
    slices = []
    start = 0
    for stage_psi in psi_true_stages:
        slices.append(slice(start, start + len(stage_psi)))
        start += len(stage_psi)

    summaries = {}
    for est in estimators:
        ok = ~failed[est]
        m = int(ok.sum())
        if m == 0:
            raise StudyError(f"all replications failed for {est}")
        block = psi_rep[est][ok]
        values = value_rep[est][ok]
        sq_err = (block - psi_true) ** 2
        mean_psi = block.mean(axis=0)
        sd_psi = block.std(axis=0, ddof=1) if m > 1 else np.zeros(p_total)
        value_se = float(values.std(ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
        thr_mean, thr_se = {}, {}
        for k, sl in enumerate(slices, start=1):
            if sl.stop - sl.start == 2:
                thr_mean[k], thr_se[k] = _threshold_stats(block[:, sl])
        summaries[est] = EstimatorSummary(
            estimator=est,
            n_included=m,
            mean_psi=mean_psi,
            sd_psi=sd_psi,
            se_mean_psi=sd_psi / np.sqrt(m),
            bias_psi=mean_psi - psi_true,
            mse_psi=sq_err.mean(axis=0),
            se_mse_psi=(sq_err.std(axis=0, ddof=1) / np.sqrt(m)) if m > 1 else np.zeros(p_total),
            value_mean=float(values.mean()),
            value_se=value_se,
            value_median=float(np.median(values)),
            r_mean=float(values.mean() / h_opt),
            r_mean_se=value_se / abs(h_opt) if m > 1 else float("nan"),
            r_median=float(np.median(values) / h_opt),
            threshold_mean=thr_mean,
            threshold_se=thr_se,
        )

    mse_ratio = None
    mse_ratio_se = None
    if "qlearn" in estimators and "alearn" in estimators:
        mse_ratio = summaries["alearn"].mse_psi / summaries["qlearn"].mse_psi
        both = ~(failed["qlearn"] | failed["alearn"])
        mb = int(both.sum())
        if mb > 1:
            ea = (psi_rep["alearn"][both] - psi_true) ** 2
            eq = (psi_rep["qlearn"][both] - psi_true) ** 2
            ma, mq = ea.mean(axis=0), eq.mean(axis=0)
            va, vq = ea.var(axis=0, ddof=1), eq.var(axis=0, ddof=1)
            cov = ((ea - ma) * (eq - mq)).sum(axis=0) / (mb - 1)
            var_ratio = (va / mq**2 + (ma**2) * vq / mq**4 - 2 * ma * cov / mq**3) / mb
            mse_ratio_se = np.sqrt(np.maximum(var_ratio, 0.0))

    propensity_sd = {}
    propensity_sd_se = {}
    if "alearn" in estimators and pihat_sds["alearn"]:
        stage_sds = np.asarray(pihat_sds["alearn"], dtype=float)
        m = stage_sds.shape[0]
        for k in range(stage_sds.shape[1]):
            propensity_sd[k + 1] = float(stage_sds[:, k].mean())
            propensity_sd_se[k + 1] = (
                float(stage_sds[:, k].std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
            )

    return StudyResults(
        config=config,
        psi_true=psi_true,
        psi_labels=psi_labels,
        h_opt=h_opt,
        psi_rep=psi_rep,
        value_rep=value_rep,
        failed=failed,
        summaries=summaries,
        mse_ratio=mse_ratio,
        mse_ratio_se=mse_ratio_se,
        propensity_sd=propensity_sd,
        propensity_sd_se=propensity_sd_se,
        n_failed=n_failed,
        failure_rate=failure_rate,
        high_failure_warning=failure_rate > FAILURE_WARN_RATE,
        n_extreme_propensity=n_extreme,
    )


def _rep_worker(packed):
    args, r = packed
    return _run_one_rep(*args, r)
