"""Synthetic cluster-randomized trials with known principal strata.

The generator instantiates every modeling assumption by construction:
cluster-level randomization with positivity, monotone survival through
the nested-probit truth, truncation by death, and nested-MAR masking
whose probabilities depend on (arm, covariates) only. Ground truth
(true strata, both potential outcomes, cluster intercepts) is kept in a
sidecar structure that the estimator never reads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import ClusterRecord, IndividualRecord, TrialDataset
from .errors import ConfigError
from .kernels import RngStream
from .strata import PrincipalStratum, survives

__all__ = [
    "CovariateSpec",
    "StrataTruth",
    "OutcomeTruth",
    "MissingnessSpec",
    "DgpConfig",
    "GroundTruth",
    "generate",
    "true_sace",
    "true_stratum_proportions",
    "write_ground_truth_csv",
    "wsd_covariate_specs",
    "preset_wsd",
    "preset_null",
    "preset_constant_effect",
    "preset_heterogeneous",
]

_NEVER = int(PrincipalStratum.NEVER_SURVIVOR)
_PROT = int(PrincipalStratum.PROTECTED)
_ALWAYS = int(PrincipalStratum.ALWAYS_SURVIVOR)


@dataclass(frozen=True)
class CovariateSpec:
    """One baseline covariate: kind in {normal, normal_clipped, bernoulli,
    poisson, ordinal, uniform} with kind-specific params."""

    name: str
    kind: str
    params: dict

    def draw(self, size, gen):
        p = self.params
        if self.kind == "normal":
            return gen.normal(p["mean"], p["sd"], size)
        if self.kind == "normal_clipped":
            return np.clip(gen.normal(p["mean"], p["sd"], size),
                           p["lo"], p["hi"])
        if self.kind == "bernoulli":
            return (gen.random(size) < p["p"]).astype(float)
        if self.kind == "poisson":
            return gen.poisson(p["lam"], size).astype(float)
        if self.kind == "ordinal":
            probs = np.asarray(p["probs"], dtype=float)
            return gen.choice(len(probs), size=size, p=probs / probs.sum()
                              ).astype(float)
        if self.kind == "uniform":
            return gen.uniform(p["lo"], p["hi"], size)
        raise ConfigError(f"unknown covariate kind {self.kind!r}")

    @property
    def dataset_kind(self):
        return ("ordinal" if self.kind in ("bernoulli", "ordinal")
                else "continuous")


@dataclass(frozen=True)
class StrataTruth:
    """True nested-probit means (population level) and optional cluster
    intercept scales for the two latents."""

    mq: object              # callable X -> array
    mw: object
    sd_b_q: float = 0.0
    sd_b_w: float = 0.0


@dataclass(frozen=True)
class OutcomeTruth:
    """True arm-stratum mean surfaces, residual scales, and a shared
    cluster-intercept scale."""

    mu_11_1: object
    mu_11_0: object
    mu_10_1: object
    sd_11_1: float
    sd_11_0: float
    sd_10_1: float
    sd_b: float = 0.0


def _as_rate(rate):
    if callable(rate):
        return rate
    value = float(rate)
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"missingness rate {value} outside [0, 1]")
    return lambda z, X: np.full(X.shape[0], value)


@dataclass(frozen=True)
class MissingnessSpec:
    """P(status unobserved | z, X) and P(outcome unobserved | survivor
    with observed status, z, X); constants or callables of (z, X)."""

    status: object = 0.0
    outcome: object = 0.0


@dataclass(frozen=True)
class DgpConfig:
    n_clusters: int
    cluster_size_range: tuple
    covariate_specs: tuple
    strata_model: StrataTruth
    outcome_model: OutcomeTruth
    missingness: MissingnessSpec = MissingnessSpec()
    treatment_fraction: float = 0.5
    seed: int = 0
    total_individuals: int | None = None

    def validate(self):
        lo, hi = self.cluster_size_range
        if self.n_clusters < 2:
            raise ConfigError("need at least 2 clusters (one per arm)")
        if not 1 <= lo <= hi:
            raise ConfigError("cluster_size_range must satisfy 1 <= lo <= hi")
        if not 0.0 < self.treatment_fraction < 1.0:
            raise ConfigError("treatment_fraction must lie in (0, 1)")
        if self.total_individuals is not None:
            if not lo * self.n_clusters <= self.total_individuals \
                    <= hi * self.n_clusters:
                raise ConfigError(
                    "total_individuals unreachable for the size range")
        for rate in (self.missingness.status, self.missingness.outcome):
            _as_rate(rate)
        return self


@dataclass
class GroundTruth:
    """Everything the estimator must never see."""

    g_true: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    cluster_index: np.ndarray
    z_individual: np.ndarray
    b_11_1: np.ndarray
    b_11_0: np.ndarray
    b_10_1: np.ndarray
    config: DgpConfig


def _cluster_sizes(config, gen):
    lo, hi = config.cluster_size_range
    target_mean = ((config.total_individuals / config.n_clusters)
                   if config.total_individuals else 0.5 * (lo + hi))
    lam = max(target_mean - lo, 0.05)
    sizes = np.clip(lo + gen.poisson(lam, config.n_clusters), lo, hi)
    if config.total_individuals is not None:
        total = int(config.total_individuals)
        guard = 0
        while sizes.sum() != total:
            i = int(gen.integers(config.n_clusters))
            if sizes.sum() < total and sizes[i] < hi:
                sizes[i] += 1
            elif sizes.sum() > total and sizes[i] > lo:
                sizes[i] -= 1
            guard += 1
            if guard > 100000:
                raise ConfigError("could not match total_individuals")
    return sizes.astype(int)


def generate(config: DgpConfig):
    """Draw one synthetic trial; returns (TrialDataset, GroundTruth)."""
    config.validate()
    rng = RngStream(config.seed, stream_id=0)
    gen = rng.generator
    C = config.n_clusters

    sizes = _cluster_sizes(config, gen)
    n = int(sizes.sum())
    clu = np.repeat(np.arange(C, dtype=np.int32), sizes)

    # complete randomization at the cluster level: both arms guaranteed
    n_treat = min(max(int(round(config.treatment_fraction * C)), 1), C - 1)
    order = gen.permutation(C)
    z_cluster = np.zeros(C, dtype=np.int8)
    z_cluster[order[:n_treat]] = 1
    z = z_cluster[clu]

    X = np.column_stack([spec.draw(n, gen) for spec in config.covariate_specs])
    names = [spec.name for spec in config.covariate_specs]

    # true strata via the nested-probit construction (monotone by design)
    st = config.strata_model
    b_q = gen.normal(0.0, st.sd_b_q, C) if st.sd_b_q > 0 else np.zeros(C)
    b_w = gen.normal(0.0, st.sd_b_w, C) if st.sd_b_w > 0 else np.zeros(C)
    q_lat = np.asarray(st.mq(X), dtype=float) + b_q[clu] + gen.standard_normal(n)
    w_lat = np.asarray(st.mw(X), dtype=float) + b_w[clu] + gen.standard_normal(n)
    g = np.where(q_lat <= 0, _NEVER, np.where(w_lat > 0, _ALWAYS, _PROT)
                 ).astype(np.int8)

    # potential outcomes where defined
    ot = config.outcome_model
    b111 = gen.normal(0.0, ot.sd_b, C) if ot.sd_b > 0 else np.zeros(C)
    b110 = gen.normal(0.0, ot.sd_b, C) if ot.sd_b > 0 else np.zeros(C)
    b101 = gen.normal(0.0, ot.sd_b, C) if ot.sd_b > 0 else np.zeros(C)
    y1 = np.full(n, np.nan)
    y0 = np.full(n, np.nan)
    alw = g == _ALWAYS
    prot = g == _PROT
    eps = gen.standard_normal((n, 3))
    y1[alw] = (np.asarray(ot.mu_11_1(X), dtype=float)[alw] + b111[clu][alw]
               + ot.sd_11_1 * eps[alw, 0])
    y0[alw] = (np.asarray(ot.mu_11_0(X), dtype=float)[alw] + b110[clu][alw]
               + ot.sd_11_0 * eps[alw, 1])
    y1[prot] = (np.asarray(ot.mu_10_1(X), dtype=float)[prot] + b101[clu][prot]
                + ot.sd_10_1 * eps[prot, 2])

    # consistency: observed survival and outcome under the assigned arm
    s = survives(g, z)
    y_assigned = np.where(z == 1, y1, y0)

    # nested-MAR masking: probabilities depend on (z, X) only
    p_status = _as_rate(config.missingness.status)(z, X)
    p_outcome = _as_rate(config.missingness.outcome)(z, X)
    r_s = (gen.random(n) >= p_status).astype(np.int8)
    r_y = np.zeros(n, dtype=np.int8)
    eligible = (r_s == 1) & (s == 1)
    r_y[eligible] = (gen.random(int(eligible.sum()))
                     >= p_outcome[eligible]).astype(np.int8)

    clusters = [
        ClusterRecord(f"c{idx:04d}", int(z_cluster[idx]), int(sizes[idx]))
        for idx in range(C)
    ]
    individuals = []
    for i in range(n):
        observed_s = int(s[i]) if r_s[i] == 1 else None
        observed_y = (float(y_assigned[i])
                      if (r_y[i] == 1 and s[i] == 1) else None)
        individuals.append(IndividualRecord(
            cluster_id=f"c{clu[i]:04d}",
            covariates=tuple(float(v) for v in X[i]),
            r_s=int(r_s[i]), s_obs=observed_s,
            r_y=int(r_y[i]), y_obs=observed_y,
        ))
    dataset = TrialDataset(
        clusters, individuals, names,
        covariate_kinds=[spec.dataset_kind for spec in config.covariate_specs],
        metadata={"generator_seed": config.seed},
    )
    truth = GroundTruth(
        g_true=g, y1=y1, y0=y0, cluster_index=clu, z_individual=z,
        b_11_1=b111, b_11_0=b110, b_10_1=b101, config=config,
    )
    return dataset, truth


def true_sace(truth: GroundTruth) -> float:
    """Mean of Y(1) - Y(0) over the true always-survivors."""
    alw = truth.g_true == _ALWAYS
    return float((truth.y1[alw] - truth.y0[alw]).mean())


def true_stratum_proportions(truth: GroundTruth):
    n = truth.g_true.size
    return (
        float((truth.g_true == _NEVER).sum() / n),
        float((truth.g_true == _PROT).sum() / n),
        float((truth.g_true == _ALWAYS).sum() / n),
    )


def write_ground_truth_csv(truth: GroundTruth, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["individual", "true_g", "y1", "y0",
                         "b_11_1", "b_11_0", "b_10_1"])
        for i in range(truth.g_true.size):
            c = truth.cluster_index[i]
            writer.writerow([
                i, int(truth.g_true[i]),
                "" if math.isnan(truth.y1[i]) else repr(float(truth.y1[i])),
                "" if math.isnan(truth.y0[i]) else repr(float(truth.y0[i])),
                repr(float(truth.b_11_1[c])),
                repr(float(truth.b_11_0[c])),
                repr(float(truth.b_10_1[c])),
            ])


# ---------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------

_AGE_MEAN, _AGE_SD = 74.13, 13.94
_VAS_MEAN, _VAS_SD = 53.04, 22.02
_DEP_MEAN, _DEP_SD = 28.13, 15.04


def wsd_covariate_specs():
    """Covariate marginals calibrated to the trial's baseline table."""
    return (
        CovariateSpec("age", "normal", {"mean": _AGE_MEAN, "sd": _AGE_SD}),
        CovariateSpec("deprivation", "normal_clipped",
                      {"mean": _DEP_MEAN, "sd": _DEP_SD,
                       "lo": 1.89, "hi": 66.49}),
        CovariateSpec("n_comorbid", "poisson", {"lam": 1.09}),
        CovariateSpec("physical_health", "normal",
                      {"mean": 28.09, "sd": 8.62}),
        CovariateSpec("mental_health", "normal",
                      {"mean": 33.05, "sd": 7.87}),
        CovariateSpec("baseline_vas", "normal_clipped",
                      {"mean": _VAS_MEAN, "sd": _VAS_SD, "lo": 0.0,
                       "hi": 100.0}),
        CovariateSpec("nonwhite", "bernoulli", {"p": 0.1144}),
        CovariateSpec("female", "bernoulli", {"p": 0.3566}),
        CovariateSpec("education", "ordinal",
                      {"probs": (0.6552, 0.1884, 0.0606, 0.0345, 0.0614)}),
        CovariateSpec("living_alone", "bernoulli", {"p": 0.5290}),
    )


def _wsd_columns(X):
    return {
        "age": X[:, 0], "deprivation": X[:, 1], "n_comorbid": X[:, 2],
        "physical": X[:, 3], "mental": X[:, 4], "vas": X[:, 5],
        "nonwhite": X[:, 6], "female": X[:, 7], "education": X[:, 8],
        "living_alone": X[:, 9],
    }


def _strata_truth_for_proportions(p_never, p_always, age_tilt=0.3):
    """Nested-probit truth with an age gradient whose marginal stratum
    proportions equal the targets exactly (age is Gaussian, so the
    probit marginal has a closed form)."""
    from scipy.special import ndtri

    p_capable = 1.0 - p_never
    p_always_given_capable = p_always / p_capable
    scale = math.sqrt(1.0 + age_tilt**2)
    c_q = ndtri(p_capable) * scale
    c_w = ndtri(p_always_given_capable) * scale

    def mq(X):
        age_std = (X[:, 0] - _AGE_MEAN) / _AGE_SD
        return c_q - age_tilt * age_std

    def mw(X):
        age_std = (X[:, 0] - _AGE_MEAN) / _AGE_SD
        return c_w - age_tilt * age_std

    return StrataTruth(mq=mq, mw=mw)


def _wsd_rate_status(z, X):
    cols = _wsd_columns(X)
    age_std = (cols["age"] - _AGE_MEAN) / _AGE_SD
    return np.clip(0.199 + 0.04 * np.tanh(age_std) + 0.01 * (2.0 * z - 1.0),
                   0.02, 0.6)


def _wsd_rate_outcome(z, X):
    cols = _wsd_columns(X)
    vas_std = (cols["vas"] - _VAS_MEAN) / _VAS_SD
    return np.clip(0.0755 + 0.03 * np.tanh(vas_std), 0.01, 0.5)


def _wsd_base_mu(X):
    cols = _wsd_columns(X)
    return (48.0
            + 0.12 * (cols["age"] - _AGE_MEAN)
            + 0.35 * (cols["vas"] - _VAS_MEAN)
            + 3.0 * np.sin(cols["deprivation"] / 8.0)
            - 1.0 * cols["n_comorbid"])


def preset_wsd(seed=0):
    """Trial-shaped default: 204 clusters of sizes 1-26 totalling 1189
    individuals, calibrated covariate marginals, missingness frequencies
    near the reported 10.7%/5.2%/19.9%, a nonlinear outcome surface and
    a treatment-covariate interaction."""
    def mu_11_0(X):
        return _wsd_base_mu(X)

    def mu_11_1(X):
        cols = _wsd_columns(X)
        return (_wsd_base_mu(X) + 0.5
                + 2.0 * (cols["deprivation"] > 15.0)
                * (1.0 - cols["living_alone"]))

    def mu_10_1(X):
        return _wsd_base_mu(X) - 2.0

    return DgpConfig(
        n_clusters=204,
        cluster_size_range=(1, 26),
        covariate_specs=wsd_covariate_specs(),
        strata_model=_strata_truth_for_proportions(0.124, 0.844),
        outcome_model=OutcomeTruth(
            mu_11_1=mu_11_1, mu_11_0=mu_11_0, mu_10_1=mu_10_1,
            sd_11_1=10.0, sd_11_0=10.0, sd_10_1=10.0, sd_b=2.0),
        missingness=MissingnessSpec(status=_wsd_rate_status,
                                    outcome=_wsd_rate_outcome),
        treatment_fraction=0.5,
        seed=seed,
        total_individuals=1189,
    )


def _desk_scale_kwargs(seed, n_clusters, cluster_size_range, total):
    return dict(n_clusters=n_clusters, cluster_size_range=cluster_size_range,
                covariate_specs=wsd_covariate_specs(), seed=seed,
                treatment_fraction=0.5, total_individuals=total)


def _recovery_base_mu(X):
    cols = _wsd_columns(X)
    return (50.0
            + 0.10 * (cols["age"] - _AGE_MEAN)
            + 0.30 * (cols["vas"] - _VAS_MEAN)
            + 1.5 * cols["female"])


def preset_null(seed=0, n_clusters=200, cluster_size_range=(3, 9),
                total_individuals=1200, outcome_sd=10.0):
    """No treatment effect anywhere; strata proportions (0.12, 0.04, 0.84);
    nested-MAR missingness at the reported frequencies."""
    def mu(X):
        return _recovery_base_mu(X)

    def mu_prot(X):
        return _recovery_base_mu(X) - 2.0

    return DgpConfig(
        strata_model=_strata_truth_for_proportions(0.12, 0.84),
        outcome_model=OutcomeTruth(
            mu_11_1=mu, mu_11_0=mu, mu_10_1=mu_prot,
            sd_11_1=outcome_sd, sd_11_0=outcome_sd, sd_10_1=outcome_sd,
            sd_b=2.0),
        missingness=MissingnessSpec(status=_wsd_rate_status,
                                    outcome=_wsd_rate_outcome),
        **_desk_scale_kwargs(seed, n_clusters, cluster_size_range,
                             total_individuals),
    )


def preset_constant_effect(seed=0, tau=5.0, n_clusters=200,
                           cluster_size_range=(3, 9),
                           total_individuals=1200, outcome_sd=10.0):
    """Constant additive effect tau for every always-survivor."""
    def mu_treated(X):
        return _recovery_base_mu(X) + tau

    def mu_control(X):
        return _recovery_base_mu(X)

    def mu_prot(X):
        return _recovery_base_mu(X) - 2.0

    return DgpConfig(
        strata_model=_strata_truth_for_proportions(0.12, 0.84),
        outcome_model=OutcomeTruth(
            mu_11_1=mu_treated, mu_11_0=mu_control, mu_10_1=mu_prot,
            sd_11_1=outcome_sd, sd_11_0=outcome_sd, sd_10_1=outcome_sd,
            sd_b=2.0),
        missingness=MissingnessSpec(status=_wsd_rate_status,
                                    outcome=_wsd_rate_outcome),
        **_desk_scale_kwargs(seed, n_clusters, cluster_size_range,
                             total_individuals),
    )


def preset_heterogeneous(seed=0, step=4.0, threshold=15.0, n_clusters=200,
                         cluster_size_range=(3, 9), total_individuals=1200,
                         outcome_sd=5.0):
    """CSACE = step * 1[deprivation > threshold] among always-survivors."""
    def mu_treated(X):
        cols = _wsd_columns(X)
        return _recovery_base_mu(X) + step * (cols["deprivation"] > threshold)

    def mu_control(X):
        return _recovery_base_mu(X)

    def mu_prot(X):
        return _recovery_base_mu(X) - 2.0

    return DgpConfig(
        strata_model=_strata_truth_for_proportions(0.12, 0.84),
        outcome_model=OutcomeTruth(
            mu_11_1=mu_treated, mu_11_0=mu_control, mu_10_1=mu_prot,
            sd_11_1=outcome_sd, sd_11_0=outcome_sd, sd_10_1=outcome_sd,
            sd_b=1.5),
        missingness=MissingnessSpec(status=_wsd_rate_status,
                                    outcome=_wsd_rate_outcome),
        **_desk_scale_kwargs(seed, n_clusters, cluster_size_range,
                             total_individuals),
    )
