"""Gibbs driver: initialization, the six-step update schedule,
nested-MAR missing-data handling, chain management, posterior storage.

Each iteration updates, in order: (i) the three outcome models on their
current arm-stratum subsets, (ii) their residual variances, (iii) the
membership means on the current latent normals, (iv) the latent
normals from their truncated full conditionals, (v) stratum labels from
posteriors combining membership and outcome likelihood, and (vi) the
missing data: survival implied by the fresh label where unobserved,
outcomes drawn from the matching arm-stratum model for survivors,
undefined for non-survivors. The literal order is kept even though
other Gibbs schedules would be valid.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field

import numpy as np

from .bart import SumOfTreesModel, TreePrior, fit_probit_latent
from .data import TrialDataset
from .errors import (
    ConfigError,
    ContractViolation,
    DataError,
    InitializationError,
)
from .kernels import RngStream, normal_cdf, normal_logpdf, truncated_normal_array
from .outcomes import OutcomeModelSet, update_outcome_models
from .strata import (
    PrincipalStratum,
    StrataState,
    membership_probs,
    observed_likelihood,
    sample_label,
    sample_labels_array,
    sample_latents_array,
    survives,
)

__all__ = [
    "SamplerConfig",
    "PosteriorStore",
    "GibbsSampler",
    "initialize",
    "run_chain",
    "impute_missing_survival",
    "fit",
]

CHECKPOINT_FORMAT_VERSION = 1

_NEVER = int(PrincipalStratum.NEVER_SURVIVOR)
_PROT = int(PrincipalStratum.PROTECTED)
_ALWAYS = int(PrincipalStratum.ALWAYS_SURVIVOR)


@dataclass(frozen=True)
class SamplerConfig:
    """Tuning knobs for one fit; defaults follow the production run
    length (20,000 iterations, first 10,000 discarded)."""

    n_iter: int = 20000
    burn_in: int = 10000
    thin: int = 1
    n_chains: int = 2
    seed: int = 0
    k_trees: int = 50
    probit_k_trees: int | None = None
    fit_w_on_all: bool = True
    counterfactual_noise: bool = False
    debug_checks: bool = True
    min_structural_rows: int = 5
    init_fit_sweeps: int = 20
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    dump_trees_on_checkpoint: bool = False
    tree_alpha: float = 0.95
    tree_beta: float = 2.0
    p_grow: float = 0.28
    p_prune: float = 0.28
    p_change: float = 0.44
    n_cutpoints: int = 100
    leaf_prior_k: float = 2.0
    resid_prior_shape: float = 1e-3
    resid_prior_rate: float = 1e-3
    intercept_prior_shape: float = 1.5
    intercept_prior_rate: float = 1.5

    def validate(self):
        if self.n_iter < 1:
            raise ConfigError("n_iter must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.n_chains < 1:
            raise ConfigError("n_chains must be >= 1")
        if self.k_trees < 1:
            raise ConfigError("k_trees must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.checkpoint_every and not self.checkpoint_path:
            raise ConfigError("checkpoint_every requires checkpoint_path")
        return self

    @property
    def n_retained(self):
        """Retained draws per chain: ceil((n_iter - burn_in) / thin)."""
        span = self.n_iter - self.burn_in
        return (span + self.thin - 1) // self.thin


@dataclass
class PosteriorStore:
    """Retained post-burn-in draws, possibly pooled over chains.

    ``yhat1``/``yhat0`` hold the paired counterfactual predictions for
    individuals labeled always-survivor in that draw and NaN elsewhere.
    ``loglik`` is the per-iteration observed-data log likelihood, one
    row per chain (full chain length, not only retained draws).
    """

    labels: np.ndarray
    yhat1: np.ndarray
    yhat0: np.ndarray
    stratum_counts: np.ndarray
    resid_vars: np.ndarray
    intercept_vars: np.ndarray
    chain_id: np.ndarray
    loglik: np.ndarray
    chain_labels: tuple
    n_iter: int
    burn_in: int
    thin: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.labels.shape[0]

    @property
    def n_individuals(self):
        return self.labels.shape[1]

    def chain_slice(self, chain):
        keep = self.chain_id == chain
        row = self.chain_labels.index(chain)
        return PosteriorStore(
            labels=self.labels[keep], yhat1=self.yhat1[keep],
            yhat0=self.yhat0[keep], stratum_counts=self.stratum_counts[keep],
            resid_vars=self.resid_vars[keep],
            intercept_vars=self.intercept_vars[keep],
            chain_id=self.chain_id[keep], loglik=self.loglik[row:row + 1],
            chain_labels=(chain,), n_iter=self.n_iter, burn_in=self.burn_in,
            thin=self.thin, diagnostics=dict(self.diagnostics),
        )

    @classmethod
    def pooled(cls, stores):
        """Concatenate single-chain stores (draws pooled after per-chain
        burn-in; chain identity retained for per-chain summaries)."""
        if len(stores) == 1:
            return stores[0]
        diag = {}
        for s in stores:
            for k, v in s.diagnostics.items():
                diag[k] = diag.get(k, 0) + v
        return cls(
            labels=np.concatenate([s.labels for s in stores]),
            yhat1=np.concatenate([s.yhat1 for s in stores]),
            yhat0=np.concatenate([s.yhat0 for s in stores]),
            stratum_counts=np.concatenate([s.stratum_counts for s in stores]),
            resid_vars=np.concatenate([s.resid_vars for s in stores]),
            intercept_vars=np.concatenate([s.intercept_vars for s in stores]),
            chain_id=np.concatenate([s.chain_id for s in stores]),
            loglik=np.vstack([s.loglik for s in stores]),
            chain_labels=tuple(c for s in stores for c in s.chain_labels),
            n_iter=stores[0].n_iter, burn_in=stores[0].burn_in,
            thin=stores[0].thin, diagnostics=diag,
        )

    def equals(self, other):
        """Bitwise equality of every retained array (NaN == NaN)."""
        return (
            np.array_equal(self.labels, other.labels)
            and np.array_equal(self.yhat1, other.yhat1, equal_nan=True)
            and np.array_equal(self.yhat0, other.yhat0, equal_nan=True)
            and np.array_equal(self.stratum_counts, other.stratum_counts)
            and np.array_equal(self.resid_vars, other.resid_vars)
            and np.array_equal(self.intercept_vars, other.intercept_vars)
            and np.array_equal(self.loglik, other.loglik, equal_nan=True)
        )


def _logistic_beta(X, target, ridge=1e-4, max_iter=30):
    """Ridge-stabilized IRLS logistic fit; returns (intercept, coefs).
    Used only for sampler starting values."""
    n = X.shape[0]
    D = np.column_stack([np.ones(n), X])
    beta = np.zeros(D.shape[1])
    for _ in range(max_iter):
        eta = np.clip(D @ beta, -30.0, 30.0)
        p = 1.0 / (1.0 + np.exp(-eta))
        wgt = np.maximum(p * (1.0 - p), 1e-6)
        work = eta + (target - p) / wgt
        A = (D * wgt[:, None]).T @ D + ridge * np.eye(D.shape[1])
        rhs = (D * wgt[:, None]).T @ work
        new_beta = np.linalg.solve(A, rhs)
        if np.max(np.abs(new_beta - beta)) < 1e-8:
            beta = new_beta
            break
        beta = new_beta
    return beta


def _logistic_eta(X, beta):
    n = X.shape[0]
    return np.clip(np.column_stack([np.ones(n), X]) @ beta, -30.0, 30.0)


class GibbsSampler:
    """One chain of the principal-stratification sampler.

    Construction performs the full initialization: deterministic labels
    where monotonicity identifies them, random admissible labels in the
    mixture cells, survival for unobserved-status individuals imputed
    from a preliminary probit tree fit, outcome models seeded on the
    initially labeled subsets, membership means seeded from parametric
    logistic fits, latents drawn from their truncated regions.
    """

    def __init__(self, dataset: TrialDataset, config: SamplerConfig,
                 chain_id=0):
        config.validate()
        if dataset.has_covariate_gaps:
            raise DataError(
                "dataset still has covariate gaps; run "
                "impute_baseline_covariates first")
        self.dataset = dataset
        self.config = config
        self.chain_id = int(chain_id)
        self.rng = RngStream(config.seed, stream_id=self.chain_id)

        self.X = np.asarray(dataset.covariate_matrix, dtype=float)
        self.z = dataset.z_individual.astype(np.int8)
        self.clu = dataset.cluster_index
        self.r_s = dataset.r_s
        self.s_obs = dataset.s_obs
        self.r_y = dataset.r_y
        self.y_obs = dataset.y_obs
        self.n = dataset.n_individuals
        self.y_is_observed = self.r_y == 1
        # survival used by the label step: observed value, or -1 so the
        # label is drawn from the membership prior directly
        self._s_for_labels = np.where(self.r_s == 1, self.s_obs,
                                      -1).astype(np.int8)

        self.it = 0
        self.diagnostics = {
            "empty_subset_skips": 0,
            "frozen_structure_updates": 0,
            "label_underflow_fallbacks": 0,
        }
        self._store_labels = []
        self._store_yhat1 = []
        self._store_yhat0 = []
        self._store_counts = []
        self._store_resid_vars = []
        self._store_intercept_vars = []
        self._loglik_trace = []

        self._build_models()
        self._initialize_state()

    # -- construction ----------------------------------------------------

    def _tree_prior(self):
        cfg = self.config
        return TreePrior(cfg.tree_alpha, cfg.tree_beta, cfg.p_grow,
                         cfg.p_prune, cfg.p_change)

    def _new_model(self, n_trees, *, probit, y_for_scale=None, X=None):
        cfg = self.config
        return SumOfTreesModel(
            self.X if X is None else X, self.clu, n_trees=n_trees,
            prior=self._tree_prior(),
            standardize=not probit,
            y_for_scale=y_for_scale,
            fixed_resid_var=1.0 if probit else None,
            leaf_prior_k=cfg.leaf_prior_k,
            resid_prior_shape=cfg.resid_prior_shape,
            resid_prior_rate=cfg.resid_prior_rate,
            intercept_prior_shape=cfg.intercept_prior_shape,
            intercept_prior_rate=cfg.intercept_prior_rate,
            n_cutpoints=cfg.n_cutpoints,
        )

    def _build_models(self):
        cfg = self.config
        obs_y_treated = self.y_obs[(self.z == 1) & self.y_is_observed]
        obs_y_control = self.y_obs[(self.z == 0) & self.y_is_observed]
        obs_surv_treated = ((self.z == 1) & (self.r_s == 1)
                            & (self.s_obs == 1)).sum()
        obs_surv_control = ((self.z == 0) & (self.r_s == 1)
                            & (self.s_obs == 1)).sum()
        problems = []
        if obs_surv_treated == 0:
            problems.append("no observed survivors in the treated arm")
        if obs_surv_control == 0:
            problems.append("no observed survivors in the control arm")
        if obs_y_treated.size == 0:
            problems.append("no observed outcomes in the treated arm")
        if obs_y_control.size == 0:
            problems.append("no observed outcomes in the control arm")
        if problems:
            raise InitializationError(
                "cannot seed the sampler: " + "; ".join(problems))

        k_probit = cfg.probit_k_trees or cfg.k_trees
        self.m_q = self._new_model(k_probit, probit=True)
        self.m_w = self._new_model(k_probit, probit=True)
        self.models = OutcomeModelSet(
            m_11_1=self._new_model(cfg.k_trees, probit=False,
                                   y_for_scale=obs_y_treated),
            m_11_0=self._new_model(cfg.k_trees, probit=False,
                                   y_for_scale=obs_y_control),
            m_10_1=self._new_model(cfg.k_trees, probit=False,
                                   y_for_scale=obs_y_treated),
        )

    def _impute_initial_survival(self):
        """Preliminary probit tree fit of observed survival on (X, z);
        missing-status individuals get a Bernoulli draw from it."""
        rng = self.rng
        gen = rng.generator
        obs = np.nonzero(self.r_s == 1)[0]
        miss = np.nonzero(self.r_s == 0)[0]
        if miss.size == 0:
            return np.zeros(0, dtype=np.int8), miss
        design = np.column_stack([self.X, self.z.astype(float)])
        model = self._new_model(min(self.config.k_trees, 30), probit=True,
                                X=design)
        s_vals = self.s_obs[obs]
        lo = np.where(s_vals == 1, 0.0, -np.inf)
        hi = np.where(s_vals == 1, np.inf, 0.0)
        latent = truncated_normal_array(np.zeros(obs.size), 1.0, lo, hi, rng)
        for _ in range(self.config.init_fit_sweeps):
            model.backfit(latent, rng, rows=obs)
            mu = model.predict_rows(obs)
            latent = truncated_normal_array(mu, 1.0, lo, hi, rng)
        p_surv = normal_cdf(model.predict_rows(miss))
        s_imp = (gen.random(miss.size) < p_surv).astype(np.int8)
        return s_imp, miss

    def _initialize_state(self):
        rng = self.rng
        gen = rng.generator
        n = self.n
        g = np.full(n, -1, dtype=np.int8)

        obs = self.r_s == 1
        g[(self.z == 1) & obs & (self.s_obs == 0)] = _NEVER
        g[(self.z == 0) & obs & (self.s_obs == 1)] = _ALWAYS

        # mixture cells: random admissible labels, with interior weights
        # matched to the design-identified survival moments
        # (P(S|z=1) = p11 + p10, P(S|z=0) = p11) so the chain starts near
        # a plausible stratum composition instead of a 50/50 split
        st = float(self.s_obs[(self.z == 1) & obs].mean())
        sc = float(self.s_obs[(self.z == 0) & obs].mean())
        p10_hat = min(max(st - sc, 0.02), 0.9)
        prot_given_ts = float(np.clip(p10_hat / max(st, 1e-6), 0.05, 0.95))
        prot_given_cd = float(np.clip(p10_hat / max(1.0 - sc, 1e-6),
                                      0.05, 0.95))
        ts = np.nonzero((self.z == 1) & obs & (self.s_obs == 1))[0]
        g[ts] = np.where(gen.random(ts.size) < prot_given_ts, _PROT, _ALWAYS)
        cd = np.nonzero((self.z == 0) & obs & (self.s_obs == 0))[0]
        g[cd] = np.where(gen.random(cd.size) < prot_given_cd, _PROT, _NEVER)

        # unobserved survival: preliminary tree fit, then admissible labels
        s_imp, miss = self._impute_initial_survival()
        if miss.size:
            z_m = self.z[miss]
            u = gen.random(miss.size)
            lab = np.empty(miss.size, dtype=np.int8)
            lab[(z_m == 1) & (s_imp == 0)] = _NEVER
            lab[(z_m == 0) & (s_imp == 1)] = _ALWAYS
            m_ts = (z_m == 1) & (s_imp == 1)
            lab[m_ts] = np.where(u[m_ts] < prot_given_ts, _PROT, _ALWAYS)
            m_cd = (z_m == 0) & (s_imp == 0)
            lab[m_cd] = np.where(u[m_cd] < prot_given_cd, _PROT, _NEVER)
            g[miss] = lab
        if (g < 0).any():
            raise ContractViolation("initialization left unlabeled rows")
        self.g = g
        self.s_current = survives(g, self.z)

        # seed outcome models on the initially labeled complete cases
        cells = (
            (self.models.m_11_1, (g == _ALWAYS) & (self.z == 1)),
            (self.models.m_11_0, (g == _ALWAYS) & (self.z == 0)),
            (self.models.m_10_1, (g == _PROT) & (self.z == 1)),
        )
        for model, mask in cells:
            rows = np.nonzero(mask & self.y_is_observed)[0]
            if rows.size == 0:
                continue
            structural = rows.size >= self.config.min_structural_rows
            for _ in range(self.config.init_fit_sweeps):
                model.backfit(self.y_obs[rows], rng, rows=rows,
                              structural=structural)
        self._refresh_outcome_caches()

        # outcomes: observed where available, posterior draws for
        # survivors lacking one, undefined for non-survivors
        self._impute_outcomes()

        # membership means seeded from parametric logistic fits of the
        # initial labels (logit scale shrunk onto the probit scale)
        beta_q = _logistic_beta(self.X, (g != _NEVER).astype(float))
        self._mq = _logistic_eta(self.X, beta_q) / 1.7
        capable = np.nonzero(g != _NEVER)[0]
        if capable.size and np.unique(g[capable]).size > 1:
            beta_w = _logistic_beta(
                self.X[capable], (g[capable] == _ALWAYS).astype(float))
            self._mw = _logistic_eta(self.X, beta_w) / 1.7
        else:
            self._mw = np.zeros(n)
        self.q, self.w = sample_latents_array(
            g, self._mq, self._mw, rng, w_for_never=self.config.fit_w_on_all)

    # -- caches -----------------------------------------------------------

    def _refresh_outcome_caches(self):
        self._mu111 = self.models.m_11_1.predict_rows()
        self._mu110 = self.models.m_11_0.predict_rows()
        self._mu101 = self.models.m_10_1.predict_rows()

    def _impute_outcomes(self):
        """Step (vi) outcome part: survivors without an observed outcome
        draw from their arm-stratum model; non-survivors stay undefined."""
        gen = self.rng.generator
        y = np.where(self.y_is_observed, self.y_obs, np.nan)
        need = (self.s_current == 1) & ~self.y_is_observed
        if need.any():
            noise = gen.standard_normal(int(need.sum()))
            mu = np.empty(noise.size)
            sd = np.empty(noise.size)
            zi = self.z[need]
            gi = self.g[need]
            m111 = (zi == 1) & (gi == _ALWAYS)
            m101 = (zi == 1) & (gi == _PROT)
            m110 = (zi == 0) & (gi == _ALWAYS)
            mu[m111] = self._mu111[need][m111]
            sd[m111] = np.sqrt(self.models.var_11_1)
            mu[m101] = self._mu101[need][m101]
            sd[m101] = np.sqrt(self.models.var_10_1)
            mu[m110] = self._mu110[need][m110]
            sd[m110] = np.sqrt(self.models.var_11_0)
            y[np.nonzero(need)[0]] = mu + sd * noise
        self.y_current = y

    # -- one iteration ------------------------------------------------------

    def step(self, update_models=True):
        """One full update (i)-(vi). ``update_models=False`` freezes all
        five mean functions and variances (used by exactness tests)."""
        cfg = self.config
        rng = self.rng

        if update_models:
            # (i) + (ii): outcome models and their variances
            update_outcome_models(
                self.g, self.z, self.y_current, self.models, rng,
                min_structural_rows=cfg.min_structural_rows)
            self._refresh_outcome_caches()
            # (iii): membership means on the current latents
            fit_probit_latent(self.m_q, self.q, rng)
            if cfg.fit_w_on_all:
                fit_probit_latent(self.m_w, self.w, rng)
            else:
                rows = np.nonzero(self.g != _NEVER)[0]
                fit_probit_latent(self.m_w, self.w[rows], rng, rows=rows)
            self._mq = self.m_q.predict_rows()
            self._mw = self.m_w.predict_rows()

        # (iv): latent normals under the current labels
        self.q, self.w = sample_latents_array(
            self.g, self._mq, self._mw, rng,
            w_for_never=cfg.fit_w_on_all)
        if cfg.debug_checks:
            self._check_latent_regions()

        # (v): stratum labels
        probs = membership_probs(self._mq, self._mw)
        logf11 = normal_logpdf(self.y_obs, self._mu111, self.models.var_11_1)
        logf10 = normal_logpdf(self.y_obs, self._mu101, self.models.var_10_1)
        labels, fallbacks = sample_labels_array(
            self.z, self._s_for_labels, logf11, logf10, probs, rng,
            self.y_is_observed)
        self.diagnostics["label_underflow_fallbacks"] += fallbacks
        self.g = labels

        # (vi): nested-MAR imputation
        self.s_current = survives(self.g, self.z)
        self._impute_outcomes()

        # observed-data log likelihood (diagnostic trace)
        logf11_arm = np.where(self.z == 1, logf11,
                              normal_logpdf(self.y_obs, self._mu110,
                                            self.models.var_11_0))
        ll = observed_likelihood(self.z, self.s_obs, self.y_is_observed,
                                 probs, logf11_arm, logf10)
        self._loglik_trace.append(ll)

        if cfg.debug_checks:
            self._assert_invariants()

        if self.it >= cfg.burn_in and (self.it - cfg.burn_in) % cfg.thin == 0:
            self._record()
        self.it += 1

        if cfg.checkpoint_every and self.it % cfg.checkpoint_every == 0:
            self.save_checkpoint(cfg.checkpoint_path)
            if cfg.dump_trees_on_checkpoint:
                self._dump_trees(cfg.checkpoint_path)

    def _check_latent_regions(self):
        never = self.g == _NEVER
        if (self.q[never] > 0).any() or (self.q[~never] <= 0).any():
            raise ContractViolation("latent q drawn outside its region")
        prot = self.g == _PROT
        alw = self.g == _ALWAYS
        if (self.w[prot] > 0).any() or (self.w[alw] <= 0).any():
            raise ContractViolation("latent w drawn outside its region")

    def _assert_invariants(self):
        state = StrataState(self.q, self.w, self.g, self.s_current,
                            self.y_current)
        # labels were redrawn after the latents, so the latent-region
        # part is checked at draw time instead (see step (iv))
        state.validate(self.z, self.r_s, self.s_obs, check_latents=False)
        obs = self.r_s == 1
        if (self.g[(self.z == 1) & obs & (self.s_obs == 0)] != _NEVER).any():
            raise ContractViolation("identified treated non-survivor flipped")
        if (self.g[(self.z == 0) & obs & (self.s_obs == 1)] != _ALWAYS).any():
            raise ContractViolation("identified control survivor flipped")

    def _record(self):
        cfg = self.config
        always = self.g == _ALWAYS
        y1 = np.where(always, self._mu111, np.nan)
        y0 = np.where(always, self._mu110, np.nan)
        if cfg.counterfactual_noise:
            gen = self.rng.generator
            y1 = y1 + gen.standard_normal(self.n) * np.sqrt(self.models.var_11_1)
            y0 = y0 + gen.standard_normal(self.n) * np.sqrt(self.models.var_11_0)
        self._store_labels.append(self.g.copy())
        self._store_yhat1.append(y1.astype(np.float32))
        self._store_yhat0.append(y0.astype(np.float32))
        self._store_counts.append([
            int((self.g == _NEVER).sum()), int((self.g == _PROT).sum()),
            int(always.sum())])
        self._store_resid_vars.append([
            self.models.var_11_1, self.models.var_11_0, self.models.var_10_1])
        self._store_intercept_vars.append([
            self.m_q.intercept_var, self.m_w.intercept_var,
            self.models.m_11_1.intercept_var,
            self.models.m_11_0.intercept_var,
            self.models.m_10_1.intercept_var])

    # -- chain loop -----------------------------------------------------------

    def run(self):
        """Iterate to n_iter and return this chain's PosteriorStore."""
        while self.it < self.config.n_iter:
            self.step()
        return self._finalize_store()

    def _finalize_store(self):
        diag = dict(self.diagnostics)
        diag["empty_subset_skips"] = self.models.empty_subset_skips
        diag["frozen_structure_updates"] = self.models.frozen_structure_updates
        return PosteriorStore(
            labels=np.asarray(self._store_labels, dtype=np.int8),
            yhat1=np.asarray(self._store_yhat1, dtype=np.float32),
            yhat0=np.asarray(self._store_yhat0, dtype=np.float32),
            stratum_counts=np.asarray(self._store_counts, dtype=np.int64),
            resid_vars=np.asarray(self._store_resid_vars, dtype=float),
            intercept_vars=np.asarray(self._store_intercept_vars, dtype=float),
            chain_id=np.full(len(self._store_labels), self.chain_id,
                             dtype=np.int16),
            loglik=np.asarray(self._loglik_trace, dtype=float)[None, :],
            chain_labels=(self.chain_id,),
            n_iter=self.config.n_iter,
            burn_in=self.config.burn_in,
            thin=self.config.thin,
            diagnostics=diag,
        )

    # -- checkpointing -----------------------------------------------------

    def _dump_trees(self, base_path):
        """Debug dump: one indented-text ensemble file per mean function."""
        names = self.dataset.covariate_names
        models = {
            "m_q": self.m_q, "m_w": self.m_w,
            "m_11_1": self.models.m_11_1, "m_11_0": self.models.m_11_0,
            "m_10_1": self.models.m_10_1,
        }
        for tag, model in models.items():
            path = f"{base_path}.{tag}.iter{self.it}.trees.txt"
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(model.render_trees(names))

    def save_checkpoint(self, path):
        """Serialized sampler snapshot (internal versioned binary)."""
        payload = {"format_version": CHECKPOINT_FORMAT_VERSION,
                   "sampler": self}
        with open(path, "wb") as fh:
            pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)

    @staticmethod
    def load_checkpoint(path):
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        version = payload.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(
                f"checkpoint format {version!r} not supported "
                f"(expected {CHECKPOINT_FORMAT_VERSION})")
        return payload["sampler"]


# ---------------------------------------------------------------------------
# Module-level operation surface
# ---------------------------------------------------------------------------

def initialize(dataset, config, chain_id=0) -> GibbsSampler:
    """Build a fully initialized sampler state for one chain."""
    return GibbsSampler(dataset, config, chain_id=chain_id)


def run_chain(sampler: GibbsSampler) -> PosteriorStore:
    """Run an initialized sampler to completion."""
    return sampler.run()


def impute_missing_survival(z, probs, rng):
    """Stratum and survival draw for an individual with unobserved status:
    g from the membership model, survival implied by (g, z)."""
    g = sample_label(z, None, probs, None, rng)
    s = int(survives(np.asarray(int(g)), np.asarray(int(z))))
    return g, s


def _run_single_chain(args):
    dataset, config, chain_id = args
    return GibbsSampler(dataset, config, chain_id=chain_id).run()


def fit(dataset, config, threads=1):
    """Run all configured chains and pool their draws.

    Chains are fully independent over the immutable dataset; chain c
    uses stream id c of the configured seed, so results are identical
    whether chains run sequentially or in parallel.
    """
    config.validate()
    jobs = [(dataset, config, c) for c in range(config.n_chains)]
    stores = None
    if threads > 1 and config.n_chains > 1:
        try:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(
                    max_workers=min(threads, config.n_chains)) as pool:
                stores = list(pool.map(_run_single_chain, jobs))
        except (OSError, ImportError):  # no process support in this env
            stores = None
    if stores is None:
        stores = [_run_single_chain(job) for job in jobs]
    return PosteriorStore.pooled(stores)
