"""Nested-Probit principal-strata machinery.

Two latent Gaussians with zero thresholds partition individuals into
three strata: Q separates never-survivors from the survivor-capable,
and W splits the survivor-capable into protected versus
always-survivors. The harmed stratum is excluded by monotonicity --
no code path can emit it.

Stratum labels are encoded by their joint-survival bit pattern
(S(1), S(0)): NEVER_SURVIVOR=0b00, PROTECTED=0b10, ALWAYS_SURVIVOR=0b11,
so survival under arm z is just a bit test, see :func:`survives`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ContractViolation, NumericalUnderflowError
from .kernels import normal_cdf, truncated_normal_array

__all__ = [
    "PrincipalStratum",
    "MembershipProbs",
    "StrataState",
    "survives",
    "membership_probs",
    "sample_label",
    "sample_latents",
    "observed_likelihood",
    "sample_labels_array",
    "sample_latents_array",
]


class PrincipalStratum(IntEnum):
    NEVER_SURVIVOR = 0b00
    PROTECTED = 0b10
    ALWAYS_SURVIVOR = 0b11


VALID_LABELS = np.array(
    [PrincipalStratum.NEVER_SURVIVOR, PrincipalStratum.PROTECTED,
     PrincipalStratum.ALWAYS_SURVIVOR], dtype=np.int8)


def survives(g, z):
    """Survival implied by (stratum, arm): bit z of the label pattern
    (bit 1 holds S(1), bit 0 holds S(0))."""
    g = np.asarray(g)
    z = np.asarray(z)
    return ((g >> z) & 1).astype(np.int8)


@dataclass(frozen=True)
class MembershipProbs:
    """Strata-membership probabilities; fields may be scalars or arrays."""

    p00: object
    p10: object
    p11: object

    def as_tuple(self):
        return (self.p00, self.p10, self.p11)


def membership_probs(mq, mw) -> MembershipProbs:
    """Closed-form membership probabilities from the two probit means.

    p00 = 1 - Phi(mq); p10 = Phi(mq)(1 - Phi(mw)); p11 = Phi(mq)Phi(mw).
    Elementwise on arrays; the three sum to 1 up to rounding.
    """
    phi_q = normal_cdf(mq)
    phi_w = normal_cdf(mw)
    if np.ndim(mq) == 0 and np.ndim(mw) == 0:
        return MembershipProbs(1.0 - phi_q, phi_q * (1.0 - phi_w),
                               phi_q * phi_w)
    phi_q, phi_w = np.broadcast_arrays(phi_q, phi_w)
    return MembershipProbs(1.0 - phi_q, phi_q * (1.0 - phi_w), phi_q * phi_w)


# ---------------------------------------------------------------------
# Label sampling
# ---------------------------------------------------------------------

def _two_way(log_a, log_b, gen, individual=None):
    """Draw True for option A with posterior odds exp(log_a - log_b)."""
    m = max(log_a, log_b)
    if m == -math.inf:
        raise NumericalUnderflowError(
            "mixture cell has zero posterior mass", individual=individual)
    wa = math.exp(log_a - m)
    wb = math.exp(log_b - m)
    return gen.random() * (wa + wb) < wa


def sample_label(z, s_known, probs, outcome_densities, rng,
                 individual=None) -> PrincipalStratum:
    """Draw a stratum label for one individual.

    ``s_known`` is the observed survival (None when survival itself is
    missing); ``outcome_densities`` is (f11z, f10z) evaluated at the
    observed outcome, or None when no outcome is observed. Mixture
    weights are formed in log space; if the outcome densities underflow
    the membership-only weights are used as a fallback before raising.
    """
    gen = rng.generator
    p00, p10, p11 = probs.as_tuple()
    if s_known is None:
        u = gen.random() * (p00 + p10 + p11)
        if u < p00:
            return PrincipalStratum.NEVER_SURVIVOR
        if u < p00 + p10:
            return PrincipalStratum.PROTECTED
        return PrincipalStratum.ALWAYS_SURVIVOR
    if z == 0 and s_known == 1:
        return PrincipalStratum.ALWAYS_SURVIVOR
    if z == 1 and s_known == 0:
        return PrincipalStratum.NEVER_SURVIVOR
    if z == 1:  # treated survivor: {always, protected}
        l11 = math.log(p11) if p11 > 0 else -math.inf
        l10 = math.log(p10) if p10 > 0 else -math.inf
        if outcome_densities is not None:
            f11, f10 = outcome_densities
            a = l11 + (math.log(f11) if f11 > 0 else -math.inf)
            b = l10 + (math.log(f10) if f10 > 0 else -math.inf)
            if a == -math.inf and b == -math.inf:
                a, b = l11, l10  # membership-only fallback
        else:
            a, b = l11, l10
        take_11 = _two_way(a, b, gen, individual)
        return (PrincipalStratum.ALWAYS_SURVIVOR if take_11
                else PrincipalStratum.PROTECTED)
    # control non-survivor: {protected, never}; outcome undefined, so the
    # weights are membership-only by construction.
    l10 = math.log(p10) if p10 > 0 else -math.inf
    l00 = math.log(p00) if p00 > 0 else -math.inf
    take_10 = _two_way(l10, l00, gen, individual)
    return (PrincipalStratum.PROTECTED if take_10
            else PrincipalStratum.NEVER_SURVIVOR)


def sample_labels_array(z, s_state, logf11, logf10, probs, rng,
                        y_observed):
    """Vectorized label draw for the whole sample.

    ``s_state``: observed-or-imputed survival with -1 where survival is
    unobserved (those individuals draw from the membership prior
    directly). ``logf11``/``logf10``: log outcome densities at the
    observed outcome (only read where ``y_observed``). Returns
    (labels, n_underflow_fallbacks).
    """
    gen = rng.generator
    n = z.size
    p00, p10, p11 = probs.as_tuple()
    labels = np.empty(n, dtype=np.int8)
    u = gen.random(n)
    fallbacks = 0
    neg_inf = float("-inf")

    unknown = s_state < 0
    if unknown.any():
        uu = u[unknown] * (p00[unknown] + p10[unknown] + p11[unknown])
        lab = np.where(
            uu < p00[unknown], PrincipalStratum.NEVER_SURVIVOR,
            np.where(uu < p00[unknown] + p10[unknown],
                     PrincipalStratum.PROTECTED,
                     PrincipalStratum.ALWAYS_SURVIVOR))
        labels[unknown] = lab

    known = ~unknown
    ctrl_surv = known & (z == 0) & (s_state == 1)
    labels[ctrl_surv] = PrincipalStratum.ALWAYS_SURVIVOR
    trt_dead = known & (z == 1) & (s_state == 0)
    labels[trt_dead] = PrincipalStratum.NEVER_SURVIVOR

    trt_surv = known & (z == 1) & (s_state == 1)
    if trt_surv.any():
        pa = p11[trt_surv]
        pb = p10[trt_surv]
        la = np.log(pa, out=np.full(pa.shape, neg_inf), where=pa > 0)
        lb = np.log(pb, out=np.full(pb.shape, neg_inf), where=pb > 0)
        has_y = y_observed[trt_surv]
        la_dens = la + np.where(has_y, logf11[trt_surv], 0.0)
        lb_dens = lb + np.where(has_y, logf10[trt_surv], 0.0)
        dead_cells = np.isneginf(la_dens) & np.isneginf(lb_dens)
        if dead_cells.any():
            # log-space stabilization failed: retry on membership alone
            fallbacks += int(dead_cells.sum())
            la_dens = np.where(dead_cells, la, la_dens)
            lb_dens = np.where(dead_cells, lb, lb_dens)
            still = np.isneginf(la_dens) & np.isneginf(lb_dens)
            if still.any():
                idx = np.nonzero(trt_surv)[0][still][0]
                raise NumericalUnderflowError(
                    "treated-survivor mixture cell has zero mass",
                    individual=int(idx))
        m = np.maximum(la_dens, lb_dens)
        wa = np.exp(la_dens - m)
        wb = np.exp(lb_dens - m)
        take = u[trt_surv] * (wa + wb) < wa
        labels[trt_surv] = np.where(take, PrincipalStratum.ALWAYS_SURVIVOR,
                                    PrincipalStratum.PROTECTED)

    ctrl_dead = known & (z == 0) & (s_state == 0)
    if ctrl_dead.any():
        tot = p10[ctrl_dead] + p00[ctrl_dead]
        if (tot <= 0).any():
            idx = np.nonzero(ctrl_dead)[0][(tot <= 0)][0]
            raise NumericalUnderflowError(
                "control non-survivor mixture cell has zero mass",
                individual=int(idx))
        take = u[ctrl_dead] * tot < p10[ctrl_dead]
        labels[ctrl_dead] = np.where(take, PrincipalStratum.PROTECTED,
                                     PrincipalStratum.NEVER_SURVIVOR)
    return labels, fallbacks


# ---------------------------------------------------------------------
# Latent augmentation
# ---------------------------------------------------------------------

def sample_latents(g, mq, mw, rng, w_for_never=True):
    """Draw (q, w) from their truncated-normal full conditionals.

    q ~ N(mq, 1) on (-inf, 0] for never-survivors, (0, inf) otherwise;
    w ~ N(mw, 1) on (-inf, 0] for protected, (0, inf) for
    always-survivors, and untruncated for never-survivors (so the W
    regression can train on the full sample; switch off with
    ``w_for_never=False`` to leave w undefined there).
    """
    q, w = sample_latents_array(
        np.array([int(g)], dtype=np.int8), np.array([float(mq)]),
        np.array([float(mw)]), rng, w_for_never=w_for_never)
    return float(q[0]), float(w[0])


def sample_latents_array(g, mq, mw, rng, w_for_never=True):
    mq = np.broadcast_to(np.asarray(mq, dtype=float), g.shape)
    mw = np.broadcast_to(np.asarray(mw, dtype=float), g.shape)
    never = g == PrincipalStratum.NEVER_SURVIVOR
    protected = g == PrincipalStratum.PROTECTED
    always = g == PrincipalStratum.ALWAYS_SURVIVOR
    if not np.all(never | protected | always):
        raise ContractViolation("invalid stratum label in latent update")
    n = g.size
    q_lo = np.where(never, -np.inf, 0.0)
    q_hi = np.where(never, 0.0, np.inf)
    w_lo = np.where(always, 0.0, -np.inf)
    w_hi = np.where(protected, 0.0, np.inf)
    if w_for_never:
        # one vectorized draw for both latents
        both = truncated_normal_array(
            np.concatenate([mq, mw]), 1.0,
            np.concatenate([q_lo, w_lo]), np.concatenate([q_hi, w_hi]), rng)
        return both[:n], both[n:]
    q = truncated_normal_array(mq, 1.0, q_lo, q_hi, rng)
    w = np.full(g.shape, np.nan)
    active = ~never
    if active.any():
        w[active] = truncated_normal_array(
            mw[active], 1.0, w_lo[active], w_hi[active], rng)
    return q, w


# ---------------------------------------------------------------------
# Observed-data likelihood (diagnostic)
# ---------------------------------------------------------------------

def observed_likelihood(z, s_obs, y_observed, probs, logf11=None,
                        logf10=None):
    """Log observed-data mixture likelihood over individuals with
    observed survival.

    Cell contributions: treated survivors log(p11 f11,1 + p10 f10,1)
    (membership-only, p11 + p10, when the outcome is missing); treated
    non-survivors log p00; control survivors log(p11 f11,0) (log p11
    when the outcome is missing); control non-survivors log(p10 + p00).
    Individuals with unobserved survival contribute nothing. -inf is a
    legal return for degenerate states.
    """
    z = np.asarray(z)
    s_obs = np.asarray(s_obs)
    y_observed = np.asarray(y_observed, dtype=bool)
    p00, p10, p11 = probs.as_tuple()
    p00, p10, p11 = (np.asarray(p) for p in (p00, p10, p11))
    logf11 = np.zeros_like(p00) if logf11 is None else np.asarray(logf11)
    logf10 = np.zeros_like(p00) if logf10 is None else np.asarray(logf10)

    def safe_log(p):
        return np.log(p, out=np.full(p.shape, float("-inf")), where=p > 0)

    total = 0.0
    ts = (z == 1) & (s_obs == 1)
    if ts.any():
        a = safe_log(p11[ts]) + np.where(y_observed[ts], logf11[ts], 0.0)
        b = safe_log(p10[ts]) + np.where(y_observed[ts], logf10[ts], 0.0)
        total += float(np.logaddexp(a, b).sum())
    td = (z == 1) & (s_obs == 0)
    if td.any():
        total += float(safe_log(p00[td]).sum())
    cs = (z == 0) & (s_obs == 1)
    if cs.any():
        total += float(
            (safe_log(p11[cs])
             + np.where(y_observed[cs], logf11[cs], 0.0)).sum())
    cd = (z == 0) & (s_obs == 0)
    if cd.any():
        total += float(safe_log(p10[cd] + p00[cd]).sum())
    return total


# ---------------------------------------------------------------------
# Per-individual sampler state
# ---------------------------------------------------------------------

@dataclass
class StrataState:
    """Struct-of-arrays holding the per-individual augmented state."""

    q: np.ndarray
    w: np.ndarray
    g: np.ndarray
    s_current: np.ndarray
    y_current: np.ndarray

    def validate(self, z, r_s, s_obs, check_latents=True):
        """Assertion sweep over the state invariants.

        The latent checks compare q/w regions against the labels the
        latents were drawn under; callers that have relabeled since the
        last latent draw pass ``check_latents=False``.
        """
        g = self.g
        valid = (g == PrincipalStratum.NEVER_SURVIVOR) \
            | (g == PrincipalStratum.PROTECTED) \
            | (g == PrincipalStratum.ALWAYS_SURVIVOR)
        if not valid.all():
            raise ContractViolation("invalid (harmed?) stratum label present")
        s_implied = survives(g, z)
        if not np.array_equal(self.s_current, s_implied):
            raise ContractViolation("survival inconsistent with (g, z)")
        observed = r_s == 1
        if not np.array_equal(self.s_current[observed], s_obs[observed]):
            raise ContractViolation("state contradicts observed survival")
        dead = self.s_current == 0
        if np.isfinite(self.y_current[dead]).any():
            raise ContractViolation("non-survivor carries a numeric outcome")
        if not np.isfinite(self.y_current[~dead]).all():
            raise ContractViolation("survivor lacks a current outcome")
        if check_latents:
            never = g == PrincipalStratum.NEVER_SURVIVOR
            if (self.q[never] > 0).any() or (self.q[~never] <= 0).any():
                raise ContractViolation("latent q outside its stratum region")
            prot = g == PrincipalStratum.PROTECTED
            alw = g == PrincipalStratum.ALWAYS_SURVIVOR
            w_ok = np.ones(g.size, dtype=bool)
            w_ok[prot] = self.w[prot] <= 0
            w_ok[alw] = self.w[alw] > 0
            if not w_ok.all():
                raise ContractViolation("latent w outside its stratum region")
