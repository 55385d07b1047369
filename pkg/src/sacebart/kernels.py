"""Numerically careful probability primitives shared by all samplers.

Everything routes through :class:`RngStream`, a counter-based stream
addressed by (seed, stream_id): the same address replays the same draw
sequence bit-for-bit no matter which thread or process consumes it, so
per-chain and per-individual streams stay reproducible under any
scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "RngStream",
    "TruncationRegion",
    "normal_cdf",
    "normal_logpdf",
    "sample_truncated_normal",
    "truncated_normal_array",
    "sample_inverse_gamma",
    "sample_conjugate_normal_mean",
]

# Phi is clipped into the open interval so downstream logs and odds never
# see an exact 0 or 1.
_P_FLOOR = 1e-300
_P_CEIL = 1.0 - 1e-16

# Once a truncation region starts this many sd into a tail, inverse-CDF
# sampling runs out of floating-point resolution and the rejection tail
# sampler takes over.
_TAIL_START = 4.0

_MAX_REJECTION_ROUNDS = 1000


class RngStream:
    """Counter-based (Philox) random stream addressed by (seed, stream_id).

    Identical (seed, stream_id) pairs reproduce identical draw sequences.
    Distinct stream ids give statistically independent streams, which is
    how chains and parallel per-individual updates stay replayable.
    A stream must not be shared between threads; spawn children instead.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        if isinstance(stream_id, tuple):
            self._key = tuple(int(k) for k in stream_id)
        else:
            self._key = (int(stream_id),)
        self.stream_id = self._key[0] if len(self._key) == 1 else self._key
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def spawn(self, k):
        """Child stream ``k``: a pure function of (seed, stream_id, k)."""
        return RngStream(self.seed, self._key + (int(k),))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class TruncationRegion:
    """Open-ended interval (lower, upper); either bound may be infinite."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(
                f"degenerate truncation region [{self.lower}, {self.upper}]"
            )


def normal_cdf(x):
    """Standard normal CDF, clipped into (0, 1).

    Accepts scalars or arrays; absolute error below 1e-12 against a
    quadrature reference over the finite range.
    """
    p = np.clip(ndtr(x), _P_FLOOR, _P_CEIL)
    if np.ndim(x) == 0:
        return float(p)
    return p


def normal_logpdf(x, mean, var):
    """Log density of N(mean, var) at x; broadcasts elementwise."""
    return -0.5 * (np.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def _robert_tail(lo, hi, gen):
    """Standard-normal draws on (lo, hi) with lo >= _TAIL_START.

    Exponential-proposal rejection for wide slices; uniform-proposal
    rejection when the slice is narrow (where the exponential proposal
    would overshoot hi almost surely). Both branches have acceptance
    bounded away from zero, so the loop cannot hang.
    """
    out = np.full(lo.shape, np.nan)
    pending = np.arange(lo.size)
    width_scaled = (hi - lo) * lo
    use_uniform = np.isfinite(hi) & (width_scaled < 0.7)
    for _ in range(_MAX_REJECTION_ROUNDS):
        if pending.size == 0:
            break
        a = lo[pending]
        b = hi[pending]
        uni = use_uniform[pending]
        z = np.empty(pending.size)
        accept_logp = np.empty(pending.size)
        if uni.any():
            zu = a[uni] + (b[uni] - a[uni]) * gen.random(int(uni.sum()))
            z[uni] = zu
            accept_logp[uni] = 0.5 * (a[uni] ** 2 - zu**2)
        exp_mask = ~uni
        if exp_mask.any():
            ae = a[exp_mask]
            alpha = 0.5 * (ae + np.sqrt(ae**2 + 4.0))
            ze = ae + gen.exponential(1.0, int(exp_mask.sum())) / alpha
            z[exp_mask] = ze
            accept_logp[exp_mask] = -0.5 * (ze - alpha) ** 2
        ok = (np.log(gen.random(pending.size)) <= accept_logp) & (z < b) & (z > a)
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
    if pending.size:
        raise RuntimeError("tail rejection sampler failed to converge")
    return out


def truncated_normal_array(mean, sd, lower, upper, rng):
    """Vectorized draws from N(mean, sd^2) truncated to (lower, upper).

    Inverse-CDF in the central region, rejection in the tails; every
    draw lies strictly inside its region.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    mean, sd, lower, upper = np.broadcast_arrays(mean, sd, lower, upper)
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    if np.any(lower >= upper):
        raise ValueError("truncation region must have lower < upper")
    shape = mean.shape
    mean = mean.ravel()
    sd = sd.ravel()
    alpha = (lower.ravel() - mean) / sd
    beta = (upper.ravel() - mean) / sd
    gen = rng.generator
    z = np.empty(mean.size)

    right = alpha >= _TAIL_START
    left = beta <= -_TAIL_START
    body = ~(right | left)
    if right.any():
        z[right] = _robert_tail(alpha[right], beta[right], gen)
    if left.any():
        z[left] = -_robert_tail(-beta[left], -alpha[left], gen)
    if body.any():
        a = alpha[body]
        b = beta[body]
        # Reflect right-of-center regions into the left half so ndtri
        # works where doubles are dense.
        flip = a >= 0.0
        a2 = np.where(flip, -b, a)
        b2 = np.where(flip, -a, b)
        pa = ndtr(a2)
        pb = ndtr(b2)
        u = gen.random(a.size)
        p = np.clip(pa + u * (pb - pa), _P_FLOOR, _P_CEIL)
        x = ndtri(p)
        z[body] = np.where(flip, -x, x)

    draw = mean + sd * z
    lo = lower.ravel()
    hi = upper.ravel()
    # Guarantee strict interiority even when the inverse CDF rounds onto
    # a finite bound.
    at_lo = draw <= lo
    if at_lo.any():
        draw[at_lo] = np.nextafter(lo[at_lo], hi[at_lo])
    at_hi = draw >= hi
    if at_hi.any():
        draw[at_hi] = np.nextafter(hi[at_hi], lo[at_hi])
    return draw.reshape(shape)


def sample_truncated_normal(mean, sd, region, rng):
    """One draw from N(mean, sd^2) restricted to ``region``.

    Tail-robust: regions with vanishing mass fall to the rejection tail
    sampler instead of looping.
    """
    if sd <= 0:
        raise ValueError("sd must be positive")
    out = truncated_normal_array(
        np.array([float(mean)]), np.array([float(sd)]),
        np.array([region.lower]), np.array([region.upper]), rng,
    )
    return float(out[0])


def sample_inverse_gamma(shape, rate, rng, size=None):
    """Draw from InverseGamma(shape, rate), mean rate/(shape-1) for shape>1.

    For very small shapes (the 0.001 weak-prior regime) the true
    distribution's tails exceed double range; draws are taken in log
    space and clamped to the representable range, so the result is
    always positive and finite.
    """
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValueError("shape and rate must be positive")
    gen = rng.generator
    small = np.min(np.asarray(shape)) < 0.25
    if not small:
        g = gen.gamma(shape, 1.0 / np.asarray(rate), size)
        g = np.maximum(g, 1e-300)
        x = 1.0 / g
    else:
        # Gamma(a) = Gamma(a+1) * U^(1/a); evaluated in logs to dodge
        # underflow of U^(1/a) when a is tiny.
        g1 = gen.gamma(np.asarray(shape) + 1.0, 1.0, size)
        u = gen.random(size)
        log_g = np.log(np.maximum(g1, 1e-300)) + np.log(u) / shape - np.log(rate)
        x = np.exp(-np.clip(log_g, -690.0, 690.0))
    if size is None and np.ndim(x) == 0:
        return float(x)
    return x


def sample_conjugate_normal_mean(prior_mean, prior_var, obs_sum, obs_count,
                                 obs_var, rng):
    """Posterior draw for a Gaussian mean with known observation variance.

    post_var  = 1 / (1/prior_var + obs_count/obs_var)
    post_mean = post_var * (prior_mean/prior_var + obs_sum/obs_var)

    Broadcasts over arrays (used for leaf values and random intercepts
    alike). ``prior_var`` may be infinite: the draw then reduces to the
    sample-mean limit. ``obs_count`` may be zero: the draw is then from
    the prior exactly.
    """
    prior_mean = np.asarray(prior_mean, dtype=float)
    prior_var = np.asarray(prior_var, dtype=float)
    obs_sum = np.asarray(obs_sum, dtype=float)
    obs_count = np.asarray(obs_count, dtype=float)
    obs_var = np.asarray(obs_var, dtype=float)
    prior_prec = np.where(np.isinf(prior_var), 0.0, 1.0 / prior_var)
    post_var = 1.0 / (prior_prec + obs_count / obs_var)
    prior_term = np.where(prior_prec == 0.0, 0.0, prior_mean * prior_prec)
    post_mean = post_var * (prior_term + obs_sum / obs_var)
    draw = rng.generator.normal(post_mean, np.sqrt(post_var))
    if np.ndim(draw) == 0:
        return float(draw)
    return draw
