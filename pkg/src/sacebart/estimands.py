"""Posterior summaries: SACE, per-individual CSACE, stratum proportions,
likely-always-survivor classification, credible intervals.

All summaries pool retained draws across chains (burn-in is per chain);
per-chain versions of the same numbers are available through
``PosteriorStore.chain_slice`` for mixing diagnostics. Intervals are
equal-tailed 2.5/97.5 percentiles with linear interpolation between
order statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .strata import PrincipalStratum

__all__ = [
    "SaceEstimate",
    "CsaceTable",
    "EstimandSummary",
    "always_survivor_probabilities",
    "compute_sace",
    "compute_csace",
    "stratum_proportions",
    "likely_always_survivors",
    "summarize",
    "format_estimate",
    "summary_text",
    "write_csace_csv",
]

_ALWAYS = int(PrincipalStratum.ALWAYS_SURVIVOR)
_PROT = int(PrincipalStratum.PROTECTED)
_NEVER = int(PrincipalStratum.NEVER_SURVIVOR)


def _cri(draws):
    lo, hi = np.quantile(draws, [0.025, 0.975])
    return float(lo), float(hi)


@dataclass(frozen=True)
class SaceEstimate:
    mean: float
    cri_lo: float
    cri_hi: float
    n_draws_used: int
    n_draws_skipped: int  # retained draws with zero always-survivors

    @property
    def cri(self):
        return (self.cri_lo, self.cri_hi)


@dataclass(frozen=True)
class CsaceTable:
    """Per-individual CSACE summaries, restricted to individuals labeled
    always-survivor in at least one retained draw."""

    individual: np.ndarray   # indices into the dataset
    mean: np.ndarray
    cri_lo: np.ndarray
    cri_hi: np.ndarray
    n_draws: np.ndarray      # draws in which the individual was labeled 11

    def __len__(self):
        return self.individual.size


@dataclass(frozen=True)
class EstimandSummary:
    sace: SaceEstimate
    stratum_props: dict      # name -> (mean, lo, hi)
    csace: CsaceTable
    always_survivor_prob: np.ndarray
    likely_always_survivor: np.ndarray
    threshold: float

    def validate(self):
        total = sum(v[0] for v in self.stratum_props.values())
        if abs(total - 1.0) > 1e-9:
            raise AssertionError("stratum proportion means must sum to 1")
        for name, (mean, lo, hi) in self.stratum_props.items():
            if not lo <= mean <= hi:
                raise AssertionError(f"malformed interval for {name}")
        if not self.sace.cri_lo <= self.sace.mean <= self.sace.cri_hi:
            raise AssertionError("malformed SACE interval")
        return self


def always_survivor_probabilities(store):
    """Per individual: fraction of retained draws labeled always-survivor."""
    return (store.labels == _ALWAYS).mean(axis=0)


def compute_sace(store):
    """Survivor average causal effect.

    Per retained draw, the mean of (yhat1 - yhat0) over individuals
    labeled always-survivor in that draw; draws summarize to a posterior
    mean and an equal-tailed 95% interval. Draws with zero
    always-survivors are skipped and counted.
    """
    delta = store.yhat1.astype(float) - store.yhat0.astype(float)
    member = np.isfinite(delta)
    counts = member.sum(axis=1)
    usable = counts > 0
    sums = np.where(member, delta, 0.0).sum(axis=1)
    per_draw = sums[usable] / counts[usable]
    if per_draw.size == 0:
        raise ValueError("no retained draw contains an always-survivor")
    lo, hi = _cri(per_draw)
    return SaceEstimate(
        mean=float(per_draw.mean()), cri_lo=lo, cri_hi=hi,
        n_draws_used=int(usable.sum()),
        n_draws_skipped=int((~usable).sum()))


def compute_csace(store):
    """Per-individual conditional SACE over the draws in which that
    individual is labeled always-survivor; individuals never labeled
    always-survivor are absent from the output."""
    delta = store.yhat1.astype(float) - store.yhat0.astype(float)
    member = np.isfinite(delta)
    n_draws = member.sum(axis=0)
    keep = np.nonzero(n_draws > 0)[0]
    means = np.empty(keep.size)
    lo = np.empty(keep.size)
    hi = np.empty(keep.size)
    for k, i in enumerate(keep):
        d = delta[member[:, i], i]
        means[k] = d.mean()
        lo[k], hi[k] = _cri(d)
    return CsaceTable(individual=keep, mean=means, cri_lo=lo, cri_hi=hi,
                      n_draws=n_draws[keep])


def stratum_proportions(store):
    """Posterior mean and 95% CrI of each stratum's population share."""
    fractions = store.stratum_counts / store.n_individuals
    out = {}
    for j, name in enumerate(("never_survivor", "protected",
                              "always_survivor")):
        col = fractions[:, j]
        lo, hi = _cri(col)
        out[name] = (float(col.mean()), lo, hi)
    return out


def likely_always_survivors(store, dataset, threshold=0.8):
    """Union rule: control-arm observed survivors, plus anyone whose
    posterior always-survivor probability reaches the threshold."""
    prob = always_survivor_probabilities(store)
    control_observed = ((dataset.z_individual == 0) & (dataset.r_s == 1)
                        & (dataset.s_obs == 1))
    return control_observed | (prob >= threshold)


def summarize(store, dataset, threshold=0.8) -> EstimandSummary:
    return EstimandSummary(
        sace=compute_sace(store),
        stratum_props=stratum_proportions(store),
        csace=compute_csace(store),
        always_survivor_prob=always_survivor_probabilities(store),
        likely_always_survivor=likely_always_survivors(
            store, dataset, threshold),
        threshold=threshold,
    ).validate()


# ---------------------------------------------------------------------
# Output formatting
# ---------------------------------------------------------------------

def format_estimate(mean, lo, hi, digits=3):
    """Point estimate with equal-tailed CrI, e.g. '-0.568 [-3.580, 2.532]'."""
    return f"{mean:.{digits}f} [{lo:.{digits}f}, {hi:.{digits}f}]"


def summary_text(summary: EstimandSummary, per_chain=None):
    """Key-value summary block; three stratum-proportion rows then SACE."""
    lines = ["quantity\testimate"]
    labels = {
        "always_survivor": "proportion_always_survivors",
        "protected": "proportion_protected",
        "never_survivor": "proportion_never_survivors",
    }
    for key in ("always_survivor", "protected", "never_survivor"):
        mean, lo, hi = summary.stratum_props[key]
        lines.append(f"{labels[key]}\t{format_estimate(mean, lo, hi)}")
    s = summary.sace
    lines.append(f"sace\t{format_estimate(s.mean, s.cri_lo, s.cri_hi)}")
    lines.append(f"sace_draws_used\t{s.n_draws_used}")
    lines.append(f"sace_draws_skipped\t{s.n_draws_skipped}")
    lines.append(f"likely_always_survivor_threshold\t{summary.threshold}")
    lines.append(
        f"n_likely_always_survivors\t{int(summary.likely_always_survivor.sum())}")
    if per_chain:
        for chain, chain_summary in per_chain:
            cs = chain_summary.sace
            lines.append(
                f"chain_{chain}_sace\t"
                f"{format_estimate(cs.mean, cs.cri_lo, cs.cri_hi)}")
            for key in ("always_survivor", "protected", "never_survivor"):
                mean, lo, hi = chain_summary.stratum_props[key]
                lines.append(
                    f"chain_{chain}_{labels[key]}\t"
                    f"{format_estimate(mean, lo, hi)}")
    return "\n".join(lines) + "\n"


def write_csace_csv(path, summary: EstimandSummary):
    """Per-individual CSACE CSV: index, always_survivor_prob, csace mean,
    interval bounds, likely-always-survivor flag. Individuals without a
    CSACE (never labeled always-survivor) get empty effect fields."""
    table = summary.csace
    by_index = {int(i): k for k, i in enumerate(table.individual)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["individual", "always_survivor_prob", "csace_mean",
                         "cri_lo", "cri_hi", "flagged"])
        for i in range(summary.always_survivor_prob.size):
            k = by_index.get(i)
            if k is None:
                effect = ["", "", ""]
            else:
                effect = [f"{table.mean[k]:.6f}", f"{table.cri_lo[k]:.6f}",
                          f"{table.cri_hi[k]:.6f}"]
            writer.writerow(
                [i, f"{summary.always_survivor_prob[i]:.6f}"] + effect
                + [int(summary.likely_always_survivor[i])])
