"""Arm- and stratum-specific Gaussian outcome models.

Exactly three models exist: (always-survivor, treated),
(always-survivor, control), and (protected, treated). The outcome is
undefined by design for every other (stratum, arm) combination, so no
model is ever built for them and asking for one is a programming
error, not a data condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bart import SumOfTreesModel, predict as bart_predict
from .errors import ContractViolation
from .kernels import normal_logpdf
from .strata import PrincipalStratum, survives

__all__ = [
    "OutcomeModelSet",
    "update_outcome_models",
    "impute_outcome",
    "density",
]

_DEFINED_CELLS = {
    (PrincipalStratum.ALWAYS_SURVIVOR, 0),
    (PrincipalStratum.ALWAYS_SURVIVOR, 1),
    (PrincipalStratum.PROTECTED, 1),
}


@dataclass
class OutcomeModelSet:
    """The three mean functions plus their residual variances."""

    m_11_1: SumOfTreesModel
    m_11_0: SumOfTreesModel
    m_10_1: SumOfTreesModel
    # update-skip bookkeeping, reported in run diagnostics
    empty_subset_skips: int = 0
    frozen_structure_updates: int = 0

    @property
    def var_11_1(self):
        return self.m_11_1.resid_var

    @property
    def var_11_0(self):
        return self.m_11_0.resid_var

    @property
    def var_10_1(self):
        return self.m_10_1.resid_var

    def model_for(self, g, z):
        key = (PrincipalStratum(int(g)), int(z))
        if key not in _DEFINED_CELLS:
            raise ContractViolation(
                f"outcome undefined for stratum {key[0].name} under z={z}")
        if key == (PrincipalStratum.ALWAYS_SURVIVOR, 1):
            return self.m_11_1
        if key == (PrincipalStratum.ALWAYS_SURVIVOR, 0):
            return self.m_11_0
        return self.m_10_1


def update_outcome_models(labels, z, y_current, models, rng,
                          min_structural_rows=5):
    """One backfitting sweep for each arm-stratum subset.

    Subsets are the individuals currently carrying the matching label
    with a defined outcome. An empty subset skips its model for this
    iteration (parameters carried forward, event counted); a subset
    below ``min_structural_rows`` updates leaf values, intercepts and
    variances only, freezing tree structures.
    """
    defined = np.isfinite(y_current)
    cells = (
        (models.m_11_1, (labels == PrincipalStratum.ALWAYS_SURVIVOR) & (z == 1)),
        (models.m_11_0, (labels == PrincipalStratum.ALWAYS_SURVIVOR) & (z == 0)),
        (models.m_10_1, (labels == PrincipalStratum.PROTECTED) & (z == 1)),
    )
    for model, mask in cells:
        rows = np.nonzero(mask & defined)[0]
        if rows.size == 0:
            models.empty_subset_skips += 1
            continue
        structural = rows.size >= min_structural_rows
        if not structural:
            models.frozen_structure_updates += 1
        model.backfit(y_current[rows], rng, rows=rows, structural=structural)
    return models


def impute_outcome(g, z, x, cluster_id, models, rng):
    """Posterior-predictive outcome draw for one individual.

    Survivors draw from N(m_{g,z}(x) + b, sigma^2_{g,z}); non-survivors
    (never-survivors under any arm, protected under control) return
    None: their outcome is undefined, not missing.
    """
    g = PrincipalStratum(int(g))
    if not survives(np.asarray(int(g)), np.asarray(int(z))):
        return None
    model = models.model_for(g, z)
    mu = bart_predict(model, x, cluster_id)
    return float(rng.generator.normal(mu, math.sqrt(model.resid_var)))


def density(y, g, z, x, cluster_id, models):
    """Gaussian outcome density f_{g,z}(y | x, cluster).

    Only defined for (always-survivor, either arm) and
    (protected, treated); anything else raises.
    """
    model = models.model_for(g, z)
    mu = bart_predict(model, x, cluster_id)
    return float(np.exp(normal_logpdf(float(y), mu, model.resid_var)))
