"""Sum-of-trees regression with a cluster-level random intercept.

The model is fit by Bayesian backfitting: each sweep proposes a
grow/prune/change move per tree through Metropolis-Hastings against the
partial residuals, redraws leaf values conjugately, then redraws the
per-cluster intercepts, the residual variance, and the intercept
variance from their full conditionals.

A model is bound to its reference design matrix at construction time
(all individuals of the trial). The training subset may change between
sweeps -- the Gibbs driver refits each arm-stratum model on whatever
rows currently carry its label -- while leaf assignments stay cached
for every reference row, so fitted values for the whole sample are
always available at no extra cost.
"""

from __future__ import annotations

import math
from bisect import insort
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .kernels import sample_conjugate_normal_mean, sample_inverse_gamma

__all__ = [
    "TreePrior",
    "RegressionTree",
    "SumOfTreesModel",
    "predict",
    "backfit_iteration",
    "fit_probit_latent",
]

_UNUSED = -2
_LEAF = -1
_MAX_DEPTH = 16


def _depth(node_id):
    return (node_id + 1).bit_length() - 1


@dataclass(frozen=True)
class TreePrior:
    """Regularization prior and proposal mix for tree structures.

    The probability that a node at depth d splits is alpha*(1+d)^-beta.
    """

    alpha: float = 0.95
    beta: float = 2.0
    grow_prob: float = 0.28
    prune_prob: float = 0.28
    change_prob: float = 0.44

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        total = self.grow_prob + self.prune_prob + self.change_prob
        if abs(total - 1.0) > 1e-9:
            raise ValueError("proposal probabilities must sum to 1")

    def split_prob(self, depth):
        return self.alpha * (1.0 + depth) ** (-self.beta)


class RegressionTree:
    """Binary tree in heap layout (children of node i at 2i+1, 2i+2).

    ``var[i] >= 0`` marks an internal node splitting covariate var[i] at
    cut[i] (left branch takes x <= cut). ``var[i] == -1`` marks a leaf
    holding leaf_value[i]; -2 marks unused slots. ``row_leaf`` caches the
    leaf of every reference row and is maintained through every accepted
    structural move.
    """

    def __init__(self, n_rows, capacity=31):
        self.var = np.full(capacity, _UNUSED, dtype=np.int32)
        self.cut = np.zeros(capacity, dtype=float)
        self.leaf_value = np.zeros(capacity, dtype=float)
        self.var[0] = _LEAF
        self.leaf_ids = [0]
        self.internal_ids = []
        self.row_leaf = np.zeros(n_rows, dtype=np.int32)
        self.fit_cache = np.zeros(n_rows, dtype=float)

    # -- structure queries --------------------------------------------

    @property
    def n_leaves(self):
        return len(self.leaf_ids)

    def is_leaf(self, node_id):
        return self.var[node_id] == _LEAF

    def prunable_ids(self):
        """Internal nodes whose both children are leaves."""
        return [
            i for i in self.internal_ids
            if self.var[2 * i + 1] == _LEAF and self.var[2 * i + 2] == _LEAF
        ]

    def max_depth(self):
        return max(_depth(i) for i in self.leaf_ids)

    def subtree_leaf_ids(self, node_id):
        out = []
        stack = [node_id]
        while stack:
            i = stack.pop()
            if self.var[i] == _LEAF:
                out.append(i)
            else:
                stack.append(2 * i + 1)
                stack.append(2 * i + 2)
        out.sort()
        return out

    # -- construction helpers -----------------------------------------

    @classmethod
    def from_nested(cls, spec, n_rows=0, X=None):
        """Build from nested tuples: ("leaf", value) or
        ("split", var, cut, left, right). Intended for tests and
        hand-built ensembles."""
        tree = cls(n_rows)
        tree.leaf_ids = []
        tree.internal_ids = []

        def build(node_spec, node_id):
            tree._ensure_capacity(node_id)
            if node_spec[0] == "leaf":
                tree.var[node_id] = _LEAF
                tree.leaf_value[node_id] = float(node_spec[1])
                insort(tree.leaf_ids, node_id)
            elif node_spec[0] == "split":
                _, v, c, left, right = node_spec
                tree.var[node_id] = int(v)
                tree.cut[node_id] = float(c)
                insort(tree.internal_ids, node_id)
                build(left, 2 * node_id + 1)
                build(right, 2 * node_id + 2)
            else:
                raise ValueError(f"unknown node spec {node_spec[0]!r}")

        build(spec, 0)
        if n_rows and X is not None:
            tree.row_leaf = tree.assign_rows(np.arange(n_rows), 0, X)
            tree.fit_cache = tree.leaf_value[tree.row_leaf]
        return tree

    def _ensure_capacity(self, node_id):
        while node_id >= self.var.size:
            extra = self.var.size
            self.var = np.concatenate(
                [self.var, np.full(extra, _UNUSED, dtype=np.int32)])
            self.cut = np.concatenate([self.cut, np.zeros(extra)])
            self.leaf_value = np.concatenate([self.leaf_value, np.zeros(extra)])

    # -- row routing ----------------------------------------------------

    def assign_rows(self, row_idx, start_node, X, override=None):
        """Leaf ids for ``row_idx`` descending from ``start_node``.

        ``override=(var, cut)`` reroutes ``start_node`` with a candidate
        split without committing it (used to evaluate change proposals).
        """
        pos = np.full(row_idx.size, start_node, dtype=np.int32)
        if override is not None:
            v, c = override
            pos = np.where(X[row_idx, v] <= c, 2 * start_node + 1,
                           2 * start_node + 2).astype(np.int32)
        while True:
            inner = self.var[pos] >= 0
            if not inner.any():
                return pos
            sel = np.nonzero(inner)[0]
            node = pos[sel]
            xv = X[row_idx[sel], self.var[node]]
            pos[sel] = np.where(xv <= self.cut[node],
                                2 * node + 1, 2 * node + 2)

    def mask_under(self, row_leaf_values, node_id):
        """Boolean mask of rows (given their leaf ids) below node_id."""
        leaves = self.subtree_leaf_ids(node_id)
        mask = row_leaf_values == leaves[0]
        for lid in leaves[1:]:
            mask |= row_leaf_values == lid
        return mask

    # -- structural edits (caller owns the MH accept decision) ----------

    def apply_grow(self, leaf_id, var, cut, X):
        left, right = 2 * leaf_id + 1, 2 * leaf_id + 2
        self._ensure_capacity(right)
        self.var[leaf_id] = var
        self.cut[leaf_id] = cut
        self.var[left] = _LEAF
        self.var[right] = _LEAF
        self.leaf_value[left] = self.leaf_value[leaf_id]
        self.leaf_value[right] = self.leaf_value[leaf_id]
        self.leaf_ids.remove(leaf_id)
        insort(self.leaf_ids, left)
        insort(self.leaf_ids, right)
        insort(self.internal_ids, leaf_id)
        rows = np.nonzero(self.row_leaf == leaf_id)[0]
        if rows.size:
            goleft = X[rows, var] <= cut
            self.row_leaf[rows] = np.where(goleft, left, right)

    def apply_prune(self, node_id):
        left, right = 2 * node_id + 1, 2 * node_id + 2
        self.var[node_id] = _LEAF
        self.var[left] = _UNUSED
        self.var[right] = _UNUSED
        self.leaf_ids.remove(left)
        self.leaf_ids.remove(right)
        insort(self.leaf_ids, node_id)
        self.internal_ids.remove(node_id)
        mask = (self.row_leaf == left) | (self.row_leaf == right)
        self.row_leaf[mask] = node_id

    def apply_change(self, node_id, var, cut, X):
        rows = np.nonzero(self.mask_under(self.row_leaf, node_id))[0]
        self.var[node_id] = var
        self.cut[node_id] = cut
        if rows.size:
            self.row_leaf[rows] = self.assign_rows(rows, node_id, X)

    # -- evaluation ------------------------------------------------------

    def evaluate(self, x):
        i = 0
        while self.var[i] >= 0:
            i = 2 * i + 1 if x[self.var[i]] <= self.cut[i] else 2 * i + 2
        return float(self.leaf_value[i])

    def render(self, covariate_names=None, node_id=0, depth=0):
        pad = "  " * depth
        if self.var[node_id] == _LEAF:
            return f"{pad}leaf value={self.leaf_value[node_id]:.6g}\n"
        v = self.var[node_id]
        name = covariate_names[v] if covariate_names else f"x{v}"
        out = f"{pad}{name} <= {self.cut[node_id]:.6g}\n"
        out += self.render(covariate_names, 2 * node_id + 1, depth + 1)
        out += self.render(covariate_names, 2 * node_id + 2, depth + 1)
        return out


class SumOfTreesModel:
    """Mixed-effects BART: sum of shallow regression trees plus a
    per-cluster random intercept.

    prediction(x, cluster i) = sum_k tree_k(x) + b_i, back-transformed
    from the internally standardized response scale. Probit-role models
    pin the residual variance to 1 and skip response standardization.
    """

    def __init__(self, X, cluster_ids, n_trees=50, prior=None, *,
                 standardize=True, y_for_scale=None, fixed_resid_var=None,
                 leaf_prior_k=2.0, leaf_prior_sd=None,
                 resid_prior_shape=1e-3, resid_prior_rate=1e-3,
                 intercept_prior_shape=1.5, intercept_prior_rate=1.5,
                 n_cutpoints=100):
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if n_trees < 1:
            raise ValueError("need at least one tree")
        self.X = X
        self.n_rows, self.n_covariates = X.shape
        labels, inverse = np.unique(np.asarray(cluster_ids), return_inverse=True)
        self.cluster_labels = labels
        self.cluster_of_row = inverse.astype(np.int32)
        self.n_clusters = labels.size
        self._cluster_pos = {label: i for i, label in enumerate(labels.tolist())}
        self.prior = prior or TreePrior()
        self.n_trees = int(n_trees)

        # 100 uniform quantiles of each covariate's observed values.
        qs = np.arange(1, n_cutpoints + 1) / (n_cutpoints + 1.0)
        self.cutpoints = [
            np.unique(np.quantile(X[:, j], qs)) for j in range(self.n_covariates)
        ]

        if standardize:
            if y_for_scale is None:
                raise ValueError("standardize=True requires y_for_scale")
            y0 = np.asarray(y_for_scale, dtype=float)
            lo, hi = float(np.min(y0)), float(np.max(y0))
            self.response_shift = 0.5 * (lo + hi)
            self.response_scale = (hi - lo) if hi > lo else 1.0
        else:
            self.response_shift = 0.0
            self.response_scale = 1.0
        self.standardize = bool(standardize)

        if leaf_prior_sd is None:
            # 0.5/(k sqrt(K)) maps the standardized response range to the
            # prior mass of the tree sum; on the fixed latent scale the
            # binary-response convention 3/(k sqrt(K)) applies instead.
            base = 0.5 if standardize else 3.0
            leaf_prior_sd = base / (leaf_prior_k * math.sqrt(self.n_trees))
        self.leaf_prior_sd = float(leaf_prior_sd)

        self.fixed_resid_var = fixed_resid_var
        if fixed_resid_var is not None:
            self.sigma2 = float(fixed_resid_var)
        elif y_for_scale is not None and np.asarray(y_for_scale).size > 1:
            y_std = (np.asarray(y_for_scale, float) - self.response_shift) \
                / self.response_scale
            self.sigma2 = float(max(np.var(y_std), 1e-6))
        else:
            self.sigma2 = 1.0
        self.resid_prior_shape = float(resid_prior_shape)
        self.resid_prior_rate = float(resid_prior_rate)
        # Univariate reduction of the inverse-Wishart(df=3) intercept
        # covariance prior: an inverse-gamma with shape 1.5; rate 1.5.
        # The prior is stated on the response scale; the internal rate is
        # rescaled so standardization does not change its meaning.
        self.intercept_prior_shape = float(intercept_prior_shape)
        self.intercept_prior_rate = float(intercept_prior_rate)
        self._intercept_rate_std = (
            self.intercept_prior_rate / self.response_scale**2)
        # start at the prior mode (response scale), transformed inward
        self.sigma_b2 = (self._intercept_rate_std
                         / (self.intercept_prior_shape + 1.0))

        self.trees = [RegressionTree(self.n_rows) for _ in range(self.n_trees)]
        self.b = np.zeros(self.n_clusters)
        self._totalfit = np.zeros(self.n_rows)
        self._all_rows = np.arange(self.n_rows, dtype=np.intp)

    # -- public state on the response scale ------------------------------

    @property
    def resid_var(self):
        return self.sigma2 * self.response_scale**2

    @property
    def intercept_var(self):
        return self.sigma_b2 * self.response_scale**2

    @property
    def random_intercepts(self):
        """cluster label -> intercept on the response scale."""
        return {
            label: float(self.b[i] * self.response_scale)
            for label, i in self._cluster_pos.items()
        }

    # -- prediction -------------------------------------------------------

    def predict_rows(self, rows=None):
        """Fitted values for reference rows (cached, no traversal)."""
        tot = self._totalfit + self.b[self.cluster_of_row]
        if rows is not None:
            tot = tot[rows]
        return tot * self.response_scale + self.response_shift

    def predict_matrix(self, X_new, cluster_ids=None):
        """Predictions for out-of-sample rows; unknown clusters get b=0."""
        X_new = np.asarray(X_new, dtype=float)
        if X_new.ndim != 2 or X_new.shape[1] != self.n_covariates:
            raise ValueError("design matrix has wrong number of covariates")
        idx = np.arange(X_new.shape[0], dtype=np.intp)
        tot = np.zeros(X_new.shape[0])
        for tree in self.trees:
            leaf = tree.assign_rows(idx, 0, X_new)
            tot += tree.leaf_value[leaf]
        if cluster_ids is not None:
            bvec = np.array([
                self.b[self._cluster_pos[c]] if c in self._cluster_pos else 0.0
                for c in np.asarray(cluster_ids).tolist()
            ])
            tot += bvec
        return tot * self.response_scale + self.response_shift

    # -- one backfitting sweep ---------------------------------------------

    def backfit(self, y, rng, rows=None, structural=True):
        """One full Gibbs sweep on the given training subset.

        ``y`` is on the response scale, aligned with ``rows`` (all
        reference rows when omitted). Proposals that would create an
        empty leaf (with respect to the training subset) are rejected,
        never raised.
        """
        gen = rng.generator
        rows = self._all_rows if rows is None else np.asarray(rows, dtype=np.intp)
        if rows.size == 0:
            raise ValueError("backfit requires at least one training row")
        y = np.asarray(y, dtype=float)
        if y.size != rows.size:
            raise ValueError("response length does not match training rows")
        y_std = (y - self.response_shift) / self.response_scale
        clu_tr = self.cluster_of_row[rows]
        y_ctr = y_std - self.b[clu_tr]
        totalfit_tr = self._totalfit[rows].copy()
        tau2 = self.leaf_prior_sd**2

        for tree in self.trees:
            row_leaf_tr = tree.row_leaf[rows]
            fit_tr = tree.leaf_value[row_leaf_tr]
            partial = y_ctr - totalfit_tr + fit_tr
            if structural:
                changed = self._structural_move(
                    tree, rows, row_leaf_tr, partial, tau2, gen)
                if changed:
                    row_leaf_tr = tree.row_leaf[rows]
            # Conjugate leaf-value redraw against the partial residuals.
            leaf_ids = np.asarray(tree.leaf_ids, dtype=np.int64)
            codes = np.searchsorted(leaf_ids, row_leaf_tr)
            cnt = np.bincount(codes, minlength=leaf_ids.size)
            s = np.bincount(codes, weights=partial, minlength=leaf_ids.size)
            new_vals = np.atleast_1d(sample_conjugate_normal_mean(
                0.0, tau2, s, cnt, self.sigma2, rng))
            tree.leaf_value[leaf_ids] = new_vals
            new_fit = tree.leaf_value[tree.row_leaf]
            delta = new_fit - tree.fit_cache
            self._totalfit += delta
            totalfit_tr += delta[rows]
            tree.fit_cache = new_fit

        # Random intercepts from the trees' residuals.
        resid = y_std - totalfit_tr
        cnt_c = np.bincount(clu_tr, minlength=self.n_clusters).astype(float)
        sum_c = np.bincount(clu_tr, weights=resid, minlength=self.n_clusters)
        self.b = np.atleast_1d(sample_conjugate_normal_mean(
            0.0, self.sigma_b2, sum_c, cnt_c, self.sigma2, rng))

        # Residual variance (skipped when pinned for probit roles).
        if self.fixed_resid_var is None:
            e = resid - self.b[clu_tr]
            ssr = float(e @ e)
            self.sigma2 = sample_inverse_gamma(
                self.resid_prior_shape + 0.5 * rows.size,
                self.resid_prior_rate + 0.5 * ssr, rng)

        # Intercept variance over all reference clusters.
        self.sigma_b2 = sample_inverse_gamma(
            self.intercept_prior_shape + 0.5 * self.n_clusters,
            self._intercept_rate_std + 0.5 * float(self.b @ self.b), rng)
        return self

    # -- Metropolis-Hastings structural move --------------------------------

    def _log_marg(self, n, s, tau2):
        """Leaf marginal likelihood with the residual-sum terms that cancel
        across a proposal dropped."""
        sig2 = self.sigma2
        denom = sig2 + n * tau2
        return 0.5 * math.log(sig2 / denom) + tau2 * s * s / (2.0 * sig2 * denom)

    def _structural_move(self, tree, rows, row_leaf_tr, partial, tau2, gen):
        u = gen.random()
        if u < self.prior.grow_prob:
            return self._try_grow(tree, rows, row_leaf_tr, partial, tau2, gen)
        if u < self.prior.grow_prob + self.prior.prune_prob:
            return self._try_prune(tree, row_leaf_tr, partial, tau2, gen)
        return self._try_change(tree, rows, row_leaf_tr, partial, tau2, gen)

    def _draw_split(self, gen):
        var = int(gen.integers(self.n_covariates))
        cuts = self.cutpoints[var]
        if cuts.size == 0:
            return None
        return var, float(cuts[gen.integers(cuts.size)])

    def _try_grow(self, tree, rows, row_leaf_tr, partial, tau2, gen):
        leaf = tree.leaf_ids[int(gen.integers(tree.n_leaves))]
        d = _depth(leaf)
        if d >= _MAX_DEPTH:
            return False
        drawn = self._draw_split(gen)
        if drawn is None:
            return False
        var, cut = drawn
        mask = row_leaf_tr == leaf
        node_rows = rows[mask]
        if node_rows.size == 0:
            return False
        goleft = self.X[node_rows, var] <= cut
        n_l = int(goleft.sum())
        n_r = node_rows.size - n_l
        if n_l == 0 or n_r == 0:
            return False
        part = partial[mask]
        s_all = float(part.sum())
        s_l = float(part[goleft].sum())
        s_r = s_all - s_l
        loglik = (self._log_marg(n_l, s_l, tau2)
                  + self._log_marg(n_r, s_r, tau2)
                  - self._log_marg(n_l + n_r, s_all, tau2))
        ps_d = self.prior.split_prob(d)
        ps_d1 = self.prior.split_prob(d + 1)
        logprior = (math.log(ps_d) + 2.0 * math.log(1.0 - ps_d1)
                    - math.log(1.0 - ps_d))
        prunable_now = len(tree.prunable_ids())
        parent = (leaf - 1) // 2
        parent_prunable = (
            leaf != 0
            and tree.var[2 * parent + 1] == _LEAF
            and tree.var[2 * parent + 2] == _LEAF
        )
        prunable_after = prunable_now + 1 - (1 if parent_prunable else 0)
        logtrans = (math.log(self.prior.prune_prob)
                    - math.log(self.prior.grow_prob)
                    + math.log(tree.n_leaves) - math.log(prunable_after))
        if math.log(gen.random()) < loglik + logprior + logtrans:
            tree.apply_grow(leaf, var, cut, self.X)
            return True
        return False

    def _try_prune(self, tree, row_leaf_tr, partial, tau2, gen):
        prunable = tree.prunable_ids()
        if not prunable:
            return False
        node = prunable[int(gen.integers(len(prunable)))]
        left, right = 2 * node + 1, 2 * node + 2
        mask_l = row_leaf_tr == left
        mask_r = row_leaf_tr == right
        n_l = int(mask_l.sum())
        n_r = int(mask_r.sum())
        s_l = float(partial[mask_l].sum())
        s_r = float(partial[mask_r].sum())
        loglik = (self._log_marg(n_l + n_r, s_l + s_r, tau2)
                  - self._log_marg(n_l, s_l, tau2)
                  - self._log_marg(n_r, s_r, tau2))
        d = _depth(node)
        ps_d = self.prior.split_prob(d)
        ps_d1 = self.prior.split_prob(d + 1)
        logprior = -(math.log(ps_d) + 2.0 * math.log(1.0 - ps_d1)
                     - math.log(1.0 - ps_d))
        logtrans = (math.log(self.prior.grow_prob)
                    - math.log(self.prior.prune_prob)
                    + math.log(len(prunable)) - math.log(tree.n_leaves - 1))
        if math.log(gen.random()) < loglik + logprior + logtrans:
            tree.apply_prune(node)
            return True
        return False

    def _try_change(self, tree, rows, row_leaf_tr, partial, tau2, gen):
        if not tree.internal_ids:
            return False
        node = tree.internal_ids[int(gen.integers(len(tree.internal_ids)))]
        drawn = self._draw_split(gen)
        if drawn is None:
            return False
        var, cut = drawn
        sub_leaves = tree.subtree_leaf_ids(node)
        mask = tree.mask_under(row_leaf_tr, node)
        node_rows = rows[mask]
        if node_rows.size == 0:
            return False
        old_leaf = row_leaf_tr[mask]
        new_leaf = tree.assign_rows(node_rows, node, self.X, override=(var, cut))
        leaf_arr = np.asarray(sub_leaves, dtype=np.int64)
        part = partial[mask]
        old_codes = np.searchsorted(leaf_arr, old_leaf)
        new_codes = np.searchsorted(leaf_arr, new_leaf)
        n_new = np.bincount(new_codes, minlength=leaf_arr.size)
        if (n_new == 0).any():
            return False
        n_old = np.bincount(old_codes, minlength=leaf_arr.size)
        s_old = np.bincount(old_codes, weights=part, minlength=leaf_arr.size)
        s_new = np.bincount(new_codes, weights=part, minlength=leaf_arr.size)
        loglik = 0.0
        for k in range(leaf_arr.size):
            loglik += (self._log_marg(int(n_new[k]), float(s_new[k]), tau2)
                       - self._log_marg(int(n_old[k]), float(s_old[k]), tau2))
        # Same structure, uniform split proposal: prior and proposal cancel.
        if math.log(gen.random()) < loglik:
            tree.apply_change(node, var, cut, self.X)
            return True
        return False

    # -- maintenance / inspection -------------------------------------------

    def install_trees(self, trees, intercepts=None):
        """Replace the ensemble with hand-built trees (tests, frozen
        instances). Recomputes every cache."""
        if len(trees) < 1:
            raise ValueError("need at least one tree")
        self.trees = list(trees)
        self.n_trees = len(self.trees)
        for tree in self.trees:
            tree.row_leaf = tree.assign_rows(self._all_rows, 0, self.X)
            tree.fit_cache = tree.leaf_value[tree.row_leaf]
        self._totalfit = np.sum([t.fit_cache for t in self.trees], axis=0)
        if intercepts is not None:
            b = np.zeros(self.n_clusters)
            for label, value in intercepts.items():
                b[self._cluster_pos[label]] = value
            self.b = b

    def average_tree_depth(self):
        return float(np.mean([t.max_depth() for t in self.trees]))

    def render_trees(self, covariate_names=None):
        chunks = []
        for k, tree in enumerate(self.trees):
            chunks.append(f"tree {k}\n{tree.render(covariate_names)}")
        return "".join(chunks)


# -------------------------------------------------------------------------
# Module-level operation surface
# -------------------------------------------------------------------------

def predict(model, x, cluster_id=None):
    """Ensemble prediction at a single covariate vector.

    Unknown cluster ids contribute b=0 (population-level prediction);
    known ids add that cluster's intercept.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.n_covariates:
        raise ValueError(
            f"expected {model.n_covariates} covariates, got {x.size}")
    tot = 0.0
    for tree in model.trees:
        tot += tree.evaluate(x)
    pos = model._cluster_pos.get(cluster_id)
    if pos is not None:
        tot += float(model.b[pos])
    return float(tot * model.response_scale + model.response_shift)


def backfit_iteration(model, y, rng, rows=None, structural=True):
    """One full backfitting sweep; mutates and returns the model."""
    return model.backfit(y, rng, rows=rows, structural=structural)


def fit_probit_latent(model, latent, rng, rows=None, structural=True):
    """Backfit sweep on a latent-normal response with variance pinned to 1."""
    if model.fixed_resid_var != 1.0:
        raise ContractViolation(
            "probit-latent fits require a model with resid var pinned to 1")
    return model.backfit(latent, rng, rows=rows, structural=structural)
