"""Post-hoc regression tree over posterior-mean conditional effects.

A greedy SSE-minimizing CART is fit to the posterior-mean CSACEs of the
likely always-survivors, with each node annotated by a posterior mean
and a 95% CrI obtained by pooling the member individuals' CSACE draws
(draw-level aggregation, not a normal approximation). Split search is
fully deterministic: candidate gains are compared in (covariate index,
cutpoint) order, so permuting the input rows cannot change the tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["CartNode", "CartTree", "fit_cart", "render_tree", "render_dot"]


@dataclass
class CartNode:
    mean: float
    cri_lo: float
    cri_hi: float
    n_members: int
    covariate: int | None = None
    cutpoint: float | None = None
    left: "CartNode | None" = None
    right: "CartNode | None" = None

    @property
    def is_leaf(self):
        return self.covariate is None


@dataclass
class CartTree:
    root: CartNode
    covariate_names: tuple
    max_depth: int
    min_node_size: int
    min_sse_gain: float

    def leaves(self):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out

    @property
    def primary_split(self):
        """(covariate name, cutpoint) of the root split, or None."""
        if self.root.is_leaf:
            return None
        return (self.covariate_names[self.root.covariate],
                self.root.cutpoint)


def _sse(y):
    if y.size == 0:
        return 0.0
    y = np.sort(y)  # canonical summation order
    return float(((y - y.mean()) ** 2).sum())


def _best_split(y, X, min_node_size):
    """Deterministic best (covariate, cutpoint, children_sse).

    Candidates are midpoints between consecutive distinct sorted values;
    ties break to the lowest covariate index and then the smallest
    cutpoint because the scan accepts strictly better gains only.
    """
    best = None
    n = y.size
    for j in range(X.shape[1]):
        # lexsort fixes the summation order under tied covariate values,
        # which keeps the fit invariant to permutations of the input rows
        order = np.lexsort((y, X[:, j]))
        xs = X[order, j]
        ys = y[order]
        csum = np.cumsum(ys)
        csum2 = np.cumsum(ys**2)
        total_sum = csum[-1]
        total_sum2 = csum2[-1]
        # boundaries after position k (1-based count k on the left)
        distinct = np.nonzero(xs[1:] > xs[:-1])[0] + 1
        for k in distinct:
            if k < min_node_size or n - k < min_node_size:
                continue
            left_sse = csum2[k - 1] - csum[k - 1] ** 2 / k
            right_sum = total_sum - csum[k - 1]
            right_sse = (total_sum2 - csum2[k - 1]
                         - right_sum**2 / (n - k))
            children = left_sse + right_sse
            if best is None or children < best[2] - 1e-12:
                cut = 0.5 * (xs[k - 1] + xs[k])
                best = (j, float(cut), float(children))
    return best


def _node_summary(idx, responses, draws):
    members = np.sort(responses[idx])  # canonical summation order
    pooled = draws[idx]
    pooled = pooled[np.isfinite(pooled)]
    if pooled.size == 0:
        pooled = members
    lo, hi = np.quantile(pooled, [0.025, 0.975])
    return float(members.mean()), float(lo), float(hi), int(idx.size)


def fit_cart(responses, covariates, draws, covariate_names=None,
             max_depth=3, min_node_size=20, min_sse_gain=0.01) -> CartTree:
    """Greedy SSE-minimizing tree over per-individual effect estimates.

    ``responses``: posterior-mean CSACE per individual (restricted by
    the caller to likely always-survivors). ``draws``: matrix of CSACE
    draws aligned with responses (NaN where the individual was not an
    always-survivor in that draw), pooled per node for the CrIs.
    ``min_sse_gain`` is relative to the root SSE. With fewer than
    2*min_node_size rows the tree is root-only.
    """
    responses = np.asarray(responses, dtype=float)
    covariates = np.asarray(covariates, dtype=float)
    draws = np.asarray(draws, dtype=float)
    if covariates.ndim != 2 or covariates.shape[0] != responses.size:
        raise ValueError("covariates must be (n_individuals, p)")
    if draws.shape[0] != responses.size:
        raise ValueError("draws must be row-aligned with responses")
    if covariate_names is None:
        covariate_names = tuple(f"x{j}" for j in range(covariates.shape[1]))
    root_sse = _sse(responses)
    gain_floor = min_sse_gain * root_sse

    def build(idx, depth):
        mean, lo, hi, n = _node_summary(idx, responses, draws)
        node = CartNode(mean, lo, hi, n)
        if depth >= max_depth or idx.size < 2 * min_node_size:
            return node
        split = _best_split(responses[idx], covariates[idx], min_node_size)
        if split is None:
            return node
        j, cut, children_sse = split
        node_sse = _sse(responses[idx])
        if node_sse - children_sse <= max(gain_floor, 0.0):
            return node
        goleft = covariates[idx, j] <= cut
        node.covariate = j
        node.cutpoint = cut
        node.left = build(idx[goleft], depth + 1)
        node.right = build(idx[~goleft], depth + 1)
        return node

    root = build(np.arange(responses.size), 0)
    return CartTree(root=root, covariate_names=tuple(covariate_names),
                    max_depth=max_depth, min_node_size=min_node_size,
                    min_sse_gain=min_sse_gain)


def _annotation(node):
    return (f"{node.mean:.3f} [{node.cri_lo:.3f}, {node.cri_hi:.3f}] "
            f"(n={node.n_members})")


def render_tree(tree: CartTree):
    """Indented text rendering, one line per node, indentation = depth."""
    lines = []

    def walk(node, depth, prefix):
        pad = "  " * depth
        if node.is_leaf:
            lines.append(f"{pad}{prefix}{_annotation(node)}")
            return
        name = tree.covariate_names[node.covariate]
        lines.append(
            f"{pad}{prefix}split {name} <= {node.cutpoint:g} | "
            f"{_annotation(node)}")
        walk(node.left, depth + 1, f"{name} <= {node.cutpoint:g}: ")
        walk(node.right, depth + 1, f"{name} > {node.cutpoint:g}: ")

    walk(tree.root, 0, "")
    return "\n".join(lines) + "\n"


def render_dot(tree: CartTree):
    """DOT graph description for external visualization."""
    lines = ["digraph effect_tree {", '  node [shape=box];']
    counter = [0]

    def walk(node):
        nid = counter[0]
        counter[0] += 1
        if node.is_leaf:
            lines.append(f'  n{nid} [label="{_annotation(node)}"];')
            return nid
        name = tree.covariate_names[node.covariate]
        lines.append(
            f'  n{nid} [label="{name} <= {node.cutpoint:g}\\n'
            f'{_annotation(node)}"];')
        left_id = walk(node.left)
        right_id = walk(node.right)
        lines.append(f'  n{nid} -> n{left_id} [label="yes"];')
        lines.append(f'  n{nid} -> n{right_id} [label="no"];')
        return nid

    walk(tree.root)
    lines.append("}")
    return "\n".join(lines) + "\n"
