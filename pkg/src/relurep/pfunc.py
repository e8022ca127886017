"""Closed-form representation costs of finite stacked ReLU networks.

For a stack written as a finite sum of ridge atoms the function-space
penalty reduces to a weighted sum over neurons plus the bias and skip terms:

    atom_factor * sum_k |w_k| sqrt(|v_k|^2 + b_k^2) + |c|^2 + skip_term

With ``atom_factor=2`` this equals the squared parameter norm of the
balanced network exactly, so ``lam * network_cost == lam * |theta|^2``
after :func:`relurep.net.balance`.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .net import Architecture, NetworkParams, StackParams, check_arch

PENALTY_KINDS = ("bias_reg", "no_bias_reg")
SKIP_PENALTIES = ("none", "frobenius_sq", "schatten1")


def weighing(r):
    """The kink-location weight g(r) = 1/sqrt(r^2 + 1)."""
    return 1.0 / np.sqrt(np.asarray(r, dtype=float) ** 2 + 1.0)


@dataclass(frozen=True)
class PenaltyVariant:
    kind: str = "bias_reg"
    skip_kind: str = "none"
    atom_factor: float = 2.0
    # "product" evaluates the nuclear norm of A2 @ A1, "factors" the balanced
    # Frobenius cost of the factors themselves.
    schatten_on: str = "product"

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.skip_kind not in SKIP_PENALTIES:
            raise ValueError(f"unknown skip penalty {self.skip_kind!r}")
        if not self.atom_factor > 0:
            raise ValueError("atom_factor must be positive")
        if self.schatten_on not in ("product", "factors"):
            raise ValueError("schatten_on must be 'product' or 'factors'")


@dataclass(frozen=True)
class CostBreakdown:
    per_neuron: np.ndarray
    bias_term: float
    skip_term: float
    atom_factor: float = 2.0
    total: float = field(init=False)

    def __post_init__(self):
        per = np.asarray(self.per_neuron, dtype=float)
        object.__setattr__(self, "per_neuron", per)
        total = self.atom_factor * float(np.sum(per)) + self.bias_term + self.skip_term
        object.__setattr__(self, "total", total)


def neuron_cost(v, b: float, w, variant: PenaltyVariant = PenaltyVariant()) -> float:
    """Cost of one ReLU ridge atom, without the atom factor.

    ``bias_reg`` gives |w| sqrt(|v|^2 + b^2), which equals |v||w|/g(-b/|v|)
    whenever v != 0; ``no_bias_reg`` gives |v||w|.
    """
    v_norm = float(np.linalg.norm(np.atleast_1d(v)))
    w_norm = float(np.linalg.norm(np.atleast_1d(w)))
    if variant.kind == "no_bias_reg":
        return v_norm * w_norm
    return w_norm * float(np.hypot(v_norm, b))


def schatten1(A) -> float:
    """Sum of singular values.

    Computed with LAPACK's SVD; the result is accurate to roughly
    ``eps * sigma_max * min(A.shape)``. Raises ``np.linalg.LinAlgError`` if the
    SVD fails to converge.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if A.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def default_variant(stack: StackParams, kind: str = "bias_reg") -> PenaltyVariant:
    """Penalty variant matching the stack's skip connection."""
    skip = {"none": "none", "linear": "frobenius_sq", "factored_linear": "schatten1"}
    return PenaltyVariant(kind=kind, skip_kind=skip[stack.skip_kind])


def stack_cost(stack: StackParams, variant: PenaltyVariant | None = None) -> CostBreakdown:
    if variant is None:
        variant = default_variant(stack)
    has_skip = stack.skip is not None
    if has_skip != (variant.skip_kind != "none"):
        raise ValueError(
            f"penalty skip kind {variant.skip_kind!r} does not fit a stack with "
            f"skip {stack.skip_kind!r}"
        )
    v_norm = np.linalg.norm(stack.v, axis=1)
    w_norm = np.linalg.norm(stack.w, axis=0)
    if variant.kind == "no_bias_reg":
        per = v_norm * w_norm
        bias = 0.0
        _warn_cancelling_pairs(stack)
    else:
        per = w_norm * np.hypot(v_norm, stack.b)
        bias = float(np.sum(stack.c**2))

    skip_term = 0.0
    if variant.skip_kind == "frobenius_sq":
        skip_term = float(np.sum(stack.skip_matrix**2))
    elif variant.skip_kind == "schatten1":
        if variant.schatten_on == "factors" and isinstance(stack.skip, tuple):
            a2, a1 = stack.skip
            skip_term = 0.5 * variant.atom_factor * float(np.sum(a1**2) + np.sum(a2**2))
        else:
            skip_term = variant.atom_factor * schatten1(stack.skip_matrix)
    return CostBreakdown(per, bias, skip_term, variant.atom_factor)


def _warn_cancelling_pairs(stack: StackParams, cos_tol: float = -0.999, kink_tol: float = 1e-6):
    """Warn when two neurons nearly cancel into a purely linear map."""
    v_norm = np.linalg.norm(stack.v, axis=1)
    w_norm = np.linalg.norm(stack.w, axis=0)
    live = np.flatnonzero((v_norm > 0) & (w_norm > 0))
    if len(live) < 2:
        return
    s = stack.v[live] / v_norm[live, None]
    off = -stack.b[live] / v_norm[live]
    wn = stack.w[:, live] / w_norm[live]
    cos_w = wn.T @ wn
    cos_s = s @ s.T
    # opposite directions and coincident hyperplanes: s_i = -s_j, off_i = -off_j
    same_plane = (cos_s < -1 + 1e-9) & (np.abs(off[:, None] + off[None, :]) < kink_tol)
    if np.any((cos_w < cos_tol) & same_plane):
        warnings.warn(
            "two neurons nearly cancel into a linear map; express linear parts "
            "through a skip connection",
            stacklevel=3,
        )


def network_cost(
    net: NetworkParams,
    arch: Architecture | None = None,
    variants: Sequence[PenaltyVariant] | None = None,
) -> float:
    """Sum of stack costs at the network's own decomposition.

    This is an upper bound on the compositional functional, which takes the
    infimum over all decompositions of the same function.
    """
    if arch is not None:
        check_arch(net, arch)
    if variants is None:
        variants = [default_variant(s) for s in net]
    if len(variants) != len(net):
        raise ValueError("one penalty variant per stack required")
    return float(sum(stack_cost(s, var).total for s, var in zip(net, variants)))


def write_breakdowns_csv(breakdowns: Sequence[CostBreakdown], path) -> None:
    """Write ``stack,neuron_index_or_term,value`` rows (stacks 1-based)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stack", "neuron_index_or_term", "value"])
        for j, bd in enumerate(breakdowns, start=1):
            for k, val in enumerate(bd.per_neuron):
                writer.writerow([j, k, repr(float(val))])
            writer.writerow([j, "bias", repr(float(bd.bias_term))])
            writer.writerow([j, "skip", repr(float(bd.skip_term))])
            writer.writerow([j, "total", repr(float(bd.total))])
