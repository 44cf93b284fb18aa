"""Embedding alignment-and-discrimination training loss.

Given a predicted embedding sequence E and a weak-label target sequence T
(one row per token), the loss combines:

  alignment        sum over kept tokens of (1 - cos(t_i, e_i))
  discrimination   mean squared difference between the within-E and
                   within-T pairwise cosine matrices
  cross            mean squared difference between the E-vs-T and
                   within-T pairwise cosine matrices

Padded/special token positions are masked out: they are excluded from the
alignment sum and from the normalization of the two structure terms, which
is by kept-token count squared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateInputError, ShapeError


@dataclass
class EmbeddingSequence:
    """N token embeddings (rows) with a keep/ignore mask.

    ``values`` may be a live graph tensor (model output) or a constant
    (targets). Masked-in rows must have nonzero norm.
    """

    values: Tensor
    mask: np.ndarray

    def __post_init__(self):
        if not isinstance(self.values, Tensor):
            self.values = Tensor(np.asarray(self.values, dtype=np.float64))
        if self.values.data.ndim != 2 or self.values.data.shape[0] < 1:
            raise ShapeError("embedding sequence must be a nonempty 2-D array")
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.values.data.shape[0],):
            raise ShapeError("mask length must equal the number of embedding rows")
        norms = np.linalg.norm(self.values.data[self.mask], axis=1)
        if norms.size and norms.min() == 0.0:
            raise DegenerateInputError("zero-norm embedding at a masked-in position")

    @classmethod
    def from_array(cls, values, mask=None) -> "EmbeddingSequence":
        arr = np.asarray(values, dtype=np.float64)
        if mask is None:
            mask = np.ones(arr.shape[0], dtype=bool)
        return cls(Tensor(arr), mask)

    @property
    def n_tokens(self) -> int:
        return self.values.data.shape[0]

    @property
    def dim(self) -> int:
        return self.values.data.shape[1]


@dataclass
class SimilarityMatrix:
    """N x N pairwise cosines with the pairing it encodes ('ee', 'et', 'tt')."""

    values: Tensor
    kind: str


@dataclass
class LossWeights:
    alignment: float = 1.0
    discrimination: float = 1.0
    cross: float = 1.0

    def __post_init__(self):
        if min(self.alignment, self.discrimination, self.cross) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    alignment: float
    discrimination: float
    cross: float
    total: float
    node: Tensor = field(repr=False, default=None)


def _check_pair(a: EmbeddingSequence, b: EmbeddingSequence) -> None:
    if a.n_tokens != b.n_tokens or a.dim != b.dim:
        raise ShapeError(
            f"embedding sequences disagree: {a.values.data.shape} vs {b.values.data.shape}"
        )


def _safe_unit_rows(seq: EmbeddingSequence) -> Tensor:
    """Row-normalized values with masked-out rows replaced by a fixed unit row.

    Masked-out rows never reach a loss sum, but they must not poison the
    normalization with divisions by a zero norm (pad rows may be all-zero).
    """
    mask_col = seq.mask.astype(np.float64)[:, None]
    filler = np.zeros_like(seq.values.data)
    filler[:, 0] = 1.0
    safe = ad.add(ad.mul(seq.values, ad.constant(mask_col)), ad.constant(filler * (1.0 - mask_col)))
    return ad.normalize_rows(safe)


def pairwise_cosine(a: EmbeddingSequence, b: EmbeddingSequence, kind: str = "et") -> SimilarityMatrix:
    """All-pairs cosine matrix out[i, j] = cos(a_i, b_j), differentiable."""
    _check_pair(a, b)
    return SimilarityMatrix(ad.matmul(_safe_unit_rows(a), ad.transpose(_safe_unit_rows(b))), kind)


def alignment_loss(e: EmbeddingSequence, t: EmbeddingSequence) -> Tensor:
    """Sum over kept rows of (1 - cos(t_i, e_i))."""
    _check_pair(e, t)
    diag = ad.row_sum(ad.mul(_safe_unit_rows(e), _safe_unit_rows(t)))
    mask_col = ad.constant(_joint_mask(e, t).astype(np.float64)[:, None])
    return ad.sum_all(ad.mul(ad.sub(1.0, diag), mask_col))


def _joint_mask(e: EmbeddingSequence, t: EmbeddingSequence) -> np.ndarray:
    m = e.mask & t.mask
    if not m.any():
        raise DegenerateInputError("no masked-in positions to compute a loss over")
    return m


def _masked_sq_diff(sim_a: Tensor, sim_b: Tensor, mask: np.ndarray) -> Tensor:
    """(1/M^2) * sum over kept (i, j) of (a_ij - b_ij)^2, M = kept count."""
    m = mask.astype(np.float64)
    outer = ad.constant(np.outer(m, m))
    diff = ad.sub(sim_a, sim_b)
    kept = float(m.sum())
    return ad.mul(ad.sum_all(ad.mul(ad.mul(diff, diff), outer)), 1.0 / (kept * kept))


def discrimination_loss(e: EmbeddingSequence, t: EmbeddingSequence) -> Tensor:
    """Match the within-E cosine structure to the within-T structure."""
    _check_pair(e, t)
    mask = _joint_mask(e, t)
    c_ee = pairwise_cosine(e, e, "ee").values
    c_tt = pairwise_cosine(t, t, "tt").values
    return _masked_sq_diff(c_ee, c_tt, mask)


def cross_loss(e: EmbeddingSequence, t: EmbeddingSequence) -> Tensor:
    """Match the E-vs-T cosine structure to the within-T structure."""
    _check_pair(e, t)
    mask = _joint_mask(e, t)
    c_et = pairwise_cosine(e, t, "et").values
    c_tt = pairwise_cosine(t, t, "tt").values
    return _masked_sq_diff(c_et, c_tt, mask)


def total_loss(e: EmbeddingSequence, t: EmbeddingSequence, weights: LossWeights | None = None) -> LossBreakdown:
    """Weighted sum of the three terms; ``node`` carries the live graph scalar."""
    w = weights or LossWeights()
    l_align = alignment_loss(e, t)
    l_disc = discrimination_loss(e, t)
    l_cross = cross_loss(e, t)
    node = ad.add(
        ad.add(ad.mul(l_align, w.alignment), ad.mul(l_disc, w.discrimination)),
        ad.mul(l_cross, w.cross),
    )
    return LossBreakdown(
        alignment=float(l_align.data),
        discrimination=float(l_disc.data),
        cross=float(l_cross.data),
        total=float(node.data),
        node=node,
    )
