"""Training objective: classification cross-entropy plus inverse regularization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import numkit as nk
from .encoder import (
    EncoderParams,
    RegressorParams,
    SimilarityHead,
    class_logits,
    encode_attribute,
    inverse_regress,
)
from .errors import ConfigError
from .numkit.ops import _val


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    ir: float
    lam: float
    total: float
    graph: object = field(default=None, repr=False, compare=False)  # taped total, when recorded


@dataclass
class Batch:
    """Features, labels indexing rows of ``seen_attributes``, and those attributes."""

    features: np.ndarray
    labels: np.ndarray
    seen_attributes: np.ndarray

    def __len__(self):
        return len(self.labels)


def cross_entropy_loss(logits, labels):
    return nk.softmax_cross_entropy(logits, labels)


def reconstruction_loss(attributes, embeddings, regressor: RegressorParams):
    """Summed squared error between attributes and their reconstructions."""
    diff = nk.ops.sub(inverse_regress(embeddings, regressor), attributes)
    return nk.ops.sum(nk.ops.square(diff))


def ir_loss(attributes, encoder: EncoderParams, regressor: RegressorParams):
    """Inverse-regularization loss over the seen-class attribute rows."""
    return reconstruction_loss(attributes, encode_attribute(attributes, encoder), regressor)


def joint_loss(batch: Batch, encoder: EncoderParams, regressor: RegressorParams,
               head: SimilarityHead, lam: float) -> LossBreakdown:
    """Cross-entropy over the seen classes plus ``lam`` times the IR loss.

    The seen-class embeddings are computed once and shared by both terms.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    Z = encode_attribute(batch.seen_attributes, encoder)
    ce = cross_entropy_loss(class_logits(batch.features, Z, head), batch.labels)
    ir = reconstruction_loss(batch.seen_attributes, Z, regressor)
    total = nk.ops.add(ce, nk.ops.mul(ir, lam))
    ce_v, ir_v = float(_val(ce)), float(_val(ir))
    graph = total if isinstance(total, nk.Var) else None
    return LossBreakdown(ce_v, ir_v, float(lam), ce_v + lam * ir_v, graph)


def gaussian_loglik_identity(a, reconstruction):
    """Negative log-density of ``a`` under N(reconstruction, I) and half the squared error.

    The two differ by exactly ``D/2 * ln(2*pi)``.
    """
    a = np.asarray(a, dtype=np.float64)
    r = np.asarray(reconstruction, dtype=np.float64)
    if a.shape != r.shape:
        raise nk.ops.DimensionError(f"shapes {a.shape} and {r.shape} differ")
    neg_loglik = -float(norm.logpdf(a, loc=r, scale=1.0).sum())
    half_sq_err = 0.5 * float(np.sum((a - r) ** 2))
    return neg_loglik, half_sq_err
