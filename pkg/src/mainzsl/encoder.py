"""Attribute encoder built from self-interaction blocks, the inverse regressor,
the similarity head, and a finite-difference probe of polynomial degree.

Parameters live in small dataclasses whose array fields may be swapped for
taped :class:`~mainzsl.numkit.Var` objects; every forward function here works
on either.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np

from . import numkit as nk
from .errors import DimensionError, ModeError
from .numkit.ops import _val

SIA_MODES = ("self_gating", "polynomial_kernel", "ungated")
HEAD_KINDS = ("cosine", "dot")

# (g_a, g_s, g_b); the ungated variant drops the sigmoid gate altogether
_SIA_ACTIVATIONS = {
    "self_gating": ("relu", "sigmoid", "relu"),
    "polynomial_kernel": ("identity", "identity", "identity"),
    "ungated": ("relu", None, "relu"),
}


@dataclass
class LinearParams:
    weight: np.ndarray  # out x in
    bias: np.ndarray

    @property
    def in_dim(self) -> int:
        return int(np.shape(_val(self.weight))[1])

    @property
    def out_dim(self) -> int:
        return int(np.shape(_val(self.weight))[0])

    def __call__(self, x):
        return nk.linear(x, self.weight, self.bias)


@dataclass
class SiaBlockParams:
    phi_a: LinearParams
    phi_s: LinearParams | None
    phi_b: LinearParams
    mode: str = "self_gating"

    def __post_init__(self):
        if self.mode not in SIA_MODES:
            raise ModeError(f"unknown SIA mode {self.mode!r}")
        outs = {self.phi_a.out_dim, self.phi_b.out_dim}
        if self.phi_s is not None:
            outs.add(self.phi_s.out_dim)
        elif self.mode != "ungated":
            raise ModeError(f"mode {self.mode!r} needs a gate map phi_s")
        if len(outs) != 1:
            raise DimensionError(f"phi_a/phi_s/phi_b output dims differ: {sorted(outs)}")


@dataclass
class EncoderParams:
    blocks: list
    proj1: LinearParams
    proj2: LinearParams
    bn: nk.BatchNormState | None
    hidden_dim: int = 2048

    def __post_init__(self):
        if not self.blocks:
            raise DimensionError("encoder needs at least one SIA block")
        if self.blocks[-1].phi_a.out_dim != self.proj1.in_dim:
            raise DimensionError("last block output dim must equal proj1 input dim")

    @property
    def attr_dim(self) -> int:
        return self.blocks[0].phi_a.in_dim

    @property
    def feat_dim(self) -> int:
        return self.proj2.out_dim


@dataclass
class RegressorParams:
    """Maps visual-space embeddings back to attributes; ReLU between layers."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("regressor needs at least one layer")


@dataclass
class SimilarityHead:
    kind: str = "cosine"
    log_scale: np.ndarray = field(default_factory=lambda: np.array(np.log(10.0)))

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ModeError(f"unknown head kind {self.kind!r}")

    @property
    def scale(self) -> float:
        return float(np.exp(_val(self.log_scale)))


# --- forward passes --------------------------------------------------------

def sia_forward(a, block: SiaBlockParams):
    """One self-interaction block: ``g_a(phi_a a) * g_s(phi_s a) + g_b(phi_b a)``."""
    if np.shape(_val(a))[-1] != block.phi_a.in_dim:
        raise DimensionError(f"SIA input dim {np.shape(_val(a))[-1]} != block input dim {block.phi_a.in_dim}")
    ga, gs, gb = _SIA_ACTIVATIONS[block.mode]
    left = nk.activate(block.phi_a(a), ga)
    if gs is not None:
        left = nk.ops.mul(left, nk.activate(block.phi_s(a), gs))
    return nk.ops.add(left, nk.activate(block.phi_b(a), gb))


def sia_stack(a, blocks):
    for block in blocks:
        a = sia_forward(a, block)
    return a


def encode_attribute(a, params: EncoderParams):
    """Map attribute vector(s) ``a`` (D or B x D) into the visual feature space."""
    if np.shape(_val(a))[-1] != params.attr_dim:
        raise DimensionError(f"attribute dim {np.shape(_val(a))[-1]} != encoder input dim {params.attr_dim}")
    h = params.proj1(sia_stack(a, params.blocks))
    if params.bn is not None:
        if np.ndim(_val(h)) == 1:
            if params.bn.mode == "train":
                raise nk.ops.DegenerateBatchError("train-mode batch norm on a single attribute")
            h = nk.batch_norm(h.reshape(1, -1), params.bn)[0]
        else:
            h = nk.batch_norm(h, params.bn)
    return params.proj2(h)


def inverse_regress(z, params: RegressorParams):
    n = len(params.layers)
    if np.shape(_val(z))[-1] != params.layers[0].in_dim:
        raise DimensionError(f"embedding dim {np.shape(_val(z))[-1]} != regressor input dim {params.layers[0].in_dim}")
    for i, layer in enumerate(params.layers):
        z = layer(z)
        if i < n - 1:
            z = nk.activate(z, "relu")
    return z


def class_logits(x, Z, head: SimilarityHead):
    """Similarity of feature(s) ``x`` to each row of the class-embedding matrix ``Z``."""
    if np.shape(_val(x))[-1] != np.shape(_val(Z))[-1]:
        raise DimensionError(f"feature dim {np.shape(_val(x))[-1]} != embedding dim {np.shape(_val(Z))[-1]}")
    if head.kind == "dot":
        return nk.ops.matmul(x, nk.ops.transpose(Z))
    xn = nk.l2_normalize_rows(x, "feature")
    zn = nk.l2_normalize_rows(Z, "class embedding")
    cos = nk.ops.matmul(xn, nk.ops.transpose(zn))
    return nk.ops.mul(nk.ops.exp(head.log_scale), cos)


def predict_labels(logits) -> np.ndarray:
    """Argmax over classes; ties resolve to the lowest index."""
    return np.argmax(_val(logits), axis=-1)


# --- initialisation --------------------------------------------------------

def _kaiming(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return LinearParams(rng.uniform(-bound, bound, (fan_out, fan_in)), np.zeros(fan_out))


def _xavier(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return LinearParams(rng.uniform(-bound, bound, (fan_out, fan_in)), np.zeros(fan_out))


def init_block(rng, in_dim: int, out_dim: int, mode: str) -> SiaBlockParams:
    if mode == "polynomial_kernel":
        return SiaBlockParams(_xavier(rng, out_dim, in_dim), _xavier(rng, out_dim, in_dim),
                              _xavier(rng, out_dim, in_dim), mode)
    phi_a = _kaiming(rng, out_dim, in_dim)
    phi_s = _xavier(rng, out_dim, in_dim) if mode == "self_gating" else None
    phi_b = _kaiming(rng, out_dim, in_dim)
    return SiaBlockParams(phi_a, phi_s, phi_b, mode)


@dataclass
class MainModel:
    """Encoder, inverse regressor and similarity head trained together."""

    encoder: EncoderParams
    regressor: RegressorParams
    head: SimilarityHead

    @classmethod
    def create(
        cls,
        attr_dim: int,
        feat_dim: int,
        *,
        hidden_dim: int = 2048,
        depth: int = 1,
        sia_mode: str = "self_gating",
        head_kind: str = "cosine",
        use_bn: bool = True,
        regressor_hidden: int | None = 2048,
        seed: int = 0,
    ) -> "MainModel":
        if depth < 1:
            raise DimensionError("depth must be >= 1")
        if sia_mode not in SIA_MODES:
            raise ModeError(f"unknown SIA mode {sia_mode!r}")
        rng = np.random.default_rng(seed)
        blocks = [init_block(rng, attr_dim if i == 0 else hidden_dim, hidden_dim, sia_mode) for i in range(depth)]
        encoder = EncoderParams(
            blocks,
            _xavier(rng, hidden_dim, hidden_dim),
            _xavier(rng, feat_dim, hidden_dim),
            nk.BatchNormState.create(hidden_dim) if use_bn else None,
            hidden_dim,
        )
        if regressor_hidden:
            layers = [_kaiming(rng, regressor_hidden, feat_dim), _xavier(rng, attr_dim, regressor_hidden)]
        else:
            layers = [_xavier(rng, attr_dim, feat_dim)]
        return cls(encoder, RegressorParams(layers), SimilarityHead(head_kind))

    # flat views used by optimizers and checkpoints

    def params(self) -> dict:
        out = {}
        for i, b in enumerate(self.encoder.blocks):
            for key in ("phi_a", "phi_s", "phi_b"):
                lin = getattr(b, key)
                if lin is not None:
                    out[f"encoder.blocks.{i}.{key}.weight"] = lin.weight
                    out[f"encoder.blocks.{i}.{key}.bias"] = lin.bias
        for key in ("proj1", "proj2"):
            lin = getattr(self.encoder, key)
            out[f"encoder.{key}.weight"] = lin.weight
            out[f"encoder.{key}.bias"] = lin.bias
        if self.encoder.bn is not None:
            out["encoder.bn.gamma"] = self.encoder.bn.gamma
            out["encoder.bn.beta"] = self.encoder.bn.beta
        for i, lin in enumerate(self.regressor.layers):
            out[f"regressor.layers.{i}.weight"] = lin.weight
            out[f"regressor.layers.{i}.bias"] = lin.bias
        if self.head.kind == "cosine":
            out["head.log_scale"] = self.head.log_scale
        return out

    def buffers(self) -> dict:
        if self.encoder.bn is None:
            return {}
        return {"encoder.bn.running_mean": self.encoder.bn.running_mean,
                "encoder.bn.running_var": self.encoder.bn.running_var}

    def with_params(self, values: dict, bn_mode: str | None = None) -> "MainModel":
        """Same structure with parameter arrays taken from ``values``.

        Batch-norm running statistics are shared with ``self`` (not copied).
        """
        missing = set(self.params()) - set(values)
        if missing:
            raise DimensionError(f"missing parameters: {sorted(missing)}")

        def lin(prefix, old):
            if old is None:
                return None
            return LinearParams(values[f"{prefix}.weight"], values[f"{prefix}.bias"])

        blocks = [
            SiaBlockParams(
                lin(f"encoder.blocks.{i}.phi_a", b.phi_a),
                lin(f"encoder.blocks.{i}.phi_s", b.phi_s),
                lin(f"encoder.blocks.{i}.phi_b", b.phi_b),
                b.mode,
            )
            for i, b in enumerate(self.encoder.blocks)
        ]
        bn = self.encoder.bn
        if bn is not None:
            bn = replace(bn, gamma=values["encoder.bn.gamma"], beta=values["encoder.bn.beta"],
                         mode=bn_mode or bn.mode)
        encoder = EncoderParams(blocks, lin("encoder.proj1", self.encoder.proj1),
                                lin("encoder.proj2", self.encoder.proj2), bn, self.encoder.hidden_dim)
        regressor = RegressorParams([lin(f"regressor.layers.{i}", l) for i, l in enumerate(self.regressor.layers)])
        head = SimilarityHead(self.head.kind, values.get("head.log_scale", self.head.log_scale))
        return MainModel(encoder, regressor, head)

    def eval_view(self) -> "MainModel":
        return self.with_params(self.params(), bn_mode="eval")

    def copy(self) -> "MainModel":
        return copy.deepcopy(self)

    def load_buffers(self, buffers: dict) -> None:
        if self.encoder.bn is not None:
            self.encoder.bn.running_mean[...] = buffers["encoder.bn.running_mean"]
            self.encoder.bn.running_var[...] = buffers["encoder.bn.running_var"]

    def embed(self, attributes) -> np.ndarray:
        """Eval-mode class embeddings for the given attribute rows."""
        return encode_attribute(np.asarray(attributes, dtype=np.float64), self.eval_view().encoder)

    def predict(self, features, attributes, class_ids) -> np.ndarray:
        """Global class id of the most similar candidate class for each feature row."""
        Z = self.embed(attributes)
        logits = class_logits(np.asarray(features, dtype=np.float64), Z, self.head)
        return np.asarray(class_ids)[predict_labels(logits)]


# --- degree probe ----------------------------------------------------------

@dataclass
class DegreeReport:
    degrees: np.ndarray  # per output coordinate
    bound: int  # 2**L
    rel_differences: np.ndarray  # coordinate x order (1-based order at column j is j+1)

    @property
    def within_bound(self) -> bool:
        return bool(np.all(self.degrees <= self.bound))


def forward_difference(values: np.ndarray, order: int) -> np.ndarray:
    """``order``-th forward difference at the first grid point, along axis 0."""
    return sum((-1) ** (order - j) * comb(order, j) * values[j] for j in range(order + 1))


def polynomial_degree_probe(
    blocks,
    direction,
    base,
    max_degree: int | None = None,
    step: float = 0.1,
    tol: float = 1e-6,
) -> DegreeReport:
    """Estimate the polynomial degree of each stacked-block output coordinate
    along the line ``base + t * direction``.

    The degree of a coordinate is the smallest ``n`` whose ``(n+1)``-th forward
    difference on an evenly spaced ``t`` grid vanishes relative to the largest
    value on that grid. Only identity-activation (polynomial kernel) blocks
    are accepted.
    """
    if isinstance(blocks, EncoderParams):
        blocks = blocks.blocks
    for b in blocks:
        if b.mode != "polynomial_kernel":
            raise ModeError(f"degree probe needs polynomial_kernel blocks, got {b.mode!r}")
    bound = 2 ** len(blocks)
    max_degree = bound if max_degree is None else max_degree
    n_points = max_degree + 2
    t = step * np.arange(n_points)
    pts = np.asarray(base, dtype=np.float64)[None, :] + t[:, None] * np.asarray(direction, dtype=np.float64)[None, :]
    values = sia_stack(pts, blocks)  # n_points x out
    scale = np.maximum(np.abs(values).max(axis=0), np.finfo(float).tiny)
    rel = np.stack([np.abs(forward_difference(values, m)) / scale for m in range(1, max_degree + 2)], axis=1)
    degrees = np.full(values.shape[1], max_degree + 1)
    for i in range(values.shape[1]):
        small = np.nonzero(rel[i] < tol)[0]
        if small.size:
            degrees[i] = small[0]  # column j holds order j+1, so degree j
    return DegreeReport(degrees, bound, rel)
