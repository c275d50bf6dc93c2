"""Shared-latent-space network: Gaussian encoders per modality, precision-
weighted product-of-experts fusion for the video side, reparameterized
sampling, cross-generation decoders, and the dot-product match score.

Encoders emit [mu | log-variance] halves; sigma = exp(0.5 * logvar) is
strictly positive by construction. The latent prior is the standard normal
and is not configurable. Eager functions here are the inference path; the
``*_t`` helpers build the same forward pass on a Tape for training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ndmath
from .exceptions import ContractError, DimensionError, NumericError
from .ndmath import Matrix, Tape


@dataclass(frozen=True)
class GaussianLatent:
    """Diagonal Gaussian over the latent space: mean and per-dim std."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.ascontiguousarray(self.mu, dtype=np.float64).ravel()
        sigma = np.ascontiguousarray(self.sigma, dtype=np.float64).ravel()
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        if mu.shape != sigma.shape:
            raise DimensionError(
                f"GaussianLatent: mu has length {mu.shape[0]}, sigma {sigma.shape[0]}"
            )
        if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
            raise ContractError("GaussianLatent: non-finite parameters")
        if (sigma <= 0).any():
            raise ContractError("GaussianLatent: sigma must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


class MlpNet:
    """Fully connected net, ReLU between layers, linear final layer."""

    def __init__(self, widths: Sequence[int], weights: list[Matrix], biases: list[Matrix]):
        self.widths = tuple(int(w) for w in widths)
        if len(weights) != len(self.widths) - 1 or len(biases) != len(weights):
            raise ContractError("MlpNet: one weight/bias pair per consecutive width pair")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (1, self.widths[i + 1]):
                raise DimensionError(
                    f"MlpNet layer {i}: weight {w.shape} / bias {b.shape} do not match "
                    f"widths {self.widths[i]}->{self.widths[i + 1]}"
                )
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def init(cls, widths: Sequence[int], rng: np.random.Generator) -> "MlpNet":
        """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
        weights, biases = [], []
        widths = [int(w) for w in widths]
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(Matrix(rng.uniform(-limit, limit, size=(fan_in, fan_out))))
            biases.append(Matrix.zeros(1, fan_out))
        return cls(widths, weights, biases)

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch forward pass; rows are samples."""
        x = np.atleast_2d(np.ascontiguousarray(x, dtype=np.float64))
        if x.shape[1] != self.in_width:
            raise DimensionError(
                f"MlpNet.forward: input has {x.shape[1]} features, net expects {self.in_width}"
            )
        h = Matrix(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ndmath.affine(h, w, b)
            if i != last:
                h = ndmath.relu(h)
        return h.data

    def copy(self) -> "MlpNet":
        return MlpNet(self.widths, list(self.weights), list(self.biases))


NET_ORDER = (
    "music_encoder",
    "visual_encoder",
    "textual_encoder",
    "music_decoder",
    "visual_decoder",
    "textual_decoder",
)


@dataclass
class CmvaeParams:
    """All trainable weights: three encoders, three decoders, latent dim."""

    music_encoder: MlpNet
    visual_encoder: MlpNet
    textual_encoder: MlpNet
    music_decoder: MlpNet
    visual_decoder: MlpNet
    textual_decoder: MlpNet
    d: int

    def __post_init__(self):
        for name in ("music_encoder", "visual_encoder", "textual_encoder"):
            net = getattr(self, name)
            if net.out_width != 2 * self.d:
                raise DimensionError(
                    f"{name}: output width {net.out_width} != 2*d = {2 * self.d}"
                )
        for name in ("music_decoder", "visual_decoder", "textual_decoder"):
            net = getattr(self, name)
            if net.in_width != self.d:
                raise DimensionError(f"{name}: input width {net.in_width} != d = {self.d}")

    @property
    def feature_dims(self) -> tuple[int, int, int]:
        """(music, visual, textual) feature widths."""
        return (
            self.music_encoder.in_width,
            self.visual_encoder.in_width,
            self.textual_encoder.in_width,
        )

    def nets(self):
        return [(name, getattr(self, name)) for name in NET_ORDER]

    def copy(self) -> "CmvaeParams":
        return CmvaeParams(*(getattr(self, n).copy() for n in NET_ORDER), d=self.d)


def init_params(
    d: int,
    feature_dims: tuple[int, int, int],
    hidden: Sequence[int],
    rng: np.random.Generator,
) -> CmvaeParams:
    """Fresh network stack; rng is consumed in a fixed net/layer order."""
    f_m, f_vv, f_vt = feature_dims
    hidden = tuple(int(h) for h in hidden)
    nets = {}
    for name, f in (("music_encoder", f_m), ("visual_encoder", f_vv), ("textual_encoder", f_vt)):
        nets[name] = MlpNet.init([f, *hidden, 2 * d], rng)
    dec_hidden = tuple(reversed(hidden))
    for name, f in (("music_decoder", f_m), ("visual_decoder", f_vv), ("textual_decoder", f_vt)):
        nets[name] = MlpNet.init([d, *dec_hidden, f], rng)
    return CmvaeParams(d=d, **nets)


# ---------------------------------------------------------------------------
# Eager inference path
# ---------------------------------------------------------------------------

def encode_batch(net: MlpNet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior parameters for a batch: (mu, sigma), each N x d."""
    out = net.forward(x)
    d = out.shape[1] // 2
    mu = out[:, :d]
    sigma = np.exp(0.5 * out[:, d:])
    if not np.isfinite(sigma).all():
        raise NumericError("encode: log-variance overflowed exp()")
    return np.ascontiguousarray(mu), np.ascontiguousarray(sigma)


def encode(net: MlpNet, x: np.ndarray) -> GaussianLatent:
    """Single feature vector -> diagonal Gaussian posterior."""
    x = np.asarray(x, dtype=np.float64).ravel()
    mu, sigma = encode_batch(net, x.reshape(1, -1))
    return GaussianLatent(mu[0], sigma[0])


def decode(net: MlpNet, z: np.ndarray) -> np.ndarray:
    """Latent vector -> reconstructed feature vector (final layer linear)."""
    z = np.asarray(z, dtype=np.float64).ravel()
    return net.forward(z.reshape(1, -1))[0]


def poe_fuse_arrays(
    mus: Sequence[np.ndarray], sigmas: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Product of diagonal Gaussians, array form: precisions add, means are
    precision-weighted. Shapes broadcast over any shared leading dims."""
    prec = [1.0 / np.square(s) for s in sigmas]
    prec_sum = np.sum(prec, axis=0)
    var = 1.0 / prec_sum
    mu = np.sum([m * p for m, p in zip(mus, prec)], axis=0) * var
    return mu, np.sqrt(var)


def poe_fuse(experts: Sequence[GaussianLatent]) -> GaussianLatent:
    """Fuse experts by multiplying their densities. A single expert is
    returned unchanged."""
    experts = list(experts)
    if not experts:
        raise ContractError("poe_fuse: need at least one expert")
    d = experts[0].dim
    for e in experts[1:]:
        if e.dim != d:
            raise DimensionError(f"poe_fuse: expert dims differ, {d} vs {e.dim}")
    if len(experts) == 1:
        return experts[0]
    mu, sigma = poe_fuse_arrays([e.mu for e in experts], [e.sigma for e in experts])
    return GaussianLatent(mu, sigma)


def reparameterize(g: GaussianLatent, eps: np.ndarray) -> np.ndarray:
    """z = mu + sigma * eps; the caller supplies standard-normal eps."""
    eps = np.asarray(eps, dtype=np.float64).ravel()
    if eps.shape[0] != g.dim:
        raise DimensionError(f"reparameterize: eps has length {eps.shape[0]}, latent dim is {g.dim}")
    return g.mu + g.sigma * eps


def match_score(z_v: np.ndarray, z_m: np.ndarray) -> float:
    """Dot product of two latent vectors."""
    return ndmath.dot(z_v, z_m)


def encode_video(
    params: CmvaeParams,
    v_v: np.ndarray | None,
    v_t: np.ndarray | None,
) -> GaussianLatent:
    """Joint video posterior; with one modality absent, the remaining
    expert stands in for the fused posterior."""
    experts = []
    if v_v is not None:
        experts.append(encode(params.visual_encoder, v_v))
    if v_t is not None:
        experts.append(encode(params.textual_encoder, v_t))
    if not experts:
        raise ContractError("encode_video: both modalities absent")
    return poe_fuse(experts)


def encode_video_batch(
    params: CmvaeParams,
    vv: np.ndarray | None,
    vt: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Batch form of encode_video: (mu, sigma) of the joint posterior."""
    parts = []
    if vv is not None:
        parts.append(encode_batch(params.visual_encoder, vv))
    if vt is not None:
        parts.append(encode_batch(params.textual_encoder, vt))
    if not parts:
        raise ContractError("encode_video: both modalities absent")
    if len(parts) == 1:
        return parts[0]
    return poe_fuse_arrays([p[0] for p in parts], [p[1] for p in parts])


# ---------------------------------------------------------------------------
# Tape-side forward pass (training)
# ---------------------------------------------------------------------------

@dataclass
class ParamNodes:
    """Param node ids for every layer, keyed (net name, layer idx, 'w'|'b')."""

    ids: dict[tuple[str, int, str], int]

    def layer_nodes(self, net_name: str) -> list[tuple[int, int]]:
        out = []
        i = 0
        while (net_name, i, "w") in self.ids:
            out.append((self.ids[(net_name, i, "w")], self.ids[(net_name, i, "b")]))
            i += 1
        return out


def register_params(tape: Tape, params: CmvaeParams) -> ParamNodes:
    """Put every weight/bias on the tape in the fixed net/layer order."""
    ids = {}
    for name, net in params.nets():
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            ids[(name, i, "w")] = tape.param(w)
            ids[(name, i, "b")] = tape.param(b)
    return ParamNodes(ids)


def net_forward_t(tape: Tape, layers: list[tuple[int, int]], x: int) -> int:
    """Taped MLP forward: affine/ReLU chain with a linear final layer."""
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = tape.affine(h, w, b)
        if i != last:
            h = tape.relu(h)
    return h


def encode_t(tape: Tape, layers: list[tuple[int, int]], x: int, d: int) -> tuple[int, int]:
    """Taped encoder: returns (mu, logvar) node ids, each B x d."""
    out = net_forward_t(tape, layers, x)
    return tape.slice_cols(out, 0, d), tape.slice_cols(out, d, 2 * d)


def poe_fuse_t(
    tape: Tape, mus: Sequence[int], logvars: Sequence[int]
) -> tuple[int, int]:
    """Taped product of Gaussian experts: returns (mu, logvar) nodes.

    Precisions are exp(-logvar), so positivity needs no clamping and the
    fused logvar stays differentiable.
    """
    if len(mus) != len(logvars) or not mus:
        raise ContractError("poe_fuse_t: need matching, nonempty mu/logvar node lists")
    if len(mus) == 1:
        return mus[0], logvars[0]
    precs = [tape.exp(tape.scale(lv, -1.0)) for lv in logvars]
    prec_sum = precs[0]
    for p in precs[1:]:
        prec_sum = tape.add(prec_sum, p)
    weighted = tape.mul(mus[0], precs[0])
    for m, p in zip(mus[1:], precs[1:]):
        weighted = tape.add(weighted, tape.mul(m, p))
    fused_logvar = tape.scale(tape.log(prec_sum), -1.0)
    fused_var = tape.exp(fused_logvar)
    fused_mu = tape.mul(weighted, fused_var)
    return fused_mu, fused_logvar


def reparameterize_t(tape: Tape, mu: int, logvar: int, eps: np.ndarray) -> int:
    """Taped z = mu + exp(0.5*logvar) * eps with eps a constant."""
    sigma = tape.exp(tape.scale(logvar, 0.5))
    return tape.add(mu, tape.mul(sigma, tape.input(eps)))
