"""Training objective terms.

Cross-generation squared-error reconstruction, analytic KL to the standard
normal prior, bi-directional margin ranking with in-batch hard negatives,
and their composition (joint branch plus the visual-only and textual-only
branches, which reuse the joint branch's noise draw per pair).

Everything is minimized: positive squared error + KL + hinge. Eager
functions compute values from arrays; ``build_objective_graph`` records the
same math on a Tape for gradients, and the two are cross-checked in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .exceptions import ContractError, DimensionError
from .model import CmvaeParams, GaussianLatent
from .ndmath import Tape


def mse(x, x_hat) -> float:
    """Squared error summed over dims (no batch averaging here)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    x_hat = np.asarray(x_hat, dtype=np.float64).ravel()
    if x.shape != x_hat.shape:
        raise DimensionError(f"mse: lengths differ, {x.shape[0]} vs {x_hat.shape[0]}")
    d = x - x_hat
    return float(d @ d)


def mse_batch(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Per-row squared error summed over dims, averaged over the batch."""
    if x.shape != x_hat.shape:
        raise DimensionError(f"mse_batch: shapes differ, {x.shape} vs {x_hat.shape}")
    d = (x - x_hat).ravel()
    return float(d @ d) / x.shape[0]


def kl_std_normal(g: GaussianLatent) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)) = 0.5 * sum(sigma^2 + mu^2 - 1 - ln sigma^2)."""
    var = np.square(g.sigma)
    return 0.5 * float(np.sum(var + np.square(g.mu) - 1.0 - np.log(var)))


def kl_batch(mu: np.ndarray, sigma: np.ndarray) -> float:
    """Batch mean of the analytic KL to the standard normal."""
    if (sigma <= 0).any():
        raise ContractError("kl_batch: sigma must be strictly positive")
    var = np.square(sigma)
    per_row = 0.5 * np.sum(var + np.square(mu) - 1.0 - np.log(var), axis=1)
    return float(per_row.mean())


def select_hard_negatives(scores: np.ndarray, k: int) -> np.ndarray:
    """Per-anchor indices of the k highest-scoring unmatched candidates.

    ``scores[i, j]`` is anchor i against candidate j; the diagonal holds the
    matched pairs and is excluded. Ties break toward the lower index.
    """
    from . import kernels

    scores = np.ascontiguousarray(scores, dtype=np.float64)
    b = scores.shape[0]
    if scores.ndim != 2 or scores.shape[1] != b:
        raise ContractError(f"select_hard_negatives: scores must be square, got {scores.shape}")
    if b < 2:
        raise ContractError("select_hard_negatives: need at least 2 rows")
    if not 1 <= k <= b - 1:
        raise ContractError(f"select_hard_negatives: k={k} outside [1, {b - 1}]")
    return kernels.get().topk_offdiag(scores, k)


def bidirectional_ranking(
    z_v: np.ndarray,
    z_m: np.ndarray,
    margin: float,
    alpha: float,
    k: int,
) -> tuple[float, float]:
    """Hinge sums over in-batch hard negatives, both directions.

    Row i of z_v and z_m is a matched pair. For each video anchor the k
    unmatched music rows with the highest dot product are the negatives,
    and each contributes [margin + s(anchor, neg) - s(anchor, match)]_+;
    music anchors are treated symmetrically over video negatives. Returns
    (video-to-music, music-to-video) sums; the caller weights the second
    by alpha when combining.
    """
    z_v = np.ascontiguousarray(z_v, dtype=np.float64)
    z_m = np.ascontiguousarray(z_m, dtype=np.float64)
    if z_v.shape != z_m.shape:
        raise DimensionError(f"ranking: latent shapes differ, {z_v.shape} vs {z_m.shape}")
    if z_v.shape[0] < 2:
        raise ContractError("ranking: batch must have at least 2 pairs")
    if margin <= 0 or alpha < 0:
        raise ContractError("ranking: margin must be > 0 and alpha >= 0")
    s = z_v @ z_m.T
    b = s.shape[0]
    pos = np.diag(s)

    neg_m = select_hard_negatives(s, k)
    hinge = margin + s[np.repeat(np.arange(b), k), neg_m.ravel()] - np.repeat(pos, k)
    rank_v2m = float(np.maximum(hinge, 0.0).sum())

    neg_v = select_hard_negatives(np.ascontiguousarray(s.T), k)
    hinge = margin + s[neg_v.ravel(), np.repeat(np.arange(b), k)] - np.repeat(pos, k)
    rank_m2v = float(np.maximum(hinge, 0.0).sum())
    return rank_v2m, rank_m2v


@dataclass(frozen=True)
class BatchLatents:
    """Sampled latents plus posterior parameters for one matched batch.

    Row i across every array refers to the same (video, music) pair.
    """

    z_m: np.ndarray
    z_v: np.ndarray
    z_vv: np.ndarray
    z_vt: np.ndarray
    mu_m: np.ndarray
    sigma_m: np.ndarray
    mu_v: np.ndarray
    sigma_v: np.ndarray
    mu_vv: np.ndarray
    sigma_vv: np.ndarray
    mu_vt: np.ndarray
    sigma_vt: np.ndarray


@dataclass(frozen=True)
class CrossReconstructions:
    """Decoder outputs for one batch, next to their targets.

    Music is reconstructed from each video-side latent; the video features
    are reconstructed from the music latent (cross-generation).
    """

    m: np.ndarray
    v_v: np.ndarray
    v_t: np.ndarray
    m_hat_from_zv: np.ndarray
    m_hat_from_zvv: np.ndarray
    m_hat_from_zvt: np.ndarray
    vv_hat_from_zm: np.ndarray
    vt_hat_from_zm: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of the composite objective (all >= 0).

    recon_m averages the music reconstruction error over the three
    video-side branches (joint, visual-only, textual-only); kl_v sums the
    three video-side KLs; rank_* sum the hinge terms over the branches and
    are per-pair means. The parts recombine as

        total = beta * (recon_m + recon_vv + recon_vt)
                + kl_v + 3 * kl_m
                + gamma * (rank_v2m + alpha * rank_m2v)
    """

    recon_m: float
    recon_vv: float
    recon_vt: float
    kl_m: float
    kl_v: float
    rank_v2m: float
    rank_m2v: float
    total: float

    def combine(self, beta: float, gamma: float, alpha: float) -> float:
        return (
            beta * (self.recon_m + self.recon_vv + self.recon_vt)
            + self.kl_v
            + 3.0 * self.kl_m
            + gamma * (self.rank_v2m + alpha * self.rank_m2v)
        )


def composite_objective(
    batch: BatchLatents,
    recon: CrossReconstructions,
    beta: float,
    gamma: float,
    margin: float,
    alpha: float,
    k: int,
) -> LossBreakdown:
    """Value-level composite objective from already-sampled latents and
    already-decoded reconstructions (the gradient path lives on the Tape;
    this is the plain recomputation)."""
    b = batch.z_m.shape[0]
    recon_m = (
        mse_batch(recon.m, recon.m_hat_from_zv)
        + mse_batch(recon.m, recon.m_hat_from_zvv)
        + mse_batch(recon.m, recon.m_hat_from_zvt)
    ) / 3.0
    recon_vv = mse_batch(recon.v_v, recon.vv_hat_from_zm)
    recon_vt = mse_batch(recon.v_t, recon.vt_hat_from_zm)
    kl_m = kl_batch(batch.mu_m, batch.sigma_m)
    kl_v = (
        kl_batch(batch.mu_v, batch.sigma_v)
        + kl_batch(batch.mu_vv, batch.sigma_vv)
        + kl_batch(batch.mu_vt, batch.sigma_vt)
    )
    rank_v2m = 0.0
    rank_m2v = 0.0
    for z in (batch.z_v, batch.z_vv, batch.z_vt):
        v2m, m2v = bidirectional_ranking(z, batch.z_m, margin, alpha, k)
        rank_v2m += v2m / b
        rank_m2v += m2v / b
    parts = dict(
        recon_m=recon_m, recon_vv=recon_vv, recon_vt=recon_vt,
        kl_m=kl_m, kl_v=kl_v, rank_v2m=rank_v2m, rank_m2v=rank_m2v,
    )
    total = LossBreakdown(total=0.0, **parts).combine(beta, gamma, alpha)
    return LossBreakdown(total=total, **parts)


# ---------------------------------------------------------------------------
# Taped objective
# ---------------------------------------------------------------------------

def _mse_t(tape: Tape, target: int, pred: int, b: int) -> int:
    diff = tape.sub(pred, target)
    return tape.scale(tape.reduce_sum(tape.mul(diff, diff)), 1.0 / b)


def _kl_t(tape: Tape, mu: int, logvar: int, b: int) -> int:
    # 0.5/B * sum(exp(lv) + mu^2 - lv - 1)
    inner = tape.sub(tape.add(tape.exp(logvar), tape.mul(mu, mu)),
                     tape.add_scalar(logvar, 1.0))
    return tape.scale(tape.reduce_sum(inner), 0.5 / b)


def _ranking_t(tape: Tape, z: int, z_m: int, margin: float, k: int) -> tuple[int, int]:
    scores = tape.matmul(z, z_m, trans_b=True)
    sv = tape.value(scores)
    b = sv.shape[0]
    anchors = np.repeat(np.arange(b), k)
    pos = tape.gather(scores, anchors, anchors)

    neg_music = tape.kernels.topk_offdiag(sv, k)
    neg = tape.gather(scores, anchors, neg_music.ravel())
    v2m = tape.reduce_sum(tape.relu(tape.add_scalar(tape.sub(neg, pos), margin)))

    neg_video = tape.kernels.topk_offdiag(np.ascontiguousarray(sv.T), k)
    neg = tape.gather(scores, neg_video.ravel(), anchors)
    m2v = tape.reduce_sum(tape.relu(tape.add_scalar(tape.sub(neg, pos), margin)))
    return v2m, m2v


@dataclass
class ObjectiveGraph:
    """A recorded forward pass: loss node, per-term values, and the param
    node mapping needed to route gradients back into CmvaeParams."""

    tape: Tape
    loss_node: int
    breakdown: LossBreakdown
    pnodes: mdl.ParamNodes
    batch: BatchLatents
    recon: CrossReconstructions


def build_objective_graph(
    params: CmvaeParams,
    m: np.ndarray,
    v_v: np.ndarray,
    v_t: np.ndarray,
    eps_m: np.ndarray,
    eps_v: np.ndarray,
    *,
    beta: float,
    gamma: float,
    margin: float,
    alpha: float,
    k: int,
    backend: str | None = None,
) -> ObjectiveGraph:
    """Record the full training objective for one matched batch.

    Rows of m / v_v / v_t are aligned pairs; eps_m and eps_v are B x d
    standard-normal draws. The visual-only and textual-only branches reuse
    eps_v, the joint branch's draw.
    """
    b = m.shape[0]
    if b < 2:
        raise ContractError(f"objective: batch size {b} < 2 (ranking undefined)")
    if not 1 <= k <= b - 1:
        raise ContractError(f"objective: neg_k={k} outside [1, {b - 1}]")
    if eps_m.shape != (b, params.d) or eps_v.shape != (b, params.d):
        raise DimensionError(
            f"objective: eps shapes {eps_m.shape}/{eps_v.shape} != ({b}, {params.d})"
        )

    tape = Tape(backend)
    pnodes = mdl.register_params(tape, params)
    x_m = tape.input(m)
    x_vv = tape.input(v_v)
    x_vt = tape.input(v_t)

    d = params.d
    mu_m, lv_m = mdl.encode_t(tape, pnodes.layer_nodes("music_encoder"), x_m, d)
    mu_vv, lv_vv = mdl.encode_t(tape, pnodes.layer_nodes("visual_encoder"), x_vv, d)
    mu_vt, lv_vt = mdl.encode_t(tape, pnodes.layer_nodes("textual_encoder"), x_vt, d)
    mu_v, lv_v = mdl.poe_fuse_t(tape, [mu_vv, mu_vt], [lv_vv, lv_vt])

    z_m = mdl.reparameterize_t(tape, mu_m, lv_m, eps_m)
    z_v = mdl.reparameterize_t(tape, mu_v, lv_v, eps_v)
    z_vv = mdl.reparameterize_t(tape, mu_vv, lv_vv, eps_v)
    z_vt = mdl.reparameterize_t(tape, mu_vt, lv_vt, eps_v)

    dec_m = pnodes.layer_nodes("music_decoder")
    m_hats = {
        name: mdl.net_forward_t(tape, dec_m, z)
        for name, z in (("zv", z_v), ("zvv", z_vv), ("zvt", z_vt))
    }
    vv_hat = mdl.net_forward_t(tape, pnodes.layer_nodes("visual_decoder"), z_m)
    vt_hat = mdl.net_forward_t(tape, pnodes.layer_nodes("textual_decoder"), z_m)

    mse_m_nodes = [_mse_t(tape, x_m, m_hats[n], b) for n in ("zv", "zvv", "zvt")]
    recon_m = tape.scale(tape.add(tape.add(mse_m_nodes[0], mse_m_nodes[1]), mse_m_nodes[2]), 1 / 3)
    recon_vv = _mse_t(tape, x_vv, vv_hat, b)
    recon_vt = _mse_t(tape, x_vt, vt_hat, b)

    kl_m = _kl_t(tape, mu_m, lv_m, b)
    kl_v_parts = [_kl_t(tape, mu, lv, b)
                  for mu, lv in ((mu_v, lv_v), (mu_vv, lv_vv), (mu_vt, lv_vt))]
    kl_v = tape.add(tape.add(kl_v_parts[0], kl_v_parts[1]), kl_v_parts[2])

    v2m_sum = None
    m2v_sum = None
    for z in (z_v, z_vv, z_vt):
        v2m, m2v = _ranking_t(tape, z, z_m, margin, k)
        v2m = tape.scale(v2m, 1.0 / b)
        m2v = tape.scale(m2v, 1.0 / b)
        v2m_sum = v2m if v2m_sum is None else tape.add(v2m_sum, v2m)
        m2v_sum = m2v if m2v_sum is None else tape.add(m2v_sum, m2v)

    recon_total = tape.scale(tape.add(tape.add(recon_m, recon_vv), recon_vt), beta)
    kl_total = tape.add(kl_v, tape.scale(kl_m, 3.0))
    rank_total = tape.scale(tape.add(v2m_sum, tape.scale(m2v_sum, alpha)), gamma)
    loss_node = tape.add(tape.add(recon_total, kl_total), rank_total)

    def val(nid):
        return float(tape.value(nid)[0, 0])

    breakdown = LossBreakdown(
        recon_m=val(recon_m),
        recon_vv=val(recon_vv),
        recon_vt=val(recon_vt),
        kl_m=val(kl_m),
        kl_v=val(kl_v),
        rank_v2m=val(v2m_sum),
        rank_m2v=val(m2v_sum),
        total=val(loss_node),
    )

    def sigma_of(lv):
        return np.exp(0.5 * tape.value(lv))

    batch = BatchLatents(
        z_m=tape.value(z_m), z_v=tape.value(z_v),
        z_vv=tape.value(z_vv), z_vt=tape.value(z_vt),
        mu_m=tape.value(mu_m), sigma_m=sigma_of(lv_m),
        mu_v=tape.value(mu_v), sigma_v=sigma_of(lv_v),
        mu_vv=tape.value(mu_vv), sigma_vv=sigma_of(lv_vv),
        mu_vt=tape.value(mu_vt), sigma_vt=sigma_of(lv_vt),
    )
    recon = CrossReconstructions(
        m=m, v_v=v_v, v_t=v_t,
        m_hat_from_zv=tape.value(m_hats["zv"]),
        m_hat_from_zvv=tape.value(m_hats["zvv"]),
        m_hat_from_zvt=tape.value(m_hats["zvt"]),
        vv_hat_from_zm=tape.value(vv_hat),
        vt_hat_from_zm=tape.value(vt_hat),
    )
    return ObjectiveGraph(tape, loss_node, breakdown, pnodes, batch, recon)
