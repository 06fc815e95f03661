"""Forward and backward alpha-compositing renderer.

Splats are depth-sorted globally per view (stable index tie-break) and
blended front-to-back; blending terminates once the accumulated
transmittance drops below the termination threshold. The forward pass
retains the per-pixel blend record so the backward pass and the
decomposition diagnostics replay exactly the same contributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Camera, Gaussian3D, GaussianSet, BlendRecord, RenderOutput, Role
from .errors import RenderStateError

COV2D_REGULARIZATION = 0.3  # px^2, low-pass added to the diagonal


@dataclass
class RenderOptions:
    background: tuple = (0.0, 0.0, 0.0)
    termination_threshold: float = 1e-4
    alpha_skip: float = 1e-7
    footprint_sigma: float = 3.0
    znear: float = 0.01
    with_role_transmittance: bool = False


@dataclass
class Splat2D:
    pixel_mean: np.ndarray  # (2,)
    cov2d: np.ndarray  # (2, 2)
    depth: float
    base_opacity: float
    color: np.ndarray
    source_id: int = 0
    role: Role = Role.SURFACE


@dataclass
class SetGradients:
    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray


@dataclass
class _ForwardCache:
    """Everything the backward pass needs from the matching forward pass."""

    surface: GaussianSet
    noise: GaussianSet | None
    camera: Camera
    options: RenderOptions
    n_surface: int
    valid: np.ndarray
    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    va: np.ndarray
    vb: np.ndarray
    vd: np.ndarray
    op: np.ndarray
    pcam: np.ndarray
    means: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    colors: np.ndarray


def _pack(surface: GaussianSet, noise: GaussianSet | None):
    if noise is None or len(noise) == 0:
        return (
            surface.means,
            surface.log_scales,
            surface.rotations,
            surface.opacity_logits,
            surface.colors,
            np.zeros(len(surface), dtype=bool),
            len(surface),
        )
    means = np.concatenate([surface.means, noise.means])
    log_scales = np.concatenate([surface.log_scales, noise.log_scales])
    quats = np.concatenate([surface.rotations, noise.rotations])
    logits = np.concatenate([surface.opacity_logits, noise.opacity_logits])
    colors = np.concatenate([surface.colors, noise.colors])
    is_noise = np.zeros(len(logits), dtype=bool)
    is_noise[len(surface):] = True
    return means, log_scales, quats, logits, colors, is_noise, len(surface)


def _project_and_sort(means, log_scales, quats, logits, cam: Camera, opts: RenderOptions):
    valid, u, v, z, va, vb, vd, op, radius, pcam = _kernels.project_splats(
        means,
        log_scales,
        quats,
        logits,
        cam.rotation,
        cam.translation,
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width,
        cam.height,
        opts.znear,
        COV2D_REGULARIZATION,
        opts.footprint_sigma,
    )
    idx = np.nonzero(valid)[0]
    # Ascending depth, stable in the original index for equal depths.
    order = idx[np.argsort(z[idx], kind="stable")]
    tile_offsets, tile_items = _kernels.build_tile_lists(
        order, u, v, radius, cam.width, cam.height
    )
    return valid, u, v, z, va, vb, vd, op, radius, pcam, tile_offsets, tile_items


def project(g: Gaussian3D, cam: Camera) -> Splat2D | None:
    """Project one Gaussian; returns None when culled."""
    opts = RenderOptions()
    single = GaussianSet.from_gaussians([g])
    valid, u, v, z, va, vb, vd, op, radius, _pcam = _kernels.project_splats(
        single.means,
        single.log_scales,
        single.rotations,
        single.opacity_logits,
        cam.rotation,
        cam.translation,
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width,
        cam.height,
        opts.znear,
        COV2D_REGULARIZATION,
        opts.footprint_sigma,
    )
    if not valid[0]:
        return None
    return Splat2D(
        pixel_mean=np.array([u[0], v[0]]),
        cov2d=np.array([[va[0], vb[0]], [vb[0], vd[0]]]),
        depth=float(z[0]),
        base_opacity=float(op[0]),
        color=g.color.copy(),
        source_id=0,
        role=Role.SURFACE,
    )


def render(
    surface: GaussianSet,
    noise: GaussianSet | None = None,
    camera: Camera = None,
    options: RenderOptions | None = None,
) -> RenderOutput:
    """Front-to-back alpha blend of surface (+ optional noise) splats."""
    opts = options or RenderOptions()
    means, log_scales, quats, logits, colors, is_noise, n_surface = _pack(surface, noise)
    (
        valid,
        u,
        v,
        z,
        va,
        vb,
        vd,
        op,
        radius,
        pcam,
        tile_offsets,
        tile_items,
    ) = _project_and_sort(means, log_scales, quats, logits, camera, opts)
    w, h = camera.width, camera.height
    counts = _kernels.count_contributions(
        tile_offsets,
        tile_items,
        u,
        v,
        va,
        vb,
        vd,
        op,
        radius,
        w,
        h,
        opts.alpha_skip,
        opts.termination_threshold,
    )
    offsets = np.zeros(w * h + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    rec_ids = np.zeros(total, dtype=np.int64)
    rec_alphas = np.zeros(total)
    rec_trans = np.zeros(total)
    bg = np.asarray(opts.background, dtype=np.float64)
    color, alpha_ch, depth_ch, role_ch = _kernels.render_fill(
        tile_offsets,
        tile_items,
        u,
        v,
        z,
        va,
        vb,
        vd,
        op,
        radius,
        colors,
        is_noise,
        w,
        h,
        opts.alpha_skip,
        opts.termination_threshold,
        bg,
        offsets,
        rec_ids,
        rec_alphas,
        rec_trans,
        opts.with_role_transmittance,
    )
    record = BlendRecord(offsets, rec_ids, rec_alphas, rec_trans, width=w, height=h)
    cache = _ForwardCache(
        surface=surface,
        noise=noise,
        camera=camera,
        options=opts,
        n_surface=n_surface,
        valid=valid,
        u=u,
        v=v,
        z=z,
        va=va,
        vb=vb,
        vd=vd,
        op=op,
        pcam=pcam,
        means=means,
        log_scales=log_scales,
        quats=quats,
        colors=colors,
    )
    return RenderOutput(
        color=color,
        alpha=alpha_ch,
        depth=depth_ch,
        role_transmittance=role_ch if opts.with_role_transmittance else None,
        blend_record=record,
        cache=cache,
    )


def render_backward(output: RenderOutput, d_color: np.ndarray, d_alpha: np.ndarray):
    """Analytic gradients of a scalar loss w.r.t. all unfrozen parameters.

    `d_color` is dLoss/dColor (H, W, 3) and `d_alpha` dLoss/dAlpha (H, W).
    Returns (surface_grads, noise_grads) as SetGradients; frozen groups are
    zeroed. `noise_grads` is None when no noise set was rendered.
    """
    cache: _ForwardCache = output.cache
    if cache is None or output.blend_record is None:
        raise RenderStateError("render_backward requires the forward blend record")
    cam = cache.camera
    h, w = cam.height, cam.width
    if d_color.shape != (h, w, 3) or d_alpha.shape != (h, w):
        raise RenderStateError("gradient shapes do not match the forward render")
    n = len(cache.means)
    g_color = np.zeros((n, 3))
    g_op = np.zeros(n)
    g_mean2d = np.zeros((n, 2))
    g_cov2d = np.zeros((n, 3))
    rec = output.blend_record
    bg = np.asarray(cache.options.background, dtype=np.float64)
    _kernels.blend_backward(
        rec.offsets,
        rec.splat_ids,
        rec.alphas,
        rec.transmittances,
        cache.u,
        cache.v,
        cache.va,
        cache.vb,
        cache.vd,
        cache.op,
        cache.colors,
        w,
        h,
        bg,
        np.ascontiguousarray(d_color, dtype=np.float64),
        np.ascontiguousarray(d_alpha, dtype=np.float64),
        g_color,
        g_op,
        g_mean2d,
        g_cov2d,
    )
    g_means = np.zeros((n, 3))
    g_log_scales = np.zeros((n, 3))
    g_quats = np.zeros((n, 4))
    _kernels.splat_param_backward(
        cache.valid,
        cache.means,
        cache.log_scales,
        cache.quats,
        cache.pcam,
        cam.rotation,
        cam.fx,
        cam.fy,
        g_mean2d,
        g_cov2d,
        g_means,
        g_log_scales,
        g_quats,
    )
    g_logits = g_op * cache.op * (1.0 - cache.op)

    def slice_grads(gset: GaussianSet, lo: int, hi: int) -> SetGradients:
        g = SetGradients(
            means=g_means[lo:hi].copy(),
            log_scales=g_log_scales[lo:hi].copy(),
            rotations=g_quats[lo:hi].copy(),
            opacity_logits=g_logits[lo:hi].copy(),
            colors=g_color[lo:hi].copy(),
        )
        fz = gset.freeze
        if fz.means:
            g.means[:] = 0.0
        if fz.log_scales:
            g.log_scales[:] = 0.0
        if fz.rotations:
            g.rotations[:] = 0.0
        if fz.opacity_logits:
            g.opacity_logits[:] = 0.0
        if fz.colors:
            g.colors[:] = 0.0
        return g

    ns = cache.n_surface
    surface_grads = slice_grads(cache.surface, 0, ns)
    noise_grads = None
    if cache.noise is not None and len(cache.noise) > 0:
        noise_grads = slice_grads(cache.noise, ns, n)
    return surface_grads, noise_grads


def decompose_pixel(output: RenderOutput, y: int, x: int, s: int):
    """Split a pixel's color at the first-surface index `s` of its record.

    Returns (front_term, leakage_term): the surface splat's own
    contribution and everything blended behind it (background included).
    Terms earlier than `s` are front_term's predecessors and satisfy
    earlier + front + leakage = rendered color exactly.
    """
    rec = output.blend_record
    if rec is None:
        raise RenderStateError("decompose_pixel requires a blend record")
    ids, alphas, trans = rec.at(y, x)
    if len(ids) == 0:
        raise RenderStateError(f"empty blend record at pixel ({y}, {x})")
    if not 0 <= s < len(ids):
        raise RenderStateError(f"surface index {s} outside record of length {len(ids)}")
    cache: _ForwardCache = output.cache
    colors = cache.colors
    bg = np.asarray(cache.options.background, dtype=np.float64)
    front = alphas[s] * trans[s] * colors[ids[s]]
    earlier = np.zeros(3)
    for k in range(s):
        earlier += alphas[k] * trans[k] * colors[ids[k]]
    leakage = output.color[y, x] - earlier - front
    return front, leakage


def surface_depth_map(
    surface: GaussianSet,
    camera: Camera,
    tau: float = 0.5,
    options: RenderOptions | None = None,
) -> np.ndarray:
    """Per-pixel depth where cumulative opacity first reaches tau
    (+inf where it never does), over surface splats only."""
    if not 0.0 < tau < 1.0:
        raise RenderStateError("tau must be in (0, 1)")
    opts = options or RenderOptions()
    (
        valid,
        u,
        v,
        z,
        va,
        vb,
        vd,
        op,
        radius,
        pcam,
        tile_offsets,
        tile_items,
    ) = _project_and_sort(
        surface.means,
        surface.log_scales,
        surface.rotations,
        surface.opacity_logits,
        camera,
        opts,
    )
    return _kernels.depth_crossing_map(
        tile_offsets,
        tile_items,
        u,
        v,
        z,
        va,
        vb,
        vd,
        op,
        radius,
        camera.width,
        camera.height,
        opts.alpha_skip,
        tau,
    )
