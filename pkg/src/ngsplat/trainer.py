"""Training loop: surface fitting, adaptive densification and the
noise-guided schedule (fill -> opacity fine-tune -> guided surface training).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    Dataset,
    FreezeFlags,
    GaussianSet,
    Role,
    TrainConfig,
    logit,
    quat_to_rotmat,
    sigmoid,
)
from .errors import GeometryError
from .losses import alpha_consistency_loss, photometric_loss
from .ngs import color_rng, finetune_noise, multiscale_fill, randomize_colors
from .optim import DecaySchedule, GroupedAdam
from .rasterizer import RenderOptions, render, render_backward

PARAM_GROUPS = ("means", "log_scales", "rotations", "opacity_logits", "colors")


# ---------------------------------------------------------------------------
# Initialization


def initialize_from_masks(dataset: Dataset, config: TrainConfig, rng=None) -> GaussianSet:
    """Seed Gaussians by rejection-sampling the visual hull of the train masks.

    Points are drawn uniformly in a bounding cube around the scene and kept
    only if they project inside every train-view mask. Colors come from the
    mean of the ground-truth pixels each point lands on.
    """
    rng = rng or np.random.default_rng([config.seed, 1])
    views = dataset.train_views
    if not views:
        raise GeometryError("cannot initialize: dataset has no train views")

    # Scene center: least-squares intersection of the cameras' optical axes.
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for view in views:
        d = view.camera.rotation[2]
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ view.camera.position()
    center = np.linalg.solve(A, b)

    # Scene radius from the mask footprint in each view.
    radius = 0.0
    for view in views:
        cam = view.camera
        ys, xs = np.nonzero(view.mask > 0.5)
        if len(xs) == 0:
            continue
        uc, _ = cam.project_points(center[None, :])
        depth = cam.world_to_camera(center[None, :])[0, 2]
        px = np.hypot(xs - uc[0, 0], ys - uc[0, 1]).max()
        radius = max(radius, px * depth / cam.fx)
    if radius <= 0.0:
        raise GeometryError("cannot initialize: all train masks are empty")
    radius *= 1.1

    kept = []
    attempts = 0
    while sum(len(k) for k in kept) < config.n_init_points and attempts < 200:
        attempts += 1
        cand = center + rng.uniform(-radius, radius, size=(4 * config.n_init_points, 3))
        inside = np.ones(len(cand), dtype=bool)
        for view in views:
            cam = view.camera
            pc = cam.world_to_camera(cand)
            inside &= pc[:, 2] > 1e-6
            uv = np.zeros((len(cand), 2))
            uv[inside] = cam.project_points(cand[inside])[0]
            px = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, cam.width - 1)
            py = np.clip(np.rint(uv[:, 1]).astype(np.int64), 0, cam.height - 1)
            on_image = (
                (uv[:, 0] >= -0.5)
                & (uv[:, 0] <= cam.width - 0.5)
                & (uv[:, 1] >= -0.5)
                & (uv[:, 1] <= cam.height - 0.5)
            )
            inside &= on_image & (view.mask[py, px] > 0.5)
            if not inside.any():
                break
        if inside.any():
            kept.append(cand[inside])
    if not kept:
        raise GeometryError("visual hull is empty: no point projects inside every mask")
    points = np.concatenate(kept)[: config.n_init_points]

    colors = np.zeros((len(points), 3))
    weight = np.zeros(len(points))
    for view in views:
        cam = view.camera
        uv, _ = cam.project_points(points)
        px = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, cam.width - 1)
        py = np.clip(np.rint(uv[:, 1]).astype(np.int64), 0, cam.height - 1)
        colors += view.image[py, px]
        weight += 1.0
    colors /= weight[:, None]

    # Isotropic scales from mean knn spacing, the usual point-cloud heuristic.
    if len(points) > 3:
        dist, _ = cKDTree(points).query(points, k=4)
        spacing = np.maximum(dist[:, 1:].mean(axis=1), 1e-7)
    else:
        spacing = np.full(len(points), 0.1 * radius)
    log_scales = np.log(spacing)[:, None].repeat(3, axis=1)

    quats = np.zeros((len(points), 4))
    quats[:, 0] = 1.0
    return GaussianSet(
        means=points,
        log_scales=log_scales,
        rotations=quats,
        opacity_logits=np.full(len(points), logit(0.1)),
        colors=colors,
        role=Role.SURFACE,
    )


# ---------------------------------------------------------------------------
# Adaptive density control


def densify(
    surface: GaussianSet,
    optim: GroupedAdam,
    grad_accum: np.ndarray,
    grad_count: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
) -> GaussianSet:
    """Clone small / split large Gaussians whose mean positional gradient is
    high, then prune nearly transparent ones. Optimizer moments follow."""
    with np.errstate(invalid="ignore"):
        mean_grad = np.where(grad_count > 0, grad_accum / np.maximum(grad_count, 1), 0.0)
    budget = config.max_gaussians - len(surface)
    hot = mean_grad > config.densify_grad_threshold
    if budget <= 0:
        hot[:] = False
    elif hot.sum() > budget:
        # Keep the highest-gradient candidates within the cap.
        order = np.argsort(mean_grad)[::-1]
        hot = np.zeros_like(hot)
        hot[order[:budget]] = True
        hot &= mean_grad > config.densify_grad_threshold

    big = surface.scales.max(axis=1) > config.densify_scale_threshold
    split_idx = np.nonzero(hot & big)[0]
    clone_idx = np.nonzero(hot & ~big)[0]

    new = {g: [] for g in PARAM_GROUPS}
    for i in clone_idx:
        new["means"].append(surface.means[i])
        new["log_scales"].append(surface.log_scales[i])
        new["rotations"].append(surface.rotations[i])
        new["opacity_logits"].append(surface.opacity_logits[i])
        new["colors"].append(surface.colors[i])
    for i in split_idx:
        # Replace with two samples drawn from the Gaussian itself, shrunk.
        q = surface.rotations[i] / np.linalg.norm(surface.rotations[i])
        R = quat_to_rotmat(q)
        s = np.exp(surface.log_scales[i])
        offs = rng.standard_normal((2, 3)) * s
        for o in offs:
            new["means"].append(surface.means[i] + R @ o)
            new["log_scales"].append(surface.log_scales[i] - np.log(config.split_scale_shrink))
            new["rotations"].append(surface.rotations[i])
            new["opacity_logits"].append(surface.opacity_logits[i])
            new["colors"].append(surface.colors[i])

    keep = np.ones(len(surface), dtype=bool)
    keep[split_idx] = False  # split parents are replaced by their children
    keep &= sigmoid(surface.opacity_logits) >= config.opacity_prune_threshold

    n_new = len(new["means"])
    merged = GaussianSet(
        means=np.concatenate([surface.means[keep]] + ([np.stack(new["means"])] if n_new else [])),
        log_scales=np.concatenate(
            [surface.log_scales[keep]] + ([np.stack(new["log_scales"])] if n_new else [])
        ),
        rotations=np.concatenate(
            [surface.rotations[keep]] + ([np.stack(new["rotations"])] if n_new else [])
        ),
        opacity_logits=np.concatenate(
            [surface.opacity_logits[keep]] + ([np.array(new["opacity_logits"])] if n_new else [])
        ),
        colors=np.concatenate(
            [surface.colors[keep]] + ([np.stack(new["colors"])] if n_new else [])
        ),
        role=surface.role,
        freeze=surface.freeze,
    )
    for g in PARAM_GROUPS:
        optim.select(g, keep)
        if n_new:
            optim.extend(g, n_new)
        optim.params[g] = getattr(merged, g)
    return merged


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    surface: GaussianSet
    noise: GaussianSet
    grids: list
    log: list = field(default_factory=list)
    config: TrainConfig | None = None


def _make_optimizer(surface: GaussianSet, config: TrainConfig) -> GroupedAdam:
    params = {g: getattr(surface, g) for g in PARAM_GROUPS}
    lrs = {
        "means": config.lr_means,
        "log_scales": config.lr_log_scales,
        "rotations": config.lr_rotations,
        "opacity_logits": config.lr_opacity_logits,
        "colors": config.lr_colors,
    }
    return GroupedAdam(params, lrs)


def reset_lr_schedule(schedule: DecaySchedule, iteration: int) -> None:
    """Restart the positional learning-rate decay at `iteration`."""
    schedule.reset(iteration)


def train(dataset: Dataset, config: TrainConfig, progress=None) -> TrainResult:
    """Run the full schedule and return the trained surface + frozen noise.

    Phases: (A) plain fitting with densification until the noise-start
    iteration, (B) freeze the surface, fill its hull with noise and
    fine-tune noise opacities only, (C) freeze the noise, unfreeze the
    surface, restart the positional learning-rate decay and keep training
    with per-iteration noise recoloring.
    """
    rng = np.random.default_rng([config.seed, 0])
    surface = initialize_from_masks(dataset, config)
    optim = _make_optimizer(surface, config)
    means_lr = DecaySchedule(
        initial=config.lr_means,
        half_life=config.lr_means_half_life,
        floor=config.lr_means_floor,
    )
    log = []
    train_views = dataset.train_views
    order = rng.permutation(len(train_views))
    epoch_pos = 0

    noise = GaussianSet.empty(Role.NOISE)
    noise.freeze = FreezeFlags.all_frozen()
    grids = []

    noise_start = config.noise_start_iteration if config.use_ngs else config.iterations
    guided_start = noise_start + (config.noise_finetune_iterations if config.use_ngs else 0)

    grad_accum = np.zeros(len(surface))
    grad_count = np.zeros(len(surface))

    t = 0
    while t < config.iterations:
        if config.use_ngs and t == noise_start:
            surface.freeze = FreezeFlags.all_frozen()
            noise, grids = multiscale_fill(surface, train_views, config, rng)
            noise = finetune_noise(
                noise,
                surface,
                dataset,
                config.noise_finetune_iterations,
                config,
                grids=grids,
                base_iteration=t,
                log=log,
            )
            surface.freeze = FreezeFlags()
            if config.lr_reset_enabled:
                reset_lr_schedule(means_lr, guided_start)
            grad_accum = np.zeros(len(surface))
            grad_count = np.zeros(len(surface))
            t = guided_start
            continue

        if epoch_pos >= len(train_views):
            order = rng.permutation(len(train_views))
            epoch_pos = 0
        view = train_views[order[epoch_pos]]
        epoch_pos += 1

        guided = config.use_ngs and t >= guided_start
        if guided and len(noise) and config.color_reset_enabled:
            randomize_colors(noise, color_rng(config.seed, t))

        if config.random_background:
            bg = tuple(color_rng(config.seed, t).uniform(0.0, 1.0, size=3))
        else:
            bg = tuple(config.background)
        opts = RenderOptions(background=bg)
        target = view.image + (1.0 - view.mask[:, :, None]) * np.asarray(bg)

        out = render(surface, noise if guided and len(noise) else None, view.camera, opts)
        p_loss, d_color = photometric_loss(out.color, target, config.lambda_dssim)
        total = p_loss
        if config.use_alpha_loss:
            a_loss, d_alpha, _ = alpha_consistency_loss(
                out.alpha, view.mask, config.foreground_loss_enabled
            )
            d_alpha = config.alpha_loss_weight * d_alpha
            total += config.alpha_loss_weight * a_loss
        else:
            a_loss = 0.0
            d_alpha = np.zeros_like(out.alpha)
        surf_grads, _ = render_backward(out, d_color, d_alpha)

        grad_accum += np.linalg.norm(surf_grads.means, axis=1)
        grad_count += 1.0
        optim.step(
            {g: getattr(surf_grads, g) for g in PARAM_GROUPS},
            lr_overrides={"means": means_lr.value(t)},
            frozen=set(surface.freeze.frozen_groups()),
        )
        # Keep quaternions away from zero norm.
        norms = np.linalg.norm(surface.rotations, axis=1, keepdims=True)
        np.maximum(norms, 1e-8, out=norms)
        surface.rotations /= norms

        densify_end = config.densify_end_iteration
        if densify_end is None:
            densify_end = noise_start
        densify_now = (
            config.densify_start_iteration <= t < densify_end
            and t != noise_start
            and (t - config.densify_start_iteration) % config.densify_interval == 0
        )
        if densify_now:
            surface = densify(surface, optim, grad_accum, grad_count, config, rng)
            grad_accum = np.zeros(len(surface))
            grad_count = np.zeros(len(surface))

        if config.log_every and t % config.log_every == 0:
            entry = {
                "iteration": t,
                "phase": "guided" if guided else "surface",
                "loss": float(total),
                "photometric": float(p_loss),
                "alpha_loss": float(a_loss),
                "n_surface": len(surface),
                "n_noise": len(noise),
                "lr_means": means_lr.value(t),
            }
            log.append(entry)
            if progress is not None:
                progress(entry)
        t += 1

    surface.freeze = FreezeFlags()
    return TrainResult(surface=surface, noise=noise, grids=grids, log=log, config=config)
