"""Interior noise-infill pipeline: convex hull of the surface points,
multi-resolution voxel occupancy, depth-based carving, morphological
erosion, coarse-to-fine noise injection and the opacity-only fine-tune.

The injected noise Gaussians sit inside the object volume and break the
line of sight between opposing surfaces, which forces the optimizer to keep
the real surface opaque.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion, generate_binary_structure
from scipy.spatial import ConvexHull, QhullError

from .core import RGBCMY, GaussianSet, OccupancyGrid, Role, FreezeFlags, logit, sigmoid
from .errors import FreezeViolationError, GeometryError, InvalidParameterError
from .losses import alpha_consistency_loss, photometric_loss
from .optim import AdamState, adam_step
from .rasterizer import RenderOptions, render, render_backward, surface_depth_map

# 6-connected structuring element (face neighbors only).
_STRUCT6 = generate_binary_structure(3, 1)


@dataclass
class HullMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) indices, outward-oriented
    normals: np.ndarray  # (F, 3) outward unit normals
    equations: np.ndarray  # (F, 4): n . x + d <= 0 inside

    @property
    def aabb(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Half-space containment test for (N, 3) points."""
        points = np.atleast_2d(points)
        d = points @ self.equations[:, :3].T + self.equations[:, 3][None, :]
        return np.all(d <= tol, axis=1)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Max signed distance to the face planes (<= 0 means inside)."""
        points = np.atleast_2d(points)
        d = points @ self.equations[:, :3].T + self.equations[:, 3][None, :]
        return d.max(axis=1)


def convex_hull(points: np.ndarray) -> HullMesh:
    """Convex hull (Quickhull) of 3D points as an outward-oriented mesh."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 4:
        raise GeometryError(f"convex hull needs >= 4 points, got {len(points)}")
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise GeometryError(f"degenerate hull input: {exc}") from exc
    vertices = points[hull.vertices]
    remap = np.full(len(points), -1, dtype=np.int64)
    remap[hull.vertices] = np.arange(len(hull.vertices))
    faces = remap[hull.simplices]
    normals = hull.equations[:, :3].copy()
    # Qhull's simplex winding is arbitrary; flip faces whose geometric
    # normal disagrees with the outward plane normal.
    v = points[hull.simplices]
    geom = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    flip = np.einsum("ij,ij->i", geom, normals) < 0
    faces[flip] = faces[flip][:, ::-1]
    return HullMesh(vertices, faces, normals, hull.equations.copy())


def voxelize_hull(hull: HullMesh, resolution: int, level: int = 0) -> OccupancyGrid:
    """Occupancy grid over the hull AABB (padded by one voxel); a voxel is
    occupied iff its center lies inside the hull."""
    if resolution < 2:
        raise InvalidParameterError("voxel resolution must be >= 2")
    lo, hi = hull.aabb
    extent = hi - lo
    voxel_size = float(extent.max()) / resolution
    if voxel_size <= 0:
        raise GeometryError("hull has zero extent")
    dims = np.ceil(extent / voxel_size - 1e-9).astype(np.int64) + 2
    origin = lo - voxel_size
    grid = OccupancyGrid(
        level=level,
        resolution=resolution,
        origin=origin,
        voxel_size=voxel_size,
        occupancy=np.zeros(tuple(dims), dtype=bool),
    )
    ii, jj, kk = np.meshgrid(
        np.arange(dims[0]), np.arange(dims[1]), np.arange(dims[2]), indexing="ij"
    )
    centers = origin + (np.stack([ii, jj, kk], axis=-1) + 0.5) * voxel_size
    inside = hull.contains(centers.reshape(-1, 3), tol=1e-12)
    grid.occupancy = inside.reshape(tuple(dims))
    grid.point_index = np.full(tuple(dims), -1, dtype=np.int64)
    return grid


def erode(grid: OccupancyGrid, iterations: int) -> OccupancyGrid:
    """Binary erosion with the 6-connected structuring element."""
    if iterations < 0:
        raise InvalidParameterError("erosion iterations must be >= 0")
    out = grid.copy()
    if iterations == 0:
        return out
    out.occupancy = binary_erosion(grid.occupancy, structure=_STRUCT6, iterations=iterations)
    out.point_index = np.where(out.occupancy, out.point_index, -1)
    return out


def _covered_by(grid: OccupancyGrid, points: np.ndarray) -> np.ndarray:
    """True where a coarser grid already holds a noise point at the voxel
    containing each query point."""
    ijk = grid.world_to_voxel(points)
    shape = np.array(grid.occupancy.shape)
    inside = np.all((ijk >= 0) & (ijk < shape[None, :]), axis=1)
    out = np.zeros(len(ijk), dtype=bool)
    idx = ijk[inside]
    out[inside] = grid.point_index[idx[:, 0], idx[:, 1], idx[:, 2]] >= 0
    return out


def inject_noise(
    grid: OccupancyGrid,
    coarser_levels: list,
    initial_opacity: float,
    rng: np.random.Generator,
    id_offset: int = 0,
) -> GaussianSet:
    """One isotropic noise Gaussian per occupied voxel not already covered
    by a coarser level; updates the grid's point index in place."""
    ijk = grid.occupied_indices()
    if len(ijk) > 0:
        centers = grid.voxel_centers(ijk)
        keep = np.ones(len(ijk), dtype=bool)
        for coarse in coarser_levels:
            keep &= ~_covered_by(coarse, centers)
        ijk = ijk[keep]
        centers = centers[keep]
    if len(ijk) == 0:
        out = GaussianSet.empty(Role.NOISE)
        out.voxel_refs = np.zeros((0, 2), dtype=np.int64)
        return out
    n = len(ijk)
    half = grid.voxel_size / 2.0
    noise = GaussianSet(
        means=centers,
        log_scales=np.full((n, 3), np.log(half)),
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        opacity_logits=np.full(n, logit(initial_opacity)),
        colors=RGBCMY[rng.integers(0, 6, size=n)],
        role=Role.NOISE,
        voxel_refs=np.column_stack([np.full(n, grid.level), grid.flat_index(ijk)]),
    )
    grid.point_index[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = id_offset + np.arange(n)
    return noise


def prune_decisions(
    points: np.ndarray,
    surface: GaussianSet,
    views: list,
    margin: float,
    tau: float = 0.5,
    options: RenderOptions | None = None,
) -> np.ndarray:
    """True for points to remove: in any view the point projects outside the
    mask (or image), or sits in front of the tau-crossing surface depth by
    more than the margin allows (depth - margin < surface depth)."""
    if len(views) == 0:
        raise InvalidParameterError("depth pruning needs at least one view")
    points = np.atleast_2d(points)
    remove = np.zeros(len(points), dtype=bool)
    for view in views:
        cam = view.camera
        depth_map = surface_depth_map(surface, cam, tau=tau, options=options)
        uv, z = cam.project_points(points)
        px = np.rint(uv[:, 0]).astype(np.int64)
        py = np.rint(uv[:, 1]).astype(np.int64)
        outside = (
            (z <= 0)
            | (px < 0)
            | (px >= cam.width)
            | (py < 0)
            | (py >= cam.height)
        )
        pxc = np.clip(px, 0, cam.width - 1)
        pyc = np.clip(py, 0, cam.height - 1)
        masked_out = view.mask[pyc, pxc] < 0.5
        in_front = (z - margin) < depth_map[pyc, pxc]
        remove |= outside | masked_out | in_front
    return remove


def _resync_grids(grids: list, noise: GaussianSet, removed_global: np.ndarray):
    """Drop removed points from the grids and renumber the survivors."""
    new_ids = np.cumsum(~removed_global) - 1
    for grid in grids:
        pi = grid.point_index
        has = pi >= 0
        ids = pi[has]
        dead = removed_global[ids]
        # Clear occupancy where the point was pruned so finer levels can
        # re-fill the space in later passes.
        coords = np.argwhere(has)
        dead_coords = coords[dead]
        grid.occupancy[dead_coords[:, 0], dead_coords[:, 1], dead_coords[:, 2]] = False
        pi[has] = np.where(dead, -1, new_ids[ids])


def depth_prune(
    noise: GaussianSet,
    surface: GaussianSet,
    views: list,
    margin: float,
    grids: list | None = None,
    tau: float = 0.5,
    options: RenderOptions | None = None,
) -> GaussianSet:
    """Remove noise Gaussians visible in front of (or outside) the surface
    in any view; grids, when given, are resynced in place."""
    if len(noise) == 0:
        return noise.copy()
    remove = prune_decisions(noise.means, surface, views, margin, tau=tau, options=options)
    if grids:
        _resync_grids(grids, noise, remove)
    return noise.select(~remove)


def _merge_noise(sets: list) -> GaussianSet:
    sets = [s for s in sets if len(s) > 0]
    if not sets:
        out = GaussianSet.empty(Role.NOISE)
        out.voxel_refs = np.zeros((0, 2), dtype=np.int64)
        return out
    return GaussianSet(
        means=np.concatenate([s.means for s in sets]),
        log_scales=np.concatenate([s.log_scales for s in sets]),
        rotations=np.concatenate([s.rotations for s in sets]),
        opacity_logits=np.concatenate([s.opacity_logits for s in sets]),
        colors=np.concatenate([s.colors for s in sets]),
        role=Role.NOISE,
        voxel_refs=np.concatenate([s.voxel_refs for s in sets]),
    )


def multiscale_fill(surface: GaussianSet, views: list, config, rng: np.random.Generator):
    """Full coarse-to-fine infill: per resolution level, voxelize the hull,
    carve voxels that would be visible in front of the surface, erode, and
    inject noise only into voxels not covered by coarser levels.

    Returns (noise_set, grids).
    """
    if len(surface) < 4:
        raise GeometryError("multiscale fill needs a surface with >= 4 Gaussians")
    hull = convex_hull(surface.means)
    levels = tuple(config.voxel_levels)
    lo, hi = hull.aabb
    fine_voxel = float((hi - lo).max()) / levels[-1]
    margin = config.depth_prune_margin if config.depth_prune_margin is not None else fine_voxel
    grids: list = []
    sets: list = []
    offset = 0
    for li, res in enumerate(levels):
        grid = voxelize_hull(hull, res, level=li)
        if config.pruning_enabled and grid.occupancy.any():
            ijk = grid.occupied_indices()
            centers = grid.voxel_centers(ijk)
            remove = prune_decisions(centers, surface, views, margin)
            dead = ijk[remove]
            grid.occupancy[dead[:, 0], dead[:, 1], dead[:, 2]] = False
        if config.erosion_enabled and config.erosion_iterations > 0:
            grid = erode(grid, config.erosion_iterations)
        new = inject_noise(grid, grids, config.noise_initial_opacity, rng, id_offset=offset)
        offset += len(new)
        grids.append(grid)
        sets.append(new)
    return _merge_noise(sets), grids


def randomize_colors(noise: GaussianSet, rng: np.random.Generator):
    """Recolor every noise Gaussian uniformly from the six primaries and
    secondaries; in place."""
    if len(noise) == 0:
        return
    noise.colors[:] = RGBCMY[rng.integers(0, 6, size=len(noise))]


def color_rng(seed: int, iteration: int) -> np.random.Generator:
    """Recoloring stream: a pure function of (seed, iteration)."""
    return np.random.default_rng([seed, iteration])


def finetune_noise(
    noise: GaussianSet,
    surface: GaussianSet,
    dataset,
    iterations: int,
    config,
    grids: list | None = None,
    base_iteration: int = 0,
    log: list | None = None,
) -> GaussianSet:
    """Opacity-only refinement of the noise set against a frozen surface.

    Colors are re-randomized each step; noise whose activated opacity falls
    below the prune threshold afterwards is removed. The returned set is
    fully frozen.
    """
    if not surface.freeze.fully_frozen():
        raise FreezeViolationError("surface must be fully frozen during noise fine-tuning")
    if len(noise) == 0:
        out = noise.copy()
        out.freeze = FreezeFlags.all_frozen()
        return out
    noise = noise.copy()
    noise.freeze = FreezeFlags(means=True, log_scales=True, rotations=True, colors=True)
    state = AdamState(np.zeros_like(noise.opacity_logits), np.zeros_like(noise.opacity_logits))
    train_views = dataset.train_views
    rng = np.random.default_rng([config.seed, 7])
    order = rng.permutation(len(train_views))
    opts = RenderOptions(background=tuple(config.background))
    for step in range(iterations):
        if step % len(train_views) == 0 and step > 0:
            order = rng.permutation(len(train_views))
        view = train_views[order[step % len(train_views)]]
        it = base_iteration + step
        randomize_colors(noise, color_rng(config.seed, it))
        out = render(surface, noise, view.camera, opts)
        p_loss, d_color = photometric_loss(out.color, view.image, config.lambda_dssim)
        a_loss, d_alpha_map, (lf, lb) = alpha_consistency_loss(
            out.alpha, view.mask, config.foreground_loss_enabled
        )
        d_alpha = config.alpha_loss_weight * d_alpha_map
        _, noise_grads = render_backward(out, d_color, d_alpha)
        adam_step(noise.opacity_logits, noise_grads.opacity_logits, state, config.lr_opacity_logits)
        if log is not None:
            log.append(
                {
                    "iteration": it,
                    "phase": "noise_finetune",
                    "loss": p_loss + config.alpha_loss_weight * a_loss,
                    "photometric": p_loss,
                    "alpha_loss": a_loss,
                    "n_noise": len(noise),
                }
            )
    keep = sigmoid(noise.opacity_logits) >= config.noise_prune_opacity_threshold
    if grids is not None:
        _resync_grids(grids, noise, ~keep)
    noise = noise.select(keep)
    noise.freeze = FreezeFlags.all_frozen()
    return noise
