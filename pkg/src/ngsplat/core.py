"""Domain types shared by every module: Gaussian primitives and their typed
collections, cameras, datasets, render outputs, occupancy grids and the
training configuration.

Collections are array-backed (structure-of-arrays) so the rasterizer and
optimizer can operate on contiguous numpy buffers; `Gaussian3D` is the
per-primitive view used at API boundaries and in tests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError

PARAM_GROUPS = ("means", "log_scales", "rotations", "opacity_logits", "colors")

# The six recoloring primaries/secondaries: R, G, B, C, M, Y.
RGBCMY = np.array(
    [
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (0.0, 0.0, 1.0),
        (0.0, 1.0, 1.0),
        (1.0, 0.0, 1.0),
        (1.0, 1.0, 0.0),
    ],
    dtype=np.float64,
)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a quaternion (w, x, y, z); normalizes first."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise InvalidParameterError("zero-norm quaternion")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


class Role(enum.Enum):
    SURFACE = "surface"
    NOISE = "noise"


@dataclass
class Gaussian3D:
    """A single trainable splat primitive.

    `scale` is stored as log-extents and `opacity` as a logit; activated
    values are exposed via properties.
    """

    mean: np.ndarray  # (3,) world units
    log_scale: np.ndarray  # (3,)
    rotation: np.ndarray  # (4,) quaternion (w, x, y, z), not necessarily unit
    opacity_logit: float
    color: np.ndarray  # (3,) RGB in [0, 1]

    @property
    def scale(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_scale, dtype=np.float64))

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


def covariance(g: Gaussian3D) -> np.ndarray:
    """World covariance R diag(s^2) R^T; eigenvalues are the squared scales."""
    R = quat_to_rotmat(g.rotation)
    s2 = g.scale**2
    return (R * s2[None, :]) @ R.T


@dataclass
class FreezeFlags:
    means: bool = False
    log_scales: bool = False
    rotations: bool = False
    opacity_logits: bool = False
    colors: bool = False

    @classmethod
    def all_frozen(cls) -> "FreezeFlags":
        return cls(True, True, True, True, True)

    def frozen_groups(self) -> tuple:
        return tuple(g for g in PARAM_GROUPS if getattr(self, g))

    def fully_frozen(self) -> bool:
        return all(getattr(self, g) for g in PARAM_GROUPS)


@dataclass
class GaussianSet:
    """Array-backed collection of Gaussians with a uniform role.

    Noise sets keep `voxel_refs` (level, flat voxel index) so occupancy grids
    stay synced to the sparse points after injection/pruning.
    """

    means: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4)
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    role: Role = Role.SURFACE
    freeze: FreezeFlags = field(default_factory=FreezeFlags)
    voxel_refs: np.ndarray | None = None  # (N, 2) int64: level, flat index

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.ascontiguousarray(
            self.opacity_logits, dtype=np.float64
        ).reshape(n)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(n, 3)
        if self.voxel_refs is not None:
            self.voxel_refs = np.ascontiguousarray(self.voxel_refs, dtype=np.int64).reshape(n, 2)

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            mean=self.means[i].copy(),
            log_scale=self.log_scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i].copy(),
        )

    @classmethod
    def empty(cls, role: Role = Role.SURFACE) -> "GaussianSet":
        z = np.zeros((0, 3))
        return cls(z, z.copy(), np.zeros((0, 4)), np.zeros(0), z.copy(), role=role)

    @classmethod
    def from_gaussians(cls, gaussians, role: Role = Role.SURFACE) -> "GaussianSet":
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(role)
        return cls(
            means=np.stack([g.mean for g in gaussians]),
            log_scales=np.stack([g.log_scale for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            colors=np.stack([g.color for g in gaussians]),
            role=role,
        )

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.means.copy(),
            self.log_scales.copy(),
            self.rotations.copy(),
            self.opacity_logits.copy(),
            self.colors.copy(),
            role=self.role,
            freeze=replace(self.freeze),
            voxel_refs=None if self.voxel_refs is None else self.voxel_refs.copy(),
        )

    def select(self, keep: np.ndarray) -> "GaussianSet":
        """Subset by boolean mask or index array."""
        return GaussianSet(
            self.means[keep],
            self.log_scales[keep],
            self.rotations[keep],
            self.opacity_logits[keep],
            self.colors[keep],
            role=self.role,
            freeze=replace(self.freeze),
            voxel_refs=None if self.voxel_refs is None else self.voxel_refs[keep],
        )


@dataclass
class Camera:
    """Pinhole view. `rotation`/`translation` map world points to camera
    coordinates (z forward, x right, y down); pixels sample integer coords."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        rrt = self.rotation @ self.rotation.T
        if not np.allclose(rrt, np.eye(3), atol=1e-6) or np.linalg.det(self.rotation) < 0:
            raise InvalidParameterError("camera rotation must be orthonormal with det +1")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray):
        """Returns pixel coords (N, 2) and camera depth (N,)."""
        pc = self.world_to_camera(points)
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass
class View:
    camera: Camera
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) values in {0, 1}
    name: str = ""

    def __post_init__(self):
        h, w = self.camera.height, self.camera.width
        if self.image.shape[:2] != (h, w):
            raise DimensionMismatchError(
                f"view {self.name!r}: image {self.image.shape[:2]} vs camera {(h, w)}"
            )
        if self.mask.shape != (h, w):
            raise DimensionMismatchError(
                f"view {self.name!r}: mask {self.mask.shape} vs camera {(h, w)}"
            )


@dataclass
class Dataset:
    """Views plus a train/test split (lists of view indices)."""

    views: list
    train_indices: list
    test_indices: list

    @property
    def train_views(self) -> list:
        return [self.views[i] for i in self.train_indices]

    @property
    def test_views(self) -> list:
        return [self.views[i] for i in self.test_indices]


@dataclass
class BlendRecord:
    """Flattened per-pixel blend lists in row-major pixel order.

    For pixel k, entries offsets[k]:offsets[k+1] hold the depth-ordered
    contributing splats: packed id, effective alpha after the 2D falloff,
    and the transmittance accumulated before the splat.
    """

    offsets: np.ndarray  # (H*W + 1,) int64
    splat_ids: np.ndarray  # (total,) int64, index into the packed splat arrays
    alphas: np.ndarray  # (total,)
    transmittances: np.ndarray  # (total,)
    width: int = 0
    height: int = 0

    def at(self, y: int, x: int):
        k = y * self.width + x
        sl = slice(self.offsets[k], self.offsets[k + 1])
        return self.splat_ids[sl], self.alphas[sl], self.transmittances[sl]


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W), 1 - final transmittance
    depth: np.ndarray  # (H, W) blend-weighted depth
    role_transmittance: np.ndarray | None  # (H, W) noise-contribution channel
    blend_record: BlendRecord | None
    # Opaque forward-pass cache consumed by render_backward.
    cache: object = None


@dataclass
class OccupancyGrid:
    """Dense voxel occupancy kept in sync with the sparse noise points.

    `point_index` maps each occupied voxel to the owning noise Gaussian
    (-1 where unoccupied or not yet injected).
    """

    level: int
    resolution: int  # requested voxels per axis over the hull AABB
    origin: np.ndarray  # (3,) world position of the grid corner
    voxel_size: float
    occupancy: np.ndarray  # (nx, ny, nz) bool
    point_index: np.ndarray | None = None  # (nx, ny, nz) int64

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.point_index is None:
            self.point_index = np.full(self.occupancy.shape, -1, dtype=np.int64)

    @property
    def shape(self) -> tuple:
        return self.occupancy.shape

    def voxel_centers(self, ijk: np.ndarray | None = None) -> np.ndarray:
        """World centers of the given voxel indices (or all occupied ones)."""
        if ijk is None:
            ijk = np.argwhere(self.occupancy)
        return self.origin + (np.asarray(ijk, dtype=np.float64) + 0.5) * self.voxel_size

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.occupancy)

    def flat_index(self, ijk: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.occupancy.shape
        ijk = np.atleast_2d(ijk)
        return (ijk[:, 0] * ny + ijk[:, 1]) * nz + ijk[:, 2]

    def world_to_voxel(self, points: np.ndarray) -> np.ndarray:
        """Integer voxel indices containing the given world points."""
        return np.floor((np.atleast_2d(points) - self.origin) / self.voxel_size).astype(np.int64)

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """True where a point falls inside an occupied voxel."""
        ijk = self.world_to_voxel(points)
        shape = np.array(self.occupancy.shape)
        inside = np.all((ijk >= 0) & (ijk < shape[None, :]), axis=1)
        out = np.zeros(len(ijk), dtype=bool)
        idx = ijk[inside]
        out[inside] = self.occupancy[idx[:, 0], idx[:, 1], idx[:, 2]]
        return out

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(
            self.level,
            self.resolution,
            self.origin.copy(),
            self.voxel_size,
            self.occupancy.copy(),
            self.point_index.copy(),
        )


@dataclass
class TrainConfig:
    """Full training schedule and ablation switches.

    Defaults target full-scale captures; `desk_scale` shrinks everything
    proportionally for small synthetic scenes.
    """

    iterations: int = 30000
    lambda_dssim: float = 0.2
    alpha_loss_weight: float = 1.0
    noise_start_iteration: int = 6000
    noise_finetune_iterations: int = 1000
    voxel_levels: tuple = (16, 32, 64)
    erosion_iterations: int = 1
    noise_initial_opacity: float = 0.95
    noise_prune_opacity_threshold: float = 0.1
    depth_prune_margin: float | None = None  # default: one fine-voxel size

    # Densification (simplified adaptive density control).
    densify_interval: int = 100
    densify_start_iteration: int = 200
    densify_end_iteration: int | None = None  # default: stop at noise_start
    densify_grad_threshold: float = 0.08
    densify_scale_threshold: float = 0.05  # world units; above -> split
    split_scale_shrink: float = 1.6
    opacity_prune_threshold: float = 0.005
    max_gaussians: int = 60000

    # Per-group learning rates; means decay exponentially.
    lr_means: float = 1.6e-4
    lr_means_half_life: float = 3000.0
    lr_means_floor: float = 1.6e-6
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity_logits: float = 0.05
    lr_colors: float = 2.5e-3

    seed: int = 0
    n_init_points: int = 1500
    background: tuple = (0.0, 0.0, 0.0)

    # Switches (one mechanism each; ablation rows flip exactly one).
    use_ngs: bool = True
    use_alpha_loss: bool = True
    erosion_enabled: bool = True
    pruning_enabled: bool = True
    foreground_loss_enabled: bool = True  # L_f term of the alpha loss
    lr_reset_enabled: bool = True
    color_reset_enabled: bool = True  # per-iteration noise recoloring
    random_background: bool = False

    log_every: int = 100
    sos_probe_every: int = 0  # 0 disables the periodic SOS probe

    def __post_init__(self):
        if self.noise_start_iteration + self.noise_finetune_iterations >= self.iterations:
            raise InvalidParameterError(
                "noise_start_iteration + noise_finetune_iterations must be < iterations"
            )
        levels = tuple(self.voxel_levels)
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise InvalidParameterError("voxel_levels must be strictly increasing")
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise InvalidParameterError("lambda_dssim must be in [0, 1]")

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        """Schedule scaled for 64x64 synthetic scenes (quick full runs)."""
        base = dict(
            iterations=6000,
            noise_start_iteration=2400,
            noise_finetune_iterations=200,
            voxel_levels=(16, 32),
            erosion_iterations=2,
            alpha_loss_weight=3.0,
            noise_prune_opacity_threshold=0.02,
            densify_interval=100,
            densify_start_iteration=200,
            densify_grad_threshold=0.001,
            lr_means_half_life=400.0,
            lr_means=2e-3,
            lr_means_floor=2e-6,
            max_gaussians=20000,
            n_init_points=2400,
        )
        base.update(overrides)
        return cls(**base)
