"""Dataset I/O and synthetic desk-scale scenes.

A dataset directory holds images/, masks/ and a cameras.json document with
per-view intrinsics and world-to-camera pose. Synthetic scenes are
ray-traced analytically (flat shading with a procedural low-frequency
texture) and keep a geometry record so tests can ray-cast the exact
surfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Camera, Dataset, View
from .errors import DatasetError, InvalidParameterError

SYNTH_KINDS = ("opaque_sphere", "ambiguity_shells", "holed_sphere", "thin_plane")


# ---------------------------------------------------------------------------
# Directory round trip


def _load_png(path: Path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    if arr.dtype == np.int32:  # PIL mode I (16-bit grayscale widening)
        return arr.astype(np.float64) / 65535.0
    raise DatasetError(f"{path}: unsupported PNG bit depth {arr.dtype}")


def load_dataset(root) -> Dataset:
    """Load images, masks and cameras; 7:1 train/test split by sorted-name
    index (index 7 mod 8 goes to test)."""
    root = Path(root)
    cams_path = root / "cameras.json"
    if not cams_path.exists():
        raise DatasetError(f"{root}: missing cameras.json")
    doc = json.loads(cams_path.read_text())
    entries = sorted(doc["views"], key=lambda e: e["name"])
    views = []
    errors = []
    for entry in entries:
        name = entry["name"]
        try:
            cam = Camera(
                fx=float(entry["fx"]),
                fy=float(entry["fy"]),
                cx=float(entry["cx"]),
                cy=float(entry["cy"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
                rotation=np.array(entry["rotation"], dtype=np.float64).reshape(3, 3),
                translation=np.array(entry["translation"], dtype=np.float64),
            )
            img_path = root / entry["image"]
            mask_path = root / entry["mask"]
            if not mask_path.exists():
                raise DatasetError(f"view {name!r}: missing mask {mask_path.name}")
            image = _load_png(img_path)
            if image.ndim == 2:
                image = np.repeat(image[:, :, None], 3, axis=2)
            image = image[:, :, :3]
            mask = _load_png(mask_path)
            if mask.ndim == 3:
                mask = mask[:, :, 0]
            mask = (mask >= 0.5).astype(np.float64)
            if image.shape[:2] != (cam.height, cam.width):
                raise DatasetError(
                    f"view {name!r}: image is {image.shape[:2]}, camera says "
                    f"{(cam.height, cam.width)}"
                )
            if mask.shape != (cam.height, cam.width):
                raise DatasetError(
                    f"view {name!r}: mask is {mask.shape}, camera says "
                    f"{(cam.height, cam.width)}"
                )
            views.append(View(camera=cam, image=image, mask=mask, name=name))
        except (DatasetError, KeyError, ValueError) as exc:
            errors.append(f"{name}: {exc}")
    if errors:
        raise DatasetError("dataset load failed:\n  " + "\n  ".join(errors))
    train = [i for i in range(len(views)) if i % 8 != 7]
    test = [i for i in range(len(views)) if i % 8 == 7]
    return Dataset(views=views, train_indices=train, test_indices=test)


def save_dataset(dataset: Dataset, root, record: "SceneRecord | None" = None):
    """Write a dataset directory (8-bit PNGs plus cameras.json)."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for view in dataset.views:
        name = view.name
        img = np.clip(np.rint(view.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(img).save(root / "images" / f"{name}.png")
        msk = (view.mask >= 0.5).astype(np.uint8) * 255
        Image.fromarray(msk).save(root / "masks" / f"{name}.png")
        cam = view.camera
        entries.append(
            {
                "name": name,
                "image": f"images/{name}.png",
                "mask": f"masks/{name}.png",
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "width": cam.width,
                "height": cam.height,
                "rotation": [float(x) for x in cam.rotation.reshape(-1)],
                "translation": [float(x) for x in cam.translation],
            }
        )
    (root / "cameras.json").write_text(json.dumps({"views": entries}, indent=2) + "\n")
    if record is not None:
        (root / "geometry.json").write_text(record.to_json() + "\n")


# ---------------------------------------------------------------------------
# Synthetic scenes


def look_at_camera(position, target, width, height, fov_scale=0.35, object_radius=0.5) -> Camera:
    """Pinhole camera at `position` looking at `target` (world z up)."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    dist = np.linalg.norm(fwd)
    fwd = fwd / dist
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    x_cam = np.cross(fwd, up)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(fwd, x_cam)
    rot = np.stack([x_cam, y_cam, fwd])
    focal = fov_scale * min(width, height) * dist / object_radius
    return Camera(
        fx=focal,
        fy=focal,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
        rotation=rot,
        translation=-rot @ position,
    )


def ring_cameras(
    n_views: int,
    width: int,
    height: int,
    radius: float = 2.5,
    object_radius: float = 0.5,
    elevations_deg=(20.0, 45.0),
) -> list:
    """Ring of cameras around the origin: n_views split over the given
    elevation rows, azimuths interleaved between rows."""
    cams = []
    n_rows = len(elevations_deg)
    per_row = [n_views // n_rows + (1 if r < n_views % n_rows else 0) for r in range(n_rows)]
    for r, (el, n_az) in enumerate(zip(elevations_deg, per_row)):
        el_rad = np.deg2rad(el)
        for k in range(n_az):
            az = 2.0 * np.pi * (k + 0.5 * r) / max(n_az, 1)
            pos = radius * np.array(
                [np.cos(az) * np.cos(el_rad), np.sin(az) * np.cos(el_rad), np.sin(el_rad)]
            )
            cams.append(
                look_at_camera(pos, np.zeros(3), width, height, object_radius=object_radius)
            )
    return cams


def _angular_texture(n: np.ndarray, phase: float) -> np.ndarray:
    """Low-frequency RGB texture as a function of a unit direction (..., 3)."""
    nx, ny, nz = n[..., 0], n[..., 1], n[..., 2]
    r = 0.5 + 0.32 * np.sin(0.39 * nx + 0.63 * ny + phase)
    g = 0.5 + 0.32 * np.sin(0.51 * ny + 0.33 * nz + phase + 2.0)
    b = 0.5 + 0.32 * np.sin(0.57 * nz + 0.45 * nx + phase + 4.0)
    return np.stack([r, g, b], axis=-1)


@dataclass
class SceneRecord:
    """Analytic ground-truth geometry for oracle checks."""

    kind: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneRecord":
        doc = json.loads(text)
        return cls(kind=doc["kind"], params=doc["params"])

    # -- geometry queries ---------------------------------------------------

    def contains(self, points: np.ndarray) -> np.ndarray:
        """True where a point is inside the (closed) object volume."""
        points = np.atleast_2d(points)
        p = self.params
        r = np.linalg.norm(points, axis=1)
        if self.kind in ("opaque_sphere", "ambiguity_shells", "holed_sphere"):
            return r < p["radius"]
        if self.kind == "thin_plane":
            a = p["half_extent"]
            return (
                (np.abs(points[:, 2]) < 1e-3)
                & (np.abs(points[:, 0]) < a)
                & (np.abs(points[:, 1]) < a)
            )
        raise InvalidParameterError(f"unknown scene kind {self.kind!r}")

    def _first_hit_t(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Ray parameter of the first visible surface hit (+inf if none).

        `dirs` need not be normalized; t is in units of |dirs|.
        """
        p = self.params
        o = np.atleast_2d(origins)
        d = np.atleast_2d(dirs)
        if self.kind in ("opaque_sphere", "ambiguity_shells", "holed_sphere"):
            radius = p["radius"]
            aa = np.einsum("ij,ij->i", d, d)
            bb = 2.0 * np.einsum("ij,ij->i", o, d)
            cc = np.einsum("ij,ij->i", o, o) - radius**2
            disc = bb * bb - 4.0 * aa * cc
            hit = disc > 0
            t = np.full(len(d), np.inf)
            sq = np.sqrt(np.where(hit, disc, 0.0))
            t1 = (-bb - sq) / (2.0 * aa)
            t2 = (-bb + sq) / (2.0 * aa)
            if self.kind == "holed_sphere":
                axis = np.asarray(p["hole_axis"], dtype=np.float64)
                cos_half = np.cos(np.deg2rad(p["hole_angle_deg"]))

                def in_cap(tv):
                    pts = o + tv[:, None] * d
                    nrm = pts / radius
                    return (nrm @ axis) > cos_half

                ok1 = hit & (t1 > 1e-9) & ~in_cap(t1)
                ok2 = hit & (t2 > 1e-9) & ~in_cap(t2)
                t = np.where(ok1, t1, np.where(ok2, t2, np.inf))
            else:
                ok1 = hit & (t1 > 1e-9)
                ok2 = hit & (t2 > 1e-9)
                t = np.where(ok1, t1, np.where(ok2, t2, np.inf))
            return t
        if self.kind == "thin_plane":
            a = p["half_extent"]
            dz = d[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -o[:, 2] / dz
            pts = o + t[:, None] * d
            ok = (
                np.isfinite(t)
                & (t > 1e-9)
                & (np.abs(pts[:, 0]) <= a)
                & (np.abs(pts[:, 1]) <= a)
            )
            return np.where(ok, t, np.inf)
        raise InvalidParameterError(f"unknown scene kind {self.kind!r}")

    def pixel_rays(self, cam: Camera):
        """World-space (origin, direction) for every pixel; directions have
        unit camera depth, so t equals camera-space z."""
        xs, ys = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        dirs_cam = np.stack(
            [(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy, np.ones_like(xs, dtype=np.float64)],
            axis=-1,
        )
        dirs_world = dirs_cam.reshape(-1, 3) @ cam.rotation
        origin = cam.position()
        return origin, dirs_world

    def first_surface_depth(self, cam: Camera) -> np.ndarray:
        """Analytic camera-space depth of the first hit for every pixel."""
        origin, dirs = self.pixel_rays(cam)
        t = self._first_hit_t(np.tile(origin, (len(dirs), 1)), dirs)
        return t.reshape(cam.height, cam.width)

    def point_depth_vs_surface(self, points: np.ndarray, cam: Camera):
        """For each point: its camera depth and the analytic depth of the
        first surface along the same ray (oracle for depth pruning)."""
        points = np.atleast_2d(points)
        origin = cam.position()
        rays = points - origin[None, :]
        pc = cam.world_to_camera(points)
        z_point = pc[:, 2]
        # Scale rays to unit camera depth so t is a camera depth too.
        rays = rays / z_point[:, None]
        t = self._first_hit_t(np.tile(origin, (len(points), 1)), rays)
        return z_point, t

    def render_view(self, cam: Camera, phase: float):
        """Flat-shaded image and exact mask for one camera."""
        origin, dirs = self.pixel_rays(cam)
        t = self._first_hit_t(np.tile(origin, (len(dirs), 1)), dirs)
        hit = np.isfinite(t)
        pts = origin[None, :] + np.where(hit, t, 0.0)[:, None] * dirs
        if self.kind == "thin_plane":
            a = self.params["half_extent"]
            uvw = np.stack(
                [pts[:, 0] / a, pts[:, 1] / a, np.zeros(len(pts))], axis=-1
            )
            colors = _angular_texture(uvw, phase)
        else:
            n = pts / self.params["radius"]
            colors = _angular_texture(n, phase)
        if self.kind == "ambiguity_shells":
            # The ambiguous construction: ground-truth pixels are an alpha
            # blend of the outer shell over the matched-texture inner shell
            # (or the outer back face where rays miss the inner sphere), so
            # a semi-transparent outer surface reproduces them exactly.
            colors = self._blend_inner(origin, dirs, hit, colors, phase)
        img = np.where(hit[:, None], colors, 0.0).reshape(cam.height, cam.width, 3)
        mask = hit.astype(np.float64).reshape(cam.height, cam.width)
        return np.clip(img, 0.0, 1.0), mask

    def _blend_inner(self, origin, dirs, hit, outer_colors, phase):
        p = self.params
        a_out = p["outer_alpha"]
        r_in = p["inner_radius"]
        radius = p["radius"]
        o = np.tile(origin, (len(dirs), 1))
        aa = np.einsum("ij,ij->i", dirs, dirs)
        bb = 2.0 * np.einsum("ij,ij->i", o, dirs)
        cc_in = np.einsum("ij,ij->i", o, o) - r_in**2
        disc = bb * bb - 4.0 * aa * cc_in
        hit_in = hit & (disc > 0)
        t_in = np.where(hit_in, (-bb - np.sqrt(np.where(hit_in, disc, 0.0))) / (2 * aa), 0.0)
        # back face of the outer sphere for rays missing the inner shell
        cc_out = np.einsum("ij,ij->i", o, o) - radius**2
        disc_out = np.maximum(bb * bb - 4.0 * aa * cc_out, 0.0)
        t_back = (-bb + np.sqrt(disc_out)) / (2 * aa)
        t_second = np.where(hit_in, t_in, t_back)
        pts = o + t_second[:, None] * dirs
        behind_r = np.where(hit_in, r_in, radius)
        colors_behind = _angular_texture(pts / behind_r[:, None], phase)
        return a_out * outer_colors + (1.0 - a_out) * colors_behind


def synth_scene(
    kind: str,
    width: int = 64,
    height: int = 64,
    n_views: int = 32,
    seed: int = 0,
    radius: float = 0.5,
):
    """Build a synthetic dataset plus its analytic geometry record."""
    if kind not in SYNTH_KINDS:
        raise InvalidParameterError(f"unknown scene kind {kind!r}; choose from {SYNTH_KINDS}")
    rng = np.random.default_rng(seed)
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    params = {"radius": radius, "phase": phase}
    if kind == "ambiguity_shells":
        params["inner_radius"] = 0.6 * radius
        params["outer_alpha"] = 0.55
    if kind == "holed_sphere":
        params["hole_axis"] = [0.0, 0.0, 1.0]
        params["hole_angle_deg"] = 35.0
    if kind == "thin_plane":
        params = {"half_extent": radius, "phase": phase}
    record = SceneRecord(kind=kind, params=params)
    elevations = (-30.0, 30.0) if kind == "thin_plane" else (20.0, 45.0)
    cams = ring_cameras(
        n_views, width, height, radius=5.0 * radius, object_radius=radius,
        elevations_deg=elevations,
    )
    views = []
    for i, cam in enumerate(cams):
        img, mask = record.render_view(cam, phase)
        views.append(View(camera=cam, image=img, mask=mask, name=f"view_{i:03d}"))
    train = [i for i in range(len(views)) if i % 8 != 7]
    test = [i for i in range(len(views)) if i % 8 == 7]
    return Dataset(views=views, train_indices=train, test_indices=test), record


def load_scene_record(root) -> SceneRecord | None:
    path = Path(root) / "geometry.json"
    if not path.exists():
        return None
    return SceneRecord.from_json(path.read_text())
