"""Binary PLY reader/writer for Gaussian sets in the de-facto splat layout
(x, y, z, nx, ny, nz, f_dc_0..2, opacity, scale_0..2, rot_0..3).

Files written here use double-precision properties and store linear RGB in
the f_dc slots (flagged by a header comment) so a write/read round trip is
bit-exact. Third-party files, typically float32 with spherical-harmonic DC
coefficients and optional f_rest_* bands, are read with the standard
`color = 0.2820948 * f_dc + 0.5` convention; f_rest_* is ignored.
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GaussianSet, Role
from .errors import PlyHeaderError, PlyPayloadError, PlyPropertyError

SH_C0 = 0.28209479177387814
_RGB_COMMENT = "ngsplat_color=rgb"

_PLY_TYPES = {
    "float": ("<f4", 4),
    "float32": ("<f4", 4),
    "double": ("<f8", 8),
    "float64": ("<f8", 8),
    "uchar": ("<u1", 1),
    "uint8": ("<u1", 1),
    "int": ("<i4", 4),
    "int32": ("<i4", 4),
    "uint": ("<u4", 4),
    "uint32": ("<u4", 4),
    "short": ("<i2", 2),
    "ushort": ("<u2", 2),
}

_FIELDS = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def ply_write(gset: GaussianSet, path) -> None:
    """Write a Gaussian set as binary little-endian PLY."""
    path = Path(path)
    n = len(gset)
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"comment {_RGB_COMMENT}",
        f"comment role={gset.role.value}",
        f"element vertex {n}",
    ]
    header += [f"property double {name}" for name in _FIELDS]
    header.append("end_header")
    data = np.zeros((n, len(_FIELDS)), dtype="<f8")
    data[:, 0:3] = gset.means
    data[:, 6:9] = gset.colors
    data[:, 9] = gset.opacity_logits
    data[:, 10:13] = gset.log_scales
    data[:, 13:17] = gset.rotations
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


def ply_read(path, role: Role = Role.SURFACE) -> GaussianSet:
    """Read a Gaussian set from binary PLY; tolerates extra f_rest_* bands."""
    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise PlyHeaderError(f"{path}: not a PLY file (missing header)")
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    payload = raw[end + len(b"end_header\n"):]

    fmt = next((ln for ln in header_lines if ln.startswith("format ")), None)
    if fmt is None or "binary_little_endian" not in fmt:
        raise PlyHeaderError(f"{path}: only binary_little_endian PLY is supported")
    rgb_colors = any(ln.strip() == f"comment {_RGB_COMMENT}" for ln in header_lines)
    role_comment = next(
        (ln.split("=", 1)[1] for ln in header_lines if ln.startswith("comment role=")), None
    )
    if role_comment in ("surface", "noise"):
        role = Role(role_comment)

    n_vertex = None
    props = []
    current_element = None
    for ln in header_lines:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "element":
            current_element = parts[1]
            if parts[1] == "vertex":
                n_vertex = int(parts[2])
        elif parts[0] == "property" and current_element == "vertex":
            if parts[1] == "list":
                raise PlyPropertyError(f"{path}: list properties are not supported")
            if parts[1] not in _PLY_TYPES:
                raise PlyPropertyError(f"{path}: unknown property type {parts[1]!r}")
            props.append((parts[2], parts[1]))
    if n_vertex is None:
        raise PlyHeaderError(f"{path}: no vertex element")

    names = [p[0] for p in props]
    for needed in ["x", "y", "z", "opacity", "scale_0", "rot_0", "f_dc_0"]:
        if needed not in names:
            raise PlyPropertyError(f"{path}: missing required property {needed!r}")
    dtype = np.dtype([(name, _PLY_TYPES[typ][0]) for name, typ in props])
    expected = n_vertex * dtype.itemsize
    if len(payload) < expected:
        raise PlyPayloadError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected})"
        )
    rows = np.frombuffer(payload[:expected], dtype=dtype, count=n_vertex)

    def col(name):
        return rows[name].astype(np.float64)

    means = np.column_stack([col("x"), col("y"), col("z")])
    f_dc = np.column_stack([col("f_dc_0"), col("f_dc_1"), col("f_dc_2")])
    colors = f_dc if rgb_colors else SH_C0 * f_dc + 0.5
    return GaussianSet(
        means=means,
        log_scales=np.column_stack([col(f"scale_{i}") for i in range(3)]),
        rotations=np.column_stack([col(f"rot_{i}") for i in range(4)]),
        opacity_logits=col("opacity"),
        colors=colors,
        role=role,
    )


@dataclass
class AssetFilePair:
    """Paths of a trained asset: surface PLY, optional infill PLY, sidecar."""

    surface_path: Path
    infill_path: Path | None
    metadata_path: Path


def config_hash(config) -> str:
    payload = json.dumps(
        {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(config).items()},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def write_asset(
    out_dir,
    surface: GaussianSet,
    infill: GaussianSet | None,
    config,
    iteration: int,
) -> AssetFilePair:
    """Write the surface/infill PLY pair with a metadata sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    surface_path = out_dir / "surface.ply"
    ply_write(surface, surface_path)
    infill_path = None
    if infill is not None:
        infill_path = out_dir / "infill.ply"
        ply_write(infill, infill_path)
    metadata_path = out_dir / "meta.json"
    meta = {
        "seed": config.seed,
        "config_hash": config_hash(config),
        "iteration": iteration,
        "n_surface": len(surface),
        "n_infill": 0 if infill is None else len(infill),
    }
    metadata_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return AssetFilePair(surface_path, infill_path, metadata_path)
