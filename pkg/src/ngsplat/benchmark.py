"""Transparency quantification: recolored transmittance maps, the surface
opacity score (SOS) and novel-view metrics with/without an inserted infill.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import Camera, FreezeFlags, GaussianSet, Role
from .errors import InvalidParameterError
from .losses import psnr, ssim
from .rasterizer import RenderOptions, render

SOS_EPSILON = 1e-10
GREEN = np.array([0.0, 1.0, 0.0])
RED = np.array([1.0, 0.0, 0.0])


@dataclass
class MetricsReport:
    """Per-view and aggregate metrics; starred values include the infill."""

    view_names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    psnr_star: list = field(default_factory=list)
    ssim_star: list = field(default_factory=list)
    sos: list = field(default_factory=list)
    n_surface: int = 0
    n_infill: int = 0

    def _mean(self, values):
        return float(np.mean(values)) if values else float("nan")

    @property
    def mean_psnr(self):
        return self._mean(self.psnr)

    @property
    def mean_ssim(self):
        return self._mean(self.ssim)

    @property
    def mean_psnr_star(self):
        return self._mean(self.psnr_star)

    @property
    def mean_ssim_star(self):
        return self._mean(self.ssim_star)

    @property
    def mean_sos(self):
        return self._mean([s for s in self.sos if np.isfinite(s)])

    def rows(self) -> list:
        out = []
        for i, name in enumerate(self.view_names):
            out.append(
                {
                    "view": name,
                    "psnr": self.psnr[i],
                    "ssim": self.ssim[i],
                    "psnr_star": self.psnr_star[i] if self.psnr_star else None,
                    "ssim_star": self.ssim_star[i] if self.ssim_star else None,
                    "sos": self.sos[i] if self.sos else None,
                }
            )
        return out

    def aggregate(self) -> dict:
        return {
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "mean_psnr_star": self.mean_psnr_star,
            "mean_ssim_star": self.mean_ssim_star,
            "mean_sos": self.mean_sos,
            "n_surface": self.n_surface,
            "n_infill": self.n_infill,
        }


def recolor(gset: GaussianSet, color) -> GaussianSet:
    """Copy of the set with every Gaussian painted one solid color."""
    out = gset.copy()
    out.colors[:] = np.asarray(color, dtype=np.float64)
    return out


def insert_infill(asset: GaussianSet, infill: GaussianSet):
    """Pair a (possibly foreign) surface asset with a pre-trained infill.

    Returns (surface, infill) copies ready for joint rendering; the infill
    comes back fully frozen. Warns when the two bounding boxes are disjoint,
    which almost always means mismatched world frames.
    """
    surface = asset.copy()
    noise = infill.copy()
    noise.role = Role.NOISE
    noise.freeze = FreezeFlags.all_frozen()
    if len(surface) and len(noise):
        s_lo, s_hi = surface.means.min(axis=0), surface.means.max(axis=0)
        n_lo, n_hi = noise.means.min(axis=0), noise.means.max(axis=0)
        if np.any(n_lo > s_hi) or np.any(n_hi < s_lo):
            warnings.warn(
                "infill bounding box is disjoint from the surface asset; "
                "check that both live in the same world frame",
                stacklevel=2,
            )
    return surface, noise


def transmittance_map(
    surface: GaussianSet,
    infill: GaussianSet,
    camera: Camera,
    mask: np.ndarray | None = None,
    mask_source: str = "auto",
):
    """Render green infill behind a red surface; the green channel is the
    per-pixel surface transmittance T.

    The measurement mask M is, in order of preference: the provided
    segmentation mask, the rendered alpha channel, or the red-surface
    coverage alone.
    """
    red_surface = recolor(surface, RED)
    green_infill = recolor(infill, GREEN)
    opts = RenderOptions(background=(0.0, 0.0, 0.0))
    out = render(red_surface, green_infill, camera, opts)
    t_map = out.color[:, :, 1]
    if mask_source == "auto":
        mask_source = "mask" if mask is not None else "alpha"
    if mask_source == "mask":
        if mask is None:
            raise InvalidParameterError("mask_source='mask' but no mask given")
        m_map = (mask > 0.5).astype(np.float64)
    elif mask_source == "alpha":
        m_map = out.alpha.copy()
    elif mask_source == "surface":
        solo = render(red_surface, None, camera, opts)
        m_map = solo.alpha.copy()
    else:
        raise InvalidParameterError(f"unknown mask_source {mask_source!r}")
    return t_map, m_map


def sos(t_maps, m_maps, epsilon: float = SOS_EPSILON):
    """Surface opacity score per view plus the mean over scored views.

    SOS_i = log(sum T / sum M + eps) / log(eps), clamped to [0, 1]; views
    whose mask is empty are skipped with a warning (their entry is NaN).
    """
    scores = []
    for i, (t_map, m_map) in enumerate(zip(t_maps, m_maps)):
        m_sum = float(np.sum(m_map))
        if m_sum <= 0.0:
            warnings.warn(f"view {i}: empty mask, skipping SOS", stacklevel=2)
            scores.append(float("nan"))
            continue
        ratio = float(np.sum(t_map)) / m_sum
        val = np.log(ratio + epsilon) / np.log(epsilon)
        scores.append(float(np.clip(val, 0.0, 1.0)))
    finite = [s for s in scores if np.isfinite(s)]
    mean = float(np.mean(finite)) if finite else float("nan")
    return scores, mean


def evaluate(
    surface: GaussianSet,
    infill: GaussianSet | None,
    dataset,
    background=(0.0, 0.0, 0.0),
    views: list | None = None,
) -> MetricsReport:
    """Novel-view metrics on the test split, with starred variants and SOS
    when an infill is supplied."""
    if views is None:
        views = dataset.test_views
    opts = RenderOptions(background=tuple(background))
    report = MetricsReport(
        n_surface=len(surface), n_infill=len(infill) if infill is not None else 0
    )
    t_maps, m_maps = [], []
    for view in views:
        report.view_names.append(view.name)
        out = render(surface, None, view.camera, opts)
        report.psnr.append(psnr(out.color, view.image))
        report.ssim.append(ssim(out.color, view.image, with_grad=False)[0])
        if infill is not None and len(infill):
            green = recolor(infill, GREEN)
            starred = render(surface, green, view.camera, opts)
            report.psnr_star.append(psnr(starred.color, view.image))
            report.ssim_star.append(ssim(starred.color, view.image, with_grad=False)[0])
            t_map, m_map = transmittance_map(surface, infill, view.camera, mask=view.mask)
            t_maps.append(t_map)
            m_maps.append(m_map)
        else:
            report.psnr_star.append(report.psnr[-1])
            report.ssim_star.append(report.ssim[-1])
    if t_maps:
        scores, _ = sos(t_maps, m_maps)
        report.sos = scores
    return report
