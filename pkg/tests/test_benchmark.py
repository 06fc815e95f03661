"""SOS endpoints and properties, the transmittance protocol, and infill
insertion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngsplat.benchmark import (
    GREEN,
    RED,
    SOS_EPSILON,
    evaluate,
    insert_infill,
    recolor,
    sos,
    transmittance_map,
)
from ngsplat.core import Camera, GaussianSet, Role, logit
from ngsplat.datasets import synth_scene
from ngsplat.rasterizer import RenderOptions, render

from test_ngs import splat_sphere


def make_camera(size=48, focal=90.0, z=-2.0):
    return Camera(
        fx=focal, fy=focal, cx=(size - 1) / 2, cy=(size - 1) / 2,
        width=size, height=size, rotation=np.eye(3),
        translation=np.array([0.0, 0.0, -z]),
    )


def blob(n=40, radius=0.25, sigma=0.05, opacity=0.95, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    pts = radius * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    pts *= rng.uniform(0, 1, (n, 1)) ** (1 / 3)
    return GaussianSet(
        means=pts,
        log_scales=np.full((n, 3), np.log(sigma)),
        rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
        opacity_logits=np.full(n, logit(opacity)),
        colors=rng.uniform(0, 1, (n, 3)),
        role=Role.NOISE,
    )


class TestSos:
    def test_endpoint_fully_opaque(self):
        t = [np.zeros((8, 8))]
        m = [np.ones((8, 8))]
        scores, mean = sos(t, m)
        assert mean == pytest.approx(1.0, abs=1e-6)

    def test_endpoint_fully_transparent(self):
        scores, mean = sos([np.ones((8, 8))], [np.ones((8, 8))])
        assert mean == pytest.approx(0.0, abs=1e-9)
        assert 0.0 <= scores[0] <= 1.0  # clamped, raw value is ~ -4e-12

    def test_ratio_one_percent(self):
        t = [np.full((10, 10), 0.01)]
        m = [np.ones((10, 10))]
        _, mean = sos(t, m)
        assert mean == pytest.approx(0.2, abs=1e-6)

    def test_empty_mask_skipped_with_warning(self):
        with pytest.warns(UserWarning, match="empty mask"):
            scores, mean = sos(
                [np.zeros((4, 4)), np.full((4, 4), 0.01)],
                [np.zeros((4, 4)), np.ones((4, 4))],
            )
        assert np.isnan(scores[0])
        assert mean == pytest.approx(0.2, abs=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1e-9, 0.5), st.floats(1.1, 100.0))
    def test_strictly_decreasing_in_transmittance(self, ratio, factor):
        m = [np.ones((4, 4))]
        _, lo = sos([np.full((4, 4), ratio)], m)
        _, hi = sos([np.full((4, 4), min(ratio * factor, 1.0))], m)
        assert hi < lo

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 2), st.floats(0.1, 1))
    def test_clamped_to_unit_interval(self, t_val, m_val):
        _, mean = sos([np.full((4, 4), t_val)], [np.full((4, 4), m_val)])
        assert 0.0 <= mean <= 1.0


class TestTransmittanceMap:
    def test_opaque_enclosure_blocks_all_green(self):
        surface = splat_sphere(n=2000, radius=0.5, sigma=0.05, opacity=0.99999)
        surface.means += np.array([0, 0, 2.0])
        infill = blob(seed=1)
        infill.means += np.array([0, 0, 2.0])
        cam = make_camera(z=0.0)
        mask = np.ones((cam.height, cam.width))
        t, m = transmittance_map(surface, infill, cam, mask=mask)
        assert np.all(t <= 1e-6)
        _, mean = sos([t], [m])
        assert mean == pytest.approx(1.0, abs=1e-6)

    def test_no_surface_gives_infill_footprint(self):
        infill = blob(seed=2)
        infill.means += np.array([0, 0, 2.0])
        cam = make_camera(z=0.0)
        empty = GaussianSet.empty()
        t, _ = transmittance_map(surface=empty, infill=infill, camera=cam,
                                 mask_source="alpha")
        green = render(recolor(infill, GREEN), None, cam, RenderOptions())
        assert np.allclose(t, green.alpha, atol=1e-9)

    def test_mask_source_fallbacks(self):
        surface = splat_sphere(n=300, radius=0.4)
        surface.means += np.array([0, 0, 2.0])
        infill = blob(seed=3)
        infill.means += np.array([0, 0, 2.0])
        cam = make_camera(z=0.0)
        _, m_alpha = transmittance_map(surface, infill, cam, mask_source="alpha")
        _, m_surf = transmittance_map(surface, infill, cam, mask_source="surface")
        joint = render(recolor(surface, RED), recolor(infill, GREEN), cam, RenderOptions())
        solo = render(recolor(surface, RED), None, cam, RenderOptions())
        assert np.array_equal(m_alpha, joint.alpha)
        assert np.array_equal(m_surf, solo.alpha)

    def test_recolor_is_a_copy(self):
        s = blob(seed=4)
        before = s.colors.copy()
        painted = recolor(s, GREEN)
        assert np.all(painted.colors == GREEN)
        assert np.array_equal(s.colors, before)


class TestInsertInfill:
    def test_empty_infill_renders_identically(self):
        surface = splat_sphere(n=200)
        surface.means += np.array([0, 0, 2.0])
        cam = make_camera(z=0.0)
        empty = GaussianSet.empty(Role.NOISE)
        s2, n2 = insert_infill(surface, empty)
        a = render(surface, None, cam, RenderOptions())
        b = render(s2, n2, cam, RenderOptions())
        assert np.array_equal(a.color, b.color)

    def test_infill_into_empty_asset_renders_alone(self):
        infill = blob(seed=5)
        infill.means += np.array([0, 0, 2.0])
        cam = make_camera(z=0.0)
        s2, n2 = insert_infill(GaussianSet.empty(), infill)
        joint = render(s2, n2, cam, RenderOptions())
        alone = render(infill, None, cam, RenderOptions())
        assert np.allclose(joint.color, alone.color, atol=1e-12)

    def test_disjoint_bounding_boxes_warn(self):
        surface = splat_sphere(n=50)
        far = blob(seed=6)
        far.means += np.array([100.0, 0, 0])
        with pytest.warns(UserWarning, match="disjoint"):
            insert_infill(surface, far)

    def test_returned_infill_is_frozen_noise(self):
        s, n = insert_infill(splat_sphere(n=50), blob(seed=7))
        assert n.role is Role.NOISE
        assert n.freeze.fully_frozen()


class TestEvaluate:
    def test_starred_equals_plain_when_surface_opaque(self):
        # zero surface transmittance on all masked pixels -> identical renders
        dataset, _ = synth_scene("opaque_sphere", 32, 32, n_views=8, seed=3)
        surface = splat_sphere(n=2500, sigma=0.04, opacity=0.99999)
        infill = blob(n=30, radius=0.2, seed=8)
        report = evaluate(surface, infill, dataset)
        for p, ps in zip(report.psnr, report.psnr_star):
            assert ps == pytest.approx(p, abs=1e-6)
        for s, ss in zip(report.ssim, report.ssim_star):
            assert ss == pytest.approx(s, abs=1e-6)
        assert report.mean_sos == pytest.approx(1.0, abs=1e-3)

    def test_report_shapes_and_counts(self):
        dataset, _ = synth_scene("opaque_sphere", 32, 32, n_views=8, seed=3)
        surface = splat_sphere(n=200)
        report = evaluate(surface, None, dataset)
        assert len(report.psnr) == len(dataset.test_views)
        assert report.n_surface == 200
        assert report.n_infill == 0
        assert report.sos == []  # no infill, no SOS
        rows = report.rows()
        assert rows[0]["view"] == dataset.test_views[0].name
        agg = report.aggregate()
        assert agg["mean_psnr"] == pytest.approx(report.mean_psnr)
