"""Rasterizer oracles: projection closed forms, blend conservation,
decomposition identity, sorting, culling and the depth map."""

import numpy as np
import pytest

from ngsplat.core import Camera, Gaussian3D, GaussianSet, Role, logit
from ngsplat.rasterizer import (
    COV2D_REGULARIZATION,
    RenderOptions,
    decompose_pixel,
    project,
    render,
    render_backward,
    surface_depth_map,
)


def make_camera(width=32, height=32, focal=60.0):
    return Camera(
        fx=focal, fy=focal, cx=(width - 1) / 2, cy=(height - 1) / 2,
        width=width, height=height, rotation=np.eye(3), translation=np.zeros(3),
    )


def isotropic(mean, sigma, opacity, color, quat=(1.0, 0, 0, 0)):
    return Gaussian3D(
        mean=np.asarray(mean, dtype=np.float64),
        log_scale=np.full(3, np.log(sigma)),
        rotation=np.asarray(quat, dtype=np.float64),
        opacity_logit=logit(opacity),
        color=np.asarray(color, dtype=np.float64),
    )


def as_set(gaussians, role=Role.SURFACE):
    return GaussianSet.from_gaussians(gaussians, role)


def random_set(rng, n, depth_range=(2.0, 4.0), spread=0.4):
    gs = []
    for _ in range(n):
        gs.append(
            isotropic(
                mean=[rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                      rng.uniform(*depth_range)],
                sigma=rng.uniform(0.05, 0.2),
                opacity=rng.uniform(0.2, 0.9),
                color=rng.uniform(0, 1, 3),
            )
        )
    return as_set(gs)


class TestProjection:
    def test_on_axis_closed_form(self):
        # An isotropic Gaussian on the optical axis projects to an isotropic
        # 2D covariance (focal * sigma / depth)^2 + regularization.
        cam = make_camera()
        sigma, depth = 0.1, 2.0
        s = project(isotropic([0, 0, depth], sigma, 0.7, [1, 0, 0]), cam)
        expected = (cam.fx * sigma / depth) ** 2 + COV2D_REGULARIZATION
        assert s.pixel_mean == pytest.approx([cam.cx, cam.cy], abs=1e-9)
        assert s.cov2d[0, 0] == pytest.approx(expected, rel=1e-6)
        assert s.cov2d[1, 1] == pytest.approx(expected, rel=1e-6)
        assert abs(s.cov2d[0, 1]) < 1e-9
        assert s.depth == pytest.approx(depth)
        assert s.base_opacity == pytest.approx(0.7, rel=1e-12)

    def test_behind_camera_is_culled(self):
        cam = make_camera()
        assert project(isotropic([0, 0, -1.0], 0.1, 0.5, [1, 1, 1]), cam) is None

    def test_pixel_mean_matches_pinhole(self):
        cam = make_camera()
        g = isotropic([0.3, -0.2, 2.5], 0.05, 0.5, [1, 1, 1])
        s = project(g, cam)
        assert s.pixel_mean[0] == pytest.approx(cam.fx * 0.3 / 2.5 + cam.cx, rel=1e-9)
        assert s.pixel_mean[1] == pytest.approx(cam.fy * -0.2 / 2.5 + cam.cy, rel=1e-9)


class TestRenderForward:
    def test_empty_scene_is_background(self):
        cam = make_camera()
        out = render(as_set([]), None, cam, RenderOptions(background=(0.2, 0.4, 0.6)))
        assert np.allclose(out.color, [0.2, 0.4, 0.6])
        assert np.all(out.alpha == 0.0)

    def test_two_splat_blend_closed_form(self):
        cam = make_camera()
        front = isotropic([0, 0, 2.0], 0.5, 0.6, [1, 0, 0])
        back = isotropic([0, 0, 3.0], 0.5, 0.8, [0, 1, 0])
        out = render(as_set([front, back]), None, cam, RenderOptions())
        cy, cx = int(cam.cy), int(cam.cx)
        ids, alphas, trans = out.blend_record.at(cy, cx)
        assert list(ids) == [0, 1]  # depth order, front first
        expect = alphas[0] * np.array([1, 0, 0]) + (1 - alphas[0]) * alphas[1] * np.array([0, 1, 0])
        assert np.allclose(out.color[cy, cx], expect, atol=1e-12)
        assert out.alpha[cy, cx] == pytest.approx(
            1 - (1 - alphas[0]) * (1 - alphas[1]), abs=1e-12
        )

    def test_blend_weight_conservation(self):
        # Per pixel: sum of blend weights + final transmittance = 1.
        rng = np.random.default_rng(7)
        cam = make_camera()
        out = render(random_set(rng, 30), None, cam, RenderOptions())
        for y in range(cam.height):
            for x in range(cam.width):
                _, alphas, trans = out.blend_record.at(y, x)
                weights = alphas * trans
                final_trans = trans[-1] * (1 - alphas[-1]) if len(alphas) else 1.0
                assert abs(weights.sum() + final_trans - 1.0) < 1e-6

    def test_depth_sort_ties_broken_by_source_id(self):
        cam = make_camera()
        a = isotropic([0, 0, 2.0], 0.3, 0.5, [1, 0, 0])
        b = isotropic([0.01, 0, 2.0], 0.3, 0.5, [0, 1, 0])
        out = render(as_set([a, b]), None, cam, RenderOptions())
        ids, _, _ = out.blend_record.at(int(cam.cy), int(cam.cx))
        assert list(ids) == [0, 1]

    def test_early_termination(self):
        # A stack of near-opaque splats: the record stops once transmittance
        # falls below the threshold, so far-away splats never contribute.
        cam = make_camera()
        gs = [isotropic([0, 0, 2.0 + 0.1 * i], 0.5, 0.99, [1, 1, 1]) for i in range(10)]
        out = render(as_set(gs), None, cam, RenderOptions(termination_threshold=1e-4))
        ids, alphas, trans = out.blend_record.at(int(cam.cy), int(cam.cx))
        assert len(ids) < 10
        assert trans[-1] * (1 - alphas[-1]) < 1e-4

    def test_background_composited_through_transmittance(self):
        cam = make_camera()
        g = isotropic([0, 0, 2.0], 0.5, 0.4, [1, 0, 0])
        bg = (0.0, 0.0, 1.0)
        out = render(as_set([g]), None, cam, RenderOptions(background=bg))
        cy, cx = int(cam.cy), int(cam.cx)
        _, alphas, _ = out.blend_record.at(cy, cx)
        expect = alphas[0] * np.array([1, 0, 0]) + (1 - alphas[0]) * np.array(bg)
        assert np.allclose(out.color[cy, cx], expect, atol=1e-12)

    def test_role_transmittance_accumulates_noise_terms(self):
        cam = make_camera()
        surf = as_set([isotropic([0, 0, 2.0], 0.5, 0.5, [1, 0, 0])])
        noise = as_set([isotropic([0, 0, 3.0], 0.5, 0.9, [0, 1, 0])], Role.NOISE)
        out = render(surf, noise, cam, RenderOptions(with_role_transmittance=True))
        # the noise contribution equals its blend weight = the green channel
        assert np.allclose(out.role_transmittance, out.color[:, :, 1], atol=1e-12)


class TestDecomposition:
    def test_reconstruction_identity(self):
        rng = np.random.default_rng(11)
        cam = make_camera()
        out = render(random_set(rng, 20), None, cam, RenderOptions(background=(0.1, 0.2, 0.3)))
        checked = 0
        for y in range(0, cam.height, 5):
            for x in range(0, cam.width, 5):
                ids, alphas, trans = out.blend_record.at(y, x)
                if len(ids) < 2:
                    continue
                s = len(ids) // 2
                front, leakage = decompose_pixel(out, y, x, s)
                earlier = sum(
                    alphas[k] * trans[k] * out.cache.colors[ids[k]] for k in range(s)
                )
                assert np.allclose(earlier + front + leakage, out.color[y, x], atol=1e-6)
                assert np.allclose(front, alphas[s] * trans[s] * out.cache.colors[ids[s]])
                checked += 1
        assert checked > 5


class TestSurfaceDepthMap:
    def test_first_crossing_depth(self):
        cam = make_camera()
        gs = [
            isotropic([0, 0, 2.0], 0.5, 0.3, [1, 0, 0]),  # not enough alone
            isotropic([0, 0, 2.5], 0.5, 0.9, [0, 1, 0]),  # crossing happens here
        ]
        depth = surface_depth_map(as_set(gs), cam, tau=0.5)
        cy, cx = int(cam.cy), int(cam.cx)
        assert depth[cy, cx] == pytest.approx(2.5, abs=1e-9)

    def test_never_crossing_is_infinite(self):
        cam = make_camera()
        depth = surface_depth_map(as_set([isotropic([0, 0, 2.0], 0.2, 0.2, [1, 1, 1])]),
                                  cam, tau=0.9)
        assert np.all(np.isinf(depth[0, :]))  # corner rows miss the splat

    def test_frozen_groups_get_zero_gradients(self):
        cam = make_camera()
        rng = np.random.default_rng(3)
        surf = random_set(rng, 5)
        from ngsplat.core import FreezeFlags

        surf.freeze = FreezeFlags(means=True, colors=True)
        out = render(surf, None, cam, RenderOptions())
        g, _ = render_backward(out, np.ones_like(out.color), np.zeros_like(out.alpha))
        assert np.all(g.means == 0.0)
        assert np.all(g.colors == 0.0)
        assert np.any(g.opacity_logits != 0.0)
