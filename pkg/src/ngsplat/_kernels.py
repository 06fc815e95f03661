"""Numba kernels for the software rasterizer.

All kernels are single-threaded and allocation-free in their inner loops,
which makes renders and gradients bit-deterministic regardless of the host
thread count. Splats arrive pre-sorted by depth; tile lists preserve that
order so every pixel blends front-to-back.
"""

import numpy as np
from numba import njit

TILE = 16


@njit(cache=True)
def project_splats(
    means,
    log_scales,
    quats,
    op_logits,
    Rwc,
    twc,
    fx,
    fy,
    cx,
    cy,
    width,
    height,
    znear,
    cov_reg,
    footprint,
):
    """EWA projection of every Gaussian to screen space.

    Returns per-splat validity, pixel means, depth, 2x2 covariance entries
    (a=V00, b=V01, d=V11), activated opacity, footprint radius and the
    camera-space position (cached for the backward chain).
    """
    n = means.shape[0]
    valid = np.zeros(n, dtype=np.bool_)
    u = np.zeros(n)
    v = np.zeros(n)
    z = np.zeros(n)
    va = np.zeros(n)
    vb = np.zeros(n)
    vd = np.zeros(n)
    op = np.zeros(n)
    radius = np.zeros(n)
    pcam = np.zeros((n, 3))
    for i in range(n):
        px = Rwc[0, 0] * means[i, 0] + Rwc[0, 1] * means[i, 1] + Rwc[0, 2] * means[i, 2] + twc[0]
        py = Rwc[1, 0] * means[i, 0] + Rwc[1, 1] * means[i, 1] + Rwc[1, 2] * means[i, 2] + twc[1]
        pz = Rwc[2, 0] * means[i, 0] + Rwc[2, 1] * means[i, 1] + Rwc[2, 2] * means[i, 2] + twc[2]
        pcam[i, 0] = px
        pcam[i, 1] = py
        pcam[i, 2] = pz
        if pz <= znear:
            continue
        ui = fx * px / pz + cx
        vi = fy * py / pz + cy

        # Normalized quaternion -> rotation.
        qw, qx, qy, qz = quats[i, 0], quats[i, 1], quats[i, 2], quats[i, 3]
        qn = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if qn < 1e-12:
            continue
        qw /= qn
        qx /= qn
        qy /= qn
        qz /= qn
        r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
        r01 = 2.0 * (qx * qy - qw * qz)
        r02 = 2.0 * (qx * qz + qw * qy)
        r10 = 2.0 * (qx * qy + qw * qz)
        r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
        r12 = 2.0 * (qy * qz - qw * qx)
        r20 = 2.0 * (qx * qz - qw * qy)
        r21 = 2.0 * (qy * qz + qw * qx)
        r22 = 1.0 - 2.0 * (qx * qx + qy * qy)
        s0 = np.exp(log_scales[i, 0])
        s1 = np.exp(log_scales[i, 1])
        s2 = np.exp(log_scales[i, 2])
        # M = R diag(s); Sigma_w = M M^T.
        m00, m01, m02 = r00 * s0, r01 * s1, r02 * s2
        m10, m11, m12 = r10 * s0, r11 * s1, r12 * s2
        m20, m21, m22 = r20 * s0, r21 * s1, r22 * s2
        sw00 = m00 * m00 + m01 * m01 + m02 * m02
        sw01 = m00 * m10 + m01 * m11 + m02 * m12
        sw02 = m00 * m20 + m01 * m21 + m02 * m22
        sw11 = m10 * m10 + m11 * m11 + m12 * m12
        sw12 = m10 * m20 + m11 * m21 + m12 * m22
        sw22 = m20 * m20 + m21 * m21 + m22 * m22
        # Sigma_c = Rwc Sigma_w Rwc^T.
        t00 = Rwc[0, 0] * sw00 + Rwc[0, 1] * sw01 + Rwc[0, 2] * sw02
        t01 = Rwc[0, 0] * sw01 + Rwc[0, 1] * sw11 + Rwc[0, 2] * sw12
        t02 = Rwc[0, 0] * sw02 + Rwc[0, 1] * sw12 + Rwc[0, 2] * sw22
        t10 = Rwc[1, 0] * sw00 + Rwc[1, 1] * sw01 + Rwc[1, 2] * sw02
        t11 = Rwc[1, 0] * sw01 + Rwc[1, 1] * sw11 + Rwc[1, 2] * sw12
        t12 = Rwc[1, 0] * sw02 + Rwc[1, 1] * sw12 + Rwc[1, 2] * sw22
        t20 = Rwc[2, 0] * sw00 + Rwc[2, 1] * sw01 + Rwc[2, 2] * sw02
        t21 = Rwc[2, 0] * sw01 + Rwc[2, 1] * sw11 + Rwc[2, 2] * sw12
        t22 = Rwc[2, 0] * sw02 + Rwc[2, 1] * sw12 + Rwc[2, 2] * sw22
        sc00 = t00 * Rwc[0, 0] + t01 * Rwc[0, 1] + t02 * Rwc[0, 2]
        sc01 = t00 * Rwc[1, 0] + t01 * Rwc[1, 1] + t02 * Rwc[1, 2]
        sc02 = t00 * Rwc[2, 0] + t01 * Rwc[2, 1] + t02 * Rwc[2, 2]
        sc11 = t10 * Rwc[1, 0] + t11 * Rwc[1, 1] + t12 * Rwc[1, 2]
        sc12 = t10 * Rwc[2, 0] + t11 * Rwc[2, 1] + t12 * Rwc[2, 2]
        sc22 = t20 * Rwc[2, 0] + t21 * Rwc[2, 1] + t22 * Rwc[2, 2]
        # Local affine Jacobian of the perspective projection.
        j00 = fx / pz
        j02 = -fx * px / (pz * pz)
        j11 = fy / pz
        j12 = -fy * py / (pz * pz)
        # cov2d = J Sigma_c J^T + cov_reg * I.
        a = (
            j00 * (j00 * sc00 + j02 * sc02)
            + j02 * (j00 * sc02 + j02 * sc22)
            + cov_reg
        )
        b = j00 * (j11 * sc01 + j12 * sc02) + j02 * (j11 * sc12 + j12 * sc22)
        d = (
            j11 * (j11 * sc11 + j12 * sc12)
            + j12 * (j11 * sc12 + j12 * sc22)
            + cov_reg
        )
        det = a * d - b * b
        if det <= 0.0:
            continue
        mid = 0.5 * (a + d)
        disc = np.sqrt(max(0.25 * (a - d) * (a - d) + b * b, 0.0))
        lam_max = mid + disc
        r = footprint * np.sqrt(lam_max)
        if ui + r < 0.0 or ui - r > width - 1.0 or vi + r < 0.0 or vi - r > height - 1.0:
            continue
        valid[i] = True
        u[i] = ui
        v[i] = vi
        z[i] = pz
        va[i] = a
        vb[i] = b
        vd[i] = d
        op[i] = 1.0 / (1.0 + np.exp(-op_logits[i]))
        radius[i] = r
    return valid, u, v, z, va, vb, vd, op, radius, pcam


@njit(cache=True)
def build_tile_lists(order, u, v, radius, width, height):
    """Bin depth-sorted splats into image tiles; lists stay depth-ordered."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    counts = np.zeros(ntx * nty, dtype=np.int64)
    n = order.shape[0]
    for k in range(n):
        i = order[k]
        x0 = int(max(np.floor((u[i] - radius[i]) / TILE), 0))
        x1 = int(min(np.floor((u[i] + radius[i]) / TILE), ntx - 1))
        y0 = int(max(np.floor((v[i] - radius[i]) / TILE), 0))
        y1 = int(min(np.floor((v[i] + radius[i]) / TILE), nty - 1))
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                counts[ty * ntx + tx] += 1
    offsets = np.zeros(ntx * nty + 1, dtype=np.int64)
    for t in range(ntx * nty):
        offsets[t + 1] = offsets[t] + counts[t]
    items = np.zeros(offsets[-1], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for k in range(n):
        i = order[k]
        x0 = int(max(np.floor((u[i] - radius[i]) / TILE), 0))
        x1 = int(min(np.floor((u[i] + radius[i]) / TILE), ntx - 1))
        y0 = int(max(np.floor((v[i] - radius[i]) / TILE), 0))
        y1 = int(min(np.floor((v[i] + radius[i]) / TILE), nty - 1))
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                t = ty * ntx + tx
                items[cursor[t]] = i
                cursor[t] += 1
    return offsets, items


@njit(cache=True)
def count_contributions(
    tile_offsets, tile_items, u, v, va, vb, vd, op, radius, width, height, alpha_skip, term_t
):
    counts = np.zeros(width * height, dtype=np.int64)
    ntx = (width + TILE - 1) // TILE
    for py in range(height):
        ty = py // TILE
        for px in range(width):
            t = ty * ntx + px // TILE
            trans = 1.0
            c = 0
            for k in range(tile_offsets[t], tile_offsets[t + 1]):
                i = tile_items[k]
                dx = px - u[i]
                dy = py - v[i]
                if dx * dx + dy * dy > radius[i] * radius[i]:
                    continue
                det = va[i] * vd[i] - vb[i] * vb[i]
                p = -0.5 * (vd[i] * dx * dx - 2.0 * vb[i] * dx * dy + va[i] * dy * dy) / det
                if p > 0.0:
                    p = 0.0
                alpha = op[i] * np.exp(p)
                if alpha < alpha_skip:
                    continue
                c += 1
                trans *= 1.0 - alpha
                if trans < term_t:
                    break
            counts[py * width + px] = c
    return counts


@njit(cache=True)
def render_fill(
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
    width,
    height,
    alpha_skip,
    term_t,
    background,
    offsets,
    rec_ids,
    rec_alphas,
    rec_trans,
    want_role,
):
    color = np.zeros((height, width, 3))
    alpha_ch = np.zeros((height, width))
    depth_ch = np.zeros((height, width))
    role_ch = np.zeros((height, width))
    ntx = (width + TILE - 1) // TILE
    for py in range(height):
        ty = py // TILE
        for px in range(width):
            t = ty * ntx + px // TILE
            pix = py * width + px
            trans = 1.0
            cursor = offsets[pix]
            r0 = g0 = b0 = 0.0
            dsum = 0.0
            role = 0.0
            for k in range(tile_offsets[t], tile_offsets[t + 1]):
                i = tile_items[k]
                dx = px - u[i]
                dy = py - v[i]
                if dx * dx + dy * dy > radius[i] * radius[i]:
                    continue
                det = va[i] * vd[i] - vb[i] * vb[i]
                p = -0.5 * (vd[i] * dx * dx - 2.0 * vb[i] * dx * dy + va[i] * dy * dy) / det
                if p > 0.0:
                    p = 0.0
                alpha = op[i] * np.exp(p)
                if alpha < alpha_skip:
                    continue
                w = alpha * trans
                r0 += w * colors[i, 0]
                g0 += w * colors[i, 1]
                b0 += w * colors[i, 2]
                dsum += w * z[i]
                if want_role and is_noise[i]:
                    role += w
                rec_ids[cursor] = i
                rec_alphas[cursor] = alpha
                rec_trans[cursor] = trans
                cursor += 1
                trans *= 1.0 - alpha
                if trans < term_t:
                    break
            color[py, px, 0] = r0 + trans * background[0]
            color[py, px, 1] = g0 + trans * background[1]
            color[py, px, 2] = b0 + trans * background[2]
            alpha_ch[py, px] = 1.0 - trans
            depth_ch[py, px] = dsum
            role_ch[py, px] = role
    return color, alpha_ch, depth_ch, role_ch


@njit(cache=True)
def blend_backward(
    offsets,
    rec_ids,
    rec_alphas,
    rec_trans,
    u,
    v,
    va,
    vb,
    vd,
    op,
    colors,
    width,
    height,
    background,
    d_color,
    d_alpha,
    g_color,
    g_op,
    g_mean2d,
    g_cov2d,
):
    """Accumulate per-splat screen-space gradients from the blend record.

    Walks each pixel's record back-to-front; B carries the composited color
    behind the current splat (background included) and gsuf the suffix
    transparency product, so no division by (1 - alpha) is needed.
    """
    for py in range(height):
        for px in range(width):
            pix = py * width + px
            lo = offsets[pix]
            hi = offsets[pix + 1]
            if hi == lo and d_alpha[py, px] == 0.0:
                continue
            gr = d_color[py, px, 0]
            gg = d_color[py, px, 1]
            gb = d_color[py, px, 2]
            ga = d_alpha[py, px]
            br = background[0]
            bgr = background[1]
            bb = background[2]
            gsuf = 1.0
            for k in range(hi - 1, lo - 1, -1):
                i = rec_ids[k]
                alpha = rec_alphas[k]
                tr = rec_trans[k]
                cr = colors[i, 0]
                cg = colors[i, 1]
                cb = colors[i, 2]
                # d L / d alpha_k.
                dalpha = tr * (gr * (cr - br) + gg * (cg - bgr) + gb * (cb - bb))
                dalpha += ga * tr * gsuf
                w = alpha * tr
                g_color[i, 0] += gr * w
                g_color[i, 1] += gg * w
                g_color[i, 2] += gb * w
                g_op[i] += dalpha * alpha / op[i]
                gp = dalpha * alpha
                dx = px - u[i]
                dy = py - v[i]
                det = va[i] * vd[i] - vb[i] * vb[i]
                # q = inv(cov2d) @ d.
                qx = (vd[i] * dx - vb[i] * dy) / det
                qy = (-vb[i] * dx + va[i] * dy) / det
                g_mean2d[i, 0] += gp * qx
                g_mean2d[i, 1] += gp * qy
                g_cov2d[i, 0] += 0.5 * gp * qx * qx
                g_cov2d[i, 1] += 0.5 * gp * qx * qy
                g_cov2d[i, 2] += 0.5 * gp * qy * qy
                # Move the "behind" accumulators one splat forward.
                br = alpha * cr + (1.0 - alpha) * br
                bgr = alpha * cg + (1.0 - alpha) * bgr
                bb = alpha * cb + (1.0 - alpha) * bb
                gsuf *= 1.0 - alpha


@njit(cache=True)
def splat_param_backward(
    valid,
    means,
    log_scales,
    quats,
    pcam,
    Rwc,
    fx,
    fy,
    g_mean2d,
    g_cov2d,
    g_means,
    g_log_scales,
    g_quats,
):
    """Chain screen-space gradients to world-space Gaussian parameters."""
    n = means.shape[0]
    for i in range(n):
        if not valid[i]:
            continue
        x = pcam[i, 0]
        y = pcam[i, 1]
        zc = pcam[i, 2]
        j00 = fx / zc
        j02 = -fx * x / (zc * zc)
        j11 = fy / zc
        j12 = -fy * y / (zc * zc)

        qw, qx, qy, qz = quats[i, 0], quats[i, 1], quats[i, 2], quats[i, 3]
        qn = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        qw /= qn
        qx /= qn
        qy /= qn
        qz /= qn
        R3 = np.empty((3, 3))
        R3[0, 0] = 1.0 - 2.0 * (qy * qy + qz * qz)
        R3[0, 1] = 2.0 * (qx * qy - qw * qz)
        R3[0, 2] = 2.0 * (qx * qz + qw * qy)
        R3[1, 0] = 2.0 * (qx * qy + qw * qz)
        R3[1, 1] = 1.0 - 2.0 * (qx * qx + qz * qz)
        R3[1, 2] = 2.0 * (qy * qz - qw * qx)
        R3[2, 0] = 2.0 * (qx * qz - qw * qy)
        R3[2, 1] = 2.0 * (qy * qz + qw * qx)
        R3[2, 2] = 1.0 - 2.0 * (qx * qx + qy * qy)
        s = np.empty(3)
        s[0] = np.exp(log_scales[i, 0])
        s[1] = np.exp(log_scales[i, 1])
        s[2] = np.exp(log_scales[i, 2])
        M = np.empty((3, 3))
        for r in range(3):
            for c in range(3):
                M[r, c] = R3[r, c] * s[c]
        Sw = M @ M.T
        Sc = Rwc @ Sw @ Rwc.T

        gV = np.empty((2, 2))
        gV[0, 0] = g_cov2d[i, 0]
        gV[0, 1] = g_cov2d[i, 1]
        gV[1, 0] = g_cov2d[i, 1]
        gV[1, 1] = g_cov2d[i, 2]

        J = np.zeros((2, 3))
        J[0, 0] = j00
        J[0, 2] = j02
        J[1, 1] = j11
        J[1, 2] = j12

        gSc = J.T @ gV @ J
        gJ = 2.0 * (gV @ (J @ Sc))
        gSw = Rwc.T @ gSc @ Rwc
        gM = 2.0 * (gSw @ M)

        for c in range(3):
            gs = gM[0, c] * R3[0, c] + gM[1, c] * R3[1, c] + gM[2, c] * R3[2, c]
            g_log_scales[i, c] = gs * s[c]

        gR = np.empty((3, 3))
        for r in range(3):
            for c in range(3):
                gR[r, c] = gM[r, c] * s[c]

        # dR/d(unit quaternion) contractions.
        gw = 2.0 * (
            -qz * gR[0, 1]
            + qy * gR[0, 2]
            + qz * gR[1, 0]
            - qx * gR[1, 2]
            - qy * gR[2, 0]
            + qx * gR[2, 1]
        )
        gx = 2.0 * (
            qy * gR[0, 1]
            + qz * gR[0, 2]
            + qy * gR[1, 0]
            - 2.0 * qx * gR[1, 1]
            - qw * gR[1, 2]
            + qz * gR[2, 0]
            + qw * gR[2, 1]
            - 2.0 * qx * gR[2, 2]
        )
        gy = 2.0 * (
            -2.0 * qy * gR[0, 0]
            + qx * gR[0, 1]
            + qw * gR[0, 2]
            + qx * gR[1, 0]
            + qz * gR[1, 2]
            - qw * gR[2, 0]
            + qz * gR[2, 1]
            - 2.0 * qy * gR[2, 2]
        )
        gz = 2.0 * (
            -2.0 * qz * gR[0, 0]
            - qw * gR[0, 1]
            + qx * gR[0, 2]
            + qw * gR[1, 0]
            - 2.0 * qz * gR[1, 1]
            + qy * gR[1, 2]
            + qx * gR[2, 0]
            + qy * gR[2, 1]
        )
        # Back through the normalization q_hat = q / |q|.
        dot = gw * qw + gx * qx + gy * qy + gz * qz
        g_quats[i, 0] = (gw - dot * qw) / qn
        g_quats[i, 1] = (gx - dot * qx) / qn
        g_quats[i, 2] = (gy - dot * qy) / qn
        g_quats[i, 3] = (gz - dot * qz) / qn

        # Camera-space mean gradient: pixel-mean path plus the Jacobian path.
        gu = g_mean2d[i, 0]
        gv = g_mean2d[i, 1]
        gpx = gu * fx / zc
        gpy = gv * fy / zc
        gpz = -gu * fx * x / (zc * zc) - gv * fy * y / (zc * zc)
        gpx += gJ[0, 2] * (-fx / (zc * zc))
        gpy += gJ[1, 2] * (-fy / (zc * zc))
        gpz += (
            gJ[0, 0] * (-fx / (zc * zc))
            + gJ[0, 2] * (2.0 * fx * x / (zc * zc * zc))
            + gJ[1, 1] * (-fy / (zc * zc))
            + gJ[1, 2] * (2.0 * fy * y / (zc * zc * zc))
        )
        for c in range(3):
            g_means[i, c] = Rwc[0, c] * gpx + Rwc[1, c] * gpy + Rwc[2, c] * gpz


@njit(cache=True)
def depth_crossing_map(
    tile_offsets, tile_items, u, v, z, va, vb, vd, op, radius, width, height, alpha_skip, tau
):
    """Depth of the first splat at which cumulative opacity reaches tau."""
    out = np.full((height, width), np.inf)
    ntx = (width + TILE - 1) // TILE
    for py in range(height):
        ty = py // TILE
        for px in range(width):
            t = ty * ntx + px // TILE
            trans = 1.0
            for k in range(tile_offsets[t], tile_offsets[t + 1]):
                i = tile_items[k]
                dx = px - u[i]
                dy = py - v[i]
                if dx * dx + dy * dy > radius[i] * radius[i]:
                    continue
                det = va[i] * vd[i] - vb[i] * vb[i]
                p = -0.5 * (vd[i] * dx * dx - 2.0 * vb[i] * dx * dy + va[i] * dy * dy) / det
                if p > 0.0:
                    p = 0.0
                alpha = op[i] * np.exp(p)
                if alpha < alpha_skip:
                    continue
                trans *= 1.0 - alpha
                if 1.0 - trans >= tau:
                    out[py, px] = z[i]
                    break
    return out
