"""numba kernels: camera paths, G-buffer, photon emission/tracing, photon kd-tree.

Conventions shared by everything here:

* one random stream per (frame seed, pixel x, pixel y, sample), or per
  (frame seed, photon index); draws are addressed by counter, so a kernel
  can be run on any tile in any order and give identical bits;
* radiometry is unitless: a light of radiant intensity ``I`` produces
  irradiance ``I cos / d^2``, and photons carry flux in the same units;
* dispersion picks one RGB band at the first dispersive interface with
  probability proportional to the current throughput and carries the
  whole throughput in that band (sum preserved).
"""

from __future__ import annotations

import math
from collections import namedtuple

import numpy as np
from numba import njit

from ..rng import nb_fold, nb_uniform
from .bvh import nb_intersect, nb_occluded
from .optics import JIT, nb_fresnel, nb_refract

PhotonArrays = namedtuple("PhotonArrays", "pos dir power axis")

INV_PI = 1.0 / math.pi
TWO_PI = 2.0 * math.pi
# photon paths through glass rougher than this are dropped (noise bound)
PHOTON_MAX_ROUGHNESS = 0.3


@njit(**JIT)
def _u64(i):
    return np.uint64(i)


@njit(**JIT)
def offset_origin(px, py, pz, nx, ny, nz, dx, dy, dz):
    """Nudge a surface point off the surface, onto the side ``d`` leaves towards."""
    s = 1e-7 * (1.0 + max(abs(px), max(abs(py), abs(pz))))
    if dx * nx + dy * ny + dz * nz < 0.0:
        s = -s
    return px + s * nx, py + s * ny, pz + s * nz


@njit(**JIT)
def onb(nx, ny, nz):
    """Tangent frame around a unit normal (branchless construction)."""
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    return (1.0 + sign * nx * nx * a, sign * b, -sign * nx, b, sign + ny * ny * a, -ny)


@njit(**JIT)
def env_radiance(env, dx, dy, dz):
    h = env.image.shape[0]
    w = env.image.shape[1]
    phi = math.atan2(dy, dx) - env.rot
    u = phi / TWO_PI
    u -= math.floor(u)
    theta = math.acos(min(1.0, max(-1.0, dz)))
    i = min(h - 1, int(theta / math.pi * h))
    j = min(w - 1, int(u * w))
    s = env.scale
    return env.image[i, j, 0] * s, env.image[i, j, 1] * s, env.image[i, j, 2] * s


@njit(**JIT)
def surface(tris, sh, tri, u, v):
    """Hit point, unit geometric normal, unit shading normal (same hemisphere as geometric)."""
    w = 1.0 - u - v
    px = tris.v0[tri, 0] + u * tris.e1[tri, 0] + v * tris.e2[tri, 0]
    py = tris.v0[tri, 1] + u * tris.e1[tri, 1] + v * tris.e2[tri, 1]
    pz = tris.v0[tri, 2] + u * tris.e1[tri, 2] + v * tris.e2[tri, 2]
    gx, gy, gz = sh.ng[tri, 0], sh.ng[tri, 1], sh.ng[tri, 2]
    nx = w * sh.n0[tri, 0] + u * sh.n1[tri, 0] + v * sh.n2[tri, 0]
    ny = w * sh.n0[tri, 1] + u * sh.n1[tri, 1] + v * sh.n2[tri, 1]
    nz = w * sh.n0[tri, 2] + u * sh.n1[tri, 2] + v * sh.n2[tri, 2]
    ln = math.sqrt(nx * nx + ny * ny + nz * nz)
    if ln > 0.0:
        nx /= ln
        ny /= ln
        nz /= ln
    else:
        nx, ny, nz = gx, gy, gz
    return px, py, pz, gx, gy, gz, nx, ny, nz


@njit(**JIT)
def albedo_at(mats, obj, px, py):
    ar, ag, ab = mats.albedo[obj, 0], mats.albedo[obj, 1], mats.albedo[obj, 2]
    tid = mats.tex_id[obj]
    if tid < 0:
        return ar, ag, ab
    s = mats.tex_scale[obj]
    uu = px / s
    uu -= math.floor(uu)
    vv = py / s
    vv -= math.floor(vv)
    w = mats.tex_w[tid]
    h = mats.tex_h[tid]
    j = min(w - 1, int(uu * w))
    i = min(h - 1, int(vv * h))
    k = mats.tex_off[tid] + i * w + j
    return ar * mats.tex_data[k, 0], ag * mats.tex_data[k, 1], ab * mats.tex_data[k, 2]


@njit(**JIT)
def _smith_g1(c, alpha):
    c = abs(c)
    if c >= 1.0:
        return 1.0
    if c <= 0.0:
        return 0.0
    tan2 = (1.0 - c * c) / (c * c)
    return 2.0 / (1.0 + math.sqrt(1.0 + alpha * alpha * tan2))


@njit(**JIT)
def glass_scatter(mats, obj, dx, dy, dz, gx, gy, gz, nx, ny, nz, tr, tg, tb, band,
                  u_band, u_pick, u1, u2, photon):
    """Sample reflection or transmission at a glass surface.

    Returns ``(alive, dx, dy, dz, tr, tg, tb, band)``.
    """
    if mats.dispersive[obj] and band < 0:
        s = tr + tg + tb
        if s <= 0.0:
            return False, dx, dy, dz, tr, tg, tb, band
        x = u_band * s
        band = 0 if x < tr else (1 if x < tr + tg else 2)
        tr = s if band == 0 else 0.0
        tg = s if band == 1 else 0.0
        tb = s if band == 2 else 0.0
    ior = mats.ior[obj, band if band >= 0 else 1]
    entering = dx * gx + dy * gy + dz * gz < 0.0
    thin = mats.thin[obj] != 0
    if thin or entering:
        n1, n2 = 1.0, ior
    else:
        n1, n2 = ior, 1.0
    # normals on the incident side
    if entering:
        fx, fy, fz = nx, ny, nz
        hx, hy, hz = gx, gy, gz
    else:
        fx, fy, fz = -nx, -ny, -nz
        hx, hy, hz = -gx, -gy, -gz
    alpha = mats.rough[obj] * mats.rough[obj]
    mx, my, mz = fx, fy, fz
    if alpha > 0.0:
        tan2 = alpha * alpha * u1 / max(1e-300, 1.0 - u1)
        cm = 1.0 / math.sqrt(1.0 + tan2)
        sm = math.sqrt(max(0.0, 1.0 - cm * cm))
        phi = TWO_PI * u2
        t0, t1, t2, b0, b1, b2 = onb(fx, fy, fz)
        cx = sm * math.cos(phi)
        cy = sm * math.sin(phi)
        mx = cx * t0 + cy * b0 + cm * fx
        my = cx * t1 + cy * b1 + cm * fy
        mz = cx * t2 + cy * b2 + cm * fz
        if dx * mx + dy * my + dz * mz >= 0.0:
            mx, my, mz = fx, fy, fz
    cos_i = -(dx * mx + dy * my + dz * mz)
    f = nb_fresnel(cos_i, n1, n2)
    if f < 1.0:
        if thin:
            # both faces of a thin sheet, with interreflection
            f = 2.0 * f / (1.0 + f)
        f *= mats.spec[obj]
    if u_pick < f:
        ox = dx + 2.0 * cos_i * mx
        oy = dy + 2.0 * cos_i * my
        oz = dz + 2.0 * cos_i * mz
        ln = math.sqrt(ox * ox + oy * oy + oz * oz)
        ox /= ln
        oy /= ln
        oz /= ln
        if ox * hx + oy * hy + oz * hz <= 0.0:
            return False, dx, dy, dz, tr, tg, tb, band
    else:
        if thin:
            ox, oy, oz = dx, dy, dz
        else:
            ok, ox, oy, oz = nb_refract(dx, dy, dz, mx, my, mz, n1 / n2)
            if not ok:
                return False, dx, dy, dz, tr, tg, tb, band
        if ox * hx + oy * hy + oz * hz >= 0.0:
            return False, dx, dy, dz, tr, tg, tb, band
        if thin or entering:
            tr *= mats.tint[obj, 0]
            tg *= mats.tint[obj, 1]
            tb *= mats.tint[obj, 2]
    if alpha > 0.0:
        ci = -(dx * fx + dy * fy + dz * fz)
        cmn = mx * fx + my * fy + mz * fz
        w = abs(cos_i) * _smith_g1(ci, alpha) * _smith_g1(ox * fx + oy * fy + oz * fz, alpha)
        w /= max(1e-12, abs(ci) * abs(cmn))
        if photon:
            w = min(w, 1.0)
        tr *= w
        tg *= w
        tb *= w
    return True, ox, oy, oz, tr, tg, tb, band


@njit(**JIT)
def direct_irradiance(tris, lights, key, ctr, px, py, pz, sx, sy, sz, gx, gy, gz):
    """Irradiance from every enabled light at a front-facing surface point."""
    er = 0.0
    eg = 0.0
    eb = 0.0
    for l in range(lights.radius.shape[0]):
        u1 = nb_uniform(key, ctr)
        u2 = nb_uniform(key, ctr + 1)
        ctr += 2
        cx, cy, cz = lights.center[l, 0], lights.center[l, 1], lights.center[l, 2]
        lx, ly, lz = lights.direction[l, 0], lights.direction[l, 1], lights.direction[l, 2]
        rad = lights.radius[l]
        if rad > 0.0:
            r = rad * math.sqrt(u1)
            phi = TWO_PI * u2
            t0, t1, t2, b0, b1, b2 = onb(lx, ly, lz)
            a = r * math.cos(phi)
            b = r * math.sin(phi)
            cx += a * t0 + b * b0
            cy += a * t1 + b * b1
            cz += a * t2 + b * b2
        wx = cx - px
        wy = cy - py
        wz = cz - pz
        d2 = wx * wx + wy * wy + wz * wz
        if d2 <= 0.0:
            continue
        dist = math.sqrt(d2)
        wx /= dist
        wy /= dist
        wz /= dist
        cos_s = wx * sx + wy * sy + wz * sz
        if cos_s <= 0.0 or wx * gx + wy * gy + wz * gz <= 0.0:
            continue
        if -(wx * lx + wy * ly + wz * lz) < lights.cos_cone[l]:
            continue
        ox, oy, oz = offset_origin(px, py, pz, gx, gy, gz, wx, wy, wz)
        if nb_occluded(tris, ox, oy, oz, wx, wy, wz, dist * (1.0 - 1e-9)):
            continue
        k = cos_s / d2
        er += lights.intensity[l, 0] * k
        eg += lights.intensity[l, 1] * k
        eb += lights.intensity[l, 2] * k
    return er, eg, eb, ctr


@njit(**JIT)
def emitter_hit(lights, ox, oy, oz, dx, dy, dz, tmax):
    """Radiance of the nearest light disc hit before ``tmax`` (zero if none)."""
    best = tmax
    rr = 0.0
    rg = 0.0
    rb = 0.0
    for l in range(lights.radius.shape[0]):
        rad = lights.radius[l]
        if rad <= 0.0:
            continue
        lx, ly, lz = lights.direction[l, 0], lights.direction[l, 1], lights.direction[l, 2]
        denom = dx * lx + dy * ly + dz * lz
        if denom >= 0.0:
            continue
        cos_e = -denom
        if cos_e < lights.cos_cone[l]:
            continue
        t = ((lights.center[l, 0] - ox) * lx + (lights.center[l, 1] - oy) * ly
             + (lights.center[l, 2] - oz) * lz) / denom
        if t <= 0.0 or t >= best:
            continue
        qx = ox + t * dx - lights.center[l, 0]
        qy = oy + t * dy - lights.center[l, 1]
        qz = oz + t * dz - lights.center[l, 2]
        if qx * qx + qy * qy + qz * qz > rad * rad:
            continue
        best = t
        k = 1.0 / (math.pi * rad * rad * cos_e)
        rr = lights.intensity[l, 0] * k
        rg = lights.intensity[l, 1] * k
        rb = lights.intensity[l, 2] * k
    return rr, rg, rb


@njit(**JIT)
def gather_flux(pm, px, py, pz, nx, ny, nz, radius):
    """Sum of photon flux within ``radius`` arriving on the side ``n`` faces."""
    n = pm.pos.shape[0]
    fr = 0.0
    fg = 0.0
    fb = 0.0
    if n == 0:
        return fr, fg, fb
    r2 = radius * radius
    stack_lo = np.empty(128, np.int64)
    stack_hi = np.empty(128, np.int64)
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        if hi <= lo:
            continue
        m = (lo + hi) // 2
        qx = pm.pos[m, 0] - px
        qy = pm.pos[m, 1] - py
        qz = pm.pos[m, 2] - pz
        if qx * qx + qy * qy + qz * qz <= r2:
            if pm.dir[m, 0] * nx + pm.dir[m, 1] * ny + pm.dir[m, 2] * nz < 0.0:
                fr += pm.power[m, 0]
                fg += pm.power[m, 1]
                fb += pm.power[m, 2]
        ax = pm.axis[m]
        p_ax = px if ax == 0 else (py if ax == 1 else pz)
        diff = p_ax - pm.pos[m, ax]
        if diff <= radius:
            stack_lo[sp] = lo
            stack_hi[sp] = m
            sp += 1
        if diff >= -radius:
            stack_lo[sp] = m + 1
            stack_hi[sp] = hi
            sp += 1
    return fr, fg, fb


@njit(**JIT)
def camera_ray(cam, fx, fy):
    """Unit world direction through film position (fx, fy) in pixel units."""
    a = (2.0 * fx / cam.width - 1.0) * cam.tan_half * cam.aspect
    b = (1.0 - 2.0 * fy / cam.height) * cam.tan_half
    cx, cy, cz = a, b, -1.0
    ln = math.sqrt(cx * cx + cy * cy + cz * cz)
    cx /= ln
    cy /= ln
    cz /= ln
    r = cam.rot
    return (r[0, 0] * cx + r[0, 1] * cy + r[0, 2] * cz,
            r[1, 0] * cx + r[1, 1] * cy + r[1, 2] * cz,
            r[2, 0] * cx + r[2, 1] * cy + r[2, 2] * cz)


@njit(**JIT)
def trace_camera_sample(tris, sh, mats, lights, env, cam, pm, key, x, y, max_bounces, caustics, radius):
    jx = nb_uniform(key, 0)
    jy = nb_uniform(key, 1)
    ctr = 2
    dx, dy, dz = camera_ray(cam, x + jx, y + jy)
    ox, oy, oz = cam.origin[0], cam.origin[1], cam.origin[2]
    tr = 1.0
    tg = 1.0
    tb = 1.0
    lr = 0.0
    lg = 0.0
    lb = 0.0
    band = -1
    gathered = False
    prev_specular = True
    gather_norm = 1.0 / (math.pi * radius * radius)
    for bounce in range(max_bounces + 1):
        tri, t, u, v = nb_intersect(tris, ox, oy, oz, dx, dy, dz, np.inf)
        if prev_specular:
            er, eg, eb = emitter_hit(lights, ox, oy, oz, dx, dy, dz, t)
            lr += tr * er
            lg += tg * eg
            lb += tb * eb
        if tri < 0:
            er, eg, eb = env_radiance(env, dx, dy, dz)
            lr += tr * er
            lg += tg * eg
            lb += tb * eb
            break
        px, py, pz, gx, gy, gz, nx, ny, nz = surface(tris, sh, tri, u, v)
        if nx * gx + ny * gy + nz * gz < 0.0:
            nx, ny, nz = -nx, -ny, -nz
        obj = sh.tri_obj[tri]
        if mats.is_glass[obj]:
            if bounce == max_bounces:
                break
            alive, dx2, dy2, dz2, tr, tg, tb, band = glass_scatter(
                mats, obj, dx, dy, dz, gx, gy, gz, nx, ny, nz, tr, tg, tb, band,
                nb_uniform(key, ctr), nb_uniform(key, ctr + 1), nb_uniform(key, ctr + 2),
                nb_uniform(key, ctr + 3), False)
            ctr += 4
            if not alive:
                break
            ox, oy, oz = offset_origin(px, py, pz, gx, gy, gz, dx2, dy2, dz2)
            dx, dy, dz = dx2, dy2, dz2
            prev_specular = True
            continue
        # diffuse vertex: orient normals toward the incoming ray
        if dx * gx + dy * gy + dz * gz > 0.0:
            gx, gy, gz = -gx, -gy, -gz
            nx, ny, nz = -nx, -ny, -nz
        ar, ag, ab = albedo_at(mats, obj, px, py)
        er, eg, eb, ctr = direct_irradiance(tris, lights, key, ctr, px, py, pz, nx, ny, nz, gx, gy, gz)
        lr += tr * ar * INV_PI * er
        lg += tg * ag * INV_PI * eg
        lb += tb * ab * INV_PI * eb
        if caustics and not gathered and pm.pos.shape[0] > 0:
            fr, fg, fb = gather_flux(pm, px, py, pz, nx, ny, nz, radius)
            lr += tr * ar * INV_PI * fr * gather_norm
            lg += tg * ag * INV_PI * fg * gather_norm
            lb += tb * ab * INV_PI * fb * gather_norm
        gathered = True
        if bounce == max_bounces:
            break
        u1 = nb_uniform(key, ctr)
        u2 = nb_uniform(key, ctr + 1)
        ctr += 2
        r = math.sqrt(u1)
        phi = TWO_PI * u2
        lx = r * math.cos(phi)
        ly = r * math.sin(phi)
        lz = math.sqrt(max(0.0, 1.0 - u1))
        t0, t1, t2, b0, b1, b2 = onb(nx, ny, nz)
        dx2 = lx * t0 + ly * b0 + lz * nx
        dy2 = lx * t1 + ly * b1 + lz * ny
        dz2 = lx * t2 + ly * b2 + lz * nz
        if dx2 * gx + dy2 * gy + dz2 * gz <= 0.0:
            break
        tr *= ar
        tg *= ag
        tb *= ab
        ox, oy, oz = offset_origin(px, py, pz, gx, gy, gz, dx2, dy2, dz2)
        dx, dy, dz = dx2, dy2, dz2
        prev_specular = False
    return lr, lg, lb


@njit(**JIT)
def render_tile(tris, sh, mats, lights, env, cam, pm, x0, x1, y0, y1, spp, max_bounces, key0,
                caustics, radius, out):
    inv = 1.0 / spp
    for y in range(y0, y1):
        ky = nb_fold(key0, _u64(y))
        for x in range(x0, x1):
            kx = nb_fold(ky, _u64(x))
            ar = 0.0
            ag = 0.0
            ab = 0.0
            for s in range(spp):
                key = nb_fold(kx, _u64(s))
                lr, lg, lb = trace_camera_sample(tris, sh, mats, lights, env, cam, pm, key, x, y,
                                                 max_bounces, caustics, radius)
                ar += lr
                ag += lg
                ab += lb
            out[y, x, 0] = ar * inv
            out[y, x, 1] = ag * inv
            out[y, x, 2] = ab * inv


@njit(**JIT)
def gbuffer_tile(tris, sh, mats, cam, x0, x1, y0, y1, out_slot, out_depth, out_normal, out_pos):
    for y in range(y0, y1):
        for x in range(x0, x1):
            dx, dy, dz = camera_ray(cam, x + 0.5, y + 0.5)
            tri, t, u, v = nb_intersect(tris, cam.origin[0], cam.origin[1], cam.origin[2], dx, dy, dz, np.inf)
            if tri < 0:
                out_slot[y, x] = -1
                out_depth[y, x] = np.inf
                out_normal[y, x, 0] = 0.0
                out_normal[y, x, 1] = 0.0
                out_normal[y, x, 2] = 0.0
                out_pos[y, x, 0] = np.nan
                out_pos[y, x, 1] = np.nan
                out_pos[y, x, 2] = np.nan
                continue
            px, py, pz, gx, gy, gz, nx, ny, nz = surface(tris, sh, tri, u, v)
            out_slot[y, x] = sh.tri_obj[tri]
            out_depth[y, x] = ((px - cam.origin[0]) * cam.forward[0] + (py - cam.origin[1]) * cam.forward[1]
                               + (pz - cam.origin[2]) * cam.forward[2])
            out_normal[y, x, 0] = nx
            out_normal[y, x, 1] = ny
            out_normal[y, x, 2] = nz
            out_pos[y, x, 0] = px
            out_pos[y, x, 1] = py
            out_pos[y, x, 2] = pz


@njit(**JIT)
def trace_photon_batch(tris, sh, mats, lights, pair_light, pair_axis, pair_cosmax, pair_count, pair_omega,
                       pair_first, key0, max_bounces, out_pos, out_dir, out_pow, out_band, out_stored,
                       out_emitted):
    """Emit ``sum(pair_count)`` photons aimed at glass bounding spheres and
    keep those whose path is light -> specular+ -> diffuse."""
    n_pairs = pair_light.shape[0]
    for k in range(n_pairs):
        l = pair_light[k]
        lx, ly, lz = lights.direction[l, 0], lights.direction[l, 1], lights.direction[l, 2]
        ax_, ay_, az_ = pair_axis[k, 0], pair_axis[k, 1], pair_axis[k, 2]
        t0, t1, t2, b0, b1, b2 = onb(ax_, ay_, az_)
        lt0, lt1, lt2, lb0, lb1, lb2 = onb(lx, ly, lz)
        for i in range(pair_count[k]):
            g = pair_first[k] + i
            key = nb_fold(key0, _u64(g))
            ox, oy, oz = lights.center[l, 0], lights.center[l, 1], lights.center[l, 2]
            rad = lights.radius[l]
            u0 = nb_uniform(key, 0)
            u1 = nb_uniform(key, 1)
            if rad > 0.0:
                r = rad * math.sqrt(u0)
                phi = TWO_PI * u1
                a = r * math.cos(phi)
                b = r * math.sin(phi)
                ox += a * lt0 + b * lb0
                oy += a * lt1 + b * lb1
                oz += a * lt2 + b * lb2
            ct = 1.0 - nb_uniform(key, 2) * (1.0 - pair_cosmax[k])
            st = math.sqrt(max(0.0, 1.0 - ct * ct))
            phi = TWO_PI * nb_uniform(key, 3)
            cx = st * math.cos(phi)
            cy = st * math.sin(phi)
            dx = cx * t0 + cy * b0 + ct * ax_
            dy = cx * t1 + cy * b1 + ct * ay_
            dz = cx * t2 + cy * b2 + ct * az_
            out_stored[g] = False
            if dx * lx + dy * ly + dz * lz < lights.cos_cone[l]:
                continue
            density = 0.0
            for j in range(n_pairs):
                if pair_light[j] != l:
                    continue
                if dx * pair_axis[j, 0] + dy * pair_axis[j, 1] + dz * pair_axis[j, 2] >= pair_cosmax[j]:
                    density += pair_count[j] / pair_omega[j]
            pr = lights.intensity[l, 0] / density
            pg = lights.intensity[l, 1] / density
            pb = lights.intensity[l, 2] / density
            out_emitted[g, 0] = pr
            out_emitted[g, 1] = pg
            out_emitted[g, 2] = pb
            band = -1
            n_specular = 0
            ctr = 4
            for bounce in range(max_bounces + 1):
                tri, t, u, v = nb_intersect(tris, ox, oy, oz, dx, dy, dz, np.inf)
                if tri < 0:
                    break
                px, py, pz, gx, gy, gz, nx, ny, nz = surface(tris, sh, tri, u, v)
                if nx * gx + ny * gy + nz * gz < 0.0:
                    nx, ny, nz = -nx, -ny, -nz
                obj = sh.tri_obj[tri]
                if mats.is_glass[obj]:
                    if mats.rough[obj] > PHOTON_MAX_ROUGHNESS or bounce == max_bounces:
                        break
                    alive, dx2, dy2, dz2, pr, pg, pb, band = glass_scatter(
                        mats, obj, dx, dy, dz, gx, gy, gz, nx, ny, nz, pr, pg, pb, band,
                        nb_uniform(key, ctr), nb_uniform(key, ctr + 1), nb_uniform(key, ctr + 2),
                        nb_uniform(key, ctr + 3), True)
                    ctr += 4
                    if not alive:
                        break
                    n_specular += 1
                    ox, oy, oz = offset_origin(px, py, pz, gx, gy, gz, dx2, dy2, dz2)
                    dx, dy, dz = dx2, dy2, dz2
                    continue
                if n_specular > 0:
                    out_pos[g, 0] = px
                    out_pos[g, 1] = py
                    out_pos[g, 2] = pz
                    out_dir[g, 0] = dx
                    out_dir[g, 1] = dy
                    out_dir[g, 2] = dz
                    out_pow[g, 0] = pr
                    out_pow[g, 1] = pg
                    out_pow[g, 2] = pb
                    out_band[g] = band
                    out_stored[g] = True
                break


@njit(**JIT)
def kd_order(pos):
    """Permutation and per-node split axes for an implicit balanced kd-tree.

    Node for index range ``[lo, hi)`` is its median ``m = (lo + hi) // 2``;
    the left subtree is ``[lo, m)`` and the right ``[m + 1, hi)``.
    """
    n = pos.shape[0]
    idx = np.arange(n)
    axis = np.zeros(n, np.int8)
    if n == 0:
        return idx, axis
    stack_lo = np.empty(2 * n + 2, np.int64)
    stack_hi = np.empty(2 * n + 2, np.int64)
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        if hi - lo <= 1:
            continue
        best = 0
        best_ext = -1.0
        for k in range(3):
            mn = np.inf
            mx = -np.inf
            for i in range(lo, hi):
                c = pos[idx[i], k]
                mn = min(mn, c)
                mx = max(mx, c)
            if mx - mn > best_ext:
                best_ext = mx - mn
                best = k
        sub = idx[lo:hi].copy()
        keys = np.empty(hi - lo)
        for i in range(hi - lo):
            keys[i] = pos[sub[i], best]
        order = np.argsort(keys, kind="mergesort")
        for i in range(hi - lo):
            idx[lo + i] = sub[order[i]]
        m = (lo + hi) // 2
        axis[m] = best
        stack_lo[sp] = lo
        stack_hi[sp] = m
        sp += 1
        stack_lo[sp] = m + 1
        stack_hi[sp] = hi
        sp += 1
    return idx, axis
