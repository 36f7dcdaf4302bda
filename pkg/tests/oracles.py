"""
Independent reference computations used as test oracles.

Nothing here calls the package's geometry kernels: boxes are rebuilt from
their parameters, overlap is decided by point sampling, distances by dense
boundary sampling, and projections by brute force over all segments.
"""

from __future__ import annotations

import math

import numpy as np


def rect_corners(x, y, h, length, width):
    """Corners FL, FR, RR, RL of a rectangle, built by explicit rotation."""
    c, s = math.cos(h), math.sin(h)
    out = []
    for lx, ly in ((length / 2, width / 2), (length / 2, -width / 2),
                   (-length / 2, -width / 2), (-length / 2, width / 2)):
        out.append((x + lx * c - ly * s, y + lx * s + ly * c))
    return np.array(out)


def box_params(box):
    c = box.center
    return c.x, c.y, c.heading, box.length, box.width


def contains(params, pts, grow=0.0):
    """Points inside (or on) the rectangle enlarged by ``grow`` on every side."""
    x, y, h, length, width = params
    d = np.asarray(pts, dtype=float) - [x, y]
    lx = d[:, 0] * math.cos(h) + d[:, 1] * math.sin(h)
    ly = -d[:, 0] * math.sin(h) + d[:, 1] * math.cos(h)
    return (np.abs(lx) <= length / 2 + grow) & (np.abs(ly) <= width / 2 + grow)


def interior_grid(params, n=50, grow=0.0):
    """``n x n`` lattice covering the closed rectangle (edges and corners included)."""
    x, y, h, length, width = params
    u = np.linspace(-0.5, 0.5, n)
    gx, gy = np.meshgrid(u * (length + 2 * grow), u * (width + 2 * grow))
    lx, ly = gx.ravel(), gy.ravel()
    c, s = math.cos(h), math.sin(h)
    return np.stack([x + lx * c - ly * s, y + lx * s + ly * c], axis=1)


def grid_overlap(pa, pb, n=50, grow=0.0):
    """Overlap by sampling each (grown) rectangle and testing containment both ways."""
    return bool(np.any(contains(pb, interior_grid(pa, n, grow), grow))
                or np.any(contains(pa, interior_grid(pb, n, grow), grow)))


def boundary_points(params, spacing=0.004):
    c = rect_corners(*params)
    pts = []
    for i in range(4):
        a, b = c[i], c[(i + 1) % 4]
        n = max(2, int(math.ceil(np.hypot(*(b - a)) / spacing)) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        pts.append(a + t * (b - a))
    return np.concatenate(pts)


def sampled_distance(pa, pb, spacing=0.004):
    """Minimum distance over densely sampled boundary point pairs."""
    a = boundary_points(pa, spacing)
    b = boundary_points(pb, spacing)
    best = math.inf
    for i in range(0, len(a), 512):
        d = np.sqrt(((a[i:i + 512, None, :] - b[None]) ** 2).sum(-1))
        best = min(best, float(d.min()))
    return best


def project_arc(points, p):
    """Arc length of the nearest point on the polyline, by scanning every segment."""
    pts = np.asarray(points, dtype=float)
    best, best_s, acc = math.inf, 0.0, 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        seg = b - a
        L = math.hypot(*seg)
        t = min(max(float(np.dot(p - a, seg)) / (L * L), 0.0), 1.0)
        d = math.hypot(*(a + t * seg - p))
        if d < best:
            best, best_s = d, acc + t * L
        acc += L
    return best_s, best


def point_segment_distance(p, a, b):
    seg = b - a
    t = min(max(float(np.dot(p - a, seg)) / float(np.dot(seg, seg)), 0.0), 1.0)
    return math.hypot(*(a + t * seg - p))


def sat_overlap(ca, cb):
    """Closed separating-axis test written out per axis for (4, 2) corner arrays."""
    for poly in (ca, cb):
        for i in range(2):
            e = poly[i + 1] - poly[i]
            n = np.array([-e[1], e[0]])
            pa, pb = ca @ n, cb @ n
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def rollout_overlaps(points, cum, agent_poses, agent_dims, ego_dims):
    """Per-step overlap flags of an ego rolled along ``points`` against agents.

    ``agent_poses`` is (A, T+1, 3); step t uses agent pose t and ego arc ``cum[t-1]``.
    """
    pts = np.asarray(points, dtype=float)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    flags = []
    for t, s in enumerate(cum, start=1):
        i = min(int(np.searchsorted(arc, s, side="right")) - 1, len(seg) - 1)
        i = max(i, 0)
        f = (s - arc[i]) / seg_len[i]
        x, y = pts[i] + f * seg[i]
        h = math.atan2(seg[i, 1], seg[i, 0])
        ego = rect_corners(x, y, h, *ego_dims)
        hit = False
        for poses, dims in zip(agent_poses, agent_dims):
            ax, ay, ah = poses[t]
            if sat_overlap(ego, rect_corners(ax, ay, ah, *dims)):
                hit = True
                break
        flags.append(hit)
    return np.array(flags, dtype=bool)


def rect_distance(pa, pb):
    """Exact rectangle distance: zero on overlap, else the closest vertex-edge pair."""
    ca, cb = rect_corners(*pa), rect_corners(*pb)
    if sat_overlap(ca, cb):
        return 0.0
    best = math.inf
    for p, poly in ((ca, cb), (cb, ca)):
        for q in p:
            for i in range(4):
                best = min(best, point_segment_distance(q, poly[i], poly[(i + 1) % 4]))
    return best


def labeled_step_distances(path_points, cum, agent, ego_dims=(4.5, 2.0)):
    """Ego-agent distance at steps 1..T for an ego at arc ``cum[t]`` of ``path_points``.

    Ego poses come from :func:`project_arc`-style brute-force walking of the
    polyline (extrapolating past its end), not from the package.
    """
    pts = np.asarray(path_points, dtype=float)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    poses = agent.poses()
    out = []
    for t in range(1, len(cum)):
        s = cum[t]
        i = max(min(int(np.searchsorted(arc, s, side="right")) - 1, len(seg) - 1), 0)
        x, y = pts[i] + (s - arc[i]) / seg_len[i] * seg[i]
        h = math.atan2(seg[i, 1], seg[i, 0])
        out.append(rect_distance((x, y, h, *ego_dims),
                                 (*poses[t], agent.box.length, agent.box.width)))
    return np.array(out)


# --------------------------------------------------------------------------
# vectorized variants for the large acceptance batches


def rect_corners_vec(params):
    """``(N, 4, 2)`` corners for ``(N, 5)`` rows of x, y, heading, length, width."""
    p = np.asarray(params, dtype=float)
    x, y, h, hl, hw = p[:, 0], p[:, 1], p[:, 2], p[:, 3] / 2, p[:, 4] / 2
    c, s = np.cos(h), np.sin(h)
    lx = np.stack([hl, hl, -hl, -hl], axis=1)
    ly = np.stack([hw, -hw, -hw, hw], axis=1)
    return np.stack([x[:, None] + lx * c[:, None] - ly * s[:, None],
                     y[:, None] + lx * s[:, None] + ly * c[:, None]], axis=-1)


def sat_overlap_vec(ca, cb):
    """Closed separating-axis test for ``(N, 4, 2)`` corner batches."""
    sep = np.zeros(len(ca), dtype=bool)
    for poly in (ca, cb):
        for i in range(2):
            e = poly[:, i + 1] - poly[:, i]
            n = np.stack([-e[:, 1], e[:, 0]], axis=1)
            pa = np.einsum("nkd,nd->nk", ca, n)
            pb = np.einsum("nkd,nd->nk", cb, n)
            sep |= (pa.max(1) < pb.min(1)) | (pb.max(1) < pa.min(1))
    return ~sep


def rect_distance_vec(ca, cb):
    """Exact distances for ``(N, 4, 2)`` corner batches (zero where they overlap)."""
    best = np.full(len(ca), np.inf)
    for p, poly in ((ca, cb), (cb, ca)):
        for i in range(4):
            a, b = poly[:, i], poly[:, (i + 1) % 4]
            seg = b - a
            ll = np.einsum("nd,nd->n", seg, seg)
            for k in range(4):
                q = p[:, k]
                t = np.clip(np.einsum("nd,nd->n", q - a, seg) / ll, 0.0, 1.0)
                d = np.hypot(*(a + t[:, None] * seg - q).T)
                best = np.minimum(best, d)
    return np.where(sat_overlap_vec(ca, cb), 0.0, best)


def walk_polyline(points, s):
    """Positions and segment headings at arc lengths ``s`` (extrapolating past the end)."""
    pts = np.asarray(points, dtype=float)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.asarray(s, dtype=float)
    i = np.clip(np.searchsorted(arc, s, side="right") - 1, 0, len(seg) - 1)
    xy = pts[i] + ((s - arc[i]) / seg_len[i])[..., None] * seg[i]
    return xy, np.arctan2(seg[i, 1], seg[i, 0])


def pruned_sampled_distance(pa, pb, spacing=0.002, coarse=0.1):
    """Boundary-sampling distance, refining only near the coarse closest region.

    A coarse pass bounds the answer; fine samples farther than that bound (plus
    the coarse spacing) from every coarse sample of the other box cannot be
    closest and are dropped before the dense pairwise search.
    """
    ca, cb = boundary_points(pa, coarse), boundary_points(pb, coarse)
    d_coarse = float(np.sqrt(((ca[:, None] - cb[None]) ** 2).sum(-1)).min())
    reach = d_coarse + 2 * coarse
    fa, fb = boundary_points(pa, spacing), boundary_points(pb, spacing)

    def near(f, other):
        d = np.sqrt(((f[:, None] - other[None]) ** 2).sum(-1)).min(axis=1)
        return f[d <= reach]

    fa, fb = near(fa, cb), near(fb, ca)
    best = math.inf
    for i in range(0, len(fa), 512):
        d = np.sqrt(((fa[i:i + 512, None, :] - fb[None]) ** 2).sum(-1))
        best = min(best, float(d.min()))
    return best
