"""Signed distance fields, ray/surface intersection and mesh utilities.

Sign convention throughout the package: field values are positive inside the
object, negative outside and zero on the surface.  Normals returned by
:func:`sdf_normal` point outward, i.e. along the negated field gradient.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from .polarimetry import normalize

SECANT_TOL = 1e-6
SECANT_MAX_ITER = 16
COARSE_STEPS = 100


class EmptySurface(ValueError):
    pass


class DegenerateGradient(ValueError):
    pass


# ---------------------------------------------------------------------------
# Fields


class SdfField:
    """Base class: subclasses implement ``value`` and ``gradient`` on ``(..., 3)``."""

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True)
class Sphere(SdfField):
    radius: float = 0.5
    center: tuple = (0.0, 0.0, 0.0)

    def value(self, x):
        return self.radius - np.linalg.norm(np.asarray(x, float) - self.center, axis=-1)

    def gradient(self, x):
        return -normalize(np.asarray(x, float) - self.center)


@dataclass(frozen=True)
class Box(SdfField):
    half_extents: tuple = (0.5, 0.5, 0.5)
    center: tuple = (0.0, 0.0, 0.0)

    def value(self, x):
        q = np.abs(np.asarray(x, float) - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return -(outside + inside)

    def gradient(self, x):
        p = np.asarray(x, float) - self.center
        sgn = np.where(p >= 0, 1.0, -1.0)
        q = np.abs(p) - self.half_extents
        out = np.maximum(q, 0.0)
        is_out = (q > 0).any(axis=-1, keepdims=True)
        g_out = sgn * normalize(out)
        g_in = sgn * (np.arange(3) == q.argmax(axis=-1)[..., None])
        return -np.where(is_out, g_out, g_in)


@dataclass(frozen=True)
class Torus(SdfField):
    """Torus around the z axis."""

    major: float = 0.45
    minor: float = 0.18
    center: tuple = (0.0, 0.0, 0.0)

    def value(self, x):
        p = np.asarray(x, float) - self.center
        qx = np.hypot(p[..., 0], p[..., 1]) - self.major
        return self.minor - np.hypot(qx, p[..., 2])

    def gradient(self, x):
        p = np.asarray(x, float) - self.center
        rho = np.hypot(p[..., 0], p[..., 1])
        radial = np.stack([p[..., 0], p[..., 1], np.zeros_like(rho)], axis=-1)
        radial = radial / np.where(rho > 0, rho, 1.0)[..., None]
        qx = rho - self.major
        ring = radial * qx[..., None]
        ring[..., 2] = p[..., 2]
        return -normalize(ring)


@dataclass(frozen=True)
class SmoothUnion(SdfField):
    """Polynomial smooth union of child fields with blend radius ``k``."""

    children: tuple = ()
    k: float = 0.1

    def _blend(self, d1, d2):
        # inside-positive union = smooth max
        h = np.clip(0.5 + 0.5 * (d1 - d2) / self.k, 0.0, 1.0)
        return h, h * d1 + (1 - h) * d2 + self.k * h * (1 - h)

    def value(self, x):
        d = self.children[0].value(x)
        for c in self.children[1:]:
            _, d = self._blend(d, c.value(x))
        return d

    def gradient(self, x):
        d = self.children[0].value(x)
        g = self.children[0].gradient(x)
        for c in self.children[1:]:
            d2, g2 = c.value(x), c.gradient(x)
            h, d = self._blend(d, d2)
            g = h[..., None] * g + (1 - h[..., None]) * g2
        return g


class VoxelGrid(SdfField):
    """Trilinearly interpolated scalar field on a regular grid of nodes.

    ``values[i, j, k]`` sits at ``lo + (i, j, k) * spacing``.  Queries outside
    the box are clamped onto it and the Euclidean distance to the box is
    subtracted, so the field keeps decreasing away from the grid.
    """

    def __init__(self, values, bounds=(-1.0, 1.0)):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or len(set(values.shape)) != 1:
            raise ValueError("values must be an N x N x N array")
        if values.shape[0] < 8:
            raise ValueError("resolution must be at least 8")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        self.values = values
        self.lo, self.hi = float(bounds[0]), float(bounds[1])
        self.n = values.shape[0]
        self.spacing = (self.hi - self.lo) / (self.n - 1)

    @classmethod
    def from_field(cls, fld: SdfField, resolution: int = 128, bounds=(-1.0, 1.0)):
        return cls(fld.value(grid_points(resolution, bounds)), bounds)

    @property
    def bounds(self):
        return (self.lo, self.hi)

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.values.copy(), self.bounds)

    def node_positions(self):
        return grid_points(self.n, self.bounds)

    # -- interpolation machinery ------------------------------------------
    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, self.lo, self.hi)
        u = (xc - self.lo) / self.spacing
        i0 = np.clip(np.floor(u).astype(np.int64), 0, self.n - 2)
        t = u - i0
        inside_axis = (x >= self.lo) & (x <= self.hi)
        return x, xc, i0, t, inside_axis

    def _corner_index(self, i0):
        n = self.n
        base = (i0[..., 0] * n + i0[..., 1]) * n + i0[..., 2]
        offs = np.array(
            [(a * n + b) * n + c for a in (0, 1) for b in (0, 1) for c in (0, 1)]
        )
        return base[..., None] + offs

    def corners(self, x, derivatives: int = 0):
        """Flat node indices and interpolation weights for each query point.

        Returns ``(idx, w)`` with shape ``(..., 8)``; with ``derivatives >= 1``
        also ``dw`` of shape ``(..., 8, 3)`` (weights of the spatial gradient)
        and with ``derivatives >= 2`` ``ddw`` of shape ``(..., 8, 3, 3)``.
        Clamped axes of out-of-box points get zero spatial derivative.
        """
        _, _, i0, t, inside_axis = self._locate(x)
        idx = self._corner_index(i0)
        bits = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)])
        # per-axis 1D weights and derivatives, shape (..., 8, 3)
        tt = t[..., None, :]
        b1 = np.where(bits == 1, tt, 1.0 - tt)
        db1 = np.where(bits == 1, 1.0, -1.0) / self.spacing * inside_axis[..., None, :]
        w = b1[..., 0] * b1[..., 1] * b1[..., 2]
        if derivatives == 0:
            return idx, w
        dw = np.stack(
            [
                db1[..., 0] * b1[..., 1] * b1[..., 2],
                b1[..., 0] * db1[..., 1] * b1[..., 2],
                b1[..., 0] * b1[..., 1] * db1[..., 2],
            ],
            axis=-1,
        )
        if derivatives == 1:
            return idx, w, dw
        ddw = np.zeros(w.shape + (3, 3))
        for a in range(3):
            for b in range(3):
                if a == b:
                    continue
                c = 3 - a - b
                ddw[..., a, b] = db1[..., a] * db1[..., b] * b1[..., c]
        return idx, w, dw, ddw

    def _outside_distance(self, x, xc):
        return np.linalg.norm(x - xc, axis=-1)

    def value(self, x):
        x, xc, i0, t, _ = self._locate(x)
        n = self.n
        base = (i0[..., 0] * n + i0[..., 1]) * n + i0[..., 2]
        vals = self.values.ravel()
        tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]

        def lerp_z(b):
            return vals[b] * (1 - tz) + vals[b + 1] * tz

        c0 = lerp_z(base) * (1 - ty) + lerp_z(base + n) * ty
        c1 = lerp_z(base + n * n) * (1 - ty) + lerp_z(base + n * n + n) * ty
        return c0 * (1 - tx) + c1 * tx - self._outside_distance(x, xc)

    def gradient(self, x):
        x, xc, *_ = self._locate(x)
        idx, _, dw = self.corners(x, derivatives=1)
        g = np.einsum("...c,...cd->...d", self.values.ravel()[idx], dw)
        off = x - xc
        dist = np.linalg.norm(off, axis=-1, keepdims=True)
        return g - off / np.where(dist > 0, dist, 1.0)

    def hessian(self, x):
        """Spatial Hessian of the trilinear interpolant (zero diagonal)."""
        idx, _, _, ddw = self.corners(x, derivatives=2)
        return np.einsum("...c,...cab->...ab", self.values.ravel()[idx], ddw)


def grid_points(resolution: int, bounds=(-1.0, 1.0)) -> np.ndarray:
    ax = np.linspace(bounds[0], bounds[1], resolution)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)


def sphere_grid(resolution: int, radius: float = 0.5, bounds=(-1.0, 1.0)) -> VoxelGrid:
    return VoxelGrid.from_field(Sphere(radius), resolution, bounds)


def sdf_eval(fld: SdfField, x) -> np.ndarray:
    return fld.value(x)


def sdf_normal(fld: SdfField, x) -> np.ndarray:
    """Outward unit normal (negated, normalized gradient)."""
    g = fld.gradient(x)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    if np.any(norm <= 1e-8):
        raise DegenerateGradient("field gradient vanishes at query point")
    return -g / norm


def safe_normal(fld: SdfField, x) -> np.ndarray:
    """Like :func:`sdf_normal` but returns a zero vector where the gradient vanishes."""
    g = fld.gradient(x)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.where(norm > 1e-8, -g / np.where(norm > 1e-8, norm, 1.0), 0.0)


# ---------------------------------------------------------------------------
# Rays


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)
        if not np.allclose(np.linalg.norm(self.direction, axis=-1), 1.0, atol=1e-9):
            raise ValueError("ray direction must be unit length")

    def at(self, t):
        return self.origin + np.asarray(t)[..., None] * self.direction


def unit_sphere_clip(origins, directions, radius: float = 1.0, tol: float = 1e-12):
    """Ray/sphere entry and exit parameters.

    Returns ``(t_enter, t_exit, hit)``.  Origins inside the sphere get
    ``t_enter = 0``; tangent rays (discriminant below ``tol``) and spheres
    entirely behind the origin are misses.
    """
    o = np.asarray(origins, float)
    d = np.asarray(directions, float)
    b = np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - radius**2
    disc = b * b - c
    hit = disc > tol
    root = np.sqrt(np.where(hit, disc, 0.0))
    t0, t1 = -b - root, -b + root
    hit &= t1 > 0
    t_enter = np.where(hit, np.maximum(t0, 0.0), 0.0)
    t_exit = np.where(hit, t1, 0.0)
    return t_enter, t_exit, hit


@dataclass
class Intersection:
    """Batched secant intersection result.

    ``t_minus``/``t_plus`` bracket the root with field values of negative
    (outside) and positive (inside) sign respectively.  ``t`` is the refined
    root estimate used for the point and normal; ``t_start`` is the bracket end
    selected by ``want_sign_at_start`` for restarting the next ray.
    """

    hit: np.ndarray
    t: np.ndarray
    t_minus: np.ndarray
    t_plus: np.ndarray
    t_start: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    converged: np.ndarray
    origins: np.ndarray = dc_field(repr=False, default=None)
    directions: np.ndarray = dc_field(repr=False, default=None)

    def start_point(self):
        return self.origins + self.t_start[..., None] * self.directions


def coarse_samples(t_min, t_max, steps: int = COARSE_STEPS):
    frac = np.linspace(0.0, 1.0, steps)
    return t_min[..., None] + (t_max - t_min)[..., None] * frac


def first_crossing(values: np.ndarray):
    """Index ``i`` of the first sign change between samples ``i`` and ``i+1``."""
    inside = values > 0
    change = inside[..., 1:] != inside[..., :-1]
    hit = change.any(axis=-1)
    return np.argmax(change, axis=-1), hit


def secant_refine(
    fld: SdfField, origins, directions, ta, tb, fa, fb, tol=SECANT_TOL, max_iter=SECANT_MAX_ITER
):
    """Illinois-variant secant iterations on brackets ``(ta, tb)`` with opposite signs.

    Returns ``(t_minus, t_plus, t_root, converged)``.
    """
    ta, tb = ta.astype(float).copy(), tb.astype(float).copy()
    fa, fb = fa.astype(float).copy(), fb.astype(float).copy()
    side = np.zeros(ta.shape, dtype=np.int8)
    done = np.abs(tb - ta) < tol
    for _ in range(max_iter):
        if done.all():
            break
        act = ~done
        denom = fb[act] - fa[act]
        tm = np.where(denom != 0, ta[act] - fa[act] * (tb[act] - ta[act]) / np.where(denom != 0, denom, 1.0),
                      0.5 * (ta[act] + tb[act]))
        fm = fld.value(origins[act] + tm[:, None] * directions[act])
        a_side = np.sign(fm) == np.sign(fa[act])
        exact = fm == 0
        ia = np.flatnonzero(act)
        # replace the endpoint sharing the sign of fm; halve the stale one (Illinois)
        ja, jb = ia[a_side & ~exact], ia[~a_side & ~exact]
        ta[ja], fa[ja] = tm[a_side & ~exact], fm[a_side & ~exact]
        fb[ja] = np.where(side[ja] == 1, fb[ja] * 0.5, fb[ja])
        side[ja] = 1
        tb[jb], fb[jb] = tm[~a_side & ~exact], fm[~a_side & ~exact]
        fa[jb] = np.where(side[jb] == -1, fa[jb] * 0.5, fa[jb])
        side[jb] = -1
        je = ia[exact]
        ta[je] = tb[je] = tm[exact]
        done = np.abs(tb - ta) < tol
    converged = done
    # root estimate by linear interpolation of the final bracket (true values)
    fa_t = fld.value(origins + ta[:, None] * directions)
    fb_t = fld.value(origins + tb[:, None] * directions)
    denom = fb_t - fa_t
    with np.errstate(invalid="ignore", divide="ignore"):
        t_root = np.where(denom != 0, ta - fa_t * (tb - ta) / denom, 0.5 * (ta + tb))
    t_root = np.clip(t_root, np.minimum(ta, tb), np.maximum(ta, tb))
    a_pos = fa_t > 0
    t_plus = np.where(a_pos, ta, tb)
    t_minus = np.where(a_pos, tb, ta)
    return t_minus, t_plus, t_root, converged


def secant_intersect(
    fld: SdfField,
    origins,
    directions,
    t_min,
    t_max,
    want_sign_at_start=-1,
    steps: int = COARSE_STEPS,
    tol: float = SECANT_TOL,
    max_iter: int = SECANT_MAX_ITER,
    coarse_values=None,
) -> Intersection:
    """Batched ray/zero-level intersection by coarse sampling + secant refinement.

    ``want_sign_at_start`` chooses which bracket end is reported as
    ``t_start``: ``-1`` for a continuation ray leaving on the outside
    (reflection, exit refraction), ``+1`` for one continuing inside
    (entry refraction).  It may be a per-ray array.
    """
    o = np.atleast_2d(np.asarray(origins, float))
    d = np.atleast_2d(np.asarray(directions, float))
    m = o.shape[0]
    t_min = np.broadcast_to(np.asarray(t_min, float), (m,))
    t_max = np.broadcast_to(np.asarray(t_max, float), (m,))
    ts = coarse_samples(t_min, t_max, steps)
    if coarse_values is None:
        coarse_values = fld.value(o[:, None, :] + ts[..., None] * d[:, None, :])
    i, hit = first_crossing(coarse_values)
    hit &= t_max > t_min
    rows = np.flatnonzero(hit)
    t_minus = np.full(m, np.nan)
    t_plus = np.full(m, np.nan)
    t_root = np.full(m, np.nan)
    conv = np.zeros(m, dtype=bool)
    if rows.size:
        ii = i[rows]
        ta, tb = ts[rows, ii], ts[rows, ii + 1]
        fa, fb = coarse_values[rows, ii], coarse_values[rows, ii + 1]
        tm_, tp_, tr_, cv_ = secant_refine(fld, o[rows], d[rows], ta, tb, fa, fb, tol, max_iter)
        t_minus[rows], t_plus[rows], t_root[rows], conv[rows] = tm_, tp_, tr_, cv_
    want = np.broadcast_to(np.asarray(want_sign_at_start), (m,))
    t_start = np.where(want > 0, t_plus, t_minus)
    point = o + np.nan_to_num(t_root)[:, None] * d
    normal = np.zeros((m, 3))
    if rows.size:
        normal[rows] = safe_normal(fld, point[rows])
    return Intersection(
        hit=hit,
        t=t_root,
        t_minus=t_minus,
        t_plus=t_plus,
        t_start=t_start,
        point=point,
        normal=normal,
        converged=conv,
        origins=o,
        directions=d,
    )


# ---------------------------------------------------------------------------
# Meshes


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    @property
    def face_normals_area(self):
        v = self.vertices[self.faces]
        return 0.5 * np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    @property
    def area(self) -> float:
        return float(np.linalg.norm(self.face_normals_area, axis=-1).sum())

    @property
    def signed_volume(self) -> float:
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def vertex_normals(self) -> np.ndarray:
        acc = np.zeros_like(self.vertices)
        fn = self.face_normals_area
        for k in range(3):
            np.add.at(acc, self.faces[:, k], fn)
        return normalize(acc)

    def is_watertight(self) -> bool:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


def extract_surface(grid: VoxelGrid) -> TriangleMesh:
    """Zero isosurface of a grid with outward-facing triangles."""
    from skimage.measure import marching_cubes

    vals = grid.values
    if not (vals.max() > 0 and vals.min() < 0):
        raise EmptySurface("field has no zero crossing")
    verts, faces, _, _ = marching_cubes(vals, level=0.0, spacing=(grid.spacing,) * 3)
    mesh = TriangleMesh(verts.astype(float) + grid.lo, faces.astype(np.int64))
    if mesh.signed_volume < 0:
        mesh.faces = mesh.faces[:, ::-1].copy()
    return mesh


def sample_surface(mesh: TriangleMesh, count: int, seed: int = 0):
    """Area-weighted uniform samples; returns ``(points, normals)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(mesh.faces) == 0:
        raise EmptySurface("mesh has no faces")
    rng = np.random.default_rng(seed)
    areas = np.linalg.norm(mesh.face_normals_area, axis=-1)
    f = rng.choice(len(areas), size=count, p=areas / areas.sum())
    r1, r2 = rng.random(count), rng.random(count)
    s = np.sqrt(r1)
    bary = np.stack([1 - s, s * (1 - r2), s * r2], axis=-1)
    tri = mesh.faces[f]
    pts = np.einsum("ij,ijk->ik", bary, mesh.vertices[tri])
    vn = mesh.vertex_normals()
    nrm = normalize(np.einsum("ij,ijk->ik", bary, vn[tri]))
    return pts, nrm


def write_obj(mesh: TriangleMesh, path) -> None:
    vn = mesh.vertex_normals()
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for n in vn:
            fh.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
    os.replace(tmp, path)


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(np.array(verts, float), np.array(faces, np.int64).reshape(-1, 3))
