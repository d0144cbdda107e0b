"""Procedural ray-cast scenes: planes, spheres and boxes seen by a pinhole camera.

The camera sits at the origin looking down +z.  Depth is the z coordinate of
the first hit, so a fronto-parallel plane ``z = c`` renders as constant ``c``.
Pseudo-RGB is albedo times Lambertian shading, which places image edges on
object boundaries and creases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .depthmap import DepthMap


@dataclass(frozen=True)
class Plane:
    normal: tuple[float, float, float]
    offset: float  # points p with normal . p == offset
    albedo: tuple[float, float, float] = (0.7, 0.7, 0.7)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    albedo: tuple[float, float, float] = (0.8, 0.3, 0.3)


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half_size: tuple[float, float, float]
    yaw: float = 0.0  # rotation about the camera's y axis, radians
    albedo: tuple[float, float, float] = (0.3, 0.6, 0.8)


Primitive = Plane | Sphere | Box

_LIGHT = np.array([-0.35, -0.5, -1.0]) / np.linalg.norm([-0.35, -0.5, -1.0])


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    width: int = 64
    height: int = 64
    d_min: float = 0.5
    d_max: float = 10.0
    fov_deg: float = 60.0
    n_spheres: tuple[int, int] = (1, 3)
    n_boxes: tuple[int, int] = (0, 2)
    # Explicit primitives replace random sampling (no automatic background).
    primitives: tuple[Primitive, ...] | None = field(default=None)

    @property
    def focal(self) -> float:
        return 0.5 * self.width / math.tan(math.radians(self.fov_deg) / 2)


def ray_directions(spec: SceneSpec) -> np.ndarray:
    """Per-pixel ray directions with unit z component, shape (h, w, 3)."""
    f = spec.focal
    u = (np.arange(spec.width) + 0.5 - spec.width / 2) / f
    v = (np.arange(spec.height) + 0.5 - spec.height / 2) / f
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv, np.ones_like(uu)], axis=-1)


def _hit_plane(p: Plane, dirs):
    n = np.asarray(p.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (p.offset / np.linalg.norm(p.normal)) / denom
    t = np.where((np.abs(denom) > 1e-12) & (t > 0), t, np.inf)
    normal = np.broadcast_to(np.where(denom[..., None] > 0, -n, n), dirs.shape)
    return t, normal


def _hit_sphere(s: Sphere, dirs):
    c = np.asarray(s.center, dtype=np.float64)
    a = np.einsum("...i,...i", dirs, dirs)
    b = dirs @ c
    disc = b * b - a * (c @ c - s.radius**2)
    root = np.sqrt(np.maximum(disc, 0.0))
    t = (b - root) / a
    t = np.where((disc >= 0) & (t > 0), t, np.inf)
    normal = (t[..., None] * dirs - c) / s.radius
    return t, normal


def _hit_box(bx: Box, dirs):
    cy, sy = math.cos(bx.yaw), math.sin(bx.yaw)
    rot = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])  # box -> camera
    c = np.asarray(bx.center, dtype=np.float64)
    h = np.asarray(bx.half_size, dtype=np.float64)
    o = rot.T @ (-c)
    d = dirs @ rot  # rows are rot.T @ dir
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    t_near = lo.max(axis=-1)
    t_far = hi.min(axis=-1)
    hit = (t_far >= t_near) & (t_near > 0)
    t = np.where(hit, t_near, np.inf)
    axis = lo.argmax(axis=-1)
    local = np.zeros(dirs.shape)
    sign = -np.sign(np.take_along_axis(d, axis[..., None], axis=-1))[..., 0]
    np.put_along_axis(local, axis[..., None], sign[..., None], axis=-1)
    return t, local @ rot.T


def _random_primitives(spec: SceneSpec) -> list[Primitive]:
    rng = np.random.default_rng(spec.seed)
    tan_half = math.tan(math.radians(spec.fov_deg) / 2)
    tilt = rng.uniform(-0.35, 0.35, size=2)
    z0 = rng.uniform(0.6, 0.95) * spec.d_max
    normal = (float(tilt[0]), float(tilt[1]), 1.0)
    prims: list[Primitive] = [Plane(normal, float(z0), tuple(float(a) for a in rng.uniform(0.3, 0.9, 3)))]
    near, far = spec.d_min + 0.15 * (spec.d_max - spec.d_min), 0.6 * spec.d_max
    for _ in range(int(rng.integers(spec.n_spheres[0], spec.n_spheres[1] + 1))):
        z = rng.uniform(near, far)
        x, y = rng.uniform(-0.7, 0.7, 2) * z * tan_half
        prims.append(Sphere((float(x), float(y), float(z)), float(rng.uniform(0.12, 0.3) * z * tan_half),
                            tuple(float(a) for a in rng.uniform(0.2, 1.0, 3))))
    for _ in range(int(rng.integers(spec.n_boxes[0], spec.n_boxes[1] + 1))):
        z = rng.uniform(near, far)
        x, y = rng.uniform(-0.7, 0.7, 2) * z * tan_half
        half = rng.uniform(0.1, 0.25, 3) * z * tan_half
        prims.append(Box((float(x), float(y), float(z)), tuple(float(a) for a in half), float(rng.uniform(-0.8, 0.8)),
                         tuple(float(a) for a in rng.uniform(0.2, 1.0, 3))))
    return prims


def render(spec: SceneSpec, primitives) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (z-depth with inf where nothing is hit, normals, albedo)."""
    dirs = ray_directions(spec)
    depth = np.full(dirs.shape[:2], np.inf)
    normals = np.zeros(dirs.shape)
    albedo = np.zeros(dirs.shape)
    for prim in primitives:
        if isinstance(prim, Plane):
            t, n = _hit_plane(prim, dirs)
        elif isinstance(prim, Sphere):
            t, n = _hit_sphere(prim, dirs)
        elif isinstance(prim, Box):
            t, n = _hit_box(prim, dirs)
        else:
            raise TypeError(f"unknown primitive {prim!r}")
        closer = t < depth
        depth = np.where(closer, t, depth)
        normals = np.where(closer[..., None], n, normals)
        albedo = np.where(closer[..., None], np.asarray(prim.albedo), albedo)
    return depth, normals, albedo


def generate_scene(spec: SceneSpec) -> tuple[DepthMap, np.ndarray]:
    """Render ``spec`` to a depth map (meters) and an 8-bit pseudo-RGB image."""
    prims = list(spec.primitives) if spec.primitives is not None else _random_primitives(spec)
    if not prims:
        raise ValueError("generate_scene: empty primitive set")
    depth, normals, albedo = render(spec, prims)
    depth = np.clip(np.where(np.isfinite(depth), depth, spec.d_max), spec.d_min, spec.d_max)
    shade = 0.3 + 0.7 * np.clip(normals @ _LIGHT, 0.0, 1.0)
    rgb = np.clip(albedo * shade[..., None], 0.0, 1.0)
    rgb8 = np.floor(rgb * 255.0 + 0.5).astype(np.uint8)
    return DepthMap(depth, spec.d_min, spec.d_max), rgb8
