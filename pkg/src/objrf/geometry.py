"""Cameras, oriented boxes, the normalized-object-space mapping, and rays.

All functions here are pure float64 numpy; the differentiable pose path
used by test-time optimization re-expresses the same math on the tape
(see ``objrf.training.tto``).

Conventions:
  * camera frame: x right, y down, z forward; the camera center is the
    origin, so a camera-space ray starts at (0, 0, 0);
  * pixel coordinates are continuous; raster loops pass ``index + 0.5``;
  * normalized object space (the centered unit cube [-1/2, 1/2]^3) is
    reached by rotating into the box frame and dividing by the box size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

_QUAT_TOL = 1e-9


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {v.shape}")
    return v


# --------------------------------------------------------------------------
# quaternions (w, x, y, z)
# --------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dtype=np.float64,
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = _vec3(axis)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis))


def quat_rotation_angle(q) -> float:
    """Rotation angle in radians represented by a unit quaternion."""
    w = min(1.0, abs(float(q[0])))
    return 2.0 * math.acos(w)


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), Shepperd's method."""
    r = np.asarray(r, dtype=np.float64)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose looking from ``position`` toward ``target``.

    Camera convention is x right, y down, z forward; ``up`` is world up.
    """
    pos = _vec3(position)
    z = _vec3(target) - pos
    zn = np.linalg.norm(z)
    if zn < 1e-12:
        raise ValueError("look_at: position equals target")
    z = z / zn
    x = np.cross(z, _vec3(up))
    xn = np.linalg.norm(x)
    if xn < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
        xn = np.linalg.norm(x)
    x = x / xn
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=1)
    return Pose(quat_from_matrix(r), pos)


# --------------------------------------------------------------------------
# core types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def to_json(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_json(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )

    def crop(self, x0: float, y0: float, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics of a sub-window whose origin pixel is (x0, y0)."""
        return CameraIntrinsics(self.fx, self.fy, self.cx - x0, self.cy - y0, width, height)

    def scaled(self, sx: float, sy: float) -> "CameraIntrinsics":
        return CameraIntrinsics(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            max(1, int(round(self.width * sx))),
            max(1, int(round(self.height * sy))),
        )


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x -> R(q) x + t."""

    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        t = _vec3(self.translation)
        if q.shape != (4,):
            raise ValueError("quaternion must have 4 components")
        if abs(np.linalg.norm(q) - 1.0) > _QUAT_TOL:
            raise ValueError("quaternion is not unit length")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.matrix.T + self.translation

    def rotate(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return v @ self.matrix.T

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self ∘ other)(x) = self(other(x))."""
        q = quat_normalize(quat_multiply(self.rotation, other.rotation))
        t = self.apply(other.translation)
        return Pose(q, t)

    def inverse(self) -> "Pose":
        q = np.array([self.rotation[0], *(-self.rotation[1:])])
        r_inv = quat_to_matrix(q)
        return Pose(quat_normalize(q), -(r_inv @ self.translation))

    def to_json(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation],
            "translation": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_json(d: dict) -> "Pose":
        return Pose(quat_normalize(d["rotation"]), np.asarray(d["translation"], dtype=np.float64))


@dataclass(frozen=True)
class ObjectBox:
    """Oriented 3D box; its pose+size define the map into the unit cube."""

    pose: Pose
    size: np.ndarray

    def __post_init__(self):
        s = _vec3(self.size)
        if np.any(s <= 0):
            raise ValueError("box extents must be positive")
        object.__setattr__(self, "size", s)

    def to_nocs(self, x) -> np.ndarray:
        """Camera-space point(s) -> normalized object space."""
        x = np.asarray(x, dtype=np.float64)
        local = (x - self.pose.translation) @ self.pose.matrix
        return local / self.size

    def from_nocs(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return (p * self.size) @ self.pose.matrix.T + self.pose.translation

    def corners(self) -> np.ndarray:
        """The 8 box corners in camera space."""
        signs = np.array(
            [[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)]
        )
        return self.from_nocs(signs)

    def to_json(self) -> dict:
        d = self.pose.to_json()
        d["size"] = [float(v) for v in self.size]
        return d

    @staticmethod
    def from_json(d: dict) -> "ObjectBox":
        return ObjectBox(Pose.from_json(d), np.asarray(d["size"], dtype=np.float64))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "direction", _vec3(self.direction))

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class ObjectRay:
    """Unit-speed ray in normalized object space with its cube window.

    ``speed`` is the norm of the remapped (pre-normalization) direction;
    camera-space distance = normalized-space distance / speed.
    """

    ray: Ray
    window: Optional[Tuple[float, float]]
    speed: float

    def at(self, t: float) -> np.ndarray:
        return self.ray.at(t)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def pixel_ray(cam: CameraIntrinsics, u: Sequence[float]) -> Ray:
    """Unit-speed camera-space ray through continuous pixel coords ``u``."""
    ux, uy = float(u[0]), float(u[1])
    d = np.array([(ux - cam.cx) / cam.fx, (uy - cam.cy) / cam.fy, 1.0])
    return Ray(np.zeros(3), d / np.linalg.norm(d))


def pixel_rays(cam: CameraIntrinsics, us: np.ndarray) -> np.ndarray:
    """Vectorized ``pixel_ray`` directions for an [N, 2] array of coords."""
    us = np.asarray(us, dtype=np.float64)
    d = np.stack(
        [(us[:, 0] - cam.cx) / cam.fx, (us[:, 1] - cam.cy) / cam.fy, np.ones(len(us))],
        axis=1,
    )
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def intersect_unit_cube(origin, direction) -> Optional[Tuple[float, float]]:
    """Slab test against [-1/2, 1/2]^3; entry clamped at 0; None on miss."""
    o = _vec3(origin)
    d = _vec3(direction)
    a, b = _slab_window(o[None, :], d[None, :])
    if not np.isfinite(b[0]) or b[0] <= max(a[0], 0.0):
        return None
    return (max(a[0], 0.0), float(b[0]))


def _slab_window(o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized slab entry/exit for [N,3] origins/directions; misses get b=-inf."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-0.5 - o) / d
        t2 = (0.5 - o) / d
    parallel = d == 0.0
    inside = (o >= -0.5) & (o <= 0.5)
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    a = lo.max(axis=1)
    b = hi.min(axis=1)
    b = np.where(np.isnan(a) | np.isnan(b), -np.inf, b)
    return a, b


def object_ray(box: ObjectBox, ray: Ray) -> ObjectRay:
    """Map a unit-speed camera ray into normalized object space.

    The anisotropic size scaling destroys unit speed, so the mapped
    direction is renormalized (arc-length reparametrization); the cube
    window is then computed in the normalized frame.
    """
    origins, dirs, speeds, windows = object_rays(
        box, ray.origin[None, :], ray.direction[None, :]
    )
    w = windows[0]
    window = None if w is None else (float(w[0]), float(w[1]))
    return ObjectRay(Ray(origins[0], dirs[0]), window, float(speeds[0]))


def object_rays(
    box: ObjectBox, origins: np.ndarray, directions: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, list]:
    """Vectorized ``object_ray``: returns (origins, dirs, speeds, windows).

    ``windows`` is a list of (a, b) tuples or None per ray.
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    r = box.pose.matrix
    o = ((origins - box.pose.translation) @ r) / box.size
    d = (directions @ r) / box.size
    speeds = np.linalg.norm(d, axis=1)
    if np.any(speeds < 1e-12):
        raise ValueError("degenerate mapped ray direction")
    d = d / speeds[:, None]
    a, b = _slab_window(o, d)
    a_cl = np.maximum(a, 0.0)
    hit = b > a_cl
    windows = [
        (float(a_cl[i]), float(b[i])) if hit[i] else None for i in range(len(origins))
    ]
    return o, d, speeds, windows


def rigid_transform_box(q: Pose, box: ObjectBox) -> ObjectBox:
    """Apply a rigid transform to a box pose (size unchanged)."""
    return ObjectBox(q.compose(box.pose), box.size.copy())


def rigid_transform_ray(q: Pose, ray: Ray) -> Ray:
    return Ray(q.apply(ray.origin), q.rotate(ray.direction))


def box_json_dumps(box: ObjectBox) -> str:
    return json.dumps(box.to_json())


def box_json_loads(s: Union[str, bytes]) -> ObjectBox:
    return ObjectBox.from_json(json.loads(s))
