"""Hand self-occlusion scoring via z-buffer rasterization.

Pipeline: transform mesh vertices into the camera frame, rasterize every
triangle into a minimal-depth buffer at the camera resolution, then mark a
vertex visible when any depth in the clamped 5x5 pixel window around its
projection agrees with the vertex depth within epsilon = 5 mm. The score is

    s_occ = 1 - sum_{i visible} w_i / sum_i w_i

with vertex weights w_i collecting a third of each incident triangle's area.

Rasterization conventions (declared, since the source formula leaves them
open): pixel centers at (x + 0.5, y + 0.5) with an inclusive top-left
tie-break; perspective-correct depth (1/z interpolated over the screen
triangle); no back-face culling; triangles with any vertex at z <= 1e-6 mm
are rejected whole rather than clipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError

DEPTH_SENTINEL = np.inf
EPSILON_MM = 5.0
NEIGHBORHOOD = 5
_NEAR_Z_MM = 1e-6
_MIN_TRIANGLE_AREA_MM2 = 1e-9


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh; vertices in mm."""

    vertices: np.ndarray    # (N, 3)
    triangles: np.ndarray   # (M, 3) int

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        triangles = np.asarray(self.triangles, dtype=int)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise InvalidInputError("vertices must be (N, 3)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise InvalidInputError("triangles must be (M, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise InvalidInputError("triangle index out of range")
        if triangles.size:
            areas = triangle_areas(vertices, triangles)
            if areas.min() < _MIN_TRIANGLE_AREA_MM2:
                raise InvalidInputError(
                    f"degenerate triangle with area {areas.min():.3g} mm^2")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)


@dataclass(frozen=True)
class PinholeCamera:
    """Intrinsics K, world->camera extrinsics (R, t), and image resolution."""

    intrinsics: np.ndarray   # 3x3, [[fx,0,cx],[0,fy,cy],[0,0,1]]
    rotation: np.ndarray     # 3x3 world->camera
    translation: np.ndarray  # (3,)
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=float)
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if k.shape != (3, 3) or k[0, 0] <= 0 or k[1, 1] <= 0:
            raise InvalidInputError("intrinsics must be 3x3 with fx, fy > 0")
        if r.shape != (3, 3) or np.abs(r @ r.T - np.eye(3)).max() > 1e-8 \
                or np.linalg.det(r) < 0:
            raise InvalidInputError("rotation must be orthonormal with det +1")
        if t.shape != (3,):
            raise InvalidInputError("translation must be a 3-vector")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("resolution must be positive")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class OcclusionReport:
    s_occ: float
    visible_vertex_flags: np.ndarray  # (N,) bool
    vertex_area_weights: np.ndarray   # (N,) mm^2


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def transform_to_camera(mesh: TriangleMesh, camera: PinholeCamera) -> TriangleMesh:
    """Apply the rigid world->camera transform to every vertex."""
    v_cam = mesh.vertices @ camera.rotation.T + camera.translation
    return TriangleMesh(vertices=v_cam, triangles=mesh.triangles)


def _project(camera: PinholeCamera, vertices: np.ndarray):
    """Camera-frame points -> pixel coordinates (u, v); z unchanged."""
    k = camera.intrinsics
    z = vertices[:, 2]
    u = k[0, 0] * vertices[:, 0] / z + k[0, 2]
    v = k[1, 1] * vertices[:, 1] / z + k[1, 2]
    return u, v


def rasterize_depth(camera_mesh: TriangleMesh, camera: PinholeCamera) -> np.ndarray:
    """Minimal-depth buffer (height, width) in mm; +inf where uncovered."""
    h, w = camera.height, camera.width
    buffer = np.full((h, w), DEPTH_SENTINEL)
    verts = camera_mesh.vertices
    if not len(camera_mesh.triangles):
        return buffer
    u_all, v_all = _project(camera, np.where(verts[:, 2:3] > _NEAR_Z_MM, verts,
                                             np.array([0.0, 0.0, 1.0])))
    for tri in camera_mesh.triangles:
        z = verts[tri, 2]
        if z.min() <= _NEAR_Z_MM:
            continue  # whole-triangle near clip
        ux, vy = u_all[tri], v_all[tri]
        area2 = ((ux[1] - ux[0]) * (vy[2] - vy[0])
                 - (vy[1] - vy[0]) * (ux[2] - ux[0]))
        if area2 == 0.0:
            continue
        if area2 < 0:  # normalize winding so edge functions are >= 0 inside
            tri = tri[[0, 2, 1]]
            z = verts[tri, 2]
            ux, vy = u_all[tri], v_all[tri]
            area2 = -area2
        x0 = max(int(np.floor(ux.min() - 0.5)), 0)
        x1 = min(int(np.ceil(ux.max() - 0.5)), w - 1)
        y0 = max(int(np.floor(vy.min() - 0.5)), 0)
        y1 = min(int(np.ceil(vy.max() - 0.5)), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        px = np.arange(x0, x1 + 1) + 0.5
        py = np.arange(y0, y1 + 1) + 0.5
        pu, pv = np.meshgrid(px, py)
        lam = []
        inside = np.ones(pu.shape, dtype=bool)
        for i in range(3):
            ax, ay = ux[(i + 1) % 3], vy[(i + 1) % 3]
            bx, by = ux[(i + 2) % 3], vy[(i + 2) % 3]
            e = (bx - ax) * (pv - ay) - (by - ay) * (pu - ax)
            # inclusive top-left rule for pixels exactly on an edge
            top_left = (by == ay and bx > ax) or (by < ay)
            inside &= (e > 0) | ((e == 0) & top_left)
            lam.append(e / area2)
        if not inside.any():
            continue
        inv_z = lam[0] / z[0] + lam[1] / z[1] + lam[2] / z[2]
        depth = 1.0 / inv_z
        view = buffer[y0:y1 + 1, x0:x1 + 1]
        np.minimum(view, np.where(inside, depth, DEPTH_SENTINEL), out=view)
    return buffer


def vertex_visibility(camera_mesh: TriangleMesh, camera: PinholeCamera,
                      depth_buffer: np.ndarray, epsilon_mm: float = EPSILON_MM,
                      neighborhood: int = NEIGHBORHOOD) -> np.ndarray:
    """Visible iff some depth in the clamped window matches the vertex z."""
    if depth_buffer.shape != (camera.height, camera.width):
        raise InvalidInputError("depth buffer does not match the camera resolution")
    half = neighborhood // 2
    verts = camera_mesh.vertices
    visible = np.zeros(len(verts), dtype=bool)
    in_front = verts[:, 2] > _NEAR_Z_MM
    u, v = _project(camera, np.where(in_front[:, None], verts, np.array([0.0, 0.0, 1.0])))
    px, py = np.floor(u).astype(int), np.floor(v).astype(int)
    for i in np.nonzero(in_front)[0]:
        if not (0 <= px[i] < camera.width and 0 <= py[i] < camera.height):
            continue
        window = depth_buffer[max(py[i] - half, 0):py[i] + half + 1,
                              max(px[i] - half, 0):px[i] + half + 1]
        visible[i] = bool(np.any(np.abs(window - verts[i, 2]) <= epsilon_mm))
    return visible


def self_occlusion_score(mesh: TriangleMesh, camera: PinholeCamera,
                         epsilon_mm: float = EPSILON_MM,
                         neighborhood: int = NEIGHBORHOOD) -> OcclusionReport:
    """Area-weighted fraction of hidden vertices; deterministic."""
    areas = triangle_areas(mesh.vertices, mesh.triangles) if len(mesh.triangles) \
        else np.zeros(0)
    weights = np.zeros(len(mesh.vertices))
    for corner in range(3):
        np.add.at(weights, mesh.triangles[:, corner], areas / 3.0)
    total = weights.sum()
    if total <= 0.0:
        raise DegenerateGeometryError("mesh has zero surface area; s_occ undefined")
    cam_mesh = transform_to_camera(mesh, camera)
    buffer = rasterize_depth(cam_mesh, camera)
    visible = vertex_visibility(cam_mesh, camera, buffer, epsilon_mm, neighborhood)
    s_occ = 1.0 - weights[visible].sum() / total
    return OcclusionReport(s_occ=float(s_occ), visible_vertex_flags=visible,
                           vertex_area_weights=weights)
