"""22-DoF scalar-angle hand skeleton and forward kinematics.

The skeleton is a tree of bones rooted at the wrist. Each bone carries a rest
offset from its parent (mm) and a rotation axis; most bones are driven by one
of the 22 scalar joint angles (degrees), tip bones are rigid. Landmarks are
points attached to bones; the default skeleton exposes the 20 finger joints
(4 per finger: base, two inter-phalangeal joints, tip), wrist excluded.

Angle index layout (degrees everywhere):

====== ======== ======= ========
index  finger   joint   motion
====== ======== ======= ========
0      thumb    CMC     FE
1      thumb    CMC     AA
2      thumb    MCP     FE
3      thumb    IP      FE
4..7   index    MCP AA, MCP FE, PIP FE, DIP FE
8..11  middle   (same layout)
12..15 ring     (same layout)
16..19 pinky    (same layout)
20     wrist    FE
21     wrist    RU
====== ======== ======= ========
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np
import yaml

from .errors import ConfigurationError, InvalidInputError

N_DOF = 22
N_LANDMARKS = 20
AA_INDICES = (1, 4, 8, 12, 16)
WRIST_FE = 20
WRIST_RU = 21

SKELETON_FORMAT = "handemg-skeleton/1"


def rodrigues(axis, angle_deg: float) -> np.ndarray:
    """Rotation matrix for a rotation of `angle_deg` degrees about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    if axis.shape != (3,):
        raise InvalidInputError(f"axis must be a 3-vector, got shape {axis.shape}")
    if abs(np.linalg.norm(axis) - 1.0) > 1e-6:
        raise InvalidInputError(f"axis must be unit-norm, |axis| = {np.linalg.norm(axis)!r}")
    theta = np.radians(angle_deg)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


@dataclass(frozen=True)
class JointAngles22:
    """One hand's 22 joint angles in degrees plus handedness."""

    values: np.ndarray
    handedness: str = "right"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (N_DOF,):
            raise InvalidInputError(f"expected {N_DOF} angles, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("joint angles must be finite")
        if self.handedness not in ("left", "right"):
            raise InvalidInputError(f"handedness must be 'left' or 'right', got {self.handedness!r}")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class LandmarkSet:
    """20 wrist-relative 3D landmark positions in mm."""

    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.shape != (N_LANDMARKS, 3):
            raise InvalidInputError(f"expected ({N_LANDMARKS}, 3) points, got {points.shape}")
        points = points.copy()
        points.flags.writeable = False
        object.__setattr__(self, "points", points)


@dataclass(frozen=True)
class Bone:
    """One segment of the kinematic tree.

    parent: index of the parent bone, -1 for the root.
    offset: rest translation from the parent joint, mm.
    axis: unit rotation axis in the bone's local frame.
    dof: driving angle index in 0..21, or None for rigid (tip) bones.
    name: stable identifier used by config files.
    """

    parent: int
    offset: np.ndarray
    axis: np.ndarray
    dof: int | None
    name: str

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float))


@dataclass(frozen=True)
class HandSkeleton:
    """Kinematic chain definition: bones, per-DoF limits, landmark attachment."""

    bones: tuple
    limits: np.ndarray          # (22, 2) degrees, [a_min, a_max) rows
    landmark_map: tuple         # 20 entries of (bone_index, local_offset)
    fingertip_indices: tuple    # 5 landmark indices

    def __post_init__(self):
        limits = np.asarray(self.limits, dtype=float)
        if limits.shape != (N_DOF, 2):
            raise ConfigurationError(f"limits must have shape ({N_DOF}, 2), got {limits.shape}")
        if not np.all(limits[:, 0] < limits[:, 1]):
            raise ConfigurationError("every DoF requires a_min < a_max")
        object.__setattr__(self, "limits", limits)
        seen_dofs = set()
        for i, bone in enumerate(self.bones):
            if not (-1 <= bone.parent < i):
                raise ConfigurationError(
                    f"bone {i} ({bone.name}): parent {bone.parent} must precede it (tree order)")
            if abs(np.linalg.norm(bone.axis) - 1.0) > 1e-9:
                raise ConfigurationError(f"bone {i} ({bone.name}): rotation axis must be unit-norm")
            if bone.dof is not None:
                if not 0 <= bone.dof < N_DOF:
                    raise ConfigurationError(f"bone {i}: dof index {bone.dof} out of range")
                if bone.dof in seen_dofs:
                    raise ConfigurationError(f"dof {bone.dof} driven by more than one bone")
                seen_dofs.add(bone.dof)
        if len(seen_dofs) != N_DOF:
            raise ConfigurationError(f"skeleton drives {len(seen_dofs)} DoFs, expected {N_DOF}")
        if sum(b.parent == -1 for b in self.bones) != 1:
            raise ConfigurationError("bone graph must be a tree with a single wrist root")
        if len(self.landmark_map) != N_LANDMARKS:
            raise ConfigurationError(f"landmark_map must define {N_LANDMARKS} landmarks")
        if len(self.fingertip_indices) != 5:
            raise ConfigurationError("fingertip_indices must list 5 landmarks")

    @cached_property
    def dof_bone(self) -> np.ndarray:
        """Bone index driving each DoF, shape (22,)."""
        out = np.full(N_DOF, -1, dtype=int)
        for i, bone in enumerate(self.bones):
            if bone.dof is not None:
                out[bone.dof] = i
        return out

    @cached_property
    def landmark_dof_mask(self) -> np.ndarray:
        """(20, 22) boolean: landmark i moves when DoF j changes."""
        n = len(self.bones)
        ancestors = []
        for i, bone in enumerate(self.bones):
            chain = set()
            j = i
            while j >= 0:
                chain.add(j)
                j = self.bones[j].parent
            ancestors.append(chain)
        mask = np.zeros((N_LANDMARKS, N_DOF), dtype=bool)
        for li, (bone_index, _offset) in enumerate(self.landmark_map):
            for d in range(N_DOF):
                mask[li, d] = self.dof_bone[d] in ancestors[bone_index]
        return mask


def _fk_state(skeleton: HandSkeleton, angles: JointAngles22):
    """Per-bone world origins, rotations, and per-DoF world axes/origins."""
    n = len(skeleton.bones)
    origins = np.zeros((n, 3))
    rotations = np.zeros((n, 3, 3))
    dof_axes = np.zeros((N_DOF, 3))
    dof_origins = np.zeros((N_DOF, 3))
    values = angles.values
    for i, bone in enumerate(skeleton.bones):
        if bone.parent < 0:
            parent_o = np.zeros(3)
            parent_r = np.eye(3)
        else:
            parent_o = origins[bone.parent]
            parent_r = rotations[bone.parent]
        origins[i] = parent_o + parent_r @ bone.offset
        if bone.dof is None:
            local = np.eye(3)
        else:
            local = rodrigues(bone.axis, values[bone.dof])
            dof_axes[bone.dof] = parent_r @ bone.axis
            dof_origins[bone.dof] = origins[i]
        rotations[i] = parent_r @ local
    return origins, rotations, dof_axes, dof_origins


def _landmark_points(skeleton: HandSkeleton, origins, rotations) -> np.ndarray:
    points = np.zeros((N_LANDMARKS, 3))
    for li, (bone_index, local_offset) in enumerate(skeleton.landmark_map):
        points[li] = origins[bone_index] + rotations[bone_index] @ np.asarray(local_offset, dtype=float)
    return points


def forward_kinematics(skeleton: HandSkeleton, angles: JointAngles22) -> LandmarkSet:
    """Landmark positions (mm, wrist-relative) for the given joint angles."""
    origins, rotations, _, _ = _fk_state(skeleton, angles)
    return LandmarkSet(_landmark_points(skeleton, origins, rotations))


def landmark_jacobian(skeleton: HandSkeleton, angles: JointAngles22):
    """Analytic FK Jacobian.

    Returns (points, jac) with points (20, 3) mm and jac (20, 3, 22) in
    mm per degree: jac[i, :, j] = d points[i] / d angles[j].
    """
    origins, rotations, dof_axes, dof_origins = _fk_state(skeleton, angles)
    points = _landmark_points(skeleton, origins, rotations)
    # revolute-joint rule: dp/dtheta = axis x (p - joint_origin), per radian
    rel = points[:, None, :] - dof_origins[None, :, :]          # (20, 22, 3)
    jac = np.cross(np.broadcast_to(dof_axes, rel.shape), rel)   # (20, 22, 3)
    jac = jac * skeleton.landmark_dof_mask[:, :, None]
    return points, np.swapaxes(jac, 1, 2) * (np.pi / 180.0)


def mirror_pose(angles: JointAngles22) -> JointAngles22:
    """Mirror a pose to the opposite hand.

    FE angles are shared between hands; AA angles and wrist radial/ulnar
    deviation flip sign under the anatomical mirror.
    """
    values = angles.values.copy()
    for i in AA_INDICES:
        values[i] = -values[i]
    values[WRIST_RU] = -values[WRIST_RU]
    other = "left" if angles.handedness == "right" else "right"
    return JointAngles22(values, handedness=other)


def clamp_to_limits(angles: JointAngles22, skeleton: HandSkeleton) -> JointAngles22:
    """Clamp every angle into its [a_min, a_max] interval."""
    clamped = np.clip(angles.values, skeleton.limits[:, 0], skeleton.limits[:, 1])
    return JointAngles22(clamped, handedness=angles.handedness)


# ---------------------------------------------------------------------------
# default skeleton and config-file persistence

_FINGERS = (
    # name, mcp offset, direction, (prox, mid, dist) lengths mm
    ("index", (17.0, 66.0, 0.0), (0.12, 0.99, 0.0), (45.0, 25.0, 17.0)),
    ("middle", (0.0, 68.0, 0.0), (0.0, 1.0, 0.0), (50.0, 29.0, 18.0)),
    ("ring", (-16.0, 63.0, 0.0), (-0.10, 0.995, 0.0), (44.0, 26.0, 17.0)),
    ("pinky", (-30.0, 58.0, 0.0), (-0.20, 0.98, 0.0), (34.0, 19.0, 15.0)),
)

_DEFAULT_LIMITS = {
    "thumb_cmc_fe": (-30.0, 60.0),
    "thumb_cmc_aa": (-30.0, 30.0),
    "thumb_mcp_fe": (-10.0, 70.0),
    "thumb_ip_fe": (-15.0, 90.0),
    "mcp_aa": (-25.0, 25.0),
    "mcp_fe": (-30.0, 95.0),
    "pip_fe": (-5.0, 110.0),
    "dip_fe": (-5.0, 90.0),
    "wrist_fe": (-80.0, 80.0),
    "wrist_ru": (-40.0, 40.0),
}


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def build_default_skeleton() -> HandSkeleton:
    """Right-hand skeleton with literature-typical bone lengths.

    Fingers extend along +y, palm normal along +z; finger FE axes lie in the
    palm plane perpendicular to each finger, AA axes follow the palm normal.
    Landmark local offsets are all zero: landmarks sit at joint origins, with
    rigid tip bones supplying the fingertip points.
    """
    z = np.array([0.0, 0.0, 1.0])
    bones = []
    limits = np.zeros((N_DOF, 2))

    def add(name, parent, offset, axis, dof, limit_key=None):
        bones.append(Bone(parent=parent, offset=np.asarray(offset, float),
                          axis=np.asarray(axis, float), dof=dof, name=name))
        if dof is not None:
            limits[dof] = _DEFAULT_LIMITS[limit_key or name]
        return len(bones) - 1

    # wrist: deviation (AA analogue) composed before flexion, both at the origin
    ru = add("wrist_ru", -1, (0, 0, 0), z, WRIST_RU)
    fe = add("wrist_fe", ru, (0, 0, 0), (1, 0, 0), WRIST_FE)

    landmark_map = []
    fingertips = []

    # thumb: CMC FE+AA stacked at the same origin, then MCP and IP
    t_dir = _unit((0.55, 0.80, 0.0))
    t_fe_axis = _unit(np.cross(t_dir, z))
    cmc = add("thumb_cmc_fe", fe, (28.0, 18.0, 0.0), t_fe_axis, 0)
    cmc_aa = add("thumb_cmc_aa", cmc, (0, 0, 0), z, 1)
    mcp = add("thumb_mcp_fe", cmc_aa, t_dir * 46.0, t_fe_axis, 2)
    ip = add("thumb_ip_fe", mcp, t_dir * 32.0, t_fe_axis, 3)
    tip = add("thumb_tip", ip, t_dir * 23.0, z, None)
    landmark_map += [(cmc, np.zeros(3)), (mcp, np.zeros(3)), (ip, np.zeros(3)), (tip, np.zeros(3))]
    fingertips.append(len(landmark_map) - 1)

    for fi, (name, mcp_offset, direction, lengths) in enumerate(_FINGERS):
        d = _unit(direction)
        fe_axis = _unit(np.cross(d, z))
        base = 4 * (fi + 1)
        aa = add(f"{name}_mcp_aa", fe, mcp_offset, z, base, "mcp_aa")
        mcp_b = add(f"{name}_mcp_fe", aa, (0, 0, 0), fe_axis, base + 1, "mcp_fe")
        pip = add(f"{name}_pip_fe", mcp_b, d * lengths[0], fe_axis, base + 2, "pip_fe")
        dip = add(f"{name}_dip_fe", pip, d * lengths[1], fe_axis, base + 3, "dip_fe")
        tip = add(f"{name}_tip", dip, d * lengths[2], z, None)
        landmark_map += [(aa, np.zeros(3)), (pip, np.zeros(3)),
                         (dip, np.zeros(3)), (tip, np.zeros(3))]
        fingertips.append(len(landmark_map) - 1)

    return HandSkeleton(bones=tuple(bones), limits=limits,
                        landmark_map=tuple(landmark_map),
                        fingertip_indices=tuple(fingertips))


def save_skeleton(skeleton: HandSkeleton, path) -> None:
    """Write a skeleton config file (versioned YAML key/value tree)."""
    doc = {
        "format": SKELETON_FORMAT,
        "bones": [
            {
                "name": b.name,
                "parent": int(b.parent),
                "offset": [float(x) for x in b.offset],
                "axis": [float(x) for x in b.axis],
                "dof": None if b.dof is None else int(b.dof),
            }
            for b in skeleton.bones
        ],
        "limits": [[float(lo), float(hi)] for lo, hi in skeleton.limits],
        "landmark_map": [
            {"bone": int(bi), "offset": [float(x) for x in off]}
            for bi, off in skeleton.landmark_map
        ],
        "fingertip_indices": [int(i) for i in skeleton.fingertip_indices],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_skeleton(path) -> HandSkeleton:
    """Read a skeleton config file written by `save_skeleton`."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or doc.get("format") != SKELETON_FORMAT:
        raise ConfigurationError(f"unsupported skeleton file format: {doc.get('format')!r}"
                                 if isinstance(doc, dict) else "not a skeleton config file")
    bones = tuple(
        Bone(parent=int(b["parent"]), offset=b["offset"], axis=b["axis"],
             dof=None if b["dof"] is None else int(b["dof"]), name=str(b["name"]))
        for b in doc["bones"]
    )
    landmark_map = tuple((int(e["bone"]), np.asarray(e["offset"], float))
                         for e in doc["landmark_map"])
    return HandSkeleton(bones=bones, limits=np.asarray(doc["limits"], float),
                        landmark_map=landmark_map,
                        fingertip_indices=tuple(int(i) for i in doc["fingertip_indices"]))


def default_skeleton() -> HandSkeleton:
    """The packaged default right-hand skeleton (assets/default_hand.skel)."""
    ref = resources.files("handemg").joinpath("assets/default_hand.skel")
    with resources.as_file(ref) as path:
        return load_skeleton(path)
