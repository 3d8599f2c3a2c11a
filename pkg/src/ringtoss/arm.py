"""Analytic 6-DoF serial arm: DH kinematics, Jacobian, numeric IK, limits, capsule collision.

The arm is described by standard Denavit-Hartenberg rows plus per-joint limits
and a coarse capsule decomposition for collision checks against a ground plane,
a table box and non-adjacent links.  All operations are stateless; anything
randomized takes an explicit numpy Generator.
"""

from __future__ import annotations

import configparser
import importlib.resources
from dataclasses import dataclass, field

import numpy as np

N_JOINTS = 6

DEFAULT_ACCEL_LIMITS = np.array([12.5, 12.5, 12.5, 15.0, 15.0, 15.0])


class NoSolutionError(Exception):
    """Inverse kinematics exhausted all restarts without converging."""


class SingularJacobianError(Exception):
    """Differential IK requested at a near-singular configuration."""


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation mapping points from the local frame to the parent frame."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return RigidTransform(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (..., 3) from the local frame into the parent frame."""
        return points @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (np.all(np.isfinite(r)) and np.all(np.isfinite(self.translation))
                and np.allclose(r.T @ r, np.eye(3), atol=tol)
                and abs(np.linalg.det(r) - 1.0) <= tol)


@dataclass(frozen=True)
class JointState:
    """Joint positions (rad) and velocities (rad/s)."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(N_JOINTS))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float).reshape(N_JOINTS))


@dataclass(frozen=True)
class Capsule:
    """Segment p0-p1 with a radius, expressed in the frame of the link it belongs to."""

    link: int  # 1-based DH frame index the endpoints are expressed in
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(3))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float).reshape(3))


@dataclass(frozen=True)
class Environment:
    """Static collision world: ground halfspace plus an axis-aligned table box."""

    ground_z: float = 0.0
    table_center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.375]))
    table_half_extents: np.ndarray = field(default_factory=lambda: np.array([0.30, 0.30, 0.375]))

    def __post_init__(self):
        object.__setattr__(self, "table_center", np.asarray(self.table_center, dtype=float).reshape(3))
        object.__setattr__(self, "table_half_extents",
                           np.asarray(self.table_half_extents, dtype=float).reshape(3))


@dataclass(frozen=True)
class ArmModel:
    dh: np.ndarray  # (6, 4) rows of (a, alpha, d, theta_offset)
    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    a_max: np.ndarray
    base_pose: RigidTransform
    capsules: tuple[Capsule, ...]
    table_checked_links: tuple[int, ...] = (2, 3, 4, 5, 6)

    def __post_init__(self):
        object.__setattr__(self, "dh", np.asarray(self.dh, dtype=float).reshape(N_JOINTS, 4))
        for name in ("q_min", "q_max", "v_max", "a_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(N_JOINTS))
        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be < q_max elementwise")
        if not (np.all(self.v_max > 0) and np.all(self.a_max > 0)):
            raise ValueError("v_max and a_max must be positive")

    @property
    def self_pairs(self) -> tuple[tuple[int, int], ...]:
        """Indices into self.capsules for non-adjacent link pairs."""
        pairs = []
        for i in range(len(self.capsules)):
            for j in range(i + 1, len(self.capsules)):
                if abs(self.capsules[i].link - self.capsules[j].link) >= 2:
                    pairs.append((i, j))
        return tuple(pairs)

    def mid_q(self) -> np.ndarray:
        return 0.5 * (self.q_min + self.q_max)


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

def _dh_matrices(dh: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-joint standard DH transforms.  q (..., 6) -> (..., 6, 4, 4)."""
    q = np.asarray(q, dtype=float)
    a, alpha, d, off = dh[:, 0], dh[:, 1], dh[:, 2], dh[:, 3]
    th = q + off
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(alpha), np.sin(alpha)
    out = np.zeros(q.shape[:-1] + (N_JOINTS, 4, 4))
    out[..., 0, 0] = ct
    out[..., 0, 1] = -st * ca
    out[..., 0, 2] = st * sa
    out[..., 0, 3] = a * ct
    out[..., 1, 0] = st
    out[..., 1, 1] = ct * ca
    out[..., 1, 2] = -ct * sa
    out[..., 1, 3] = a * st
    out[..., 2, 1] = sa
    out[..., 2, 2] = ca
    out[..., 2, 3] = d
    out[..., 3, 3] = 1.0
    return out

def link_transforms(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """World transforms of the base frame and each link frame.

    q (..., 6) -> (..., 7, 4, 4); index 0 is the base, index k the frame after
    joint k.
    """
    q = np.asarray(q, dtype=float)
    locals_ = _dh_matrices(arm.dh, q)
    frames = np.empty(q.shape[:-1] + (N_JOINTS + 1, 4, 4))
    frames[..., 0, :, :] = arm.base_pose.as_matrix()
    for k in range(N_JOINTS):
        frames[..., k + 1, :, :] = frames[..., k, :, :] @ locals_[..., k, :, :]
    return frames

def forward_kinematics(arm: ArmModel, q: np.ndarray) -> RigidTransform:
    """End-effector pose in the world frame."""
    m = link_transforms(arm, q)[..., N_JOINTS, :, :]
    return RigidTransform(m[:3, :3], m[:3, 3])

def jacobian(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian (world frame, [v; omega] rows) at the EE origin."""
    frames = link_transforms(arm, q)
    p_ee = frames[N_JOINTS, :3, 3]
    J = np.empty((6, N_JOINTS))
    for k in range(N_JOINTS):
        z = frames[k, :3, 2]  # joint k+1 rotates about the z axis of frame k
        p = frames[k, :3, 3]
        J[:3, k] = np.cross(z, p_ee - p)
        J[3:, k] = z
    return J


def _rotation_error(r_target: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of r_target @ r.T (world-frame orientation error)."""
    dr = r_target @ r.T
    cos_t = np.clip((np.trace(dr) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_t)
    if theta < 1e-12:
        return np.zeros(3)
    w = np.array([dr[2, 1] - dr[1, 2], dr[0, 2] - dr[2, 0], dr[1, 0] - dr[0, 1]])
    s = np.linalg.norm(w)
    if s < 1e-12:
        # theta ~ pi: extract axis from the symmetric part
        axis = np.sqrt(np.maximum(np.diag(dr) + (1.0 - np.trace(dr)) * 0.5, 0.0) / (1.5 - np.trace(dr) * 0.5 + 1e-300))
        axis = axis / max(np.linalg.norm(axis), 1e-12)
        return theta * axis
    return theta * w / s

def inverse_kinematics(arm: ArmModel, target_pose: RigidTransform, rng: np.random.Generator,
                       restarts: int = 20, max_iters: int = 200, damping: float = 1e-3,
                       pos_tol: float = 1e-4, rot_tol: float = 1e-3,
                       initial: np.ndarray | None = None) -> np.ndarray:
    """Damped-least-squares IK with random restarts.

    The first attempt starts from `initial` (mid-range by default), later ones
    from uniform random configurations.  Raises NoSolutionError once all
    restarts are exhausted; deterministic for a given generator state.
    """
    if initial is None:
        initial = arm.mid_q()
    for attempt in range(restarts):
        q = np.array(initial, dtype=float) if attempt == 0 else rng.uniform(arm.q_min, arm.q_max)
        best_err = np.inf
        stall = 0
        for _ in range(max_iters):
            frames = link_transforms(arm, q)
            m = frames[N_JOINTS]
            e_pos = target_pose.translation - m[:3, 3]
            e_rot = _rotation_error(target_pose.rotation, m[:3, :3])
            if np.linalg.norm(e_pos) <= pos_tol and np.linalg.norm(e_rot) <= rot_tol:
                return np.clip(q, arm.q_min, arm.q_max)
            err = np.concatenate([e_pos, e_rot])
            J = np.empty((6, N_JOINTS))
            p_ee = m[:3, 3]
            for k in range(N_JOINTS):
                z = frames[k, :3, 2]
                J[:3, k] = np.cross(z, p_ee - frames[k, :3, 3])
                J[3:, k] = z
            h = J.T @ J + (damping ** 2) * np.eye(N_JOINTS)
            step = np.linalg.solve(h, J.T @ err)
            n = np.linalg.norm(step)
            if n > 0.5:
                step *= 0.5 / n
            q = np.clip(q + step, arm.q_min, arm.q_max)
            e = np.linalg.norm(err)
            if e < best_err - 1e-12:
                best_err = e
                stall = 0
            else:
                stall += 1
                if stall >= 15:  # stuck (limit-clamped or local minimum)
                    break
    raise NoSolutionError("IK failed for target at %s" % np.array_str(target_pose.translation, precision=3))

def joint_velocities_from_twist(arm: ArmModel, q: np.ndarray, twist: np.ndarray,
                                sigma_min: float = 1e-4, damping: float = 1e-6) -> np.ndarray:
    """Solve J(q) qdot = twist; raises SingularJacobianError near singularities."""
    J = jacobian(arm, q)
    u, s, vt = np.linalg.svd(J)
    if s[-1] < sigma_min:
        raise SingularJacobianError("smallest singular value %.3g below %.3g" % (s[-1], sigma_min))
    inv = s / (s ** 2 + damping ** 2)
    return vt.T @ (inv * (u.T @ np.asarray(twist, dtype=float)))

def check_state_limits(arm: ArmModel, state: JointState) -> bool:
    """True iff q within [q_min, q_max] and |qdot| <= v_max (closed intervals)."""
    return bool(np.all(state.q >= arm.q_min) and np.all(state.q <= arm.q_max)
                and np.all(np.abs(state.qdot) <= arm.v_max))


# ---------------------------------------------------------------------------
# collision
# ---------------------------------------------------------------------------

def _segment_segment_distance(p0, p1, q0, q1):
    """Batched closest distance between segments p0-p1 and q0-q1, shapes (..., 3)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    denom = a * e - b * b
    eps = 1e-12
    s = np.where(denom > eps, np.clip((b * f - c * e) / np.where(denom > eps, denom, 1.0), 0.0, 1.0), 0.0)
    t = np.where(e > eps, (b * s + f) / np.where(e > eps, e, 1.0), 0.0)
    t_cl = np.clip(t, 0.0, 1.0)
    # re-project s for clamped t
    s = np.where(e > eps,
                 np.where(t != t_cl, np.clip((t_cl * b - c) / np.where(a > eps, a, 1.0), 0.0, 1.0), s),
                 np.clip(-c / np.where(a > eps, a, 1.0), 0.0, 1.0))
    cp = p0 + s[..., None] * d1
    cq = q0 + t_cl[..., None] * d2
    return np.linalg.norm(cp - cq, axis=-1)

def _point_box_distance(p, center, half):
    d = np.abs(p - center) - half
    outside = np.maximum(d, 0.0)
    return np.linalg.norm(outside, axis=-1)

def _segment_box_distance(p0, p1, center, half, iters: int = 60):
    """Distance from segment to an axis-aligned box via ternary search (convex in t)."""
    lo = np.zeros(p0.shape[:-1])
    hi = np.ones(p0.shape[:-1])
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        f1 = _point_box_distance(p0 + m1[..., None] * (p1 - p0), center, half)
        f2 = _point_box_distance(p0 + m2[..., None] * (p1 - p0), center, half)
        take_lo = f1 > f2
        lo = np.where(take_lo, m1, lo)
        hi = np.where(take_lo, hi, m2)
    t = 0.5 * (lo + hi)
    return _point_box_distance(p0 + t[..., None] * (p1 - p0), center, half)

def _world_capsules(arm: ArmModel, frames: np.ndarray):
    """Capsule endpoints in world coordinates.  frames (..., 7, 4, 4)."""
    p0s, p1s, radii, links = [], [], [], []
    for cap in arm.capsules:
        f = frames[..., cap.link, :, :]
        r, t = f[..., :3, :3], f[..., :3, 3]
        p0s.append(np.einsum("...ij,j->...i", r, cap.p0) + t)
        p1s.append(np.einsum("...ij,j->...i", r, cap.p1) + t)
        radii.append(cap.radius)
        links.append(cap.link)
    return np.stack(p0s, axis=-2), np.stack(p1s, axis=-2), np.array(radii), np.array(links)

def collides_batch(arm: ArmModel, q: np.ndarray, env: Environment) -> np.ndarray:
    """Vectorized collision test.  q (..., 6) -> boolean (...,)."""
    frames = link_transforms(arm, q)
    p0, p1, radii, links = _world_capsules(arm, frames)  # (..., C, 3)
    hit = np.zeros(q.shape[:-1], dtype=bool)
    # ground halfspace: lowest capsule point at an endpoint
    low = np.minimum(p0[..., 2], p1[..., 2]) - radii
    hit |= np.any(low <= env.ground_z, axis=-1)
    # table box
    table_mask = np.isin(links, arm.table_checked_links)
    if np.any(table_mask):
        d = _segment_box_distance(p0[..., table_mask, :], p1[..., table_mask, :],
                                  env.table_center, env.table_half_extents)
        hit |= np.any(d - radii[table_mask] <= 0.0, axis=-1)
    # self collision between non-adjacent links
    pairs = arm.self_pairs
    if pairs:
        ii = np.array([p[0] for p in pairs])
        jj = np.array([p[1] for p in pairs])
        d = _segment_segment_distance(p0[..., ii, :], p1[..., ii, :], p0[..., jj, :], p1[..., jj, :])
        hit |= np.any(d - (radii[ii] + radii[jj]) <= 0.0, axis=-1)
    return hit

def collides(arm: ArmModel, q: np.ndarray, env: Environment) -> bool:
    """True iff configuration q intersects ground, table or itself."""
    return bool(collides_batch(arm, np.asarray(q, dtype=float), env))


# ---------------------------------------------------------------------------
# arm description file
# ---------------------------------------------------------------------------

def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.replace(",", " ").split()])

def load_arm(path_or_text, from_text: bool = False) -> ArmModel:
    """Load an arm description (INI format).

    Sections: [dh] row1..row6 = a, alpha, d, theta_offset; [limits] q_min,
    q_max, v_max, a_max (6 values each); [base] translation, rpy; [capsules]
    one entry per capsule: link, p0(3), p1(3), radius; [collision]
    table_checked_links.
    """
    cp = configparser.ConfigParser()
    if from_text:
        cp.read_string(path_or_text)
    else:
        with open(path_or_text) as f:
            cp.read_string(f.read())
    dh = np.stack([_parse_floats(cp["dh"][f"row{i}"]) for i in range(1, 7)])
    lim = cp["limits"]
    q_min, q_max = _parse_floats(lim["q_min"]), _parse_floats(lim["q_max"])
    v_max = _parse_floats(lim["v_max"])
    a_max = _parse_floats(lim["a_max"]) if "a_max" in lim else DEFAULT_ACCEL_LIMITS.copy()
    t = _parse_floats(cp["base"]["translation"])
    roll, pitch, yaw = _parse_floats(cp["base"].get("rpy", "0 0 0"))
    cr, sr, cpch, spch, cy, sy = np.cos(roll), np.sin(roll), np.cos(pitch), np.sin(pitch), np.cos(yaw), np.sin(yaw)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cpch, 0, spch], [0, 1, 0], [-spch, 0, cpch]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    base = RigidTransform(rz @ ry @ rx, t)
    caps = []
    for _, val in cp["capsules"].items():
        v = _parse_floats(val)
        caps.append(Capsule(link=int(v[0]), p0=v[1:4], p1=v[4:7], radius=float(v[7])))
    table_links = tuple(int(x) for x in _parse_floats(cp["collision"]["table_checked_links"])) \
        if cp.has_section("collision") else (2, 3, 4, 5, 6)
    return ArmModel(dh=dh, q_min=q_min, q_max=q_max, v_max=v_max, a_max=a_max,
                    base_pose=base, capsules=tuple(caps), table_checked_links=table_links)

def default_arm() -> ArmModel:
    text = importlib.resources.files("ringtoss.data").joinpath("default_arm.ini").read_text()
    return load_arm(text, from_text=True)
