"""Sampling of feasible ring release states and conversion to end-effector goals.

A throw state fixes the ring pose and twist at the instant of release.  The
constraint set: ring plane horizontal, spin about the ring normal only, linear
velocity horizontal along the ring x axis, speed given by projectile motion to
the cylinder-top height.  Candidates are drawn from configured workspace
ranges and checked against the arm via IK, velocity limits and collision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import (ArmModel, Environment, JointState, NoSolutionError, RigidTransform,
                  SingularJacobianError, check_state_limits, collides, forward_kinematics,
                  inverse_kinematics, joint_velocities_from_twist)

OMEGA_RANGE = (1.5 * np.pi, 3.0 * np.pi)  # ring spin rad/s


class InfeasibleGoalError(Exception):
    """Throw candidate failed a feasibility stage; .stage is 'ik' | 'velocity' | 'collision'."""

    def __init__(self, stage: str, detail: str = ""):
        super().__init__(f"{stage}{': ' + detail if detail else ''}")
        self.stage = stage


@dataclass(frozen=True)
class Target:
    """Cylinder top-center horizontal position; z is implied by the geometry."""

    x: float
    y: float = 0.0

    @property
    def radius(self) -> float:
        return float(np.hypot(self.x, self.y))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


def default_grasp() -> RigidTransform:
    """Ring center 0.10 m along the EE z axis, ring x parallel to EE x.

    The rotation flips the ring normal against the EE z axis, so the gripper
    points downward at release with the ring hanging underneath (an overhand
    throw posture, which gives the pitch joints vertical lever arms).
    """
    return RigidTransform(np.diag([1.0, -1.0, -1.0]), [0.0, 0.0, 0.10])


@dataclass(frozen=True)
class TaskGeometry:
    ring_radius: float = 0.075
    cyl_radius: float = 0.005
    cyl_height: float = 0.1
    table_height: float = 0.75
    gravity: float = 9.81
    grasp: RigidTransform = field(default_factory=default_grasp)
    settle_time: float = 0.05

    @property
    def success_radius(self) -> float:
        return self.ring_radius - self.cyl_radius


@dataclass(frozen=True)
class WorkspaceRanges:
    """Surrogate sampling ranges for the ring release position and spin."""

    z_min: float = 0.9
    z_max: float = 1.4
    rho_min: float = 0.35
    rho_max: float = 0.7
    bearing_max: float = np.deg2rad(15.0)
    omega_min: float = OMEGA_RANGE[0]
    omega_max: float = OMEGA_RANGE[1]


@dataclass(frozen=True)
class ThrowState:
    """Ring pose and twist in the world frame at release."""

    pose: RigidTransform
    lin_vel: np.ndarray
    ang_vel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lin_vel", np.asarray(self.lin_vel, dtype=float).reshape(3))
        object.__setattr__(self, "ang_vel", np.asarray(self.ang_vel, dtype=float).reshape(3))


def required_speed(d_xy: float, dz: float, g: float = 9.81) -> float:
    """Release speed for a horizontal launch to cross the target height at range d_xy."""
    if dz <= 0:
        raise ValueError(f"release must be above the target plane (dz={dz:g})")
    if d_xy < 0:
        raise ValueError("d_xy must be non-negative")
    return d_xy * np.sqrt(g / (2.0 * dz))


def flight_time(dz: float, g: float = 9.81) -> float:
    """Drag-free fall time from a horizontal launch down through dz > 0."""
    return float(np.sqrt(2.0 * dz / g))


def sample_throw_state(target: Target, geom: TaskGeometry, workspace: WorkspaceRanges,
                       rng: np.random.Generator) -> ThrowState:
    """Draw one release state from the goal manifold for the given target."""
    z_r = rng.uniform(workspace.z_min, workspace.z_max)
    rho = rng.uniform(workspace.rho_min, workspace.rho_max)
    bearing = np.arctan2(target.y, target.x) + rng.uniform(-workspace.bearing_max, workspace.bearing_max)
    omega_z = rng.uniform(workspace.omega_min, workspace.omega_max)

    p_ring = np.array([rho * np.cos(bearing), rho * np.sin(bearing), z_r])
    p_target = np.array([target.x, target.y, geom.cyl_height])
    to_target_xy = p_target[:2] - p_ring[:2]
    d_xy = float(np.linalg.norm(to_target_xy))
    x_axis = np.array([to_target_xy[0] / d_xy, to_target_xy[1] / d_xy, 0.0])
    z_axis = np.array([0.0, 0.0, 1.0])
    y_axis = np.cross(z_axis, x_axis)
    rot = np.column_stack([x_axis, y_axis, z_axis])

    speed = required_speed(d_xy, z_r - geom.cyl_height, geom.gravity)
    return ThrowState(pose=RigidTransform(rot, p_ring),
                      lin_vel=speed * x_axis,
                      ang_vel=np.array([0.0, 0.0, omega_z]))


def ring_to_ee(throw: ThrowState, geom: TaskGeometry) -> tuple[RigidTransform, np.ndarray]:
    """End-effector pose and world twist [v; omega] realizing the ring state."""
    ee_pose = throw.pose.compose(geom.grasp.inverse())
    lever = ee_pose.translation - throw.pose.translation
    v_ee = throw.lin_vel + np.cross(throw.ang_vel, lever)
    return ee_pose, np.concatenate([v_ee, throw.ang_vel])


def ee_to_ring(ee_pose: RigidTransform, ee_twist: np.ndarray, geom: TaskGeometry) -> ThrowState:
    """Inverse of ring_to_ee: transport an EE state through the grasp transform."""
    ring_pose = ee_pose.compose(geom.grasp)
    v_ee, omega = ee_twist[:3], ee_twist[3:]
    lever = ring_pose.translation - ee_pose.translation
    return ThrowState(pose=ring_pose, lin_vel=v_ee + np.cross(omega, lever), ang_vel=omega)


def _spherical_wrist_layout(arm: ArmModel) -> bool:
    dh = arm.dh
    return bool(dh[0, 0] == 0 and dh[3, 0] == 0 and dh[4, 0] == 0 and np.all(dh[1:5, 2] == 0))


def _pose_reachable(arm: ArmModel, ee_pose: RigidTransform) -> bool:
    """Exact positional reach test for arms with a spherical wrist layout.

    Applies when a1 = a4 = a5 = 0 and d2..d5 = 0 (wrist center offset d6 along
    the EE z axis); returns True for other layouts so IK decides.
    """
    if not _spherical_wrist_layout(arm):
        return True
    dh = arm.dh
    wrist = ee_pose.translation - dh[5, 2] * ee_pose.rotation[:, 2]
    shoulder = arm.base_pose.translation + np.array([0.0, 0.0, dh[0, 2]])
    d = np.linalg.norm(wrist - shoulder)
    lo, hi = abs(dh[1, 0] - dh[2, 0]), dh[1, 0] + dh[2, 0]
    return lo + 1e-9 <= d <= hi - 1e-9


def _release_posture_seeds(arm: ArmModel, ee_pose: RigidTransform) -> list[np.ndarray]:
    """Closed-form elbow-up / elbow-down seed postures for a vertical flange.

    Valid for the spherical-wrist layout with the EE z axis pointing straight
    up or straight down; returns an empty list otherwise (caller falls back to
    generic IK restarts).  Seeds are exact up to joint-limit clipping, so the
    numeric solver polishes them in a handful of iterations.
    """
    up = ee_pose.rotation[2, 2]
    if not _spherical_wrist_layout(arm) or abs(abs(up) - 1.0) > 1e-9:
        return []
    dh = arm.dh
    d1, l2, l3, d6 = dh[0, 2], dh[1, 0], dh[2, 0], dh[5, 2]
    wrist = ee_pose.translation - d6 * ee_pose.rotation[:, 2]
    shoulder = arm.base_pose.translation + np.array([0.0, 0.0, d1])
    rw = float(np.hypot(wrist[0] - shoulder[0], wrist[1] - shoulder[1]))
    h = float(wrist[2] - shoulder[2])
    d = (rw * rw + h * h - l2 * l2 - l3 * l3) / (2.0 * l2 * l3)
    if abs(d) > 1.0:
        return []
    q1 = np.arctan2(wrist[1] - shoulder[1], wrist[0] - shoulder[0])
    azim = np.arctan2(ee_pose.rotation[1, 0], ee_pose.rotation[0, 0])
    # flange elevation = q2 + q3 + q4; roll reference measured from the frame
    # conventions: azim(x6) = q1 + sign(up) * (q6 - pi/2)
    elevation = np.sign(up) * np.pi / 2
    roll = np.sign(up) * (azim - q1 + np.pi / 2)
    seeds = []
    for elbow in (-1.0, +1.0):
        q3 = elbow * np.arccos(d)
        q2 = np.arctan2(h, rw) - np.arctan2(l3 * np.sin(q3), l2 + l3 * np.cos(q3))
        q4 = elevation - q2 - q3
        q6 = np.arctan2(np.sin(roll), np.cos(roll))
        q = np.array([q1, q2, q3, q4, 0.0, q6])
        if np.all(q >= arm.q_min - 1e-9) and np.all(q <= arm.q_max + 1e-9):
            seeds.append(np.clip(q, arm.q_min, arm.q_max))
    return seeds


def feasible_goal(arm: ArmModel, throw: ThrowState, geom: TaskGeometry, env: Environment,
                  rng: np.random.Generator) -> JointState:
    """Joint-space release state realizing the throw, or InfeasibleGoalError.

    The required joint velocities depend strongly on the IK posture, so all
    closed-form posture branches are tried (polished by the numeric solver)
    before the candidate is rejected; a generic multi-restart solve is the
    fallback when no analytic branch applies.
    """
    ee_pose, ee_twist = ring_to_ee(throw, geom)
    if not _pose_reachable(arm, ee_pose):
        raise InfeasibleGoalError("ik", "outside positional reach")
    branch_seeds = _release_posture_seeds(arm, ee_pose)
    attempts: list[np.ndarray | None] = list(branch_seeds) if branch_seeds else [None]
    failure = InfeasibleGoalError("ik")
    solved_any = False
    for seed in attempts:
        try:
            if seed is None:
                q = inverse_kinematics(arm, ee_pose, rng)
            else:
                q = inverse_kinematics(arm, ee_pose, rng, restarts=1, max_iters=60, initial=seed)
        except NoSolutionError as e:
            failure = InfeasibleGoalError("ik", str(e))
            continue
        solved_any = True
        try:
            qdot = joint_velocities_from_twist(arm, q, ee_twist)
        except SingularJacobianError as e:
            failure = InfeasibleGoalError("ik", f"singular: {e}")
            continue
        state = JointState(q, qdot)
        if not check_state_limits(arm, state):
            failure = InfeasibleGoalError("velocity")
            continue
        if collides(arm, q, env):
            failure = InfeasibleGoalError("collision")
            continue
        return state
    if branch_seeds and not solved_any:
        # analytic branches exist but were limit-clipped away from convergence
        failure = InfeasibleGoalError("ik", "no posture branch converged")
    raise failure


def sample_feasible_goal(arm: ArmModel, target: Target, geom: TaskGeometry,
                         workspace: WorkspaceRanges, env: Environment,
                         rng: np.random.Generator, max_draws: int = 2000
                         ) -> tuple[ThrowState, JointState, int]:
    """Rejection-sample the manifold until a feasible goal is found.

    Returns (throw, joint_state, draws_used); raises InfeasibleGoalError with
    stage 'exhausted' if max_draws candidates all fail.
    """
    for i in range(1, max_draws + 1):
        throw = sample_throw_state(target, geom, workspace, rng)
        try:
            return throw, feasible_goal(arm, throw, geom, env, rng), i
        except InfeasibleGoalError:
            continue
    raise InfeasibleGoalError("exhausted", f"no feasible goal in {max_draws} draws")
