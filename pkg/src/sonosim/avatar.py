"""Procedural avatar behaviors: head look-at and two-bone arm reach.

The head turns toward whoever is speaking; the hand reaches onto the probe
whenever the robot brings it within arm's reach, with hysteresis so the
engagement does not chatter at the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spatial import Rotation, Vec3


class DegenerateTarget(ValueError):
    pass


class DegeneratePole(ValueError):
    pass


REACH_DISENGAGE_FACTOR = 1.05


@dataclass(frozen=True)
class AvatarRig:
    head_position: Vec3
    head_forward_rest: Vec3
    shoulder_position: Vec3
    upper_arm_length: float
    forearm_length: float
    reach_engage_radius: float

    def __post_init__(self) -> None:
        if self.upper_arm_length <= 0.0 or self.forearm_length <= 0.0:
            raise ValueError("arm segment lengths must be > 0")
        if self.reach_engage_radius <= 0.0:
            raise ValueError("reach engage radius must be > 0")
        if self.reach_engage_radius > self.upper_arm_length + self.forearm_length:
            raise ValueError("reach engage radius cannot exceed total arm length")
        object.__setattr__(self, "head_forward_rest", self.head_forward_rest.normalized())

    @staticmethod
    def seated_default() -> "AvatarRig":
        """Assistant seated next to the exam table, an arm's length from the scan."""
        return AvatarRig(
            head_position=Vec3(0.05, -0.45, 0.55),
            head_forward_rest=Vec3(1.0, 0.0, 0.0),
            shoulder_position=Vec3(0.05, -0.40, 0.30),
            upper_arm_length=0.30,
            forearm_length=0.28,
            reach_engage_radius=0.58,
        )


@dataclass(frozen=True)
class ArmSolution:
    elbow_angle: float
    shoulder_rotation: Rotation
    elbow_position: Vec3
    wrist_position: Vec3
    reachable: bool


def look_at(rig: AvatarRig, target: Vec3) -> Rotation:
    """Minimal-angle head rotation aligning the rest forward direction with the target."""
    offset = target - rig.head_position
    if offset.norm() < 1e-12:
        raise DegenerateTarget("look-at target coincides with the head position")
    return Rotation.between_vectors(rig.head_forward_rest, offset)


def _perpendicular_component(v: Vec3, axis: Vec3) -> Vec3:
    return v - axis * v.dot(axis)


def default_pole_hint(shoulder: Vec3, target: Vec3) -> Vec3:
    """A pole direction guaranteed not collinear with shoulder->target."""
    toward = (target - shoulder).normalized()
    for candidate in (Vec3(0.0, 0.0, -1.0), Vec3(0.0, 1.0, 0.0), Vec3(1.0, 0.0, 0.0)):
        if _perpendicular_component(candidate, toward).norm() > 1e-6:
            return candidate
    raise DegeneratePole("no usable pole direction")  # pragma: no cover


def two_bone_ik(rig: AvatarRig, target: Vec3, pole_hint: Vec3) -> ArmSolution:
    """Analytic shoulder-elbow-wrist solution.

    Reachable targets put the wrist exactly on the target with the elbow in
    the half-plane selected by the pole direction; targets beyond the arm
    clamp to a straight arm pointing at the target.
    """
    u = rig.upper_arm_length
    f = rig.forearm_length
    to_target = target - rig.shoulder_position
    d = to_target.norm()
    if d < 1e-12:
        raise DegeneratePole("target coincides with the shoulder; bend plane undefined")
    toward = to_target * (1.0 / d)
    pole_perp = _perpendicular_component(pole_hint, toward)
    if pole_perp.norm() < 1e-9:
        raise DegeneratePole("pole hint is collinear with the shoulder-to-target line")
    pole_dir = pole_perp.normalized()

    if d >= u + f:
        elbow = rig.shoulder_position + toward * u
        wrist = rig.shoulder_position + toward * (u + f)
        elbow_angle = math.pi
        reachable = d <= (u + f) * (1.0 + 1e-12)
    else:
        # Interior angles of the shoulder-elbow-wrist triangle.
        cos_elbow = max(-1.0, min(1.0, (u * u + f * f - d * d) / (2.0 * u * f)))
        cos_shoulder = max(-1.0, min(1.0, (u * u + d * d - f * f) / (2.0 * u * d)))
        elbow_angle = math.acos(cos_elbow)
        alpha = math.acos(cos_shoulder)
        elbow = rig.shoulder_position + (
            toward * (math.cos(alpha) * u) + pole_dir * (math.sin(alpha) * u)
        )
        wrist = target
        reachable = True

    # Upper-arm frame: x along the bone, z along the bend axis, y completes it.
    upper_dir = (elbow - rig.shoulder_position).normalized()
    bend_axis = toward.cross(pole_dir)
    y_axis = bend_axis.cross(upper_dir)
    frame = np.column_stack([upper_dir.as_array(), y_axis.as_array(), bend_axis.as_array()])
    shoulder_rotation = Rotation.from_matrix(frame)
    return ArmSolution(elbow_angle, shoulder_rotation, elbow, wrist, reachable)


@dataclass
class ReachState:
    engaged: bool
    solution: ArmSolution | None


class ReachBehavior:
    """Engagement state for the reach-onto-probe behavior, with hysteresis."""

    def __init__(self, rig: AvatarRig, pole_hint: Vec3 | None = None):
        self.rig = rig
        self.pole_hint = pole_hint
        self.engaged = False

    def update(self, probe_position: Vec3) -> ReachState:
        dist = probe_position.distance_to(self.rig.shoulder_position)
        radius = self.rig.reach_engage_radius
        if self.engaged:
            self.engaged = dist <= radius * REACH_DISENGAGE_FACTOR
        else:
            self.engaged = dist <= radius
        if not self.engaged:
            return ReachState(False, None)
        pole = self.pole_hint
        if pole is None:
            pole = default_pole_hint(self.rig.shoulder_position, probe_position)
        return ReachState(True, two_bone_ik(self.rig, probe_position, pole))
