"""Serial-manipulator kinematics, impedance control, and the scan simulation.

The control law renders spring-damper-inertia behavior at the end effector:
joint torques are the transposed Jacobian applied to the desired wrench plus
stiffness, damping, and inertia terms on the pose error. Motion is integrated
in task space: the lateral and orientation degrees of freedom track the
commanded scan waypoint exactly (idealized position controller) while the
axial degree of freedom evolves under a virtual mass pressed against a
spring-damper tissue model (compliant force controller).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .spatial import Pose, RigidTransform, Rotation, Vec3, slerp


class LengthMismatch(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class NonpositiveStiffness(ValueError):
    pass


class InvalidTimestep(ValueError):
    pass


class SafetyLimitExceeded(RuntimeError):
    """Contact force exceeded the configured hard cap."""

    def __init__(self, force: float, limit: float):
        super().__init__(f"contact force {force:.3f} N exceeds safety cap {limit:.3f} N")
        self.force = force
        self.limit = limit


FORCE_SAFETY_CAP_N = 20.0
DEFAULT_VIRTUAL_MASS_KG = 1.0


class JointType(str, Enum):
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"


@dataclass(frozen=True)
class JointSpec:
    """One joint: unit axis in the parent frame, motion type, fixed offset applied first."""

    axis: Vec3
    type: JointType
    origin_offset: RigidTransform

    def __post_init__(self) -> None:
        if abs(self.axis.norm() - 1.0) > 1e-9:
            raise ValueError(f"joint axis must be a unit vector, |axis|={self.axis.norm()}")


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple[JointSpec, ...]
    tool_offset: RigidTransform

    def __post_init__(self) -> None:
        if len(self.joints) < 1:
            raise ValueError("chain needs at least one joint")
        object.__setattr__(self, "joints", tuple(self.joints))

    def __len__(self) -> int:
        return len(self.joints)


@dataclass(frozen=True)
class JointState:
    q: tuple[float, ...]
    qdot: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "qdot", tuple(float(v) for v in self.qdot))
        if len(self.q) != len(self.qdot):
            raise LengthMismatch(f"q has {len(self.q)} entries, qdot has {len(self.qdot)}")
        for v in (*self.q, *self.qdot):
            if not math.isfinite(v):
                raise ValueError("joint state must be finite")

    @staticmethod
    def zeros(n: int) -> "JointState":
        return JointState((0.0,) * n, (0.0,) * n)


def _as_diag6(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (6,):
        raise DimensionMismatch(f"{name} must have 6 diagonal entries, got shape {arr.shape}")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} diagonal entries must be >= 0")
    return arr


@dataclass(frozen=True)
class ImpedanceGains:
    """Diagonal task-space gains plus the desired wrench, world frame.

    Order is (x, y, z, rx, ry, rz). Translational stiffness in N/m,
    rotational in N*m/rad. A press into the tissue is a negative z force
    in `desired_wrench` (z points up, out of the tissue).
    """

    stiffness: tuple[float, ...]
    damping: tuple[float, ...]
    inertia: tuple[float, ...]
    desired_wrench: tuple[float, ...]

    def __post_init__(self) -> None:
        k = _as_diag6(self.stiffness, "stiffness")
        d = _as_diag6(self.damping, "damping")
        m = np.asarray(self.inertia, dtype=float)
        if m.shape != (6,):
            raise DimensionMismatch(f"inertia must have 6 diagonal entries, got shape {m.shape}")
        if np.any(m < 0.0):
            raise ValueError("inertia diagonal entries must be >= 0")
        f = np.asarray(self.desired_wrench, dtype=float)
        if f.shape != (6,):
            raise DimensionMismatch(f"desired_wrench must have 6 entries, got shape {f.shape}")
        if not (np.any(k > 0.0) or np.any(d > 0.0)):
            raise ValueError("at least one of stiffness or damping must be nonzero")
        object.__setattr__(self, "stiffness", tuple(k))
        object.__setattr__(self, "damping", tuple(d))
        object.__setattr__(self, "inertia", tuple(m))
        object.__setattr__(self, "desired_wrench", tuple(f))

    @staticmethod
    def press_defaults(
        press_force_n: float = 8.0,
        axial_stiffness: float = 500.0,
        axial_damping: float = 450.0,
    ) -> "ImpedanceGains":
        """Gains for pressing straight down with the study's force/stiffness values."""
        return ImpedanceGains(
            stiffness=(500.0, 500.0, axial_stiffness, 10.0, 10.0, 10.0),
            damping=(45.0, 45.0, axial_damping, 1.0, 1.0, 1.0),
            inertia=(0.0,) * 6,
            desired_wrench=(0.0, 0.0, -press_force_n, 0.0, 0.0, 0.0),
        )

    @property
    def axial_press_force(self) -> float:
        """Desired force pushed into the tissue (positive down)."""
        return -self.desired_wrench[2]

    @property
    def axial_stiffness(self) -> float:
        return self.stiffness[2]

    @property
    def axial_damping(self) -> float:
        return self.damping[2]


@dataclass(frozen=True)
class PoseError:
    """Task-space error (target relative to current): 3 position, 3 axis-angle."""

    e: tuple[float, ...]
    edot: tuple[float, ...]
    eddot: tuple[float, ...]

    def __post_init__(self) -> None:
        for name in ("e", "edot", "eddot"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (6,):
                raise DimensionMismatch(f"{name} must be a 6-vector, got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, tuple(v))

    @staticmethod
    def zero() -> "PoseError":
        z = (0.0,) * 6
        return PoseError(z, z, z)


@dataclass(frozen=True)
class TissueModel:
    """Unilateral spring-damper surface at a fixed height."""

    surface_height: float
    stiffness: float
    contact_damping: float = 0.0

    def __post_init__(self) -> None:
        if self.stiffness <= 0.0:
            raise NonpositiveStiffness(f"tissue stiffness must be > 0, got {self.stiffness}")
        if self.contact_damping < 0.0:
            raise ValueError("contact damping must be >= 0")


@dataclass(frozen=True)
class ScanPath:
    start_pose: Pose
    end_pose: Pose
    speed: float

    def __post_init__(self) -> None:
        if self.speed <= 0.0:
            raise ValueError(f"scan speed must be > 0, got {self.speed}")

    def length(self) -> float:
        return self.start_pose.position.distance_to(self.end_pose.position)

    def duration(self) -> float:
        return self.length() / self.speed


@dataclass(frozen=True)
class SimState:
    time: float
    probe_pose: Pose
    penetration: float
    penetration_rate: float
    contact_force: float
    joint_state: JointState | None = None


def forward_kinematics(chain: KinematicChain, state: JointState) -> Pose:
    """Tool pose from joint positions by composing per-joint transforms."""
    if len(state.q) != len(chain):
        raise LengthMismatch(f"chain has {len(chain)} joints, state has {len(state.q)}")
    t = RigidTransform.identity()
    for joint, qi in zip(chain.joints, state.q):
        t = t.compose(joint.origin_offset)
        if joint.type is JointType.REVOLUTE:
            motion = RigidTransform.from_rotation(Rotation.from_axis_angle(joint.axis, qi))
        else:
            motion = RigidTransform.from_translation(joint.axis * qi)
        t = t.compose(motion)
    t = t.compose(chain.tool_offset)
    return Pose(t.translation, t.rotation)


def geometric_jacobian(chain: KinematicChain, state: JointState) -> np.ndarray:
    """6 x n geometric Jacobian: rows are tool linear then angular velocity."""
    if len(state.q) != len(chain):
        raise LengthMismatch(f"chain has {len(chain)} joints, state has {len(state.q)}")
    prefix = RigidTransform.identity()
    axes: list[tuple[Vec3, Vec3, JointType]] = []
    for joint, qi in zip(chain.joints, state.q):
        frame = prefix.compose(joint.origin_offset)
        axis_world = frame.rotation.apply(joint.axis)
        origin_world = frame.translation
        axes.append((axis_world, origin_world, joint.type))
        if joint.type is JointType.REVOLUTE:
            motion = RigidTransform.from_rotation(Rotation.from_axis_angle(joint.axis, qi))
        else:
            motion = RigidTransform.from_translation(joint.axis * qi)
        prefix = frame.compose(motion)
    tool = prefix.compose(chain.tool_offset).translation

    jac = np.zeros((6, len(chain)))
    for i, (axis, origin, jtype) in enumerate(axes):
        if jtype is JointType.REVOLUTE:
            lin = axis.cross(tool - origin)
            jac[:3, i] = (lin.x, lin.y, lin.z)
            jac[3:, i] = (axis.x, axis.y, axis.z)
        else:
            jac[:3, i] = (axis.x, axis.y, axis.z)
    return jac


def impedance_torque(jacobian: np.ndarray, gains: ImpedanceGains, err: PoseError) -> np.ndarray:
    """Joint torques tau = J^T (F_d + K e + D edot + M eddot)."""
    jac = np.asarray(jacobian, dtype=float)
    if jac.ndim != 2 or jac.shape[0] != 6:
        raise DimensionMismatch(f"jacobian must be 6 x n, got shape {jac.shape}")
    wrench = (
        np.asarray(gains.desired_wrench)
        + np.asarray(gains.stiffness) * np.asarray(err.e)
        + np.asarray(gains.damping) * np.asarray(err.edot)
        + np.asarray(gains.inertia) * np.asarray(err.eddot)
    )
    return jac.T @ wrench


def pose_error(target: Pose, current: Pose) -> np.ndarray:
    """6-vector of target minus current: position, then world-frame axis-angle."""
    dp = target.position - current.position
    drot = target.orientation.compose(current.orientation.inverse()).rotation_vector()
    return np.array([dp.x, dp.y, dp.z, drot.x, drot.y, drot.z])


def contact_force(tissue: TissueModel, probe_z: float, probe_zdot: float) -> float:
    """Tissue reaction in N: spring on penetration plus damping while pressing in."""
    delta = max(0.0, tissue.surface_height - probe_z)
    if delta <= 0.0:
        return 0.0
    return tissue.stiffness * delta + tissue.contact_damping * max(0.0, -probe_zdot)


def equilibrium_contact_force(
    press_force_n: float, axial_stiffness: float, tissue_stiffness: float
) -> tuple[float, float]:
    """Static balance of the compliant press against the tissue spring.

    Returns (penetration, contact force): the controller supplies the press
    force minus its own stiffness reaction, the tissue pushes back with
    stiffness times penetration.
    """
    total = axial_stiffness + tissue_stiffness
    if total <= 0.0:
        raise NonpositiveStiffness("controller plus tissue stiffness must be > 0")
    delta = press_force_n / total
    return delta, tissue_stiffness * delta


def scan_waypoint(path: ScanPath, t: float) -> Pose:
    """Commanded pose at time t: constant-speed position, slerp orientation, clamped at the end."""
    if t < 0.0:
        raise ValueError(f"time must be >= 0, got {t}")
    length = path.length()
    s = 1.0 if length == 0.0 else min(1.0, path.speed * t / length)
    p0 = path.start_pose.position
    p1 = path.end_pose.position
    pos = Vec3(
        p0.x + s * (p1.x - p0.x),
        p0.y + s * (p1.y - p0.y),
        p0.z + s * (p1.z - p0.z),
    )
    return Pose(pos, slerp(path.start_pose.orientation, path.end_pose.orientation, s))


def step_simulation(
    state: SimState,
    gains: ImpedanceGains,
    tissue: TissueModel,
    path: ScanPath,
    dt: float,
    *,
    virtual_mass: float = DEFAULT_VIRTUAL_MASS_KG,
    force_limit: float = FORCE_SAFETY_CAP_N,
) -> SimState:
    """Advance the scan by dt seconds.

    Semi-implicit Euler on the axial penetration under the compliant press
    (press force, controller spring/damper, tissue reaction); the waypoint is
    tracked exactly on the remaining degrees of freedom. Raises
    SafetyLimitExceeded when the tissue force passes the hard cap.
    Deterministic: identical inputs yield an identical state.
    """
    if not (0.0 < dt <= 0.01):
        raise InvalidTimestep(f"dt must be in (0, 0.01], got {dt}")
    t_new = state.time + dt
    target = scan_waypoint(path, t_new)

    delta = state.penetration
    rate = state.penetration_rate
    f_contact = contact_force(tissue, target.position.z - delta, -rate)
    accel = (
        gains.axial_press_force
        - gains.axial_stiffness * delta
        - gains.axial_damping * rate
        - f_contact
    ) / virtual_mass
    rate = rate + accel * dt
    delta = delta + rate * dt
    if delta < 0.0:
        # Probe back on the commanded waypoint; stop there rather than overshooting up.
        delta, rate = 0.0, 0.0

    probe = Pose(
        Vec3(target.position.x, target.position.y, target.position.z - delta),
        target.orientation,
    )
    f_new = contact_force(tissue, probe.position.z, -rate)
    if f_new > force_limit:
        raise SafetyLimitExceeded(f_new, force_limit)
    return SimState(t_new, probe, delta, rate, f_new, state.joint_state)


def default_probe_chain() -> KinematicChain:
    """XYZ prismatic carriage plus a z-y-x revolute wrist holding the probe."""
    ident = RigidTransform.identity()
    return KinematicChain(
        joints=(
            JointSpec(Vec3(1.0, 0.0, 0.0), JointType.PRISMATIC, ident),
            JointSpec(Vec3(0.0, 1.0, 0.0), JointType.PRISMATIC, ident),
            JointSpec(Vec3(0.0, 0.0, 1.0), JointType.PRISMATIC, ident),
            JointSpec(Vec3(0.0, 0.0, 1.0), JointType.REVOLUTE, ident),
            JointSpec(Vec3(0.0, 1.0, 0.0), JointType.REVOLUTE, ident),
            JointSpec(Vec3(1.0, 0.0, 0.0), JointType.REVOLUTE, ident),
        ),
        tool_offset=ident,
    )


def probe_joint_positions(pose: Pose) -> tuple[float, ...]:
    """Closed-form joint positions of the default probe chain for a tool pose."""
    m = pose.orientation.to_matrix()
    # ZYX intrinsic Euler angles of R = Rz(a) Ry(b) Rx(c).
    b = math.asin(max(-1.0, min(1.0, -m[2, 0])))
    if abs(math.cos(b)) > 1e-9:
        a = math.atan2(m[1, 0], m[0, 0])
        c = math.atan2(m[2, 1], m[2, 2])
    else:
        a = math.atan2(-m[0, 1], m[1, 1])
        c = 0.0
    p = pose.position
    return (p.x, p.y, p.z, a, b, c)


MAX_STABLE_DT = 0.001


class Simulator:
    """Owns the stepped scan state and a torque/pose trace for logging.

    step() splits each advance into sub-steps of at most 1 ms so callers can
    tick at a coarser rate than the stiff axial dynamics can tolerate.
    """

    def __init__(
        self,
        gains: ImpedanceGains,
        tissue: TissueModel,
        path: ScanPath,
        *,
        chain: KinematicChain | None = None,
        virtual_mass: float = DEFAULT_VIRTUAL_MASS_KG,
        force_limit: float = FORCE_SAFETY_CAP_N,
    ):
        self.gains = gains
        self.tissue = tissue
        self.path = path
        self.chain = chain if chain is not None else default_probe_chain()
        self.virtual_mass = virtual_mass
        self.force_limit = force_limit
        start = scan_waypoint(path, 0.0)
        q0 = probe_joint_positions(start)
        self.state = SimState(
            0.0, start, 0.0, 0.0, 0.0, JointState(q0, (0.0,) * len(q0))
        )
        self._prev_err = np.zeros(6)
        # Logging Jacobian at the nominal configuration; constant by design.
        self._jacobian = geometric_jacobian(self.chain, JointState.zeros(len(self.chain)))
        self.torque_trace: list[np.ndarray] = []

    def scan_complete(self) -> bool:
        return self.state.time >= self.path.duration()

    def step(self, dt: float) -> SimState:
        prev_q = self.state.joint_state.q if self.state.joint_state else None
        substeps = max(1, math.ceil(dt / MAX_STABLE_DT))
        sub_dt = dt / substeps
        new = self.state
        for _ in range(substeps):
            new = step_simulation(
                new, self.gains, self.tissue, self.path, sub_dt,
                virtual_mass=self.virtual_mass, force_limit=self.force_limit,
            )
        target = scan_waypoint(self.path, new.time)
        err = pose_error(target, new.probe_pose)
        errdot = (err - self._prev_err) / dt
        self._prev_err = err
        tau = impedance_torque(
            self._jacobian, self.gains, PoseError(tuple(err), tuple(errdot), (0.0,) * 6)
        )
        self.torque_trace.append(tau)
        q = probe_joint_positions(new.probe_pose)
        qdot = tuple((qn - qp) / dt for qn, qp in zip(q, prev_q)) if prev_q else (0.0,) * 6
        new = SimState(
            new.time, new.probe_pose, new.penetration, new.penetration_rate,
            new.contact_force, JointState(q, qdot),
        )
        self.state = new
        return new


def save_chain(chain: KinematicChain, path) -> None:
    def transform_dict(t: RigidTransform) -> dict:
        return {
            "rotation_wxyz": [t.rotation.w, t.rotation.x, t.rotation.y, t.rotation.z],
            "translation_m": [t.translation.x, t.translation.y, t.translation.z],
        }

    obj = {
        "joints": [
            {
                "type": j.type.value,
                "axis": [j.axis.x, j.axis.y, j.axis.z],
                "offset": transform_dict(j.origin_offset),
            }
            for j in chain.joints
        ],
        "tool_offset": transform_dict(chain.tool_offset),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def load_chain(path) -> KinematicChain:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)

    def parse_transform(d: dict) -> RigidTransform:
        w, x, y, z = (float(v) for v in d["rotation_wxyz"])
        tx, ty, tz = (float(v) for v in d["translation_m"])
        return RigidTransform(Rotation(w, x, y, z), Vec3(tx, ty, tz))

    joints = tuple(
        JointSpec(
            Vec3(*(float(v) for v in j["axis"])),
            JointType(j["type"]),
            parse_transform(j["offset"]),
        )
        for j in obj["joints"]
    )
    return KinematicChain(joints, parse_transform(obj["tool_offset"]))
