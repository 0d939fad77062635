"""Dual 7-DoF arm model: forward kinematics, Jacobians, RNEA and weighted IK.

Frames: torso frame has x forward, y left, z up. Joint ``i`` of a chain sits
at ``offset`` in the frame of joint ``i-1`` (the torso for the first joint)
and rotates about ``axis`` expressed in its own frame. Link centres of mass
are given in the frame of the joint that moves them; the end-effector sits
at ``tool`` in the last joint frame.

Joint vectors are always 14 long: left arm 0-6, right arm 7-13.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

SIDES = ("left", "right")
N_ARM = 7
N_JOINTS = 2 * N_ARM

DEFAULT_MODEL_PATH = Path(__file__).parent / "data" / "arm_model.json"


@dataclass(frozen=True)
class Joint:
    name: str
    axis: np.ndarray
    offset: np.ndarray
    mass: float
    com: np.ndarray
    lower: float = -np.pi
    upper: float = np.pi
    # rotational inertia about the COM in the joint frame; point mass if zero
    inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))


@dataclass(frozen=True)
class Chain:
    joints: tuple[Joint, ...]
    tool: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __len__(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])


@dataclass(frozen=True)
class ArmModel:
    left: Chain
    right: Chain
    home: np.ndarray
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    armature: float = 0.02
    friction: float = 0.1
    name: str = ""

    def __post_init__(self):
        for side in SIDES:
            chain = self.chain(side)
            if len(chain) != N_ARM:
                raise ValueError(f"{side} chain must have {N_ARM} joints, has {len(chain)}")
            for j in chain.joints:
                if not j.mass > 0:
                    raise ValueError(f"joint {j.name}: mass must be positive")
        if np.shape(self.home) != (N_JOINTS,):
            raise ValueError("home posture must have 14 entries")

    def chain(self, side: str) -> Chain:
        if side == "left":
            return self.left
        if side == "right":
            return self.right
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([self.left.lower, self.right.lower])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([self.left.upper, self.right.upper])

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.left.joints + self.right.joints]

    def clip(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)


def arm_slice(side: str) -> slice:
    return slice(0, N_ARM) if side == "left" else slice(N_ARM, N_JOINTS)


def _joint_from_dict(d: dict) -> Joint:
    axis = np.asarray(d["axis"], dtype=float)
    axis = axis / np.linalg.norm(axis)
    lo, hi = d.get("limits", (-np.pi, np.pi))
    inertia = np.asarray(d.get("inertia", np.zeros((3, 3))), dtype=float)
    return Joint(d["name"], axis, np.asarray(d["offset"], float), float(d["mass"]),
                 np.asarray(d["com"], float), float(lo), float(hi), inertia)


def load_model(path: str | Path | None = None) -> ArmModel:
    path = Path(path or DEFAULT_MODEL_PATH)
    doc = json.loads(path.read_text(encoding="utf-8"))
    chains = {}
    for side in SIDES:
        c = doc["chains"][side]
        chains[side] = Chain(tuple(_joint_from_dict(j) for j in c["joints"]), np.asarray(c.get("tool", [0, 0, 0]), float))
    return ArmModel(
        left=chains["left"],
        right=chains["right"],
        home=np.asarray(doc["home"], float),
        gravity=np.asarray(doc.get("gravity", [0.0, 0.0, -9.81]), float),
        armature=float(doc.get("armature", 0.02)),
        friction=float(doc.get("friction", 0.1)),
        name=doc.get("name", path.stem),
    )


_default_model: ArmModel | None = None


def default_model() -> ArmModel:
    global _default_model
    if _default_model is None:
        _default_model = load_model()
    return _default_model


# ---------------------------------------------------------------- rotations

def cross(a, b) -> np.ndarray:
    """3-vector cross product; far cheaper than np.cross for single vectors."""
    a0, a1, a2 = a
    b0, b1, b2 = b
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def left_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    """Inverse left Jacobian of SO(3): maps world angular velocity to d(rotvec)/dt."""
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * K + coef * (K @ K)


@dataclass(frozen=True)
class Pose6D:
    position: np.ndarray
    quaternion: np.ndarray  # scalar-last (x, y, z, w)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        qn = np.asarray(self.quaternion, dtype=float)
        if p.shape != (3,) or qn.shape != (4,):
            raise ValueError("Pose6D needs a 3-vector position and a 4-vector quaternion")
        n = np.linalg.norm(qn)
        if not np.isfinite(n) or n == 0:
            raise ValueError("quaternion must be finite and nonzero")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quaternion", qn / n)

    @classmethod
    def from_matrix(cls, R: np.ndarray, p: np.ndarray) -> "Pose6D":
        return cls(np.array(p, dtype=float), Rotation.from_matrix(R).as_quat())

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternion).as_matrix()

    def to_list(self) -> list[float]:
        return list(self.position) + list(self.quaternion)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose6D":
        if len(values) != 7:
            raise ValueError("pose list must be [x, y, z, qx, qy, qz, qw]")
        return cls(np.asarray(values[:3], float), np.asarray(values[3:], float))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.quaternion)))


# ---------------------------------------------------------------- kinematics

def chain_frames(chain: Chain, q: Sequence[float]) -> tuple[list[np.ndarray], list[np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """World rotations and origins of every joint frame, plus the tool frame."""
    R = np.eye(3)
    p = np.zeros(3)
    Rs, ps = [], []
    for joint, qi in zip(chain.joints, q):
        p = p + R @ joint.offset
        R = R @ axis_angle(joint.axis, qi)
        Rs.append(R)
        ps.append(p)
    p_tool = p + R @ chain.tool
    return Rs, ps, (R, p_tool)


def _arm_q(q: Sequence[float], side: str) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape == (N_JOINTS,):
        return q[arm_slice(side)]
    if q.shape == (N_ARM,):
        return q
    raise ValueError(f"joint vector must have {N_JOINTS} (or {N_ARM}) entries, got shape {q.shape}")


def end_effector(model: ArmModel, q: Sequence[float], side: str) -> tuple[np.ndarray, np.ndarray]:
    _, _, (R, p) = chain_frames(model.chain(side), _arm_q(q, side))
    return R, p


def forward_kinematics(model: ArmModel, q: Sequence[float]) -> tuple[Pose6D, Pose6D]:
    """(left, right) end-effector poses in the torso frame."""
    q = np.asarray(q, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError("forward_kinematics needs a 14-joint vector")
    return tuple(Pose6D.from_matrix(*end_effector(model, q, s)) for s in SIDES)  # type: ignore[return-value]


def chain_jacobian(chain: Chain, q: Sequence[float], upto: int | None = None, point: np.ndarray | None = None) -> np.ndarray:
    """Geometric Jacobian [linear; angular] of a point rigidly attached to joint frame ``upto``.

    ``upto=None`` means the tool frame. Columns of joints beyond ``upto`` are zero.
    """
    Rs, ps, (_, p_tool) = chain_frames(chain, q)
    n = len(chain)
    last = n if upto is None else upto + 1
    if point is None:
        point = p_tool if upto is None else ps[upto]
    J = np.zeros((6, n))
    for i in range(last):
        z = Rs[i] @ chain.joints[i].axis
        J[:3, i] = cross(z, point - ps[i])
        J[3:, i] = z
    return J


def jacobian(model: ArmModel, q: Sequence[float], side: str, upto: int | None = None) -> np.ndarray:
    """6x7 geometric Jacobian of one arm's end-effector (or of joint frame ``upto``)."""
    return chain_jacobian(model.chain(side), _arm_q(q, side), upto)


def jacobian_full(model: ArmModel, q: Sequence[float], side: str) -> np.ndarray:
    """6x14 Jacobian; the other arm's columns are identically zero."""
    J = np.zeros((6, N_JOINTS))
    J[:, arm_slice(side)] = jacobian(model, q, side)
    return J


# ---------------------------------------------------------------- dynamics

def chain_rnea(chain: Chain, q, qd, qdd, gravity: np.ndarray) -> np.ndarray:
    """Recursive Newton-Euler inverse dynamics of one chain, world-frame formulation.

    The fixed torso is treated as the base; gravity enters as a fictitious
    upward base acceleration.
    """
    n = len(chain)
    q = np.asarray(q, float)
    qd = np.asarray(qd, float)
    qdd = np.asarray(qdd, float)
    Rs, ps, _ = chain_frames(chain, q)

    omega = np.zeros(3)
    alpha = np.zeros(3)
    acc = -np.asarray(gravity, float)  # linear acceleration of the current frame origin
    p_prev = np.zeros(3)
    link_force = []
    link_moment = []
    coms = []
    for i, joint in enumerate(chain.joints):
        r = ps[i] - p_prev
        acc = acc + cross(alpha, r) + cross(omega, cross(omega, r))
        z = Rs[i] @ joint.axis
        alpha = alpha + z * qdd[i] + cross(omega, z * qd[i])
        omega = omega + z * qd[i]
        c = Rs[i] @ joint.com
        a_c = acc + cross(alpha, c) + cross(omega, cross(omega, c))
        I_w = Rs[i] @ joint.inertia @ Rs[i].T
        link_force.append(joint.mass * a_c)
        link_moment.append(I_w @ alpha + cross(omega, I_w @ omega))
        coms.append(c)
        p_prev = ps[i]

    tau = np.zeros(n)
    f_next = np.zeros(3)
    n_next = np.zeros(3)
    for i in range(n - 1, -1, -1):
        r_next = (ps[i + 1] - ps[i]) if i + 1 < n else np.zeros(3)
        n_i = n_next + cross(r_next, f_next) + cross(coms[i], link_force[i]) + link_moment[i]
        f_i = f_next + link_force[i]
        tau[i] = (Rs[i] @ chain.joints[i].axis) @ n_i
        f_next, n_next = f_i, n_i
    return tau


def rnea(model: ArmModel, q, qd=None, qdd=None) -> np.ndarray:
    q = np.asarray(q, float)
    qd = np.zeros(N_JOINTS) if qd is None else np.asarray(qd, float)
    qdd = np.zeros(N_JOINTS) if qdd is None else np.asarray(qdd, float)
    tau = np.zeros(N_JOINTS)
    for side in SIDES:
        s = arm_slice(side)
        tau[s] = chain_rnea(model.chain(side), q[s], qd[s], qdd[s], model.gravity)
    return tau


def gravity_torques(model: ArmModel, q) -> np.ndarray:
    """Joint torques that hold the arms static against gravity at ``q``."""
    q = np.asarray(q, float)
    if q.shape != (N_JOINTS,):
        raise ValueError("gravity_torques needs a 14-joint vector")
    return rnea(model, q)


def chain_com_positions(chain: Chain, q) -> list[np.ndarray]:
    Rs, ps, _ = chain_frames(chain, q)
    return [p + R @ j.com for R, p, j in zip(Rs, ps, chain.joints)]


def potential_energy(model: ArmModel, q) -> float:
    q = np.asarray(q, float)
    U = 0.0
    for side in SIDES:
        chain = model.chain(side)
        for j, c in zip(chain.joints, chain_com_positions(chain, q[arm_slice(side)])):
            U -= j.mass * float(model.gravity @ c)
    return U


def lumped_inertia(model: ArmModel, q=None) -> np.ndarray:
    """Per-joint scalar inertia: mass-matrix diagonal at ``q`` (default home) plus rotor armature."""
    q = model.home if q is None else np.asarray(q, float)
    out = np.zeros(N_JOINTS)
    for side in SIDES:
        chain = model.chain(side)
        qa = q[arm_slice(side)]
        Rs, ps, _ = chain_frames(chain, qa)
        coms = chain_com_positions(chain, qa)
        diag = np.zeros(N_ARM)
        for i in range(N_ARM):
            z = Rs[i] @ chain.joints[i].axis
            for k in range(i, N_ARM):
                lever = cross(z, coms[k] - ps[i])
                I_w = Rs[k] @ chain.joints[k].inertia @ Rs[k].T
                diag[i] += chain.joints[k].mass * lever @ lever + z @ I_w @ z
        out[arm_slice(side)] = diag + model.armature
    return out


# ---------------------------------------------------------------- IK

@dataclass(frozen=True)
class IkWeights:
    w_trans: float = 1.0
    w_rot: float = 0.5
    w_reg: float = 1e-3
    w_smooth: float = 1e-2

    def __post_init__(self):
        if not self.w_trans > 0:
            raise ValueError("w_trans must be positive")
        if min(self.w_rot, self.w_reg, self.w_smooth) < 0:
            raise ValueError("IK weights must be non-negative")


class IkSolution(NamedTuple):
    q: np.ndarray
    residual: float
    iterations: int
    cost: float
    converged: bool


def _pose_errors(model: ArmModel, q: np.ndarray, targets: Sequence[Pose6D]):
    out = []
    for side, tgt in zip(SIDES, targets):
        R, p = end_effector(model, q, side)
        out.append((p - tgt.position, so3_log(R @ tgt.rotation.T)))
    return out


def ik_cost(model: ArmModel, q, targets, q_prev, w: IkWeights) -> float:
    q = np.asarray(q, float)
    c = 0.0
    for dp, dth in _pose_errors(model, q, targets):
        c += w.w_trans * dp @ dp + w.w_rot * dth @ dth
    c += w.w_reg * np.sum((q - model.home) ** 2) + w.w_smooth * np.sum((q - q_prev) ** 2)
    return float(c)


def task_residual(model: ArmModel, q, targets) -> float:
    return float(np.sqrt(sum(dp @ dp + dth @ dth for dp, dth in _pose_errors(model, np.asarray(q, float), targets))))


def solve_ik(
    model: ArmModel,
    targets: Sequence[Pose6D],
    q_prev,
    w: IkWeights | None = None,
    tol: float = 1e-5,
    max_iters: int = 200,
    damping: float = 1e-4,
    q_init=None,
) -> IkSolution:
    """Damped least-squares descent on the weighted dual-arm cost

        w_trans |dp|^2 + w_rot |dtheta|^2 + w_reg |q - q_home|^2 + w_smooth |q - q_prev|^2

    with backtracking so the cost never increases and joint limits clamped
    every iteration. Starts from ``q_init`` (default ``q_prev``). Stops when an
    accepted step is shorter than ``tol`` or no descent step exists.
    A large returned residual flags non-convergence; it is not raised.
    """
    w = w or IkWeights()
    if len(targets) != 2:
        raise ValueError("need (left, right) target poses")
    for t in targets:
        if not t.is_finite():
            raise ValueError("IK target pose must be finite")
    q_prev = np.asarray(q_prev, float)
    if q_prev.shape != (N_JOINTS,) or not np.all(np.isfinite(q_prev)):
        raise ValueError("q_prev must be a finite 14-vector")
    q = model.clip(np.asarray(q_init if q_init is not None else q_prev, float))

    sw = np.sqrt([w.w_trans] * 3 + [w.w_rot] * 3)
    reg_rows = np.sqrt(w.w_reg) * np.eye(N_JOINTS)
    smooth_rows = np.sqrt(w.w_smooth) * np.eye(N_JOINTS)

    def residual_vector(q):
        parts = []
        for dp, dth in _pose_errors(model, q, targets):
            parts.append(sw * np.concatenate([dp, dth]))
        parts.append(np.sqrt(w.w_reg) * (q - model.home))
        parts.append(np.sqrt(w.w_smooth) * (q - q_prev))
        return np.concatenate(parts)

    r = residual_vector(q)
    cost = float(r @ r)
    iters = 0
    converged = False
    while iters < max_iters:
        if cost == 0.0:
            converged = True
            break
        A = np.zeros((12, N_JOINTS))
        for k, side in enumerate(SIDES):
            J = jacobian(model, q, side)
            dth = r[6 * k + 3:6 * k + 6] / sw[3:] if w.w_rot > 0 else np.zeros(3)
            J = J.copy()
            J[3:] = left_jacobian_inverse(dth) @ J[3:]
            A[6 * k:6 * k + 6, arm_slice(side)] = sw[:, None] * J
        A = np.vstack([A, reg_rows, smooth_rows])
        g = A.T @ r
        H = A.T @ A + damping * np.eye(N_JOINTS)
        step = -np.linalg.solve(H, g)

        iters += 1
        accepted = False
        alpha = 1.0
        while alpha >= 1e-6:
            q_new = model.clip(q + alpha * step)
            r_new = residual_vector(q_new)
            c_new = float(r_new @ r_new)
            if c_new < cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True
            break
        moved = np.linalg.norm(q_new - q)
        q, r, cost = q_new, r_new, c_new
        if moved < tol:
            converged = True
            break
    return IkSolution(q, task_residual(model, q, targets), iters, cost, converged)


def reach(model: ArmModel, side: str) -> float:
    """Upper bound on the distance from the first joint to the tool point."""
    chain = model.chain(side)
    return float(sum(np.linalg.norm(j.offset) for j in chain.joints[1:]) + np.linalg.norm(chain.tool))


def shoulder_position(model: ArmModel, side: str) -> np.ndarray:
    return model.chain(side).joints[0].offset.copy()
