"""Serial kinematic chains with sphere collision geometry.

Frame 0 is the robot base (after the optional planar x, y, theta motion);
frame ``j + 1`` is the link moved by joint ``j``. Every evaluation is
batched over configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _rotation(axis, angle):
    """Rodrigues rotation for a unit ``axis`` and angles of shape (K,) -> (K, 3, 3)."""
    a = np.asarray(axis, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return (np.eye(3)[None] + s[:, None, None] * K[None]
            + (1 - c)[:, None, None] * (K @ K)[None])


def transform(translation=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Homogeneous 4x4 from a translation and roll/pitch/yaw (applied z*y*x)."""
    r, p, y = rpy
    R = (_rotation((0, 0, 1), np.array([y]))[0] @ _rotation((0, 1, 0), np.array([p]))[0]
         @ _rotation((1, 0, 0), np.array([r]))[0])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = translation
    return T


@dataclass
class Joint:
    type: str
    axis: np.ndarray
    parent: np.ndarray = field(default_factory=lambda: np.eye(4))
    limits: tuple[float, float] = (-np.pi, np.pi)
    vmax: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.type not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint type {self.type!r}")
        self.axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(self.axis)
        if n == 0:
            raise ValueError("joint axis must be non-zero")
        self.axis = self.axis / n
        self.parent = np.asarray(self.parent, dtype=float)
        if self.limits[0] > self.limits[1]:
            raise ValueError(f"joint {self.name!r} has lo > hi")
        if self.vmax <= 0:
            raise ValueError(f"joint {self.name!r} needs vmax > 0")


@dataclass
class CollisionSphere:
    frame: int
    offset: np.ndarray
    radius: float

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float)
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass
class RobotModel:
    name: str
    joints: list[Joint]
    spheres: list[CollisionSphere]
    base: str = "fixed"
    base_pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    base_limits: tuple = ((-10.0, 10.0), (-10.0, 10.0), (-np.pi, np.pi))
    base_vmax: tuple = (0.5, 0.5, 1.0)

    def __post_init__(self):
        if self.base not in ("fixed", "planar_holonomic"):
            raise ValueError(f"unknown base type {self.base!r}")
        self.base_pose = np.asarray(self.base_pose, dtype=float)
        for s in self.spheres:
            if not 0 <= s.frame <= len(self.joints):
                raise ValueError(f"sphere attached to invalid frame {s.frame}")
        self._frames = np.array([s.frame for s in self.spheres])
        self._offsets = np.array([s.offset for s in self.spheres]).reshape(-1, 3)
        self.radii = np.array([s.radius for s in self.spheres])
        # ancestor[s, j]: joint j moves sphere s
        self._ancestor = np.array([[s.frame > j for j in range(len(self.joints))]
                                   for s in self.spheres], dtype=bool).reshape(len(self.spheres), -1)
        self._revolute = np.array([j.type == "revolute" for j in self.joints], dtype=bool)

    @property
    def n_base(self) -> int:
        return 3 if self.base == "planar_holonomic" else 0

    @property
    def dof(self) -> int:
        return self.n_base + len(self.joints)

    @property
    def n_spheres(self) -> int:
        return len(self.spheres)

    @property
    def limits(self) -> np.ndarray:
        lim = list(self.base_limits[: self.n_base]) + [j.limits for j in self.joints]
        return np.array(lim, dtype=float).reshape(-1, 2)

    @property
    def vmax(self) -> np.ndarray:
        return np.array(list(self.base_vmax[: self.n_base]) + [j.vmax for j in self.joints], dtype=float)

    def within_limits(self, q) -> bool:
        lim = self.limits
        q = np.asarray(q)
        return bool(np.all((q >= lim[:, 0]) & (q <= lim[:, 1])))

    def _check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.dof:
            raise ValueError(f"{self.name}: expected {self.dof}-dimensional configuration, got {q.shape[-1]}")
        return q

    def _chain(self, Q):
        """Joint origins/axes (K, J, 3) and world frame transforms of every link."""
        K = Q.shape[0]
        T = np.broadcast_to(self.base_pose, (K, 4, 4)).copy()
        if self.n_base:
            x, y, th = Q[:, 0], Q[:, 1], Q[:, 2]
            B = np.zeros((K, 4, 4))
            B[:, :3, :3] = _rotation((0, 0, 1), th)
            B[:, 0, 3], B[:, 1, 3], B[:, 3, 3] = x, y, 1.0
            T = B @ T
        frames = [T]
        J = len(self.joints)
        origins = np.empty((K, J, 3))
        axes = np.empty((K, J, 3))
        for j, joint in enumerate(self.joints):
            Tp = T @ joint.parent
            origins[:, j] = Tp[:, :3, 3]
            axes[:, j] = Tp[:, :3, :3] @ joint.axis
            qj = Q[:, self.n_base + j]
            M = np.zeros((K, 4, 4))
            M[:, 3, 3] = 1.0
            if joint.type == "revolute":
                M[:, :3, :3] = _rotation(joint.axis, qj)
            else:
                M[:, :3, :3] = np.eye(3)
                M[:, :3, 3] = qj[:, None] * joint.axis
            T = Tp @ M
            frames.append(T)
        return np.stack(frames, axis=1), origins, axes

    def forward_kinematics(self, q) -> np.ndarray:
        """World sphere centers, shape (..., n_spheres, 3)."""
        q = self._check(q)
        lead = q.shape[:-1]
        F, _, _ = self._chain(q.reshape(-1, self.dof))
        Fs = F[:, self._frames]
        c = np.einsum("ksab,sb->ksa", Fs[:, :, :3, :3], self._offsets) + Fs[:, :, :3, 3]
        return c.reshape(lead + (self.n_spheres, 3))

    def sphere_jacobians(self, q, with_centers: bool = False):
        """d(center)/dq per sphere, shape (..., n_spheres, 3, dof)."""
        q = self._check(q)
        lead = q.shape[:-1]
        Q = q.reshape(-1, self.dof)
        K, S, nb = Q.shape[0], self.n_spheres, self.n_base
        F, O, A = self._chain(Q)
        Fs = F[:, self._frames]
        C = np.einsum("ksab,sb->ksa", Fs[:, :, :3, :3], self._offsets) + Fs[:, :, :3, 3]
        Jac = np.zeros((K, S, 3, self.dof))
        if nb:
            Jac[:, :, 0, 0] = 1.0
            Jac[:, :, 1, 1] = 1.0
            lever = C - F[:, 0, None, :3, 3]
            Jac[:, :, 0, 2] = -lever[..., 1]
            Jac[:, :, 1, 2] = lever[..., 0]
        if self.joints:
            rev = np.cross(A[:, None, :, :], C[:, :, None, :] - O[:, None, :, :])  # (K, S, J, 3)
            cols = np.where(self._revolute[None, None, :, None], rev, A[:, None, :, :])
            cols = cols * self._ancestor[None, :, :, None]
            Jac[:, :, :, nb:] = np.swapaxes(cols, 2, 3)
        Jac = Jac.reshape(lead + (S, 3, self.dof))
        if with_centers:
            return C.reshape(lead + (S, 3)), Jac
        return Jac

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base": self.base,
            "base_pose": self.base_pose.tolist(),
            "base_limits": [list(l) for l in self.base_limits],
            "base_vmax": list(self.base_vmax),
            "joints": [{"name": j.name, "type": j.type, "axis": j.axis.tolist(), "parent": j.parent.tolist(),
                        "limits": list(j.limits), "vmax": j.vmax} for j in self.joints],
            "spheres": [{"frame": s.frame, "offset": s.offset.tolist(), "radius": s.radius}
                        for s in self.spheres],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobotModel":
        joints = [Joint(type=j["type"], axis=j["axis"], parent=np.asarray(j.get("parent", np.eye(4))),
                        limits=tuple(j.get("limits", (-np.pi, np.pi))), vmax=float(j.get("vmax", 1.0)),
                        name=j.get("name", "")) for j in d.get("joints", [])]
        spheres = [CollisionSphere(int(s["frame"]), s["offset"], float(s["radius"])) for s in d["spheres"]]
        kw = {}
        if "base_limits" in d:
            kw["base_limits"] = tuple(tuple(map(float, l)) for l in d["base_limits"])
        if "base_vmax" in d:
            kw["base_vmax"] = tuple(map(float, d["base_vmax"]))
        return cls(name=d.get("name", "robot"), joints=joints, spheres=spheres, base=d.get("base", "fixed"),
                   base_pose=np.asarray(d.get("base_pose", np.eye(4)), dtype=float), **kw)


def _z(h):
    return transform((0.0, 0.0, h))


def nav2d(height: float = 0.0, radius: float = 0.15, vmax: float = 0.5, extent: float = 10.0) -> RobotModel:
    """Disc robot on the plane: two prismatic joints along x and y, one sphere."""
    joints = [
        Joint("prismatic", (1, 0, 0), limits=(-extent, extent), vmax=vmax, name="x"),
        Joint("prismatic", (0, 1, 0), limits=(-extent, extent), vmax=vmax, name="y"),
    ]
    return RobotModel("nav2d", joints, [CollisionSphere(2, (0, 0, 0), radius)], base_pose=_z(height))


def arm7() -> RobotModel:
    """Seven revolute joints in a z-y-z-y-z-y-z pattern.

    Stand-in for a Panda-class arm: shoulder 0.30 m above the base, upper arm
    0.30 m, forearm 0.30 m, wrist-to-flange 0.15 m. Spheres of radius
    0.05-0.08 m cover the links.
    """
    lim = 2.6
    J = [
        Joint("revolute", (0, 0, 1), _z(0.15), (-lim, lim), 1.0, "j1"),
        Joint("revolute", (0, 1, 0), _z(0.15), (-1.6, 1.6), 1.0, "j2"),
        Joint("revolute", (0, 0, 1), _z(0.15), (-lim, lim), 1.0, "j3"),
        Joint("revolute", (0, 1, 0), _z(0.15), (-2.2, 2.2), 1.0, "j4"),
        Joint("revolute", (0, 0, 1), _z(0.15), (-lim, lim), 1.0, "j5"),
        Joint("revolute", (0, 1, 0), _z(0.15), (-2.2, 2.2), 1.0, "j6"),
        Joint("revolute", (0, 0, 1), _z(0.08), (-lim, lim), 1.0, "j7"),
    ]
    S = [
        CollisionSphere(0, (0, 0, 0.08), 0.08),
        CollisionSphere(1, (0, 0, 0.10), 0.07),
        CollisionSphere(2, (0, 0, 0.00), 0.07),
        CollisionSphere(2, (0, 0, 0.10), 0.06),
        CollisionSphere(3, (0, 0, 0.05), 0.06),
        CollisionSphere(4, (0, 0, 0.00), 0.06),
        CollisionSphere(4, (0, 0, 0.10), 0.06),
        CollisionSphere(5, (0, 0, 0.05), 0.05),
        CollisionSphere(6, (0, 0, 0.00), 0.05),
        CollisionSphere(7, (0, 0, 0.06), 0.05),
    ]
    return RobotModel("arm7", J, S)


def wholebody8() -> RobotModel:
    """Holonomic base with a five-joint arm (lift, flex, roll, wrist flex, wrist roll).

    Stand-in for a small mobile manipulator: base body radius 0.22 m, mast to
    0.45 m, arm lift 0-0.45 m, 0.30 m upper arm, 0.15 m wrist. The largest
    sphere radius is 0.22 m.
    """
    J = [
        Joint("prismatic", (0, 0, 1), transform((0.10, 0.0, 0.40)), (0.0, 0.45), 0.2, "arm_lift"),
        Joint("revolute", (0, 1, 0), _z(0.0), (-0.3, 2.6), 1.0, "arm_flex"),
        Joint("revolute", (0, 0, 1), _z(0.30), (-1.9, 3.6), 1.0, "arm_roll"),
        Joint("revolute", (0, 1, 0), _z(0.0), (-1.9, 1.2), 1.0, "wrist_flex"),
        Joint("revolute", (0, 0, 1), _z(0.10), (-1.9, 3.6), 1.0, "wrist_roll"),
    ]
    S = [
        CollisionSphere(0, (0.0, 0.0, 0.22), 0.22),
        CollisionSphere(0, (0.0, 0.0, 0.55), 0.14),
        CollisionSphere(1, (0.0, 0.0, 0.00), 0.08),
        CollisionSphere(2, (0.0, 0.0, 0.10), 0.06),
        CollisionSphere(2, (0.0, 0.0, 0.20), 0.06),
        CollisionSphere(3, (0.0, 0.0, 0.00), 0.06),
        CollisionSphere(4, (0.0, 0.0, 0.00), 0.05),
        CollisionSphere(5, (0.0, 0.0, 0.00), 0.05),
        CollisionSphere(5, (0.0, 0.0, 0.08), 0.05),
    ]
    return RobotModel("wholebody8", J, S, base="planar_holonomic",
                      base_limits=((-10.0, 10.0), (-10.0, 10.0), (-np.pi, np.pi)),
                      base_vmax=(0.3, 0.3, 0.6))


def builtin_models() -> dict[str, RobotModel]:
    return {"nav2d": nav2d(), "arm7": arm7(), "wholebody8": wholebody8()}


def get_model(name: str) -> RobotModel:
    try:
        return builtin_models()[name]
    except KeyError:
        raise ValueError(f"unknown robot model {name!r}") from None
