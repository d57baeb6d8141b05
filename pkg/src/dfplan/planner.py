"""Gaussian-process trajectory optimisation on a factor graph.

States are ``x_i = [q_i, qdot_i]`` at uniformly spaced times. The graph holds
state priors, constant-velocity GP priors between neighbours and hinge-loss
obstacle factors that read a :class:`DistanceField`. The solver is damped
Gauss-Newton (Levenberg-Marquardt) on the dense normal equations, which are
assembled segment by segment because each factor touches at most two
consecutive states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .distance_field import DistanceField
from .robot import RobotModel


@dataclass
class LMParams:
    lambda_init: float = 0.01
    lambda_factor: float = 10.0
    lambda_max: float = 1e5
    rel_decrease_tol: float = 1e-5
    abs_error_tol: float = 1e-10
    max_iters: int = 100


STUDY_PROFILE = LMParams(rel_decrease_tol=1e-5, max_iters=100)
REPLAN_PROFILE = LMParams(rel_decrease_tol=0.01, max_iters=50)


@dataclass
class PlannerParams:
    dt: float = 0.5
    qc: float = 1.0
    Qc: np.ndarray | None = None
    prior_sigma: float = 1e-4
    eps: float = 0.2
    obs_sigma: float = 0.05
    n_interp: int = 3
    lm: LMParams = field(default_factory=LMParams)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.n_interp < 0:
            raise ValueError("n_interp must be >= 0")

    def qc_matrix(self, dof: int) -> np.ndarray:
        Qc = self.qc * np.eye(dof) if self.Qc is None else np.asarray(self.Qc, dtype=float)
        if Qc.shape != (dof, dof):
            raise ValueError(f"Qc must be {dof}x{dof}")
        return Qc

    def with_profile(self, lm: LMParams) -> "PlannerParams":
        return replace(self, lm=lm)


@dataclass
class Trajectory:
    dt: float
    positions: np.ndarray
    velocities: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")
        if len(self.positions) < 2:
            raise ValueError("a trajectory needs at least two states")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_states(self) -> int:
        return len(self.positions)

    @property
    def dof(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return (self.n_states - 1) * self.dt

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_states)

    @property
    def states(self) -> np.ndarray:
        return np.hstack([self.positions, self.velocities])

    @classmethod
    def from_states(cls, X, dt, t0=0.0) -> "Trajectory":
        X = np.asarray(X, dtype=float)
        d = X.shape[1] // 2
        return cls(dt, X[:, :d].copy(), X[:, d:].copy(), t0)

    def copy(self) -> "Trajectory":
        return Trajectory(self.dt, self.positions.copy(), self.velocities.copy(), self.t0)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"q{j}" for j in range(self.dof)] + [f"qd{j}" for j in range(self.dof)])
            for t, q, v in zip(self.times, self.positions, self.velocities):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in q] + [repr(float(x)) for x in v])


# --- constant-velocity GP prior, written per DoF (2x2 blocks); Qc cancels in the interpolation weights

def _phi(t):
    return np.array([[1.0, t], [0.0, 1.0]])


def _q_block(t):
    return np.array([[t**3 / 3.0, t**2 / 2.0], [t**2 / 2.0, t]])


def _kron_state(B2, dof):
    """Lift a 2x2 block acting on (q, qdot) of one DoF to the stacked [q; qdot] layout."""
    return np.kron(B2, np.eye(dof))


def transition(dt: float, dof: int) -> np.ndarray:
    return _kron_state(_phi(dt), dof)


def gp_covariance(dt: float, Qc: np.ndarray) -> np.ndarray:
    return np.kron(_q_block(dt), np.asarray(Qc, dtype=float))


def gp_prior_residual(xi, xi1, dt: float, Qc):
    """Residual ``Phi(dt) x_i - x_{i+1}`` and its covariance ``Q(dt)``."""
    Qc = np.atleast_2d(np.asarray(Qc, dtype=float))
    if not np.allclose(Qc, Qc.T) or np.any(np.linalg.eigvalsh(Qc) <= 0):
        raise ValueError("Qc must be symmetric positive definite")
    xi, xi1 = np.asarray(xi, float), np.asarray(xi1, float)
    dof = Qc.shape[0]
    return transition(dt, dof) @ xi - xi1, gp_covariance(dt, Qc)


def interpolation_weights(tau: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-DoF 2x2 weights (Lambda, Psi) with x(t_i + tau) = Lambda x_i + Psi x_{i+1}."""
    if tau <= 0:
        return np.eye(2), np.zeros((2, 2))
    if tau >= dt:
        return np.zeros((2, 2)), np.eye(2)
    psi = _q_block(tau) @ _phi(dt - tau).T @ np.linalg.inv(_q_block(dt))
    lam = _phi(tau) - psi @ _phi(dt)
    return lam, psi


def gp_interpolate(traj: Trajectory, tau: float, Qc=None) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-mean state at absolute time ``tau``.

    ``Qc`` is accepted for interface symmetry; with the Kronecker structure of
    the constant-velocity prior it drops out of the weights.
    """
    if not traj.t0 - 1e-12 <= tau <= traj.t_end + 1e-12:
        raise ValueError(f"tau={tau} outside [{traj.t0}, {traj.t_end}]")
    s = min(max(tau - traj.t0, 0.0), traj.duration)
    k = s / traj.dt
    r = int(round(k))
    if abs(k - r) < 1e-9:
        # times that differ from a support time only by round-off return the support itself
        return traj.positions[r].copy(), traj.velocities[r].copy()
    i = min(int(np.floor(k)), traj.n_states - 2)
    off = s - i * traj.dt
    lam, psi = interpolation_weights(off, traj.dt)
    qa, va, qb, vb = traj.positions[i], traj.velocities[i], traj.positions[i + 1], traj.velocities[i + 1]
    q = lam[0, 0] * qa + lam[0, 1] * va + psi[0, 0] * qb + psi[0, 1] * vb
    v = lam[1, 0] * qa + lam[1, 1] * va + psi[1, 0] * qb + psi[1, 1] * vb
    return q, v


def sample_trajectory(traj: Trajectory, step: float, t_from: float | None = None):
    """Interpolated (times, positions, velocities) from ``t_from`` to the end, every ``step`` s.

    The end time is always included.
    """
    t_from = traj.t0 if t_from is None else max(t_from, traj.t0)
    if t_from >= traj.t_end:
        times = np.array([traj.t_end])
    else:
        n = int(np.floor((traj.t_end - t_from) / step + 1e-9))
        times = t_from + step * np.arange(n + 1)
        if traj.t_end - times[-1] > 1e-9:
            times = np.append(times, traj.t_end)
    s = np.clip(times - traj.t0, 0.0, traj.duration)
    k = s / traj.dt
    r = np.rint(k)
    k = np.where(np.abs(k - r) < 1e-9, r, k)
    seg = np.minimum(np.floor(k).astype(int), traj.n_states - 2)
    off = np.where(k == np.floor(k), (k - seg) * traj.dt, s - seg * traj.dt)
    C = _segment_coefficients(off, traj.dt)
    qa, va = traj.positions[seg], traj.velocities[seg]
    qb, vb = traj.positions[seg + 1], traj.velocities[seg + 1]
    q = C[:, 0, 0, None] * qa + C[:, 0, 1, None] * va + C[:, 0, 2, None] * qb + C[:, 0, 3, None] * vb
    v = C[:, 1, 0, None] * qa + C[:, 1, 1, None] * va + C[:, 1, 2, None] * qb + C[:, 1, 3, None] * vb
    return times, q, v


def _segment_coefficients(offsets, dt):
    """(M, 2, 4): rows (q, qdot) of [Lambda | Psi] for each offset into a segment."""
    t = np.asarray(offsets, dtype=float)
    M = len(t)
    Qt = np.empty((M, 2, 2))
    Qt[:, 0, 0], Qt[:, 0, 1], Qt[:, 1, 1] = t**3 / 3.0, t**2 / 2.0, t
    Qt[:, 1, 0] = Qt[:, 0, 1]
    PhiT_rem = np.zeros((M, 2, 2))
    PhiT_rem[:, 0, 0] = PhiT_rem[:, 1, 1] = 1.0
    PhiT_rem[:, 1, 0] = dt - t
    psi = Qt @ PhiT_rem @ np.linalg.inv(_q_block(dt))
    phi_t = np.zeros((M, 2, 2))
    phi_t[:, 0, 0] = phi_t[:, 1, 1] = 1.0
    phi_t[:, 0, 1] = t
    lam = phi_t - psi @ _phi(dt)
    out = np.concatenate([lam, psi], axis=2)
    # exact at the supports
    out[t <= 0] = np.hstack([np.eye(2), np.zeros((2, 2))])
    out[t >= dt] = np.hstack([np.zeros((2, 2)), np.eye(2)])
    return out


def init_straight_line(xc, xg, params: PlannerParams | float, N: int, t0: float = 0.0) -> Trajectory:
    dt = params.dt if isinstance(params, PlannerParams) else float(params)
    if N < 2:
        raise ValueError("N must be >= 2")
    xc, xg = np.asarray(xc, dtype=float), np.asarray(xg, dtype=float)
    s = np.linspace(0.0, 1.0, N)[:, None]
    pos = (1 - s) * xc + s * xg
    pos[0], pos[-1] = xc, xg
    vel = np.tile((xg - xc) / ((N - 1) * dt), (N, 1))
    return Trajectory(dt, pos, vel, t0)


@dataclass
class ObstacleResidual:
    clearance: np.ndarray  # distance minus radius, per sphere
    hinge: np.ndarray  # max(eps - clearance, 0)
    jacobian: np.ndarray  # d hinge / d q, (S, dof)
    sigma: float
    clamped: np.ndarray

    @property
    def whitened(self) -> np.ndarray:
        return self.hinge / self.sigma

    @property
    def whitened_jacobian(self) -> np.ndarray:
        return self.jacobian / self.sigma


def _hinge_terms(model: RobotModel, Q, field: DistanceField, eps: float, with_jac: bool = True):
    if with_jac:
        C, Js = model.sphere_jacobians(Q, with_centers=True)
    else:
        C, Js = model.forward_kinematics(Q), None
    dist, grad, clamped = field.query_many(C)
    clear = dist - model.radii
    active = clear < eps
    h = np.where(active, eps - clear, 0.0)
    J = None
    if with_jac:
        J = -np.einsum("...sa,...sad->...sd", grad, Js) * active[..., None]
    return clear, h, J, clamped


def obstacle_residual(model: RobotModel, q, field: DistanceField, eps: float, obs_sigma: float) -> ObstacleResidual:
    clear, h, J, clamped = _hinge_terms(model, np.asarray(q, dtype=float), field, eps)
    return ObstacleResidual(clear, h, J, obs_sigma, clamped)


def min_clearance(model: RobotModel, traj: Trajectory, field: DistanceField, step: float | None = None,
                  n_check: int = 10, t_from: float | None = None):
    """Smallest sphere clearance along the GP-interpolated trajectory and the time it occurs."""
    step = traj.dt / n_check if step is None else step
    times, q, _ = sample_trajectory(traj, step, t_from)
    C = model.forward_kinematics(q)
    clear = field.distance(C) - model.radii
    per_t = clear.min(axis=1)
    k = int(np.argmin(per_t))
    return float(per_t[k]), float(times[k]), per_t, times


@dataclass
class Factor:
    kind: str
    states: tuple[int, ...]
    sigma: float | None = None
    time_offset: float = 0.0


class FactorGraph:
    """Trajectory factor graph. ``error`` is sum of half squared whitened residuals."""

    def __init__(self, model: RobotModel, params: PlannerParams, field: DistanceField | None, N: int,
                 priors=(), obstacle_sites=True):
        if N < 2:
            raise ValueError("N must be >= 2")
        self.model = model
        self.params = params
        self.field = field
        self.N = N
        self.dof = model.dof
        self.dt = params.dt
        d = self.dof
        Qc = params.qc_matrix(d)
        if np.any(np.linalg.eigvalsh(Qc) <= 0):
            raise ValueError("Qc must be positive definite")
        self.Phi = transition(self.dt, d)
        self.Qgp = gp_covariance(self.dt, Qc)
        self.Qgp_inv = np.linalg.inv(self.Qgp)
        self.Qgp_inv = 0.5 * (self.Qgp_inv + self.Qgp_inv.T)
        self.Lgp_inv = np.linalg.inv(np.linalg.cholesky(self.Qgp))
        self.priors = []  # (state index, mean (2d,), sigma)
        for k, mean, sigma in priors:
            mean = np.asarray(mean, dtype=float)
            if mean.shape != (2 * d,):
                raise ValueError(f"prior mean must have {2 * d} entries")
            if not 0 <= k < N:
                raise ValueError(f"prior references state {k} outside 0..{N - 1}")
            self.priors.append((int(k), mean, float(sigma)))
        self.has_obstacles = bool(obstacle_sites) and field is not None
        self._build_sites()
        # constant GP blocks of the Gauss-Newton Hessian for one segment
        A = self.Phi.T @ self.Qgp_inv
        self._H_gp = np.block([[A @ self.Phi, -A], [-self.Qgp_inv @ self.Phi, self.Qgp_inv]])

    def _build_sites(self):
        N, dt, n_int = self.N, self.dt, self.params.n_interp
        seg, off, support = [], [], []
        for i in range(N):
            if i < N - 1:
                seg.append(i); off.append(0.0)
            else:
                seg.append(N - 2); off.append(dt)
            support.append(True)
            if i < N - 1:
                for k in range(1, n_int + 1):
                    seg.append(i); off.append(dt * k / (n_int + 1)); support.append(False)
        order = np.lexsort((np.array(off), np.array(seg)))
        self.site_seg = np.array(seg)[order]
        self.site_off = np.array(off)[order]
        self.site_support = np.array(support)[order]
        C = _segment_coefficients(self.site_off, dt)
        self.site_coef = C[:, 0, :]  # position row: q = c0 q_i + c1 v_i + c2 q_{i+1} + c3 v_{i+1}

    @property
    def n_vars(self) -> int:
        return self.N * 2 * self.dof

    @property
    def n_obstacle_sites(self) -> int:
        return len(self.site_seg) if self.has_obstacles else 0

    @property
    def factors(self) -> list[Factor]:
        out = [Factor("state_prior", (k,), s) for k, _, s in self.priors]
        out += [Factor("gp_prior", (i, i + 1)) for i in range(self.N - 1)]
        if self.has_obstacles:
            for s, o, sup in zip(self.site_seg, self.site_off, self.site_support):
                if sup:
                    k = int(s) if o == 0.0 else int(s) + 1
                    out.append(Factor("obstacle", (k,), self.params.obs_sigma))
                else:
                    out.append(Factor("obstacle_interp", (int(s), int(s) + 1), self.params.obs_sigma,
                                      float(o)))
        return out

    def count(self, kind: str) -> int:
        return sum(f.kind == kind for f in self.factors)

    # -- evaluation

    def site_configs(self, X: np.ndarray) -> np.ndarray:
        d = self.dof
        s = self.site_seg
        c = self.site_coef
        return (c[:, 0, None] * X[s, :d] + c[:, 1, None] * X[s, d:]
                + c[:, 2, None] * X[s + 1, :d] + c[:, 3, None] * X[s + 1, d:])

    def _gp_residuals(self, X):
        return X[:-1] @ self.Phi.T - X[1:]

    def factor_errors(self, X) -> dict[str, np.ndarray]:
        """Per-factor errors 0.5*||r||^2_Sigma, grouped by kind."""
        X = np.asarray(X, dtype=float)
        out = {}
        out["state_prior"] = np.array([0.5 * np.sum(((X[k] - m) / s) ** 2) for k, m, s in self.priors])
        R = self._gp_residuals(X)
        out["gp_prior"] = 0.5 * np.einsum("ia,ab,ib->i", R, self.Qgp_inv, R)
        if self.has_obstacles:
            _, h, _, _ = _hinge_terms(self.model, self.site_configs(X), self.field, self.params.eps,
                                      with_jac=False)
            out["obstacle"] = 0.5 * np.sum((h / self.params.obs_sigma) ** 2, axis=1)
        else:
            out["obstacle"] = np.zeros(0)
        return out

    def error(self, X) -> float:
        return float(sum(np.sum(v) for v in self.factor_errors(X).values()))

    def normal_equations(self, X):
        """Gauss-Newton Hessian ``J^T J``, gradient ``J^T r`` and error at ``X``."""
        X = np.asarray(X, dtype=float)
        N, d = self.N, self.dof
        n2 = 2 * d
        H = np.zeros((N * n2, N * n2))
        g = np.zeros(N * n2)
        err = 0.0
        for k, m, s in self.priors:
            r = (X[k] - m) / s
            sl = slice(k * n2, (k + 1) * n2)
            H[sl, sl] += np.eye(n2) / s**2
            g[sl] += r / s
            err += 0.5 * r @ r
        R = self._gp_residuals(X)
        W = R @ self.Qgp_inv  # (N-1, 2d)
        err += 0.5 * np.sum(W * R)
        gi = W @ self.Phi
        for i in range(N - 1):
            sl = slice(i * n2, (i + 2) * n2)
            H[sl, sl] += self._H_gp
            g[i * n2:(i + 1) * n2] += gi[i]
            g[(i + 1) * n2:(i + 2) * n2] -= W[i]
        if self.has_obstacles:
            sig = self.params.obs_sigma
            _, h, J, _ = _hinge_terms(self.model, self.site_configs(X), self.field, self.params.eps)
            r = h / sig
            Jw = J / sig  # (M, S, d)
            err += 0.5 * np.sum(r * r)
            G = np.einsum("msa,msb->mab", Jw, Jw)  # (M, d, d)
            gq = np.einsum("msa,ms->ma", Jw, r)  # (M, d)
            c = self.site_coef
            Hloc = np.einsum("mi,mj,mab->miajb", c, c, G).reshape(len(c), 4 * d, 4 * d)
            gloc = (c[:, :, None] * gq[:, None, :]).reshape(len(c), 4 * d)
            # sites are sorted by segment
            bounds = np.searchsorted(self.site_seg, np.arange(N))
            Hs = np.add.reduceat(Hloc, bounds[:-1], axis=0)
            gs = np.add.reduceat(gloc, bounds[:-1], axis=0)
            for i in range(N - 1):
                sl = slice(i * n2, (i + 2) * n2)
                H[sl, sl] += Hs[i]
                g[sl] += gs[i]
        return H, g, float(err)

    def stacked(self, X):
        """Whitened residual vector and dense Jacobian (for checking; the solver never forms it)."""
        X = np.asarray(X, dtype=float)
        N, d = self.N, self.dof
        n2 = 2 * d
        rows_r, rows_J = [], []
        for k, m, s in self.priors:
            J = np.zeros((n2, N * n2))
            J[:, k * n2:(k + 1) * n2] = np.eye(n2) / s
            rows_r.append((X[k] - m) / s)
            rows_J.append(J)
        R = self._gp_residuals(X)
        for i in range(N - 1):
            J = np.zeros((n2, N * n2))
            J[:, i * n2:(i + 1) * n2] = self.Lgp_inv @ self.Phi
            J[:, (i + 1) * n2:(i + 2) * n2] = -self.Lgp_inv
            rows_r.append(self.Lgp_inv @ R[i])
            rows_J.append(J)
        if self.has_obstacles:
            sig = self.params.obs_sigma
            _, h, Jq, _ = _hinge_terms(self.model, self.site_configs(X), self.field, self.params.eps)
            S = h.shape[1]
            for m, (i, c) in enumerate(zip(self.site_seg, self.site_coef)):
                J = np.zeros((S, N * n2))
                base = i * n2
                for b in range(4):
                    st = base + b * d
                    J[:, st:st + d] += c[b] * Jq[m] / sig
                rows_r.append(h[m] / sig)
                rows_J.append(J)
        return np.concatenate(rows_r), np.vstack(rows_J)


def build_graph(model: RobotModel, xc, xg, params: PlannerParams, field: DistanceField | None, N: int,
                start_vel=None, goal_vel=None) -> FactorGraph:
    """Priors on the current and goal states, GP priors between neighbours, obstacle factors.

    Velocities default to zero at both ends (rest-to-rest).
    """
    d = model.dof
    xc, xg = np.asarray(xc, dtype=float), np.asarray(xg, dtype=float)
    if xc.shape != (d,) or xg.shape != (d,):
        raise ValueError(f"start/goal must be {d}-dimensional for {model.name}")
    v0 = np.zeros(d) if start_vel is None else np.asarray(start_vel, dtype=float)
    vg = np.zeros(d) if goal_vel is None else np.asarray(goal_vel, dtype=float)
    priors = [(0, np.concatenate([xc, v0]), params.prior_sigma),
              (N - 1, np.concatenate([xg, vg]), params.prior_sigma)]
    return FactorGraph(model, params, field, N, priors)


@dataclass
class OptimizeResult:
    trajectory: Trajectory
    iterations: int
    initial_error: float
    final_error: float
    converged_reason: str
    errors: list[float] = field(default_factory=list)


def optimize_lm(graph: FactorGraph, tau0: Trajectory, lm: LMParams | None = None) -> OptimizeResult:
    lm = lm or graph.params.lm
    if tau0.n_states != graph.N or tau0.dof != graph.dof:
        raise ValueError("initial trajectory does not match the graph")
    X = tau0.states.copy()
    n = X.size
    H, g, E = graph.normal_equations(X)
    E0 = E
    history = [E]
    lam = lm.lambda_init
    reason = "max_iters"
    it = 0
    if E <= lm.abs_error_tol:
        return OptimizeResult(Trajectory.from_states(X, tau0.dt, tau0.t0), 0, E0, E, "error_tol", history)
    eye = np.eye(n)
    while it < lm.max_iters:
        it += 1
        accepted = False
        stalled = False
        while True:
            try:
                step = cho_solve(cho_factor(H + lam * eye, check_finite=False), -g, check_finite=False)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                Xn = X + step.reshape(X.shape)
                En = graph.error(Xn)
                if En < E:
                    accepted = True
                    lam = max(lam / lm.lambda_factor, 1e-12)
                    break
                # a rejected step whose change is below tolerance means nothing is left to gain
                if abs(E - En) < lm.rel_decrease_tol * E:
                    stalled = True
                    break
            lam *= lm.lambda_factor
            if lam > lm.lambda_max:
                break
        if stalled:
            reason = "rel_decrease"
            break
        if not accepted:
            reason = "damping_overflow"
            break
        rel = (E - En) / E
        X, E = Xn, En
        history.append(E)
        if E <= lm.abs_error_tol:
            reason = "error_tol"
            break
        if rel < lm.rel_decrease_tol:
            reason = "rel_decrease"
            break
        H, g, E = graph.normal_equations(X)
    return OptimizeResult(Trajectory.from_states(X, tau0.dt, tau0.t0), it, E0, E, reason, history)


def trajectory_cost(graph: FactorGraph, traj: Trajectory) -> float:
    return graph.error(traj.states)
