"""Receding-horizon controller with discrete barrier-function constraints.

The optimal control problem minimizes a quadratic tracking cost over N
control moves of the exactly-linear double integrator, subject to an
input box, an isotropic speed bound, and one decay inequality

    h(x_{k+1}) - h(x_k) >= -gamma * h(x_k)

per barrier over the first N_h steps, with each barrier evaluated at
its own prediction step (moving humans shift the ellipse between k and
k+1; walls are static).

States are condensed out, so the decision vector is just the stacked
controls and the cost is exactly quadratic. The solver is a small
sequential-quadratic-programming loop: linearize the nonlinear rows,
solve a dense convex QP by a primal-dual interior-point method with
elastic slacks, and line-search on an l1 merit function. With the exact
constant Hessian it typically converges in a handful of iterations.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import HumanState, RobotState, double_integrator_matrices, predict_human, zone_at
from .geometry import Barrier, Segment, barrier_gradient, barrier_value
from .zonelearn import ZoneModel

logger = logging.getLogger(__name__)

STATUS_OPTIMAL = "optimal"
STATUS_SUBOPTIMAL = "feasible-suboptimal"
STATUS_INFEASIBLE = "infeasible"

_KKT_TOL = 1e-7
_VIOLATION_TOL = 1e-6

__all__ = [
    "MpcConfig",
    "Ocp",
    "OcpSolution",
    "build_ocp",
    "solve_ocp",
    "control_step",
    "build_step_barriers",
    "evaluate_kkt",
    "STATUS_OPTIMAL",
    "STATUS_SUBOPTIMAL",
    "STATUS_INFEASIBLE",
]


def _default_q() -> np.ndarray:
    return np.diag([1.0, 1.0, 0.1, 0.1])


def _default_p() -> np.ndarray:
    return 10.0 * _default_q()


def _default_r() -> np.ndarray:
    return np.diag([0.1, 0.1])


@dataclass
class MpcConfig:
    """Horizon lengths, weights and bounds of the receding-horizon program."""

    horizon: int = 8               # N, control moves
    cbf_horizon: int = 2           # N_h, steps carrying barrier rows
    dt: float = 0.1                # seconds
    gamma: float = 0.3             # barrier decay rate in (0, 1]
    terminal_weight: np.ndarray = field(default_factory=_default_p)   # P
    state_weight: np.ndarray = field(default_factory=_default_q)      # Q
    control_weight: np.ndarray = field(default_factory=_default_r)    # R
    v_max: float = 1.0             # m/s
    u_max: float = 2.0             # m/s^2, input box half-width
    robot_radius: float = 0.5      # m, clearance baked into barriers
    margin: float = 0.05           # m, extra margin for distance approximation
    zone_query_speed: float = 1.1  # m/s, zone slice the robot maintains

    def __post_init__(self):
        self.terminal_weight = np.asarray(self.terminal_weight, float).reshape(4, 4)
        self.state_weight = np.asarray(self.state_weight, float).reshape(4, 4)
        self.control_weight = np.asarray(self.control_weight, float).reshape(2, 2)
        if not (1 <= self.cbf_horizon <= self.horizon):
            raise ValueError("need 1 <= cbf_horizon <= horizon")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("terminal_weight", "state_weight", "control_weight"):
            mat = getattr(self, name)
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(mat).min() < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "cbf_horizon": self.cbf_horizon,
            "dt": self.dt,
            "gamma": self.gamma,
            "terminal_weight": self.terminal_weight.tolist(),
            "state_weight": self.state_weight.tolist(),
            "control_weight": self.control_weight.tolist(),
            "v_max": self.v_max,
            "u_max": self.u_max,
            "robot_radius": self.robot_radius,
            "margin": self.margin,
            "zone_query_speed": self.zone_query_speed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MpcConfig":
        cfg = cls()
        for key in (
            "horizon", "cbf_horizon", "dt", "gamma", "v_max", "u_max",
            "robot_radius", "margin", "zone_query_speed",
        ):
            if key in raw:
                setattr(cfg, key, type(getattr(cfg, key))(raw[key]))
        for key, attr in (
            ("terminal_weight", "terminal_weight"),
            ("state_weight", "state_weight"),
            ("control_weight", "control_weight"),
        ):
            if key in raw:
                setattr(cfg, attr, np.asarray(raw[key], float))
        cfg.__post_init__()
        return cfg


class Ocp:
    """One condensed instance of the receding-horizon program.

    Rows of the inequality vector, in order: input box (upper then
    lower, 4N), speed bound (N), barrier decay rows (one per barrier per
    constrained step). Every row is written as c(z) >= 0.
    """

    def __init__(self, x0, goal, barriers_per_step, cfg: MpcConfig):
        if isinstance(x0, RobotState):
            x0 = x0.as_vector()
        self.x0 = np.asarray(x0, float).reshape(4)
        self.goal = np.asarray(goal, float).reshape(2)
        self.cfg = cfg
        self.barriers = tuple(tuple(step) for step in barriers_per_step)
        n = cfg.horizon
        if self.barriers:
            if len(self.barriers) < cfg.cbf_horizon:
                raise ValueError(
                    f"need barrier lists for at least {cfg.cbf_horizon} steps"
                )
            counts = {len(step) for step in self.barriers}
            if len(counts) != 1:
                raise ValueError("every step must carry the same barrier count")
            self.n_barriers = counts.pop()
        else:
            self.n_barriers = 0

        a_mat, b_mat = double_integrator_matrices(cfg.dt)
        powers = [np.eye(4)]
        for _ in range(n):
            powers.append(a_mat @ powers[-1])
        phi = np.zeros((4 * n, 2 * n))
        for k in range(1, n + 1):
            for j in range(k):
                phi[4 * (k - 1):4 * k, 2 * j:2 * j + 2] = powers[k - 1 - j] @ b_mat
        self._phi = phi
        self._x_free = np.concatenate([powers[k] @ self.x0 for k in range(1, n + 1)])
        xg = np.concatenate([self.goal, np.zeros(2)])
        self._xg_stack = np.tile(xg, n)

        qbar = np.zeros((4 * n, 4 * n))
        for k in range(1, n):
            qbar[4 * (k - 1):4 * k, 4 * (k - 1):4 * k] = cfg.state_weight
        qbar[4 * (n - 1):, 4 * (n - 1):] = cfg.terminal_weight
        rbar = np.kron(np.eye(n), cfg.control_weight)
        err0 = self._x_free - self._xg_stack
        self._m_mat = phi.T @ qbar @ phi + rbar
        self._q_vec = phi.T @ (qbar @ err0)
        self._c0 = float(err0 @ qbar @ err0)

        self._pos_rows = [phi[4 * (k - 1):4 * (k - 1) + 2] for k in range(1, n + 1)]
        self._vel_rows = [phi[4 * (k - 1) + 2:4 * (k - 1) + 4] for k in range(1, n + 1)]

        self.n_vars = 2 * n
        self.n_box = 4 * n
        self.n_speed = n
        self.n_cbf = self.n_barriers * cfg.cbf_horizon
        self.n_rows = self.n_box + self.n_speed + self.n_cbf
        kinds = ["box"] * self.n_box + ["speed"] * self.n_speed + ["cbf"] * self.n_cbf
        self.row_kinds = tuple(kinds)
        self.nonlinear_mask = np.array([kind != "box" for kind in kinds])

    # -- counts mirroring the mathematical program -------------------------

    @property
    def n_controls(self) -> int:
        return self.n_vars

    @property
    def n_dynamics_eq(self) -> int:
        # satisfied exactly by construction (states are rolled out)
        return 4 * self.cfg.horizon

    @property
    def n_cbf_ineq(self) -> int:
        return self.n_cbf

    # -- evaluation ---------------------------------------------------------

    def states(self, z) -> np.ndarray:
        """Predicted states x_1..x_N as an (N, 4) array."""
        z = np.asarray(z, float).reshape(self.n_vars)
        return (self._phi @ z + self._x_free).reshape(self.cfg.horizon, 4)

    def cost(self, z) -> float:
        z = np.asarray(z, float).reshape(self.n_vars)
        return float(z @ self._m_mat @ z + 2.0 * self._q_vec @ z + self._c0)

    def cost_grad(self, z) -> np.ndarray:
        z = np.asarray(z, float).reshape(self.n_vars)
        return 2.0 * (self._m_mat @ z + self._q_vec)

    def cost_hessian(self) -> np.ndarray:
        return 2.0 * self._m_mat

    def _barrier_pair(self, k: int, j: int) -> tuple[Barrier, Barrier]:
        bar_k = self.barriers[k][j]
        if k + 1 < len(self.barriers):
            bar_k1 = self.barriers[k + 1][j]
        else:
            bar_k1 = bar_k
        return bar_k, bar_k1

    def constraint_values(self, z) -> np.ndarray:
        z = np.asarray(z, float).reshape(self.n_vars)
        cfg = self.cfg
        states = self.states(z)
        vals = np.empty(self.n_rows)
        vals[:2 * cfg.horizon] = cfg.u_max - z
        vals[2 * cfg.horizon:4 * cfg.horizon] = z + cfg.u_max
        vel = states[:, 2:]
        vals[self.n_box:self.n_box + self.n_speed] = cfg.v_max**2 - np.sum(vel * vel, axis=1)
        row = self.n_box + self.n_speed
        for k in range(cfg.cbf_horizon):
            p_k = self.x0[:2] if k == 0 else states[k - 1, :2]
            p_k1 = states[k, :2]
            for j in range(self.n_barriers):
                bar_k, bar_k1 = self._barrier_pair(k, j)
                vals[row] = barrier_value(p_k1, bar_k1) - (1.0 - cfg.gamma) * barrier_value(p_k, bar_k)
                row += 1
        return vals

    def constraint_jacobian(self, z) -> np.ndarray:
        z = np.asarray(z, float).reshape(self.n_vars)
        cfg = self.cfg
        states = self.states(z)
        jac = np.zeros((self.n_rows, self.n_vars))
        eye = np.eye(self.n_vars)
        jac[:2 * cfg.horizon] = -eye
        jac[2 * cfg.horizon:4 * cfg.horizon] = eye
        for k in range(1, cfg.horizon + 1):
            jac[self.n_box + k - 1] = -2.0 * states[k - 1, 2:] @ self._vel_rows[k - 1]
        row = self.n_box + self.n_speed
        for k in range(cfg.cbf_horizon):
            p_k1 = states[k, :2]
            for j in range(self.n_barriers):
                bar_k, bar_k1 = self._barrier_pair(k, j)
                g1 = barrier_gradient(p_k1, bar_k1)
                jac[row] = g1 @ self._pos_rows[k]
                if k >= 1:
                    g0 = barrier_gradient(states[k - 1, :2], bar_k)
                    jac[row] -= (1.0 - cfg.gamma) * (g0 @ self._pos_rows[k - 1])
                row += 1
        return jac


@dataclass(eq=False)
class OcpSolution:
    """Solver output: controls, predicted states and diagnostics."""

    controls: np.ndarray            # (N, 2)
    states: np.ndarray              # (N, 4), x_1..x_N
    status: str
    constraint_values: np.ndarray   # (rows,)
    multipliers: np.ndarray         # (rows,)
    max_violation: float
    kkt: dict
    cost: float
    iterations: int
    solve_time: float
    dynamics_residual: float = 0.0


def build_ocp(x0, goal, barriers_per_step, cfg: MpcConfig) -> Ocp:
    """Assemble the condensed program; construction always succeeds."""
    return Ocp(x0, goal, barriers_per_step, cfg)


def evaluate_kkt(grad, jac, cons, lam) -> dict:
    """Scaled KKT residuals of an inequality-only program (rows c >= 0)."""
    lam = np.maximum(np.asarray(lam, float), 0.0)
    grad = np.asarray(grad, float)
    scale = 1.0 + float(np.abs(grad).max(initial=0.0))
    stationarity = float(np.abs(grad - jac.T @ lam).max(initial=0.0)) / scale
    violation = float(np.maximum(-cons, 0.0).max(initial=0.0))
    comp_scale = 1.0 + float(lam.max(initial=0.0))
    complementarity = float(np.abs(lam * cons).max(initial=0.0)) / comp_scale
    return {
        "stationarity": stationarity,
        "violation": violation,
        "complementarity": complementarity,
        "residual": max(stationarity, violation, complementarity),
    }


def _fraction_to_boundary(value: np.ndarray, step: np.ndarray, tau: float = 0.995) -> float:
    neg = step < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, tau * np.min(-value[neg] / step[neg])))


def _solve_qp(h_mat, g, c_mat, d, max_iter=60):
    """min 0.5 w'Hw + g'w  s.t.  Cw >= d, by Mehrotra predictor-corrector.

    H must be positive definite. Returns (w, lam, converged); when the
    constraints are infeasible (or numerics break down) converged is
    False and the caller must not trust the multipliers.
    """
    n = g.size
    m = d.size
    if m == 0:
        return np.linalg.solve(h_mat, -g), np.empty(0), True
    w = np.zeros(n)
    y = np.maximum(np.abs(c_mat @ w - d), 1.0)
    lam = np.ones(m)
    g_scale = 1.0 + float(np.abs(g).max())
    d_scale = 1.0 + float(np.abs(d).max())
    converged = False
    for _ in range(max_iter):
        r_d = h_mat @ w + g - c_mat.T @ lam
        r_p = c_mat @ w - y - d
        mu = float(y @ lam) / m
        if (
            np.abs(r_d).max() <= 1e-10 * g_scale
            and np.abs(r_p).max() <= 1e-10 * d_scale
            and mu <= 1e-12 * g_scale
        ):
            converged = True
            break
        dcoef = np.minimum(lam / y, 1e16)
        kkt = h_mat + (c_mat.T * dcoef) @ c_mat
        if not np.isfinite(kkt).all():
            break
        chol = None
        reg = 0.0
        for _ in range(6):
            try:
                chol = np.linalg.cholesky(kkt + reg * np.eye(n))
                break
            except np.linalg.LinAlgError:
                reg = max(10.0 * reg, 1e-12 * (1.0 + np.trace(kkt) / n))
        if chol is None:
            break

        def _newton(r_c):
            rhs = -r_d - c_mat.T @ ((r_c + lam * r_p) / y)
            dw = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            dy = c_mat @ dw + r_p
            dlam = -(r_c + lam * dy) / y
            return dw, dy, dlam

        dw_a, dy_a, dlam_a = _newton(y * lam)
        alpha_a = min(_fraction_to_boundary(y, dy_a, 1.0),
                      _fraction_to_boundary(lam, dlam_a, 1.0))
        mu_aff = float((y + alpha_a * dy_a) @ (lam + alpha_a * dlam_a)) / m
        sigma = min((max(mu_aff, 0.0) / max(mu, 1e-300)) ** 3, 1.0)
        r_c = y * lam + dy_a * dlam_a - sigma * mu
        dw, dy, dlam = _newton(r_c)
        if not (np.isfinite(dw).all() and np.isfinite(dy).all() and np.isfinite(dlam).all()):
            break
        alpha_p = _fraction_to_boundary(y, dy)
        alpha_d = _fraction_to_boundary(lam, dlam)
        w += alpha_p * dw
        y += alpha_p * dy
        lam += alpha_d * dlam
        y = np.maximum(y, 1e-300)
        lam = np.maximum(lam, 1e-300)
    return w, lam, converged


def _initial_z(ocp: Ocp, warm_start) -> np.ndarray:
    if warm_start is None:
        return np.zeros(ocp.n_vars)
    if isinstance(warm_start, OcpSolution):
        controls = warm_start.controls
    else:
        controls = np.asarray(warm_start, float).reshape(-1, 2)
    shifted = np.vstack([controls[1:], controls[-1:]])
    n = ocp.cfg.horizon
    if len(shifted) < n:
        shifted = np.vstack([shifted, np.tile(shifted[-1:], (n - len(shifted), 1))])
    z = shifted[:n].reshape(-1)
    return np.clip(z, -ocp.cfg.u_max, ocp.cfg.u_max)


def solve_ocp(ocp: Ocp, warm_start=None, max_iter: int = 40) -> OcpSolution:
    """Solve the program by elastic SQP; deterministic for fixed inputs.

    Returns status "optimal" at a KKT point, "feasible-suboptimal" when
    the iteration budget runs out at a feasible point, and "infeasible"
    (with the minimum-violation iterate) when the elastic relaxation
    cannot reach feasibility.
    """
    t_start = time.perf_counter()
    cfg = ocp.cfg
    z = _initial_z(ocp, warm_start)
    hess = ocp.cost_hessian()
    n = ocp.n_vars
    nl_idx = np.nonzero(ocp.nonlinear_mask)[0]
    m_nl = nl_idx.size
    rho = 1e4
    nu = 1.0
    lam = np.zeros(ocp.n_rows)

    best_z = z.copy()
    best_viol = float(np.maximum(-ocp.constraint_values(z), 0.0).max(initial=0.0))
    best_residual = np.inf
    stalled = 0
    status = STATUS_SUBOPTIMAL
    iterations = 0

    for iterations in range(1, max_iter + 1):
        cons = ocp.constraint_values(z)
        jac = ocp.constraint_jacobian(z)
        grad = ocp.cost_grad(z)

        # Strict subproblem first; it is feasible in any healthy step and
        # keeps the interior-point iteration well scaled.
        w, lam_qp, qp_ok = _solve_qp(hess, grad, jac, -cons)
        if qp_ok:
            p = w
            lam = lam_qp
        else:
            # Elastic fallback: slack on nonlinear rows restores
            # feasibility; quadratic slack weight keeps it conditioned.
            h_qp = np.zeros((n + m_nl, n + m_nl))
            h_qp[:n, :n] = hess
            h_qp[n:, n:] = 0.1 * rho * np.eye(m_nl)
            g_qp = np.concatenate([grad, np.full(m_nl, rho)])
            c_qp = np.zeros((ocp.n_rows + m_nl, n + m_nl))
            c_qp[:ocp.n_rows, :n] = jac
            c_qp[nl_idx, n:] = np.eye(m_nl)
            c_qp[ocp.n_rows:, n:] = np.eye(m_nl)
            d_qp = np.concatenate([-cons, np.zeros(m_nl)])
            w, lam_qp, qp_ok = _solve_qp(h_qp, g_qp, c_qp, d_qp)
            if not qp_ok:
                logger.debug("QP subproblem failed to converge; stopping SQP")
                break
            p = w[:n]
            lam = lam_qp[:ocp.n_rows]

        # The QP multipliers belong to the linearization at z, so the
        # KKT test is consistent here, before stepping.
        kkt = evaluate_kkt(grad, jac, cons, lam)
        if kkt["violation"] < best_viol:
            best_viol, best_z = kkt["violation"], z.copy()
        if kkt["residual"] <= _KKT_TOL:
            status = STATUS_OPTIMAL
            break
        if kkt["residual"] >= 0.9 * best_residual:
            stalled += 1
            if stalled >= 5:
                break
        else:
            stalled = 0
            best_residual = kkt["residual"]

        nu = max(nu, 2.0 * float(np.abs(lam).max(initial=0.0)), 1.0)
        viol_sum0 = float(np.maximum(-cons, 0.0).sum())
        merit0 = ocp.cost(z) + nu * viol_sum0
        descent = float(grad @ p) - nu * viol_sum0
        alpha = 1.0
        for _ in range(30):
            z_try = z + alpha * p
            c_try = ocp.constraint_values(z_try)
            merit_try = ocp.cost(z_try) + nu * float(np.maximum(-c_try, 0.0).sum())
            if merit_try <= merit0 + 0.1 * alpha * descent + 1e-14 * (1.0 + abs(merit0)):
                break
            alpha *= 0.5
        z = z + alpha * p
        if alpha * float(np.abs(p).max(initial=0.0)) < 1e-14:
            break

    cons = ocp.constraint_values(z)
    grad = ocp.cost_grad(z)
    jac = ocp.constraint_jacobian(z)
    kkt = evaluate_kkt(grad, jac, cons, lam)
    max_violation = kkt["violation"]
    if status != STATUS_OPTIMAL:
        if kkt["residual"] <= _KKT_TOL:
            status = STATUS_OPTIMAL
        elif max_violation <= _VIOLATION_TOL:
            status = STATUS_SUBOPTIMAL
        else:
            status = STATUS_INFEASIBLE
            z = best_z
            cons = ocp.constraint_values(z)
            grad = ocp.cost_grad(z)
            jac = ocp.constraint_jacobian(z)
            kkt = evaluate_kkt(grad, jac, cons, lam)
            max_violation = kkt["violation"]

    states = ocp.states(z)
    controls = z.reshape(cfg.horizon, 2)
    a_mat, b_mat = double_integrator_matrices(cfg.dt)
    rolled = ocp.x0
    dyn_res = 0.0
    for k in range(cfg.horizon):
        rolled = a_mat @ rolled + b_mat @ controls[k]
        dyn_res = max(dyn_res, float(np.abs(rolled - states[k]).max()))
    return OcpSolution(
        controls=controls,
        states=states,
        status=status,
        constraint_values=cons,
        multipliers=lam,
        max_violation=max_violation,
        kkt=kkt,
        cost=ocp.cost(z),
        iterations=iterations,
        solve_time=time.perf_counter() - t_start,
        dynamics_residual=dyn_res,
    )


def build_step_barriers(
    humans: list[HumanState],
    walls: list[Segment],
    model: ZoneModel | None,
    cfg: MpcConfig,
    steps: int,
) -> list[tuple[Barrier, ...]]:
    """Barrier lists for prediction steps 0..steps inclusive.

    Human zones move with the constant-velocity prediction; walls repeat
    unchanged at every step. Order within a step: humans, then walls.
    """
    if humans and model is None:
        raise ValueError("humans present but no zone model given")
    out: list[tuple[Barrier, ...]] = []
    for k in range(steps + 1):
        bars = [
            Barrier(
                zone_at(predict_human(h, k, cfg.dt), model, cfg.zone_query_speed),
                clearance=cfg.robot_radius,
                margin=cfg.margin,
            )
            for h in humans
        ]
        bars.extend(Barrier(w, clearance=cfg.robot_radius, margin=cfg.margin) for w in walls)
        out.append(tuple(bars))
    return out


def control_step(
    x0,
    goal,
    humans: list[HumanState],
    walls: list[Segment],
    model: ZoneModel | None,
    cfg: MpcConfig,
    warm_start=None,
) -> tuple[np.ndarray, OcpSolution]:
    """One receding-horizon step: build, solve, return the first control.

    On an infeasible solve the returned control is maximal braking
    toward zero velocity, clipped to the input box; the solution object
    still carries the diagnostics. The returned control never violates
    the input box.
    """
    state = x0 if isinstance(x0, RobotState) else RobotState.from_vector(np.asarray(x0, float))
    if humans or walls:
        barriers = build_step_barriers(humans, walls, model, cfg, cfg.cbf_horizon)
    else:
        barriers = []
    ocp = build_ocp(state, goal, barriers, cfg)
    sol = solve_ocp(ocp, warm_start=warm_start)
    if sol.status == STATUS_INFEASIBLE:
        u0 = -state.velocity / cfg.dt
        logger.debug("infeasible solve; braking fallback engaged")
    else:
        u0 = sol.controls[0]
    u0 = np.clip(u0, -cfg.u_max, cfg.u_max)
    return u0, sol
