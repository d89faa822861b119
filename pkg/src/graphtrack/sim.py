"""Target and agent dynamics, scenario setup, and RK4 closed-loop runs.

The coupled system integrates, in one monolithic state vector: the target
kinematics, the agents' kinematics under the computed control, each agent's
target-state estimate under the distributed observer, and both networks'
per-agent weight vectors under the projected update laws.  Every right-hand
side is re-evaluated at each RK4 stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .control import ControlConfig, certify_gains, project_rows
from .graphs import GraphMatrices, Topology, matrices
from .nets.fast import NetworkEval, PairIndex, evaluate_network
from .nets.layers import LayerSpec, init_weights

STATE_DIM = 3
DIVERGENCE_LIMIT = 1e6

DEFAULT_TARGET_POS = (-3.0, 2.0, 10.0)
DEFAULT_TARGET_VEL = (-1.0, 0.0, -2.0)
DEFAULT_NGON_RADIUS = 10.0

# Benchmark layer layouts: deep narrow feedforward baseline, two
# message-passing layers otherwise.
DEFAULT_WIDTHS = {"dnn": (24,) * 6, "gnn": (24, 24), "gat": (24, 24)}


def target_accel(pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
    """Unknown-to-the-agents target drift; globally defined and bounded in
    position through the saturating y term."""
    x, y, z = np.asarray(pos, float)
    vx, vy, vz = np.asarray(vel, float)
    return np.array([
        np.cos(vx) - np.sin(vy) + np.cos(2.0 * vz),
        vx - vy + vz + y / np.sqrt(1.0 + abs(y)),
        np.sin(vy) - vx * vz,
    ])


# The pairwise y-term is singular at equal y coordinates; the denominator is
# clamped so trajectories that drift through alignment stay integrable.
INTERACTION_DENOM_FLOOR = 1e-6


def interaction_drift(topo: Topology, pos: np.ndarray,
                      vel: np.ndarray) -> np.ndarray:
    """Neighbor-coupled drift of all agents, (N, 3)."""
    adj = topo.adjacency()
    dy = pos[:, 1][:, None] - pos[:, 1][None, :]
    h1 = adj / np.maximum(20000.0 * dy * dy, INTERACTION_DENOM_FLOOR)
    dvz = vel[:, 2][:, None] - vel[:, 2][None, :]
    h2 = adj * dvz * np.cos(vel[:, 0])[:, None]
    dvx = vel[:, 0][:, None] - vel[:, 0][None, :]
    h3 = adj * np.cos(np.outer(vel[:, 2], vel[:, 2])) \
        * dvx / np.sqrt(1.0 + np.abs(dvx))
    return np.stack([h1.sum(1), h2.sum(1), h3.sum(1)], axis=1)


def agent_accel(i: int, r_i: np.ndarray, topo: Topology) -> np.ndarray:
    """Drift component of agent i from its masked ensemble input R_i.

    `r_i` stacks the indicator-masked (position, velocity) states of all
    agents; the control input is added by the simulation loop.
    """
    states = np.asarray(r_i, float).reshape(topo.n_agents, 2 * STATE_DIM)
    pos, vel = states[:, :STATE_DIM], states[:, STATE_DIM:]
    out = np.zeros(STATE_DIM)
    for j in topo.neighbors(i):
        dy = pos[i, 1] - pos[j, 1]
        out[0] += 1.0 / max(20000.0 * dy * dy, INTERACTION_DENOM_FLOOR)
        out[1] += (vel[i, 2] - vel[j, 2]) * np.cos(vel[i, 0])
        dvx = vel[i, 0] - vel[j, 0]
        out[2] += np.cos(vel[i, 2] * vel[j, 2]) * dvx / np.sqrt(1 + abs(dvx))
    return out


def ngon_initial_conditions(n: int, radius: float):
    """Agents at rest on a regular n-gon around the origin, in the plane."""
    angles = 2.0 * np.pi * (np.arange(n) + 1) / n
    pos = radius * np.stack([np.cos(angles), np.sin(angles),
                             np.zeros(n)], axis=1)
    return pos, np.zeros((n, STATE_DIM))


def node_interaction_input(topo: Topology, pos: np.ndarray,
                           vel: np.ndarray) -> np.ndarray:
    """Masked ensemble state R_i for every node, (N, 2*3*N)."""
    n = topo.n_agents
    q = np.concatenate([pos, vel], axis=1)
    mask = topo.adjacency() + np.eye(n)
    return (mask[:, :, None] * q[None, :, :]).reshape(n, 2 * STATE_DIM * n)


@dataclass
class SimState:
    """Target, agents, per-agent target estimates, per-agent net weights."""

    target_pos: np.ndarray
    target_vel: np.ndarray
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    est_pos: np.ndarray
    est_vel: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    t: float = 0.0

    def pack(self) -> np.ndarray:
        return np.concatenate([
            self.target_pos, self.target_vel,
            self.agent_pos.ravel(), self.agent_vel.ravel(),
            self.est_pos.ravel(), self.est_vel.ravel(),
            self.theta1.ravel(), self.theta2.ravel()])

    @classmethod
    def unpack(cls, flat: np.ndarray, n: int, p1: int, p2: int,
               t: float) -> "SimState":
        d = STATE_DIM
        sizes = [d, d, n * d, n * d, n * d, n * d, n * p1, n * p2]
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        return cls(parts[0], parts[1],
                   parts[2].reshape(n, d), parts[3].reshape(n, d),
                   parts[4].reshape(n, d), parts[5].reshape(n, d),
                   parts[6].reshape(n, p1), parts[7].reshape(n, p2), t)


@dataclass
class Scenario:
    """Everything defining one closed-loop run."""

    topology: Topology
    phi1_arch: str = "gnn"
    phi2_arch: str = "gnn"
    phi1_widths: tuple[int, ...] | None = None
    phi2_widths: tuple[int, ...] | None = None
    cfg: ControlConfig = field(default_factory=ControlConfig)
    ngon_radius: float = DEFAULT_NGON_RADIUS
    target_pos0: tuple = DEFAULT_TARGET_POS
    target_vel0: tuple = DEFAULT_TARGET_VEL
    phi1_stddev: float | None = None
    phi2_stddev: float | None = None

    def __post_init__(self):
        if self.phi1_widths is None:
            self.phi1_widths = DEFAULT_WIDTHS[self.phi1_arch]
        if self.phi2_widths is None:
            self.phi2_widths = DEFAULT_WIDTHS[self.phi2_arch]

    @property
    def phi1_spec(self) -> LayerSpec:
        return LayerSpec(2 * STATE_DIM, STATE_DIM, tuple(self.phi1_widths))

    @property
    def phi2_spec(self) -> LayerSpec:
        return LayerSpec(2 * STATE_DIM * self.topology.n_agents, STATE_DIM,
                         tuple(self.phi2_widths))

    def to_config(self) -> dict:
        return {
            "topology": self.topology.to_config(),
            "phi1": self.phi1_arch, "phi2": self.phi2_arch,
            "phi1_widths": list(self.phi1_widths),
            "phi2_widths": list(self.phi2_widths),
            "control": self.cfg.to_dict(),
            "ngon_radius": self.ngon_radius,
            "target_pos0": list(self.target_pos0),
            "target_vel0": list(self.target_vel0),
            "phi1_stddev": self.phi1_stddev,
            "phi2_stddev": self.phi2_stddev,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "Scenario":
        topo = Topology.from_config(cfg["topology"])
        kw = {}
        for key in ("ngon_radius", "phi1_stddev", "phi2_stddev"):
            if cfg.get(key) is not None:
                kw[key] = cfg[key]
        for key in ("target_pos0", "target_vel0"):
            if cfg.get(key) is not None:
                kw[key] = tuple(cfg[key])
        for key, attr in (("phi1_widths", "phi1_widths"),
                          ("phi2_widths", "phi2_widths")):
            if cfg.get(key) is not None:
                kw[attr] = tuple(cfg[key])
        return cls(topology=topo,
                   phi1_arch=cfg.get("phi1", "gnn"),
                   phi2_arch=cfg.get("phi2", "gnn"),
                   cfg=ControlConfig.from_dict(cfg.get("control", {})),
                   **kw)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, cfg=replace(self.cfg, seed=seed))


class ScenarioContext:
    """Matrices and pair indexes reused across every RK4 stage."""

    def __init__(self, scen: Scenario):
        self.scen = scen
        self.topo = scen.topology
        self.gm: GraphMatrices = matrices(self.topo, STATE_DIM)
        self.abar = self.gm.adjacency_self
        self.lap = self.gm.laplacian
        self.pins = self.gm.pin_vector
        n = self.topo.n_agents
        self.pidx1 = PairIndex.build(
            np.eye(n) if scen.phi1_arch == "dnn" else self.abar,
            scen.phi1_spec.k)
        self.pidx2 = PairIndex.build(
            np.eye(n) if scen.phi2_arch == "dnn" else self.abar,
            scen.phi2_spec.k)


def initial_state(scen: Scenario) -> SimState:
    """N-gon agents at rest; each estimate starts at its own state; both
    networks start from one shared seeded draw."""
    n = scen.topology.n_agents
    pos, vel = ngon_initial_conditions(n, scen.ngon_radius)
    seeds = np.random.SeedSequence(scen.cfg.seed).spawn(2)
    w1 = init_weights(scen.phi1_spec, scen.phi1_arch, n, seeds[0],
                      scen.phi1_stddev)
    w2 = init_weights(scen.phi2_spec, scen.phi2_arch, n, seeds[1],
                      scen.phi2_stddev)
    return SimState(
        target_pos=np.array(scen.target_pos0, float),
        target_vel=np.array(scen.target_vel0, float),
        agent_pos=pos, agent_vel=vel,
        est_pos=pos.copy(), est_vel=vel.copy(),
        theta1=np.stack([w.flat() for w in w1]),
        theta2=np.stack([w.flat() for w in w2]), t=0.0)


def rhs(scen: Scenario, state: SimState, ctx: ScenarioContext | None = None):
    """Time derivative of the full closed-loop state, plus the control and
    network outputs evaluated along the way."""
    if ctx is None:
        ctx = ScenarioContext(scen)
    cfg = scen.cfg
    lap, pins = ctx.lap, ctx.pins

    q_tilde = state.target_pos[None, :] - state.est_pos
    q_tilde_dot = state.target_vel[None, :] - state.est_vel
    feedback = -(lap @ state.est_vel) - cfg.alpha1 * (lap @ state.est_pos) \
        + pins[:, None] * (q_tilde_dot + cfg.alpha1 * q_tilde)

    kappa1 = np.concatenate([state.est_pos, state.est_vel], axis=1)
    ev1: NetworkEval = evaluate_network(scen.phi1_spec, scen.phi1_arch,
                                        ctx.abar, state.theta1, kappa1,
                                        ctx.pidx1)
    est_acc = ev1.outputs + ev1.consensus_correction(state.theta1) \
        + cfg.k1 * feedback

    r2 = (state.est_vel - state.agent_vel) \
        + cfg.alpha2 * (state.est_pos - state.agent_pos)
    kappa2 = node_interaction_input(ctx.topo, state.agent_pos,
                                    state.agent_vel)
    ev2: NetworkEval = evaluate_network(scen.phi2_spec, scen.phi2_arch,
                                        ctx.abar, state.theta2, kappa2,
                                        ctx.pidx2)
    u = est_acc - ev2.outputs - ev2.consensus_correction(state.theta2) \
        + cfg.k2 * r2

    drift = interaction_drift(ctx.topo, state.agent_pos, state.agent_vel)
    f_true = target_accel(state.target_pos, state.target_vel)

    raw1 = cfg.gamma1 * (-cfg.k3 * (lap @ state.theta1 + state.theta1)
                         + ev1.update_direction(feedback))
    raw2 = cfg.gamma2 * (-cfg.k4 * (lap @ state.theta2 + state.theta2)
                         - ev2.update_direction(r2))
    dtheta1 = project_rows(raw1, state.theta1, cfg.theta_bar, cfg.proj_band)
    dtheta2 = project_rows(raw2, state.theta2, cfg.theta_bar, cfg.proj_band)

    deriv = SimState(
        target_pos=state.target_vel, target_vel=f_true,
        agent_pos=state.agent_vel, agent_vel=drift + u,
        est_pos=state.est_vel, est_vel=est_acc,
        theta1=dtheta1, theta2=dtheta2, t=1.0)
    aux = {"u": u, "phi1_out": ev1.outputs, "phi2_out": ev2.outputs,
           "f_true": f_true, "h_true": drift, "est_acc": est_acc,
           "feedback": feedback, "r2": r2}
    return deriv, aux


def step(state: SimState, scen: Scenario, dt: float,
         ctx: ScenarioContext | None = None) -> SimState:
    """One classical RK4 step of the coupled kinematics + weight ODE."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if ctx is None:
        ctx = ScenarioContext(scen)
    n = scen.topology.n_agents
    p1 = state.theta1.shape[1]
    p2 = state.theta2.shape[1]
    y0 = state.pack()

    def f(flat, t):
        s = SimState.unpack(flat, n, p1, p2, t)
        deriv, _ = rhs(scen, s, ctx)
        return deriv.pack()

    k1 = f(y0, state.t)
    k2 = f(y0 + 0.5 * dt * k1, state.t + 0.5 * dt)
    k3 = f(y0 + 0.5 * dt * k2, state.t + 0.5 * dt)
    k4 = f(y0 + dt * k3, state.t + dt)
    y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y1)):
        raise FloatingPointError(f"non-finite state after t={state.t:.3f}")
    return SimState.unpack(y1, n, p1, p2, state.t + dt)


def estimate_target_lipschitz(pos_bound: float = 15.0,
                              vel_bound: float = 5.0,
                              grid: int = 5) -> float:
    """Sampled bound on the target-drift Jacobian norm over a state box.

    The drift only involves the y position and the velocities, so the grid
    covers those; defaults comfortably contain the benchmark trajectory.
    """
    worst = 0.0
    h = 1e-5
    ys = np.linspace(-pos_bound, pos_bound, grid)
    vs = np.linspace(-vel_bound, vel_bound, grid)
    for y in ys:
        for vx in vs:
            for vy in vs:
                for vz in vs:
                    jac = np.zeros((3, 6))
                    base = (np.array([0.0, y, 0.0]),
                            np.array([vx, vy, vz]))
                    for m in range(6):
                        dp = np.zeros(3)
                        dv = np.zeros(3)
                        (dp if m < 3 else dv)[m % 3] = h
                        hi = target_accel(base[0] + dp, base[1] + dv)
                        lo = target_accel(base[0] - dp, base[1] - dv)
                        jac[:, m] = (hi - lo) / (2 * h)
                    worst = max(worst, float(np.linalg.norm(jac, 2)))
    return worst


_LIPSCHITZ_CACHE: dict[tuple, float] = {}


def default_lipschitz() -> float:
    if "default" not in _LIPSCHITZ_CACHE:
        _LIPSCHITZ_CACHE["default"] = estimate_target_lipschitz()
    return _LIPSCHITZ_CACHE["default"]


def run_scenario(scen: Scenario, record: bool = True) -> metrics.RunResult:
    """Integrate the closed loop over the configured horizon.

    Records per-step vector series of the tracking error, its rate, the
    estimation error, the control, and both networks' approximation errors
    (each net's output minus the true value of the function it learns).
    A trajectory escaping the divergence guard yields a flagged result
    with the series truncated at the failure time.
    """
    cfg = scen.cfg
    ctx = ScenarioContext(scen)
    state = initial_state(scen)
    n_steps = int(round(cfg.duration / cfg.dt))
    names = ("e", "edot", "qtilde", "u", "phi1err", "phi2err")
    frames = {name: [] for name in names}
    times = []
    diverged = False
    theta_max = [0.0, 0.0]

    def track_theta(s: SimState):
        theta_max[0] = max(theta_max[0], float(
            np.max(np.einsum("np,np->n", s.theta1, s.theta1))))
        theta_max[1] = max(theta_max[1], float(
            np.max(np.einsum("np,np->n", s.theta2, s.theta2))))

    def record_sample(s: SimState, aux: dict):
        times.append(s.t)
        frames["e"].append(s.target_pos[None, :] - s.agent_pos)
        frames["edot"].append(s.target_vel[None, :] - s.agent_vel)
        frames["qtilde"].append(s.target_pos[None, :] - s.est_pos)
        frames["u"].append(aux["u"])
        frames["phi1err"].append(aux["phi1_out"] - aux["f_true"][None, :])
        frames["phi2err"].append(aux["phi2_out"] - aux["h_true"])

    track_theta(state)
    for _ in range(n_steps):
        if record:
            _, aux = rhs(scen, state, ctx)
            record_sample(state, aux)
        try:
            state = step(state, scen, cfg.dt, ctx)
        except FloatingPointError:
            diverged = True
            break
        track_theta(state)
        if np.abs(state.pack()).max() > DIVERGENCE_LIMIT:
            diverged = True
            break
    if record and not diverged:
        _, aux = rhs(scen, state, ctx)
        record_sample(state, aux)

    t = np.array(times) if times else np.zeros(1)
    series = {name: (np.stack(vals) if vals else
                     np.zeros((1, scen.topology.n_agents, STATE_DIM)))
              for name, vals in frames.items()}
    lip = cfg.lipschitz if cfg.lipschitz else default_lipschitz()
    cert = certify_gains(cfg, scen.topology.n_agents, lip)
    summary = {}
    if record and not diverged:
        summary = metrics.summarize(t, series)
    summary["theta1_max_sq"] = theta_max[0]
    summary["theta2_max_sq"] = theta_max[1]
    meta = {"topology": describe_topology(scen.topology),
            "pair": f"{scen.phi1_arch}+{scen.phi2_arch}",
            "seed": cfg.seed}
    return metrics.RunResult(t=t, series=series, summary=summary,
                             certificate=cert.to_dict(), diverged=diverged,
                             meta=meta)


def describe_topology(topo: Topology) -> str:
    from .graphs import TOPOLOGY_KINDS, build_topology
    for kind in TOPOLOGY_KINDS:
        try:
            if build_topology(kind, topo.n_agents).edges == topo.edges:
                return f"{kind}{topo.n_agents}"
        except ValueError:
            continue
    return f"custom{topo.n_agents}"
