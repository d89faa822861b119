"""Error signals, distributed observer and controller, the projection
operator, adaptive weight update laws, and the sufficient-gain certificate.

Per-agent functions here are the reference contract, written exactly as the
distributed laws read: each agent uses only relative measurements to
neighbors, relative target measurements when pinned, its own and neighbors'
network weights, and the cross-node Jacobians of its own network output.
The simulator evaluates the same math batched over agents (see sim.py) and
is tested against these functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import Topology, lambda_max_bound, lambda_min_closed_form


@dataclass
class ControlConfig:
    """Gains and integrator settings; defaults are the benchmark values."""

    alpha1: float = 0.85
    alpha2: float = 2.45
    k1: float = 6.5
    k2: float = 3.85
    k3: float = 0.01
    k4: float = 0.08
    gamma1: float = 0.875
    gamma2: float = 0.875
    theta_bar: float = 10.0
    proj_band: float | None = None   # defaults to 0.1 * theta_bar^2
    lipschitz: float | None = None   # target-drift Lipschitz bound for certs
    dt: float = 0.005
    duration: float = 60.0
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "k1", "k2", "k3", "k4",
                     "gamma1", "gamma2", "theta_bar", "dt", "duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.proj_band is None:
            self.proj_band = 0.1 * self.theta_bar ** 2
        if self.proj_band <= 0:
            raise ValueError("projection band must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, cfg: dict) -> "ControlConfig":
        known = {k: v for k, v in cfg.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class ErrorSignals:
    """Position/velocity-level tracking, estimation, and auxiliary errors."""

    e: np.ndarray
    e_dot: np.ndarray
    q_tilde: np.ndarray
    q_tilde_dot: np.ndarray
    e_hat: np.ndarray
    e_hat_dot: np.ndarray
    r1: np.ndarray
    r2: np.ndarray


def compute_errors(state, i: int, cfg: ControlConfig) -> ErrorSignals:
    """All error signals of agent i.

    The state-estimation error q_tilde is target-relative and therefore
    only measurable by pinned agents; the caller is responsible for gating
    its use with the pin flag (the observer and update laws here do).
    """
    e = state.target_pos - state.agent_pos[i]
    e_dot = state.target_vel - state.agent_vel[i]
    e_hat = state.est_pos[i] - state.agent_pos[i]
    e_hat_dot = state.est_vel[i] - state.agent_vel[i]
    q_tilde = state.target_pos - state.est_pos[i]
    q_tilde_dot = state.target_vel - state.est_vel[i]
    return ErrorSignals(
        e=e, e_dot=e_dot, q_tilde=q_tilde, q_tilde_dot=q_tilde_dot,
        e_hat=e_hat, e_hat_dot=e_hat_dot,
        r1=q_tilde_dot + cfg.alpha1 * q_tilde,
        r2=e_hat_dot + cfg.alpha2 * e_hat)


def observer_feedback(i: int, state, topo: Topology,
                      cfg: ControlConfig) -> np.ndarray:
    """Measurable feedback combination driving the observer and the
    observer weight update: estimate consensus with neighbors plus
    pin-gated relative-target terms.  Equals row i of the interaction
    matrix applied to the stacked auxiliary estimation errors."""
    fb = np.zeros(3)
    for j in topo.neighbors(i):
        fb += (state.est_vel[j] - state.est_vel[i]) \
            + cfg.alpha1 * (state.est_pos[j] - state.est_pos[i])
    if i in topo.pins:
        err = compute_errors(state, i, cfg)
        fb += err.q_tilde_dot + cfg.alpha1 * err.q_tilde
    return fb


def jacobian_consensus(jacobians: dict, theta: np.ndarray,
                       i: int) -> np.ndarray:
    """Sum over neighbors z of J_{i,z} (theta_i - theta_z).

    `jacobians` maps (i, z) pairs to d(output_i)/d(theta_z); entries with
    z == i contribute nothing and may be omitted.
    """
    total = np.zeros(next(iter(jacobians.values())).shape[0])
    for (ii, z), jac in jacobians.items():
        if ii == i and z != i:
            total = total + jac @ (theta[i] - theta[z])
    return total


def observer_accel(i: int, state, phi1_outputs: np.ndarray,
                   phi1_jacobians: dict, topo: Topology,
                   cfg: ControlConfig) -> np.ndarray:
    """Acceleration of agent i's target-state estimate."""
    correction = jacobian_consensus(phi1_jacobians, state.theta1, i)
    return phi1_outputs[i] + correction \
        + cfg.k1 * observer_feedback(i, state, topo, cfg)


def control_input(i: int, state, est_accel_i: np.ndarray,
                  phi2_outputs: np.ndarray, phi2_jacobians: dict,
                  topo: Topology, cfg: ControlConfig) -> np.ndarray:
    """Agent i's control: estimate feedforward minus learned interaction
    terms plus regulation feedback on the estimate-relative error."""
    err = compute_errors(state, i, cfg)
    correction = jacobian_consensus(phi2_jacobians, state.theta2, i)
    return est_accel_i - phi2_outputs[i] - correction + cfg.k2 * err.r2


def project(a: np.ndarray, b: np.ndarray, theta_bar: float,
            band: float, gamma: float = 1.0) -> np.ndarray:
    """Smooth radial projection keeping ||b||^2 inside theta_bar^2 + band.

    Uses the ball condition ||b||^2 - theta_bar^2 <= 0: returns `a`
    unchanged inside the ball or when `a` points inward; otherwise removes
    a band-scaled fraction of the outward radial component.  With a scalar
    gain matrix the gain cancels; the argument is kept for signature
    completeness.
    """
    if band <= 0:
        raise ValueError("band must be positive")
    del gamma  # scalar gain cancels in the radial term
    excess = float(b @ b) - theta_bar ** 2
    outward = b @ a
    if excess <= 0 or outward <= 0:
        return a
    scale = min(1.0, excess / band)
    return a - scale * (outward / (b @ b)) * b


def project_rows(a: np.ndarray, b: np.ndarray, theta_bar: float,
                 band: float) -> np.ndarray:
    """Row-wise `project` for stacked per-agent weight vectors."""
    sq = np.einsum("np,np->n", b, b)
    excess = sq - theta_bar ** 2
    outward = np.einsum("np,np->n", b, a)
    active = (excess > 0) & (outward > 0)
    scale = np.where(active,
                     np.minimum(1.0, excess / band) * outward
                     / np.where(sq > 0, sq, 1.0),
                     0.0)
    return a - scale[:, None] * b


def weight_consensus(theta: np.ndarray, topo: Topology,
                     i: int) -> np.ndarray:
    """Sum over neighbors of (theta_i - theta_j) plus the leakage theta_i."""
    total = len(topo.neighbors(i)) * theta[i] \
        - sum(theta[j] for j in topo.neighbors(i))
    return total + theta[i]


def update_law_observer(i: int, state, phi1_jacobians: dict,
                        topo: Topology, cfg: ControlConfig) -> np.ndarray:
    """Projected weight derivative for agent i's observer network."""
    grad_sum = sum(jac for (ii, z), jac in phi1_jacobians.items() if ii == i)
    fb = observer_feedback(i, state, topo, cfg)
    raw = cfg.gamma1 * (-cfg.k3 * weight_consensus(state.theta1, topo, i)
                        + grad_sum.T @ fb)
    return project(raw, state.theta1[i], cfg.theta_bar, cfg.proj_band,
                   cfg.gamma1)


def update_law_controller(i: int, state, phi2_jacobians: dict,
                          topo: Topology, cfg: ControlConfig) -> np.ndarray:
    """Projected weight derivative for agent i's interaction network."""
    err = compute_errors(state, i, cfg)
    grad_sum = sum(jac for (ii, z), jac in phi2_jacobians.items() if ii == i)
    raw = cfg.gamma2 * (-cfg.k4 * weight_consensus(state.theta2, topo, i)
                        - grad_sum.T @ err.r2)
    return project(raw, state.theta2[i], cfg.theta_bar, cfg.proj_band,
                   cfg.gamma2)


@dataclass
class GainCertificate:
    """Evaluation of the sufficient gain inequalities with minimally-slack
    auxiliary constants, using the decentralized spectral bounds."""

    n_agents: int
    lipschitz: float
    eps1: float
    eps2: float
    eps3: float
    lambda_min_used: float
    lambda_max_used: float
    lambda1: float
    lambda2: float
    k1_bound: float
    k2_bound: float
    margins: dict = field(default_factory=dict)
    passes: dict = field(default_factory=dict)
    all_pass: bool = False

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in
               ("n_agents", "lipschitz", "eps1", "eps2", "eps3",
                "lambda_min_used", "lambda_max_used", "lambda1", "lambda2",
                "k1_bound", "k2_bound", "all_pass")}
        out["margins"] = dict(self.margins)
        out["passes"] = dict(self.passes)
        return out


# Slack factors for the auxiliary constants: lower bounds are exceeded by
# 5%, the upper bound is undercut by 5%.
EPS_LOWER_SLACK = 1.05
EPS_UPPER_SLACK = 0.95


def certify_gains(cfg: ControlConfig, n_agents: int,
                  lipschitz: float) -> GainCertificate:
    """Check the sufficient gain conditions for the given configuration.

    The spectral quantities use the topology-free bounds (path lower bound
    and N+1 upper bound) so the certificate is computable per-agent from
    the network size alone.  Sufficiency is one-sided: failing gains can
    still perform well, and the benchmark gains do fail the k2 condition.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be positive")
    if lipschitz is None or lipschitz <= 0:
        raise ValueError("lipschitz bound must be positive")
    lam_lo = lambda_min_closed_form(n_agents)
    lam_hi = lambda_max_bound(n_agents)
    a1, a2 = cfg.alpha1, cfg.alpha2
    nl = n_agents * lipschitz

    eps3_bound = nl * lam_hi * (1.0 / (2.0 * a1) + 0.5)
    eps3 = EPS_LOWER_SLACK * eps3_bound
    eps1_denom = 2.0 * a1 - nl * lam_hi * (1.0 + a1) / eps3
    eps1_bound = (1.0 + a1 ** 2 * lam_hi) / eps1_denom
    eps1 = EPS_LOWER_SLACK * eps1_bound
    eps2_bound = 2.0 * a2 / (1.0 + a2 ** 2)
    eps2 = EPS_UPPER_SLACK * eps2_bound

    k1_bound = (lam_hi / lam_lo ** 2) \
        * (2.0 * a1 + a1 ** 2 * eps1 + nl * (2.0 + eps3 + a1 * eps3)) \
        + eps1 / lam_lo ** 2
    k2_bound = 2.0 * a2 + (1.0 + a2 ** 2) / eps2

    gmax = max(cfg.gamma1, cfg.gamma2)
    gmin = min(cfg.gamma1, cfg.gamma2)
    passes = {
        "eps3": eps3 > eps3_bound,
        "eps1": eps1 > eps1_bound and eps1_denom > 0,
        "eps2": eps2 < eps2_bound,
        "k1": cfg.k1 > k1_bound,
        "k2": cfg.k2 > k2_bound,
    }
    margins = {
        "eps3": eps3 - eps3_bound,
        "eps1": eps1 - eps1_bound,
        "eps2": eps2_bound - eps2,
        "k1": cfg.k1 - k1_bound,
        "k2": cfg.k2 - k2_bound,
    }
    return GainCertificate(
        n_agents=n_agents, lipschitz=lipschitz,
        eps1=eps1, eps2=eps2, eps3=eps3,
        lambda_min_used=lam_lo, lambda_max_used=lam_hi,
        lambda1=0.5 * min(1.0, lam_lo, 1.0 / gmax),
        lambda2=0.5 * max(1.0, lam_hi, 1.0 / gmin),
        k1_bound=k1_bound, k2_bound=k2_bound,
        margins=margins, passes=passes, all_pass=all(passes.values()))


def eps2_upper_bound(alpha2: float) -> float:
    """Admissible upper limit for the eps2 constant, 2 a2 / (1 + a2^2)."""
    return 2.0 * alpha2 / (1.0 + alpha2 ** 2)
