"""Pose-graph refinement of VO motions with IMU constraints.

Each edge ``(i, j)`` carries a VO measurement and an IMU measurement of the
relative motion ``p_i^-1 p_j``. The cost is::

    L = sum_e r_vo^T S r_vo + lam * sum_e r_imu^T S r_imu,
    r = twist(meas^-1 p_i^-1 p_j)

and is minimised over the absolute node poses (node 0 fixed) with
Levenberg-Marquardt. Nodes are updated by right-multiplicative retraction
``R <- R exp(d_rot), t <- t + R d_trans``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .geometry import (
    Pose,
    compose,
    relative_pose,
    skew,
    so3_exp,
    so3_log,
    so3_right_jacobian_inv,
)
from .imu import PreintegratedMotion, chain_to_world

log = logging.getLogger(__name__)


@dataclass
class Edge:
    i: int
    j: int
    vo: Pose
    imu: Pose
    information: np.ndarray


@dataclass
class PoseGraph:
    nodes: list[Pose]
    edges: list[Edge]
    lam: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda weight must be non-negative")
        n = len(self.nodes)
        for e in self.edges:
            if not (0 <= e.i < e.j < n):
                raise ValueError(f"edge ({e.i}, {e.j}) does not reference nodes i < j < {n}")
            S = np.asarray(e.information, dtype=np.float64)
            if S.shape != (6, 6) or not np.allclose(S, S.T, rtol=0, atol=1e-12):
                raise ValueError(f"edge ({e.i}, {e.j}) information must be a symmetric 6x6 matrix")
            try:
                np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise ValueError(f"edge ({e.i}, {e.j}) information is not positive definite") from None
            e.information = S

    def with_nodes(self, nodes: Sequence[Pose]) -> "PoseGraph":
        return PoseGraph(list(nodes), self.edges, self.lam)


@dataclass
class LmConfig:
    max_iterations: int = 100
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.5
    cost_tolerance: float = 1e-9
    step_tolerance: float = 1e-10
    max_damping: float = 1e10

    def __post_init__(self):
        if self.max_iterations <= 0 or self.initial_damping <= 0 or self.max_damping <= 0:
            raise ValueError("LM iteration count and damping values must be positive")
        if not self.damping_up > 1.0 or not 0.0 < self.damping_down < 1.0:
            raise ValueError("LM damping factors need up > 1 and 0 < down < 1")
        if self.cost_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("LM tolerances must be positive")


@dataclass
class SolveReport:
    costs: list[float] = field(default_factory=list)  # initial cost, then one per accepted step
    termination: str = ""
    iterations: int = 0
    accepted_steps: int = 0

    @property
    def initial_cost(self) -> float:
        return self.costs[0]

    @property
    def final_cost(self) -> float:
        return self.costs[-1]

    def to_dict(self) -> dict:
        return {
            "termination": self.termination,
            "iterations": self.iterations,
            "accepted_steps": self.accepted_steps,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "costs": list(self.costs),
        }


def imu_relative_motions(
    imu_motions: Sequence[PreintegratedMotion],
    initial_velocity=None,
    gravity_compensation: bool = False,
) -> list[Pose]:
    """Relative poses between consecutive keyframes of the chained IMU track."""
    traj = chain_to_world(
        imu_motions, Pose.identity(), initial_velocity, gravity_compensation=gravity_compensation
    )
    return [relative_pose(traj[k], traj[k + 1]) for k in range(len(traj) - 1)]


def build_graph(
    vo_motions: Sequence[Pose],
    imu_motions: Sequence[PreintegratedMotion | Pose],
    lam: float = 1.0,
    information=None,
    *,
    initial_velocity=None,
    gravity_compensation: bool = False,
) -> PoseGraph:
    """Chain graph with one edge per consecutive frame pair.

    ``imu_motions`` may be pre-integrated deltas (chained with
    ``initial_velocity`` to obtain relative poses) or relative poses directly.
    Nodes start at the VO chain from identity.
    """
    if len(vo_motions) != len(imu_motions):
        raise ValueError(
            f"need one IMU motion per VO motion, got {len(imu_motions)} vs {len(vo_motions)}"
        )
    if imu_motions and isinstance(imu_motions[0], PreintegratedMotion):
        imu_rel = imu_relative_motions(imu_motions, initial_velocity, gravity_compensation)
    else:
        imu_rel = list(imu_motions)
    S = np.eye(6) if information is None else np.asarray(information, dtype=np.float64)
    nodes = [Pose.identity()]
    for m in vo_motions:
        nodes.append(compose(nodes[-1], m))
    edges = [Edge(k, k + 1, vo, im, S.copy()) for k, (vo, im) in enumerate(zip(vo_motions, imu_rel))]
    return PoseGraph(nodes, edges, lam)


def edge_residual(pi: Pose, pj: Pose, meas: Pose) -> np.ndarray:
    Rij = pi.R.T @ pj.R
    tij = pi.R.T @ (pj.t - pi.t)
    Rm = meas.R
    return np.concatenate([so3_log(Rm.T @ Rij), Rm.T @ (tij - meas.t)])


def edge_jacobians(pi: Pose, pj: Pose, meas: Pose):
    """Residual and its 6x6 Jacobians w.r.t. right perturbations of ``pi``, ``pj``."""
    Rij = pi.R.T @ pj.R
    tij = pi.R.T @ (pj.t - pi.t)
    Rm = meas.R
    ER = Rm.T @ Rij
    r_rot = so3_log(ER)
    r = np.concatenate([r_rot, Rm.T @ (tij - meas.t)])
    Jr_inv = so3_right_jacobian_inv(r_rot)
    Ji = np.zeros((6, 6))
    Jj = np.zeros((6, 6))
    Ji[:3, :3] = -Jr_inv @ Rij.T
    Ji[3:, :3] = Rm.T @ skew(tij)
    Ji[3:, 3:] = -Rm.T
    Jj[:3, :3] = Jr_inv
    Jj[3:, 3:] = ER
    return r, Ji, Jj


def graph_cost(g: PoseGraph) -> tuple[float, np.ndarray]:
    """Total cost and the ``(E, 2, 6)`` array of VO / IMU residuals."""
    res = np.zeros((len(g.edges), 2, 6))
    cost = 0.0
    for k, e in enumerate(g.edges):
        pi, pj = g.nodes[e.i], g.nodes[e.j]
        r_vo = edge_residual(pi, pj, e.vo)
        r_imu = edge_residual(pi, pj, e.imu)
        res[k, 0] = r_vo
        res[k, 1] = r_imu
        cost += r_vo @ e.information @ r_vo + g.lam * (r_imu @ e.information @ r_imu)
    return float(cost), res


def _cost_only(g: PoseGraph, nodes: Sequence[Pose]) -> float:
    cost = 0.0
    for e in g.edges:
        pi, pj = nodes[e.i], nodes[e.j]
        r_vo = edge_residual(pi, pj, e.vo)
        r_imu = edge_residual(pi, pj, e.imu)
        cost += r_vo @ e.information @ r_vo + g.lam * (r_imu @ e.information @ r_imu)
    return float(cost)


def normal_equations(g: PoseGraph, nodes: Sequence[Pose] | None = None):
    """Gauss-Newton ``H`` and gradient ``b`` (of half the cost) over nodes 1..n-1."""
    nodes = g.nodes if nodes is None else nodes
    n_free = len(nodes) - 1
    H = np.zeros((6 * n_free, 6 * n_free))
    b = np.zeros(6 * n_free)
    for e in g.edges:
        pi, pj = nodes[e.i], nodes[e.j]
        for meas, w in ((e.vo, 1.0), (e.imu, g.lam)):
            if w == 0.0:
                continue
            r, Ji, Jj = edge_jacobians(pi, pj, meas)
            W = w * e.information
            blocks = []
            if e.i > 0:
                blocks.append((6 * (e.i - 1), Ji))
            blocks.append((6 * (e.j - 1), Jj))
            for a, Ja in blocks:
                JaW = Ja.T @ W
                b[a : a + 6] += JaW @ r
                for c, Jc in blocks:
                    H[a : a + 6, c : c + 6] += JaW @ Jc
    return H, b


def retract(p: Pose, d: np.ndarray) -> Pose:
    return Pose._trusted(p.R @ so3_exp(d[:3]), p.t + p.R @ d[3:])


def lm_solve(g: PoseGraph, cfg: LmConfig | None = None) -> tuple[list[Pose], SolveReport]:
    """Levenberg-Marquardt over all nodes except node 0 (the gauge anchor)."""
    cfg = cfg or LmConfig()
    nodes = list(g.nodes)
    cost = _cost_only(g, nodes)
    report = SolveReport(costs=[cost])
    if len(nodes) < 2 or not g.edges:
        report.termination = "no_free_nodes"
        return nodes, report
    if cost == 0.0:
        report.termination = "converged_cost"
        return nodes, report

    mu = cfg.initial_damping
    H, b = normal_equations(g, nodes)
    while report.iterations < cfg.max_iterations:
        report.iterations += 1
        try:
            c, low = scipy.linalg.cho_factor(H + mu * np.eye(H.shape[0]))
            step = -scipy.linalg.cho_solve((c, low), b)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            mu *= cfg.damping_up
            if mu > cfg.max_damping:
                report.termination = "stalled"
                break
            continue
        if not np.all(np.isfinite(step)):
            mu *= cfg.damping_up
            if mu > cfg.max_damping:
                report.termination = "stalled"
                break
            continue
        if np.linalg.norm(step) < cfg.step_tolerance:
            report.termination = "converged_step"
            break
        trial = [nodes[0]] + [retract(p, step[6 * k : 6 * k + 6]) for k, p in enumerate(nodes[1:])]
        new_cost = _cost_only(g, trial)
        if new_cost < cost:
            rel = (cost - new_cost) / cost
            nodes, cost = trial, new_cost
            report.costs.append(cost)
            report.accepted_steps += 1
            mu = max(mu * cfg.damping_down, 1e-15)
            log.debug("lm iter %d: cost %.6e (mu %.1e)", report.iterations, cost, mu)
            if rel < cfg.cost_tolerance or cost == 0.0:
                report.termination = "converged_cost"
                break
            H, b = normal_equations(g, nodes)
        else:
            mu *= cfg.damping_up
            if mu > cfg.max_damping:
                report.termination = "stalled"
                break
    else:
        report.termination = "max_iterations"
    return nodes, report


# --------------------------------------------------------------------------
# JSON dump / load
# --------------------------------------------------------------------------


def _pose12(p: Pose) -> list[float]:
    return [float(x) for x in p.matrix34().reshape(-1)]


def _pose_from12(values, tol: float = 1e-4) -> Pose:
    a = np.asarray(values, dtype=np.float64)
    if a.shape != (12,):
        raise ValueError("pose needs 12 numbers (row-major 3x4)")
    return Pose.from_matrix(a.reshape(3, 4), tol=tol)


def graph_to_dict(g: PoseGraph) -> dict:
    return {
        "version": 1,
        "lambda": g.lam,
        "nodes": [_pose12(p) for p in g.nodes],
        "edges": [
            {
                "i": e.i,
                "j": e.j,
                "vo": _pose12(e.vo),
                "imu": _pose12(e.imu),
                "information": [float(x) for x in e.information.reshape(-1)],
            }
            for e in g.edges
        ],
    }


def graph_from_dict(d: dict) -> PoseGraph:
    nodes = [_pose_from12(v) for v in d["nodes"]]
    edges = [
        Edge(
            int(e["i"]),
            int(e["j"]),
            _pose_from12(e["vo"]),
            _pose_from12(e["imu"]),
            np.asarray(e["information"], dtype=np.float64).reshape(6, 6),
        )
        for e in d["edges"]
    ]
    return PoseGraph(nodes, edges, float(d.get("lambda", 1.0)))


def dump_graph(g: PoseGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g), indent=1) + "\n")


def load_graph(path) -> PoseGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))
