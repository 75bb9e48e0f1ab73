import numpy as np
import pytest

from lowlight_vo.geometry import Pose, compose, pose_from_twist
from lowlight_vo.imu import preintegrate_between
from lowlight_vo.metrics import ate
from lowlight_vo.pgo import (
    Edge,
    LmConfig,
    PoseGraph,
    build_graph,
    dump_graph,
    edge_jacobians,
    edge_residual,
    graph_cost,
    lm_solve,
    load_graph,
    normal_equations,
    retract,
)
from lowlight_vo.sim import ScenarioConfig, gen_ground_truth, gen_imu, gen_vo
from lowlight_vo.trajectory import Trajectory

from conftest import random_pose


def shift(x, y=0.0, z=0.0):
    return pose_from_twist([0, 0, 0, x, y, z])


def test_build_graph_zero_motion():
    I = Pose.identity()
    g = build_graph([I, I], [I, I])
    assert len(g.nodes) == 3 and len(g.edges) == 2
    for p in g.nodes:
        np.testing.assert_array_equal(p.matrix(), np.eye(4))


def test_build_graph_unit_steps():
    g = build_graph([shift(1), shift(1)], [shift(1), shift(1)])
    np.testing.assert_array_equal([p.t[0] for p in g.nodes], [0, 1, 2])
    assert [(e.i, e.j) for e in g.edges] == [(0, 1), (1, 2)]


def test_build_graph_matches_matrix_fold(rng):
    motions = [random_pose(rng, scale=1.0) for _ in range(20)]
    g = build_graph(motions, motions)
    acc = np.eye(4)
    for node, m in zip(g.nodes[1:], motions):
        acc = acc @ m.matrix()
        np.testing.assert_allclose(node.matrix(), acc, atol=1e-10)


def test_build_graph_count_mismatch():
    with pytest.raises(ValueError, match="one IMU motion per VO motion"):
        build_graph([shift(1)] * 3, [shift(1)] * 2)


def test_graph_validation():
    I = Pose.identity()
    with pytest.raises(ValueError):
        PoseGraph([I, I], [Edge(1, 0, I, I, np.eye(6))])
    with pytest.raises(ValueError):
        PoseGraph([I, I], [Edge(0, 1, I, I, -np.eye(6))])
    with pytest.raises(ValueError):
        PoseGraph([I, I], [Edge(0, 1, I, I, np.eye(6))], lam=-1.0)


# ------------------------------------------------------------------ cost


def test_consistent_graph_has_zero_cost(rng):
    motions = [random_pose(rng, scale=1.0) for _ in range(10)]
    cost, res = graph_cost(build_graph(motions, motions))
    assert cost < 1e-20
    assert res.shape == (10, 2, 6)


def test_cost_hand_computed():
    """Integer translations, identity rotations, unit information."""
    nodes = [shift(0), shift(1), shift(3)]
    edges = [Edge(0, 1, shift(2), shift(1, 1), np.eye(6)), Edge(1, 2, shift(2), shift(0), np.eye(6))]
    g = PoseGraph(nodes, edges, lam=0.5)
    # edge 0: actual 1 -> vo r=(-1,0,0), imu r=(0,-1,0)
    # edge 1: actual 2 -> vo r=0, imu r=(2,0,0)
    want = 1.0 + 0.5 * 1.0 + 0.0 + 0.5 * 4.0
    assert graph_cost(g)[0] == pytest.approx(want, abs=1e-12)


def test_lambda_zero_drops_imu_terms(rng):
    vo = [random_pose(rng, scale=1.0) for _ in range(5)]
    imu = [random_pose(rng, scale=1.0) for _ in range(5)]
    assert graph_cost(build_graph(vo, imu, lam=0.0))[0] < 1e-20


def test_information_weights_cost():
    g1 = PoseGraph([shift(0), shift(1)], [Edge(0, 1, shift(0), shift(1), np.eye(6))], lam=0.0)
    g2 = PoseGraph([shift(0), shift(1)], [Edge(0, 1, shift(0), shift(1), 3.0 * np.eye(6))], lam=0.0)
    assert graph_cost(g2)[0] == pytest.approx(3.0 * graph_cost(g1)[0])


def test_gauge_invariance(rng):
    g = build_graph([random_pose(rng, scale=1.0) for _ in range(6)], [random_pose(rng, scale=1.0) for _ in range(6)])
    G = random_pose(rng)
    moved = g.with_nodes([compose(G, p) for p in g.nodes])
    assert graph_cost(moved)[0] == pytest.approx(graph_cost(g)[0], rel=1e-9)


# ------------------------------------------------------------- jacobians


def test_edge_jacobians_match_finite_differences(rng):
    h = 1e-6
    for _ in range(10):
        pi, pj = random_pose(rng, 2.0), random_pose(rng, 2.0)
        # keep the residual rotation away from pi so log stays smooth
        m = compose(compose(pi.inverse(), pj), pose_from_twist(np.r_[0.5 * rng.standard_normal(3), rng.standard_normal(3)]))
        r, Ji, Jj = edge_jacobians(pi, pj, m)
        np.testing.assert_allclose(r, edge_residual(pi, pj, m), atol=1e-14)
        for J, which in ((Ji, 0), (Jj, 1)):
            N = np.zeros((6, 6))
            for k in range(6):
                d = np.zeros(6)
                d[k] = h
                if which == 0:
                    N[:, k] = (edge_residual(retract(pi, d), pj, m) - edge_residual(retract(pi, -d), pj, m)) / (2 * h)
                else:
                    N[:, k] = (edge_residual(pi, retract(pj, d), m) - edge_residual(pi, retract(pj, -d), m)) / (2 * h)
            np.testing.assert_allclose(J, N, atol=1e-7)


def test_gradient_matches_cost_finite_differences(rng):
    vo = [pose_from_twist(np.r_[0.2 * rng.standard_normal(3), rng.standard_normal(3)]) for _ in range(3)]
    imu = [compose(m, pose_from_twist(0.1 * rng.standard_normal(6))) for m in vo]
    g = build_graph(vo, imu, lam=2.0)
    g = g.with_nodes([g.nodes[0]] + [retract(p, 0.1 * rng.standard_normal(6)) for p in g.nodes[1:]])
    _, b = normal_equations(g)
    h = 1e-6
    num = np.zeros_like(b)
    for k in range(1, len(g.nodes)):
        for d in range(6):
            e = np.zeros(6)
            e[d] = h
            up = list(g.nodes)
            dn = list(g.nodes)
            up[k] = retract(g.nodes[k], e)
            dn[k] = retract(g.nodes[k], -e)
            num[6 * (k - 1) + d] = (graph_cost(g.with_nodes(up))[0] - graph_cost(g.with_nodes(dn))[0]) / (2 * h)
    np.testing.assert_allclose(2 * b, num, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------- solver


def test_zero_residual_graph_is_untouched(rng):
    motions = [random_pose(rng, scale=1.0) for _ in range(5)]
    g = build_graph(motions, motions)
    nodes, report = lm_solve(g)
    assert report.accepted_steps == 0
    for a, b in zip(nodes, g.nodes):
        np.testing.assert_array_equal(a.matrix(), b.matrix())


def test_lambda_zero_accepts_no_steps(rng):
    vo = [random_pose(rng, scale=1.0) for _ in range(5)]
    imu = [random_pose(rng, scale=1.0) for _ in range(5)]
    _, report = lm_solve(build_graph(vo, imu, lam=0.0))
    assert report.accepted_steps == 0


def test_single_free_node_midpoint_matches_grid_search():
    g = PoseGraph([Pose.identity(), shift(0)], [Edge(0, 1, shift(0), shift(2), np.eye(6))], lam=1.0)
    xs = np.linspace(-1, 3, 4001)
    costs = [graph_cost(g.with_nodes([Pose.identity(), shift(x)]))[0] for x in xs]
    x_grid = xs[int(np.argmin(costs))]
    assert x_grid == pytest.approx(1.0, abs=1e-9)
    nodes, report = lm_solve(g)
    assert nodes[1].t[0] == pytest.approx(x_grid, abs=1e-6)
    np.testing.assert_allclose(nodes[1].t[1:], 0, atol=1e-9)
    np.testing.assert_allclose(nodes[1].R, np.eye(3), atol=1e-9)
    assert report.termination in ("converged_cost", "converged_step")


def test_accepted_costs_never_increase(rng):
    vo = [pose_from_twist(np.r_[0.3 * rng.standard_normal(3), rng.standard_normal(3)]) for _ in range(15)]
    imu = [compose(m, pose_from_twist(0.2 * rng.standard_normal(6))) for m in vo]
    _, report = lm_solve(build_graph(vo, imu, lam=3.0))
    assert report.accepted_steps > 0
    assert all(b <= a for a, b in zip(report.costs, report.costs[1:]))
    assert report.final_cost < report.initial_cost


def test_solution_is_gauge_covariant(rng):
    """Moving node 0 moves the optimum rigidly."""
    vo = [pose_from_twist(np.r_[0.3 * rng.standard_normal(3), rng.standard_normal(3)]) for _ in range(5)]
    imu = [compose(m, pose_from_twist(0.2 * rng.standard_normal(6))) for m in vo]
    g = build_graph(vo, imu)
    G = random_pose(rng)
    a, ra = lm_solve(g)
    b, rb = lm_solve(g.with_nodes([compose(G, p) for p in g.nodes]))
    assert rb.final_cost == pytest.approx(ra.final_cost, rel=1e-6, abs=1e-12)
    for pa, pb in zip(a, b):
        np.testing.assert_allclose(compose(G, pa).matrix(), pb.matrix(), atol=1e-6)


def test_stall_returns_best_so_far():
    g = PoseGraph([Pose.identity(), shift(0)], [Edge(0, 1, shift(0), shift(2), np.eye(6))], lam=1.0)
    nodes, _ = lm_solve(g)
    cfg = LmConfig(cost_tolerance=1e-300, step_tolerance=1e-300, max_damping=1e3, max_iterations=1000)
    again, report = lm_solve(g.with_nodes(nodes), cfg)
    assert report.termination == "stalled"
    assert report.final_cost <= report.initial_cost


def test_iteration_cap():
    g = PoseGraph([Pose.identity(), shift(0)], [Edge(0, 1, shift(0), shift(2), np.eye(6))], lam=1.0)
    _, report = lm_solve(g, LmConfig(max_iterations=1, cost_tolerance=1e-300, step_tolerance=1e-300))
    assert report.termination == "max_iterations"
    assert report.iterations == 1


def test_single_node_graph():
    _, report = lm_solve(PoseGraph([Pose.identity()], []))
    assert report.termination == "no_free_nodes"


def test_lm_config_validation():
    with pytest.raises(ValueError):
        LmConfig(damping_up=0.5)
    with pytest.raises(ValueError):
        LmConfig(initial_damping=0.0)


def test_refinement_reduces_sim_drift():
    cfg = ScenarioConfig(kind="circle", duration=60, imu_rate=100, vo_drift=(0, 0, 0, 0.01, 0, 0))
    gt = gen_ground_truth(cfg)
    vo = gen_vo(gt, cfg)
    imu = gen_imu(cfg)
    deltas = preintegrate_between(imu.t, imu.accel, imu.gyro, cfg.keyframe_times())
    g = build_graph(vo, deltas, lam=10.0, initial_velocity=imu.initial_velocity)
    nodes, _ = lm_solve(g)
    before = ate(Trajectory.from_poses(gt.timestamps, g.nodes), gt)
    after = ate(Trajectory.from_poses(gt.timestamps, nodes), gt)
    assert after <= 0.5 * before


# ------------------------------------------------------------------ JSON


def test_graph_json_round_trip(rng, tmp_path):
    vo = [random_pose(rng, scale=1.0) for _ in range(4)]
    imu = [random_pose(rng, scale=1.0) for _ in range(4)]
    info = np.diag([1.0, 2, 3, 4, 5, 6])
    g = build_graph(vo, imu, lam=0.25, information=info)
    dump_graph(g, tmp_path / "g.json")
    back = load_graph(tmp_path / "g.json")
    assert back.lam == 0.25
    for a, b in zip(back.nodes, g.nodes):
        np.testing.assert_array_equal(a.matrix(), b.matrix())
    for a, b in zip(back.edges, g.edges):
        assert (a.i, a.j) == (b.i, b.j)
        np.testing.assert_array_equal(a.information, b.information)
        np.testing.assert_array_equal(a.imu.matrix(), b.imu.matrix())
    assert graph_cost(back)[0] == graph_cost(g)[0]


def test_equal_weights_halve_a_constant_bias():
    """Clean IMU, biased VO, lam = 1: every edge settles at the midpoint, so ATE halves."""
    cfg = ScenarioConfig(kind="figure-eight", duration=60, imu_rate=200, vo_drift=(0, 0, 0, 0.01, 0, 0))
    gt = gen_ground_truth(cfg)
    imu = gen_imu(cfg)
    deltas = preintegrate_between(imu.t, imu.accel, imu.gyro, cfg.keyframe_times())
    g = build_graph(gen_vo(gt, cfg), deltas, lam=1.0, initial_velocity=imu.initial_velocity)
    nodes, _ = lm_solve(g)
    ratio = ate(Trajectory.from_poses(gt.timestamps, nodes), gt) / ate(Trajectory.from_poses(gt.timestamps, g.nodes), gt)
    assert ratio == pytest.approx(0.5, abs=2e-3)
