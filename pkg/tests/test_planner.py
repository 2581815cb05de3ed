from __future__ import annotations

import numpy as np
import pytest
import scipy.optimize

from lfbl_racing._exceptions import InfeasibleError
from lfbl_racing.control import numerics
from lfbl_racing.control.linearize import LinearState, VirtualInput
from lfbl_racing.control.planner import (
    A_PRIME,
    B_PRIME,
    LinearModel,
    PlannerWeights,
    Waypoint,
    _prediction_matrices,
    discretize,
    plan,
    plan_with,
    shift_waypoints,
    track,
    tracker_gain,
)

DT = 0.02
X0 = LinearState(x=0.0, xdot=0.0, y=0.0, ydot=0.5)
XF = LinearState(x=5.0, xdot=0.0, y=5.0, ydot=0.0)


def _dynamics_defect(result) -> float:
    model = LinearModel.for_dt(result.dt)
    states, inputs = result.state_array(), result.input_array()
    predicted = states[:-1] @ model.abar.T + inputs @ model.bbar.T
    return float(np.max(np.abs(states[1:] - predicted)))


def _min_inf_norm_inputs(x0: LinearState, xf: LinearState, n: int, dt: float) -> np.ndarray:
    """A feasible input sequence with the smallest |v|_inf, by linear programming."""
    abar, bbar = discretize(dt)
    phi, gamma = _prediction_matrices(abar, bbar, n)
    aeq = gamma[-4:]
    beq = xf.to_array() - (phi @ x0.to_array())[-4:]
    m = aeq.shape[1]
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    ones = np.ones((m, 1))
    a_ub = np.block([[np.eye(m), -ones], [-np.eye(m), -ones]])
    result = scipy.optimize.linprog(
        cost,
        A_ub=a_ub,
        b_ub=np.zeros(2 * m),
        A_eq=np.hstack([aeq, np.zeros((4, 1))]),
        b_eq=beq,
        bounds=[(None, None)] * m + [(0.0, None)],
        method="highs",
    )
    assert result.status == 0
    return result.x[:-1]


def test_normal_form_is_read_only() -> None:
    with pytest.raises(ValueError):
        A_PRIME[0, 0] = 1.0


def test_discretize_double_integrator() -> None:
    abar, bbar = discretize(0.1)

    np.testing.assert_allclose(abar[:2, :2], [[1.0, 0.1], [0.0, 1.0]])
    np.testing.assert_allclose(bbar[:2, 0], [0.005, 0.1])
    np.testing.assert_allclose(abar[:2, 2:], 0.0)
    with pytest.raises(ValueError):
        discretize(0.0)


def test_reference_scenario_plan_meets_endpoints_dynamics_and_bounds() -> None:
    result = plan(X0, XF, 249, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 10.0, dt=DT)

    assert result.n_steps == 249
    assert len(result.inputs) == 248
    np.testing.assert_array_equal(result.state_array()[0], X0.to_array())
    np.testing.assert_array_equal(result.state_array()[-1], XF.to_array())
    assert _dynamics_defect(result) <= 1e-9 * (1.0 + 5.0)
    assert np.max(np.abs(result.input_array())) <= 10.0


def test_unconstrained_plan_is_the_minimum_norm_input() -> None:
    n = 60
    result = plan(X0, XF, n, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 100.0, dt=0.05)

    abar, bbar = discretize(0.05)
    phi, gamma = _prediction_matrices(abar, bbar, n)
    beq = XF.to_array() - (phi @ X0.to_array())[-4:]
    expected = np.linalg.pinv(gamma[-4:]) @ beq

    np.testing.assert_allclose(result.input_array().ravel(), expected, atol=1e-9)
    assert result.objective == pytest.approx(float(expected @ expected), rel=1e-9)


def test_plan_to_current_state_needs_no_input() -> None:
    x = LinearState(x=1.0, xdot=0.0, y=2.0, ydot=0.0)

    result = plan(x, x, 20, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 1.0, dt=DT)

    np.testing.assert_allclose(result.input_array(), 0.0, atol=1e-12)
    assert result.objective == pytest.approx(0.0, abs=1e-20)


def test_plan_with_active_input_bound() -> None:
    # rest-to-rest needs |v| of about 0.81 at best; a bound of 1 is active
    x0 = LinearState(x=0.0, xdot=0.0, y=0.0, ydot=0.0)
    result = plan(x0, XF, 249, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 1.0, dt=DT)

    inputs = result.input_array()
    assert np.max(np.abs(inputs)) <= 1.0
    assert np.max(np.abs(inputs)) == pytest.approx(1.0)
    assert _dynamics_defect(result) <= 1e-8
    np.testing.assert_array_equal(result.state_array()[-1], XF.to_array())


def test_tiny_input_bound_is_infeasible() -> None:
    with pytest.raises(InfeasibleError):
        plan(X0, XF, 249, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 1e-6, dt=DT)


def test_plan_rejects_bad_arguments() -> None:
    with pytest.raises(ValueError, match="n must be"):
        plan(X0, XF, 1, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 1.0)
    with pytest.raises(ValueError, match="v_bnds"):
        plan(X0, XF, 10, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 0.0)
    with pytest.raises(ValueError, match="Waypoint step"):
        plan(
            X0,
            XF,
            10,
            np.zeros((4, 4)),
            np.eye(2),
            np.zeros((4, 4)),
            100.0,
            waypoints=[Waypoint(step=9, x=0.0, y=0.0)],
        )


def test_random_plans_are_feasible_and_no_worse_than_min_inf_norm_inputs() -> None:
    rng = np.random.default_rng(5)
    dt = 0.1
    for _ in range(30):
        n = int(rng.integers(10, 26))
        x0 = LinearState.from_array(rng.uniform(-1.0, 1.0, size=4))
        xf = LinearState.from_array(rng.uniform(-1.0, 1.0, size=4))
        q = np.diag(rng.uniform(0.0, 1.0, size=4))
        r = np.diag(rng.uniform(0.5, 2.0, size=2))
        qf = np.diag(rng.uniform(0.0, 1.0, size=4))
        z_lp = _min_inf_norm_inputs(x0, xf, n, dt)
        bound = 1.5 * float(np.max(np.abs(z_lp)))

        result = plan(x0, xf, n, q, r, qf, bound, dt=dt)

        assert np.max(np.abs(result.input_array())) <= bound
        np.testing.assert_array_equal(result.state_array()[-1], xf.to_array())
        assert _dynamics_defect(result) <= 1e-9 * (1.0 + float(np.max(np.abs(xf.to_array()))))

        # the LP inputs are feasible, so the optimum can only cost less
        model = LinearModel.for_dt(dt)
        states = [x0.to_array()]
        for v in z_lp.reshape(-1, 2):
            states.append(model.step(states[-1], v))
        states = np.array(states)
        inputs = z_lp.reshape(-1, 2)
        lp_cost = (
            float(np.einsum("ki,ij,kj->", states, q, states))
            + float(np.einsum("ki,ij,kj->", inputs, r, inputs))
            + float(states[-1] @ qf @ states[-1])
        )
        assert result.objective <= lp_cost + 1e-6 * (1.0 + lp_cost)


def test_waypoints_pin_interior_positions() -> None:
    weights = PlannerWeights(
        q=np.zeros((4, 4)),
        r=np.eye(2),
        qf=np.zeros((4, 4)),
        v_bnds=10.0,
        waypoints=(Waypoint(step=120, x=4.0, y=1.0),),
    )

    result = plan_with(X0, XF, 249, weights, dt=DT)

    mid = result.states[120]
    assert mid.x == pytest.approx(4.0, abs=1e-8)
    assert mid.y == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_array_equal(result.state_array()[-1], XF.to_array())


def test_shift_waypoints_drops_passed_points() -> None:
    waypoints = (Waypoint(step=5, x=1.0, y=1.0), Waypoint(step=20, x=2.0, y=2.0))

    shifted = shift_waypoints(waypoints, 10, 30)

    assert shifted == (Waypoint(step=10, x=2.0, y=2.0),)


def test_tracker_gain_for_identity_weights() -> None:
    gain = tracker_gain(np.eye(4), np.eye(2))

    expected = np.array([[1.0, np.sqrt(3.0), 0.0, 0.0], [0.0, 0.0, 1.0, np.sqrt(3.0)]])
    np.testing.assert_allclose(gain, expected, atol=1e-8)


def test_track_adds_feedback_on_the_error() -> None:
    gain = tracker_gain(np.eye(4), np.eye(2))
    ref = LinearState(x=1.0, xdot=0.5, y=-1.0, ydot=0.0)
    v_ref = VirtualInput(v1=0.2, v2=-0.3)

    assert track(ref, ref, v_ref, gain) == v_ref

    ahead = LinearState(x=1.1, xdot=0.5, y=-1.0, ydot=0.0)
    v = track(ahead, ref, v_ref, gain)
    assert v.v1 == pytest.approx(0.2 - 0.1)
    assert v.v2 == pytest.approx(-0.3)


def test_three_state_plan_accelerates_then_brakes_symmetrically() -> None:
    dt, d = 0.1, 0.3
    start = LinearState(x=0.0, xdot=0.0, y=0.0, ydot=0.0)
    goal = LinearState(x=d, xdot=0.0, y=-2.0 * d, ydot=0.0)
    zero = np.zeros((4, 4))

    result = plan(start, goal, 3, zero, np.eye(2), zero, 1e3, dt=dt)

    v = d / dt**2
    np.testing.assert_allclose(result.input_array(), [[v, -2.0 * v], [-v, 2.0 * v]], rtol=1e-8)
    np.testing.assert_allclose(result.states[1].to_array(), [0.5 * d, v * dt, -d, -2.0 * v * dt])
    np.testing.assert_allclose(result.states[-1].to_array(), goal.to_array(), atol=1e-12)


def test_heavier_state_weights_speed_up_the_closed_loop() -> None:
    abscissas = [
        numerics.spectral_abscissa(A_PRIME - B_PRIME @ tracker_gain(c * c * np.eye(4), np.eye(2)))
        for c in (1.0, 10.0)
    ]

    assert all(a < 0.0 for a in abscissas)
    assert abscissas[1] < abscissas[0]


def test_heavier_input_weights_shrink_the_gain() -> None:
    norms = [
        float(np.linalg.norm(tracker_gain(np.eye(4), r * np.eye(2)), "fro"))
        for r in (1.0, 10.0, 100.0)
    ]

    assert norms[0] > norms[1] > norms[2]


def test_track_is_affine_in_the_error() -> None:
    gain = tracker_gain(np.diag([2.0, 1.0, 0.5, 3.0]), np.eye(2))
    ref = LinearState(x=0.4, xdot=-0.2, y=1.0, ydot=0.7)
    v_ref = VirtualInput(v1=0.3, v2=-0.1)
    error = np.array([0.05, -0.3, 0.2, 0.1])

    once = track(LinearState.from_array(ref.to_array() + error), ref, v_ref, gain)
    twice = track(LinearState.from_array(ref.to_array() + 2.0 * error), ref, v_ref, gain)

    np.testing.assert_allclose(
        twice.to_array() - v_ref.to_array(),
        2.0 * (once.to_array() - v_ref.to_array()),
        atol=1e-12,
    )
