from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gainrag.impedance import (
    PAYLOAD_SIZE, DegenerateConfigurationError, GainScheduler, ImpedancePayload, JointCommand, JointState,
    fallback_payload, force_map, impedance_torque, scheduler_step, validate_payload,
)
from gainrag.kinematics import N_JOINTS, jacobian
from gainrag.perception import MockVLMClient, normalize
from gainrag.safety import apply_guards
from gainrag.scenario_db import SPEED_LEVELS, validate_record, ScenarioRecord

Z = np.zeros(N_JOINTS)


def cmd(q_ref=Z, qd_ref=Z, tau_ff=Z, kp=40.0, kd=1.0):
    return JointCommand(np.asarray(q_ref, float), np.asarray(qd_ref, float), np.asarray(tau_ff, float),
                        np.full(N_JOINTS, kp), np.full(N_JOINTS, kd))


def test_zero_error_gives_feedforward():
    rng = np.random.default_rng(0)
    q, qd, ff = rng.normal(size=(3, N_JOINTS))
    tau = impedance_torque(cmd(q, qd, ff), JointState(q, qd))
    np.testing.assert_array_equal(tau, ff)


def test_hand_example():
    # 40 * 0.1 + 1.0 * 0 + 2.0
    tau = impedance_torque(cmd(np.full(N_JOINTS, 0.1), Z, np.full(N_JOINTS, 2.0)), JointState(Z, Z))
    np.testing.assert_allclose(tau, 6.0, rtol=0, atol=1e-12)


def test_kp_scaling():
    dq = np.linspace(-0.3, 0.3, N_JOINTS)
    a = impedance_torque(cmd(dq, kp=20.0), JointState(Z, Z))
    b = impedance_torque(cmd(dq, kp=40.0), JointState(Z, Z))
    np.testing.assert_allclose(b, 2 * a, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_superposition(seed):
    rng = np.random.default_rng(seed)
    kp, kd = rng.uniform(10, 60, N_JOINTS), rng.uniform(0.1, 2, N_JOINTS)
    e1, e2, v1, v2, f1, f2 = rng.normal(size=(6, N_JOINTS))

    def t(e, v, f):
        return impedance_torque(JointCommand(e, v, f, kp, kd), JointState(Z, Z))

    np.testing.assert_allclose(t(e1 + e2, v1 + v2, f1 + f2), t(e1, v1, f1) + t(e2, v2, f2), atol=1e-12)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        impedance_torque(cmd(np.full(N_JOINTS, np.nan)), JointState(Z, Z))
    with pytest.raises(ValueError):
        impedance_torque(cmd(), JointState(Z, np.full(N_JOINTS, np.inf)))


def test_force_map_zero(model):
    np.testing.assert_array_equal(force_map(model, model.home, np.zeros(7), "left"), np.zeros(6))


def test_force_map_virtual_work(model):
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = rng.uniform(model.lower, model.upper)
        side = ("left", "right")[rng.integers(2)]
        J = jacobian(model, q, side)
        if np.linalg.cond(J) > 1e6:
            continue
        # torques realizable by some wrench, i.e. in the row space of J
        tau = J.T @ rng.normal(size=6)
        F = force_map(model, q, tau, side)
        for _ in range(5):
            dq = rng.normal(size=7)
            assert F @ (J @ dq) == pytest.approx(tau @ dq, abs=1e-9)


def test_force_map_least_squares(model):
    rng = np.random.default_rng(2)
    q = model.home
    J = jacobian(model, q, "right")
    tau = rng.normal(size=7)
    F = force_map(model, q, tau, "right")
    # residual of the least-squares solution is orthogonal to range(Jᵀ)
    np.testing.assert_allclose(J @ (J.T @ F - tau), 0.0, atol=1e-9)


def test_force_map_degenerate(model):
    with pytest.raises(DegenerateConfigurationError) as err:
        force_map(model, np.zeros(N_JOINTS), np.ones(7), "left")
    assert err.value.condition_number > 1e6


def test_payload_vector():
    p = fallback_payload()
    v = p.to_vector()
    assert len(v) == PAYLOAD_SIZE == 29
    assert ImpedancePayload.from_vector(v, "fallback", "fallback") == p
    with pytest.raises(ValueError):
        ImpedancePayload.from_vector(v[:-1])
    with pytest.raises(ValueError):
        ImpedancePayload.from_vector(v[:-1] + [3.0])


def test_fallback_profile(db):
    p = fallback_payload()
    assert p.kp == (10.0,) * 14 and p.kd == (2.0,) * 14 and p.nominal_v == "slow" and p.reason == "fallback"
    assert validate_payload(p) == []
    rec = ScenarioRecord("f", "other", "other", "fragile", "hand_visible", p.nominal_v, p.gains())
    assert validate_record(rec) == []
    scene = normalize(MockVLMClient().describe("soy_sauce_handover"))
    assert apply_guards(p, scene, separation=100.0) == p
    assert all(SPEED_LEVELS.index(p.nominal_v) <= SPEED_LEVELS.index(r.nominal_v) for r in db)


def _pay(kp, kd, v="normal", sid="a"):
    return ImpedancePayload((kp,) * 14, (kd,) * 14, v, sid, "ok")


def test_scheduler_identity():
    a = _pay(40, 1.0)
    s = GainScheduler(a)
    s.set_target(a)
    for _ in range(20):
        assert scheduler_step(s, 0.02) == a


def test_scheduler_fifteen_steps():
    s = GainScheduler(_pay(60, 0.5, "normal"), slew_duration=0.3)
    s.set_target(_pay(10, 2.0, "slow", "b"))
    outs = [scheduler_step(s, 0.02) for _ in range(15)]
    assert outs[-1].kp == (10.0,) * 14 and outs[-1].kd == (2.0,) * 14
    assert outs[13].kp[0] > 10.0
    kps = [o.kp[0] for o in outs]
    assert all(b < a for a, b in zip(kps, kps[1:]))
    # speed and metadata flip at the midpoint (step 8 of 15 has alpha > 0.5)
    assert [o.nominal_v for o in outs[:7]] == ["normal"] * 7
    assert all(o.nominal_v == "slow" and o.scenario_id == "b" for o in outs[7:])
    assert s.settled


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(10, 60), st.floats(0.1, 2)), min_size=2, max_size=2),
       st.lists(st.tuples(st.floats(10, 60), st.floats(0.1, 2)), min_size=2, max_size=2),
       st.floats(0.001, 0.1), st.integers(1, 40))
def test_scheduler_bounds(a_pairs, b_pairs, dt, n):
    a = ImpedancePayload([a_pairs[0][0]] * 7 + [a_pairs[1][0]] * 7, [a_pairs[0][1]] * 7 + [a_pairs[1][1]] * 7,
                         "mid")
    b = ImpedancePayload([b_pairs[0][0]] * 7 + [b_pairs[1][0]] * 7, [b_pairs[0][1]] * 7 + [b_pairs[1][1]] * 7,
                         "slow")
    s = GainScheduler(a)
    s.set_target(b)
    prev = np.array(a.kp)
    for _ in range(n):
        out = s.step(dt)
        kp, kd = np.array(out.kp), np.array(out.kd)
        assert np.all(kp >= np.minimum(a.kp, b.kp)) and np.all(kp <= np.maximum(a.kp, b.kp))
        assert np.all(kd >= np.minimum(a.kd, b.kd)) and np.all(kd <= np.maximum(a.kd, b.kd))
        # monotone toward the target
        assert np.all(np.abs(np.array(b.kp) - kp) <= np.abs(np.array(b.kp) - prev) + 1e-12)
        prev = kp


def test_scheduler_retarget_midway():
    a, b, c = _pay(60, 0.5), _pay(10, 2.0, "slow"), _pay(40, 1.0, "mid")
    s = GainScheduler(a)
    s.set_target(b)
    for _ in range(5):
        s.step(0.02)
    mid = s.output
    s.set_target(c)
    out = s.step(0.02)
    assert min(mid.kp[0], c.kp[0]) <= out.kp[0] <= max(mid.kp[0], c.kp[0])
    for _ in range(15):
        s.step(0.02)
    assert s.output == c


def test_scheduler_rejects_bad_dt():
    with pytest.raises(ValueError):
        GainScheduler(_pay(40, 1)).step(0.0)
