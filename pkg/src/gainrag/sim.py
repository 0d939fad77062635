"""Desk-scale closed-loop simulation of the dual-arm impedance controller.

The plant is a lumped per-joint model: each joint has a constant scalar
inertia (mass-matrix diagonal at the home posture) and viscous friction,
with configuration-dependent gravity from RNEA. Scenario scripts replay a
timeline of scene changes, pose targets, injected latency and connection
drops against the retrieval pipeline, either in-process on a simulated
clock (bit-deterministic) or over TCP in paced real time.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .comms import ClientState, FreshnessPolicy, Pipeline, RemoteLink, client_tick
from .impedance import SPEED_MPS, ImpedancePayload, JointCommand, JointState, impedance_torque
from .kinematics import (
    N_JOINTS,
    SIDES,
    ArmModel,
    IkWeights,
    Pose6D,
    default_model,
    end_effector,
    forward_kinematics,
    gravity_torques,
    lumped_inertia,
    solve_ik,
)
from .scenario_db import SPEED_LEVELS

DT = 0.02
SCRIPTS_DIR = Path(__file__).parent / "data" / "scripts"
EVENT_KINDS = ("set_scene", "set_target", "inject_latency", "drop_connection")


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------- plant

@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qd: np.ndarray
    inertia: np.ndarray
    friction: float = 0.1
    t: float = 0.0


def initial_state(model: ArmModel, q0=None) -> PlantState:
    q = model.home.copy() if q0 is None else np.asarray(q0, float).copy()
    return PlantState(q, np.zeros(N_JOINTS), lumped_inertia(model), model.friction, 0.0)


def plant_step(state: PlantState, tau, model: ArmModel, dt: float = DT) -> PlantState:
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    tau = np.asarray(tau, float)
    if tau.shape != state.q.shape or not np.all(np.isfinite(tau)):
        raise ValueError("torque must be a finite vector matching the joint count")
    g = gravity_torques(model, state.q) if np.any(model.gravity) else 0.0
    qdd = (tau - g - state.friction * state.qd) / state.inertia
    qd = state.qd + qdd * dt
    q = state.q + qd * dt
    return replace(state, q=q, qd=qd, t=state.t + dt)


# ---------------------------------------------------------------- trajectories

def min_jerk(s: float) -> tuple[float, float]:
    """Position and d/ds of the quintic 10s^3 - 15s^4 + 6s^5."""
    s = min(max(s, 0.0), 1.0)
    return 10 * s**3 - 15 * s**4 + 6 * s**5, 30 * s**2 - 60 * s**3 + 30 * s**4


MIN_JERK_PEAK = 1.875


class Segment:
    """Joint-space minimum-jerk move whose duration follows the current speed level.

    Duration is chosen so the fastest end-effector stays under the mapped
    nominal speed; a speed change mid-move rescales the remaining progress.
    """

    def __init__(self, model: ArmModel, q0, q1, min_duration: float = 0.2, samples: int = 41):
        self.q0 = np.asarray(q0, float)
        self.q1 = np.asarray(q1, float)
        self.s = 0.0
        self.min_duration = min_duration
        # max over the path of |dp/dsigma| for either end-effector
        sig = np.linspace(0.0, 1.0, samples)
        pts = {side: np.array([end_effector(model, self.q0 + x * (self.q1 - self.q0), side)[1] for x in sig])
               for side in SIDES}
        self.path_rate = max(float(np.max(np.linalg.norm(np.diff(p, axis=0), axis=1)) * (samples - 1))
                             for p in pts.values())

    def duration(self, speed: float) -> float:
        return max(self.min_duration, MIN_JERK_PEAK * self.path_rate / speed)

    def sample(self, speed: float) -> tuple[np.ndarray, np.ndarray]:
        pos, vel = min_jerk(self.s)
        T = self.duration(speed)
        dq = self.q1 - self.q0
        qd = dq * vel / T if self.s < 1.0 else np.zeros_like(dq)
        return self.q0 + dq * pos, qd

    def advance(self, speed: float, dt: float) -> None:
        self.s = min(1.0, self.s + dt / self.duration(speed))

    @property
    def done(self) -> bool:
        return self.s >= 1.0


# ---------------------------------------------------------------- scripts

@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    stub: str | None = None
    poses: tuple[Pose6D, Pose6D] | None = None
    value: float | None = None

    def label(self) -> str:
        if self.kind == "set_scene":
            return f"set_scene:{self.stub}"
        if self.kind == "set_target":
            return "set_target"
        return f"{self.kind}:{self.value:g}"


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    duration: float
    timeline: tuple[Event, ...]

    def __post_init__(self):
        times = [e.time for e in self.timeline]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigurationError(f"script {self.name}: event times must be nondecreasing")
        if any(t < 0 for t in times):
            raise ConfigurationError(f"script {self.name}: negative event time")

    def stubs(self) -> set[str]:
        return {e.stub for e in self.timeline if e.kind == "set_scene"}


def _event_from_dict(d: dict) -> Event:
    kind = d.get("event")
    t = float(d["t"])
    if kind == "set_scene":
        return Event(t, kind, stub=str(d["stub"]))
    if kind == "set_target":
        poses = d["poses"]
        return Event(t, kind, poses=(Pose6D.from_list(poses["left"]), Pose6D.from_list(poses["right"])))
    if kind == "inject_latency":
        return Event(t, kind, value=float(d["latency"]))
    if kind == "drop_connection":
        return Event(t, kind, value=float(d["duration"]))
    raise ConfigurationError(f"unknown event kind {kind!r}; expected one of {EVENT_KINDS}")


def parse_script(doc: dict) -> ScenarioScript:
    try:
        events = tuple(_event_from_dict(e) for e in doc["timeline"])
        return ScenarioScript(str(doc["name"]), float(doc["duration"]), events)
    except KeyError as exc:
        raise ConfigurationError(f"script is missing field {exc.args[0]!r}") from None


def load_script(path_or_name: str | Path) -> ScenarioScript:
    p = Path(path_or_name)
    if not p.exists():
        p = SCRIPTS_DIR / f"{path_or_name}.json"
    if not p.exists():
        raise ConfigurationError(f"no script file or shipped script named {path_or_name!r}")
    return parse_script(json.loads(p.read_text(encoding="utf-8")))


def shipped_scripts() -> list[str]:
    return sorted(p.stem for p in SCRIPTS_DIR.glob("*.json"))


def script_to_dict(script: ScenarioScript) -> dict:
    timeline = []
    for e in script.timeline:
        d = {"t": e.time, "event": e.kind}
        if e.kind == "set_scene":
            d["stub"] = e.stub
        elif e.kind == "set_target":
            d["poses"] = {"left": e.poses[0].to_list(), "right": e.poses[1].to_list()}
        elif e.kind == "inject_latency":
            d["latency"] = e.value
        else:
            d["duration"] = e.value
        timeline.append(d)
    return {"name": script.name, "duration": script.duration, "timeline": timeline}


# ---------------------------------------------------------------- config and log

@dataclass(frozen=True)
class SimConfig:
    dt: float = DT
    stream_rate: float = 1.0
    staleness_timeout: float = 3.0
    slew_duration: float = 0.3
    base_latency: float = 0.0
    sensor_noise: float = 0.0  # rad, std of additive joint-angle noise
    seed: int = 0
    ik_weights: IkWeights = field(default_factory=IkWeights)

    @property
    def policy(self) -> FreshnessPolicy:
        return FreshnessPolicy(self.staleness_timeout, self.stream_rate, 1.0 / self.dt)


@dataclass
class RunLog:
    t: np.ndarray
    q: np.ndarray
    q_ref: np.ndarray
    tau: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    v: np.ndarray  # speed code per tick
    reason: list[str]
    scenario_id: list[str]
    stub: list[str]
    late: np.ndarray  # 1 where a paced run overran its tick deadline
    events: list[tuple[float, str]]
    dt: float = DT
    name: str = ""

    def __len__(self) -> int:
        return len(self.t)

    def to_csv(self, path: str | Path) -> None:
        by_tick: dict[int, list[str]] = {}
        for t, label in self.events:
            by_tick.setdefault(int(round(t / self.dt)), []).append(label)
        header = ["tick", "t", "stub", "reason", "scenario_id", "v", "late", "events"]
        for name in ("q", "q_ref", "tau", "kp", "kd"):
            header += [f"{name}{i}" for i in range(N_JOINTS)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self)):
                row = [k, repr(float(self.t[k])), self.stub[k], self.reason[k], self.scenario_id[k],
                       int(self.v[k]), int(self.late[k]), "|".join(by_tick.get(k, []))]
                for arr in (self.q, self.q_ref, self.tau, self.kp, self.kd):
                    row += [repr(float(x)) for x in arr[k]]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path: str | Path) -> "RunLog":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"run log {path} has no ticks")

        def block(name):
            return np.array([[float(r[f"{name}{i}"]) for i in range(N_JOINTS)] for r in rows])

        t = np.array([float(r["t"]) for r in rows])
        dt = float(t[1] - t[0]) if len(t) > 1 else DT
        events = []
        for r in rows:
            if r["events"]:
                events += [(float(r["t"]), lab) for lab in r["events"].split("|")]
        return cls(t, block("q"), block("q_ref"), block("tau"), block("kp"), block("kd"),
                   np.array([int(r["v"]) for r in rows]), [r["reason"] for r in rows],
                   [r["scenario_id"] for r in rows], [r["stub"] for r in rows],
                   np.array([int(r["late"]) for r in rows]), events, dt, Path(path).stem)


class _LogBuilder:
    def __init__(self):
        self.rows: dict[str, list] = {k: [] for k in
                                     ("t", "q", "q_ref", "tau", "kp", "kd", "v", "reason", "scenario_id", "stub", "late")}
        self.events: list[tuple[float, str]] = []

    def add(self, **kw):
        for k, v in kw.items():
            self.rows[k].append(v)

    def build(self, dt: float, name: str) -> RunLog:
        r = self.rows
        return RunLog(np.array(r["t"]), np.array(r["q"]), np.array(r["q_ref"]), np.array(r["tau"]),
                      np.array(r["kp"]), np.array(r["kd"]), np.array(r["v"], dtype=int), r["reason"],
                      r["scenario_id"], r["stub"], np.array(r["late"], dtype=int), self.events, dt, name)


# ---------------------------------------------------------------- transports

def _ticks(seconds: float, dt: float) -> int:
    x = seconds / dt
    n = round(x)
    return int(n) if abs(x - n) < 1e-9 else int(math.ceil(x))


class InProcessTransport:
    """Simulated network: replies are computed immediately and delivered after a latency in ticks."""

    def __init__(self, pipeline: Pipeline, dt: float = DT, latency: float = 0.0):
        self.pipeline = pipeline
        self.dt = dt
        self.latency_ticks = _ticks(latency, dt)
        self._pending: list[tuple[int, int, ImpedancePayload]] = []
        self._seq = 0
        self._down_until = -1

    def set_latency(self, seconds: float) -> None:
        self.latency_ticks = _ticks(seconds, self.dt)

    def drop(self, tick: int, seconds: float) -> None:
        self._down_until = tick + _ticks(seconds, self.dt)
        self._pending.clear()  # in-flight replies die with the connection

    def connected(self, tick: int) -> bool:
        return tick >= self._down_until

    def send(self, tick: int, stub: str) -> None:
        if not self.connected(tick):
            return
        self._seq += 1
        payload = self.pipeline.process({"stub": stub}).payload
        self._pending.append((tick + self.latency_ticks, self._seq, payload))

    def poll(self, tick: int, slot, now: float) -> None:
        if not self.connected(tick):
            return
        ready = [p for p in self._pending if p[0] <= tick]
        self._pending = [p for p in self._pending if p[0] > tick]
        for _, seq, payload in sorted(ready, key=lambda p: p[1]):
            slot.offer(seq, payload, now)

    def heartbeat(self, tick: int) -> None:
        pass

    def close(self) -> None:
        pass


class TcpTransport:
    """Real sockets against a running pipeline server, for paced (wall-clock) runs.

    Latency is injected per query so the server sleeps before answering.
    """

    def __init__(self, host: str, port: int, slot, clock, dt: float = DT, latency: float = 0.0, speedup: float = 1.0):
        self.link = RemoteLink(host, port, slot, clock=clock)
        self.dt = dt
        self.latency = latency
        self.speedup = speedup
        self._down_until = -1
        self.link.connect()

    def set_latency(self, seconds: float) -> None:
        self.latency = seconds

    def drop(self, tick: int, seconds: float) -> None:
        self._down_until = tick + _ticks(seconds, self.dt)
        self.link.close()

    def connected(self, tick: int) -> bool:
        return tick >= self._down_until

    def send(self, tick: int, stub: str) -> None:
        if not self.connected(tick):
            return
        if not self.link.connected:
            try:
                self.link.connect()
            except OSError:
                return
        body = {"stub": stub}
        if self.latency > 0:
            body["inject_latency_s"] = self.latency / self.speedup
        try:
            self.link.query(body)
        except OSError:
            self.link.close()

    def poll(self, tick: int, slot, now: float) -> None:
        pass  # the receive thread offers replies to the slot directly

    def heartbeat(self, tick: int) -> None:
        if self.connected(tick) and self.link.connected:
            try:
                self.link.send("heartbeat", {})
            except OSError:
                self.link.close()

    def close(self) -> None:
        self.link.close()


# ---------------------------------------------------------------- runner

def check_script(script: ScenarioScript, known_stubs: Iterable[str]) -> None:
    missing = script.stubs() - set(known_stubs)
    if missing:
        raise ConfigurationError(f"script {script.name} references unknown scene stubs: {sorted(missing)}")


def run_scenario(
    script: ScenarioScript,
    config: SimConfig | None = None,
    pipeline: Pipeline | None = None,
    model: ArmModel | None = None,
    remote: tuple[str, int] | None = None,
    speedup: float = 1.0,
) -> RunLog:
    """Replay ``script`` tick by tick and log every control cycle.

    In-process (default) runs on a simulated clock and are bit-deterministic
    for a given script, config and seed. With ``remote=(host, port)`` the loop
    is paced against the wall clock (``speedup`` x real time) and talks TCP.
    """
    config = config or SimConfig()
    model = model or default_model()
    dt = config.dt
    client = ClientState(config.policy, config.slew_duration)
    sim_now = [0.0]

    if remote is None:
        if pipeline is None:
            from .scenario_db import load_default_database

            pipeline = Pipeline(load_default_database())
        check_script(script, pipeline.vlm.stubs if hasattr(pipeline.vlm, "stubs") else script.stubs())
        transport = InProcessTransport(pipeline, dt, config.base_latency)
    else:
        from .perception import MockVLMClient

        check_script(script, MockVLMClient().stubs)
        transport = TcpTransport(remote[0], remote[1], client.slot, lambda: sim_now[0], dt,
                                 config.base_latency, speedup)

    rng = np.random.default_rng(config.seed)
    state = initial_state(model)
    q_ref = state.q.copy()
    segment: Segment | None = None
    stub = ""
    n_ticks = _ticks(script.duration, dt)
    stream_every = max(1, _ticks(1.0 / config.stream_rate, dt))
    heartbeat_every = max(1, _ticks(config.policy.heartbeat_interval, dt))
    events = list(script.timeline)
    ev_i = 0
    log = _LogBuilder()
    wall0 = time.perf_counter()

    try:
        for k in range(n_ticks):
            t = k * dt
            sim_now[0] = t
            while ev_i < len(events) and _ticks(events[ev_i].time, dt) <= k:
                ev = events[ev_i]
                ev_i += 1
                log.events.append((t, ev.label()))
                if ev.kind == "set_scene":
                    stub = ev.stub
                elif ev.kind == "set_target":
                    sol = solve_ik(model, ev.poses, q_ref, config.ik_weights)
                    segment = Segment(model, q_ref, sol.q)
                elif ev.kind == "inject_latency":
                    transport.set_latency(ev.value)
                elif ev.kind == "drop_connection":
                    transport.drop(k, ev.value)

            if stub and k % stream_every == 0:
                transport.send(k, stub)
            if k % heartbeat_every == heartbeat_every // 2:
                transport.heartbeat(k)
            transport.poll(k, client.slot, t)
            payload = client_tick(client, t)

            speed = SPEED_MPS[payload.nominal_v]
            if segment is not None:
                q_ref, qd_ref = segment.sample(speed)
            else:
                qd_ref = np.zeros(N_JOINTS)

            q_meas = state.q + (rng.normal(0.0, config.sensor_noise, N_JOINTS) if config.sensor_noise else 0.0)
            cmd = JointCommand(q_ref, qd_ref, gravity_torques(model, q_meas),
                               np.asarray(payload.kp), np.asarray(payload.kd))
            tau = impedance_torque(cmd, JointState(q_meas, state.qd))

            late = 0
            if remote is not None:
                deadline = wall0 + (k + 1) * dt / speedup
                late = int(time.perf_counter() > deadline)
            log.add(t=t, q=state.q.copy(), q_ref=np.array(q_ref), tau=tau, kp=np.asarray(payload.kp),
                    kd=np.asarray(payload.kd), v=payload.v_code, reason=payload.reason,
                    scenario_id=payload.scenario_id, stub=stub, late=late)

            state = plant_step(state, tau, model, dt)
            if segment is not None:
                segment.advance(speed, dt)
            if remote is not None:
                pause = wall0 + (k + 1) * dt / speedup - time.perf_counter()
                if pause > 0:
                    time.sleep(pause)
    finally:
        transport.close()
    return log.build(dt, script.name)


# ---------------------------------------------------------------- analysis

@dataclass
class Phase:
    stub: str
    start: float
    end: float
    mean_kp: np.ndarray
    mean_kd: np.ndarray
    final_kp: np.ndarray
    final_kd: np.ndarray
    final_v: str


@dataclass
class Report:
    name: str
    duration: float
    phases: list[Phase]
    max_tracking_error: float
    time_to_modulate: list[float | None]
    deadline_misses: int
    reasons: dict[str, int]
    v_sequence: list[str]

    @property
    def max_time_to_modulate(self) -> float | None:
        vals = [x for x in self.time_to_modulate if x is not None]
        return max(vals) if vals else None

    def summary_rows(self) -> list[dict]:
        rows = []
        for p in self.phases:
            rows.append({"stub": p.stub, "start": round(p.start, 3), "end": round(p.end, 3),
                         "mean_kp": round(float(p.mean_kp.mean()), 3), "mean_kd": round(float(p.mean_kd.mean()), 4),
                         "final_v": p.final_v})
        return rows


def _scene_events(log: RunLog) -> list[tuple[int, str]]:
    out = []
    for t, label in log.events:
        if label.startswith("set_scene:"):
            out.append((int(round(t / log.dt)), label.split(":", 1)[1]))
    return out


def analyze(log: RunLog) -> Report:
    """Per-phase gain summaries and timing metrics.

    Time-to-modulate is measured for every scene change after the first:
    from the event to the first tick at which the stiffness change on the
    most affected joint has covered 90% of its total for that phase.
    These are proxies for a qualitative success notion.
    """
    n = len(log)
    if n == 0:
        raise ValueError("cannot analyze an empty run log")
    scenes = _scene_events(log)
    bounds = [(k, s) for k, s in scenes]
    phases = []
    for i, (k0, s) in enumerate(bounds):
        k1 = bounds[i + 1][0] if i + 1 < len(bounds) else n
        if k1 <= k0:
            continue
        phases.append(Phase(s, float(log.t[k0]), float(log.t[k1 - 1]), log.kp[k0:k1].mean(axis=0),
                            log.kd[k0:k1].mean(axis=0), log.kp[k1 - 1].copy(), log.kd[k1 - 1].copy(),
                            SPEED_LEVELS[int(log.v[k1 - 1])]))

    ttm: list[float | None] = []
    for i, (k0, _) in enumerate(bounds[1:], start=1):
        k1 = bounds[i + 1][0] if i + 1 < len(bounds) else n
        before = log.kp[k0]
        after = log.kp[k1 - 1]
        delta = after - before
        j = int(np.argmax(np.abs(delta)))
        if abs(delta[j]) == 0:
            ttm.append(None)
            continue
        progress = (log.kp[k0:k1, j] - before[j]) / delta[j]
        hit = np.nonzero(progress >= 0.9)[0]
        ttm.append(float(hit[0] * log.dt) if hit.size else None)

    steps = np.diff(log.t)
    gaps = int(np.sum(np.round(steps / log.dt).astype(int) - 1)) if n > 1 else 0
    misses = gaps + int(np.sum(log.late))

    seq: list[str] = []
    for v, r in zip(log.v, log.reason):
        if r != "ok":
            continue
        name = SPEED_LEVELS[int(v)]
        if not seq or seq[-1] != name:
            seq.append(name)

    return Report(
        name=log.name,
        duration=float(log.t[-1] + log.dt),
        phases=phases,
        max_tracking_error=float(np.max(np.abs(log.q - log.q_ref))),
        time_to_modulate=ttm,
        deadline_misses=misses,
        reasons=dict(Counter(log.reason)),
        v_sequence=seq,
    )


def write_report(report: Report, path: str | Path) -> None:
    rows = report.summary_rows()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["stub", "start", "end", "mean_kp", "mean_kd", "final_v"])
        w.writeheader()
        w.writerows(rows)


def format_report(report: Report) -> str:
    lines = [f"run {report.name}: {report.duration:.2f} s"]
    lines.append(f"{'phase':<22}{'start':>8}{'end':>8}{'mean Kp':>10}{'mean Kd':>10}  v")
    for r in report.summary_rows():
        lines.append(f"{r['stub']:<22}{r['start']:>8.2f}{r['end']:>8.2f}{r['mean_kp']:>10.2f}{r['mean_kd']:>10.3f}  {r['final_v']}")
    ttm = ", ".join("none" if x is None else f"{x:.2f}" for x in report.time_to_modulate) or "none"
    lines.append(f"time to modulate (s): {ttm}")
    lines.append(f"max tracking error (rad): {report.max_tracking_error:.4f}")
    lines.append(f"deadline misses: {report.deadline_misses}")
    lines.append("reasons: " + ", ".join(f"{k}={v}" for k, v in sorted(report.reasons.items())))
    lines.append("speed sequence: " + " -> ".join(report.v_sequence))
    lines.append("(metrics are desk-scale proxies, not hardware outcomes)")
    return "\n".join(lines)


def pose_targets_from_q(model: ArmModel, q: Sequence[float]) -> tuple[Pose6D, Pose6D]:
    return forward_kinematics(model, np.asarray(q, float))
