"""Event-sourced session orchestration.

A single reducer owns the authoritative procedure phase: every state change
is driven by an event, every event lands in the log, and refolding a
recorded log reproduces the final state exactly. The run loop advances the
scan simulation tick by tick, injects scripted or live utterances, drives
the avatar reach behavior from the probe position, and terminates in
Complete or Aborted.
"""
from __future__ import annotations

import json
import queue as queue_mod
import time as _time
from dataclasses import dataclass, field, replace
from enum import Enum

from . import agent as agent_mod
from .agent import AgentConfig, Speaker, Utterance
from .avatar import REACH_DISENGAGE_FACTOR, AvatarRig
from .phases import ProcedurePhase, check_transition
from .robot import (
    FORCE_SAFETY_CAP_N,
    DEFAULT_VIRTUAL_MASS_KG,
    ImpedanceGains,
    SafetyLimitExceeded,
    ScanPath,
    Simulator,
    TissueModel,
)
from .spatial import Pose, Rotation, Vec3


class MalformedLog(ValueError):
    pass


class EventKind(str, Enum):
    PHASE_CHANGE = "phase_change"
    UTTERANCE = "utterance"
    ROBOT_STATE = "robot_state"
    SAFETY_ABORT = "safety_abort"
    COMMAND = "command"


@dataclass(frozen=True)
class SessionEvent:
    timestamp: float
    kind: EventKind
    payload: dict

    def to_json_obj(self) -> dict:
        return {"t_s": self.timestamp, "kind": self.kind.value, "payload": self.payload}

    @staticmethod
    def from_json_obj(obj: dict) -> "SessionEvent":
        try:
            return SessionEvent(float(obj["t_s"]), EventKind(obj["kind"]), dict(obj["payload"]))
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedLog(f"bad event record: {e}") from e


@dataclass(frozen=True)
class SessionConfig:
    scan_path: ScanPath
    gains: ImpedanceGains
    tissue: TissueModel
    agent: AgentConfig
    seed: int
    tick_rate: float
    avatar_rig: AvatarRig = field(default_factory=AvatarRig.seated_default)
    setup_duration_s: float = 1.0
    greeting_duration_s: float = 2.0
    resting_timeout_s: float = 300.0
    retract_duration_s: float = 0.2
    retract_height_m: float = 0.05
    virtual_mass: float = DEFAULT_VIRTUAL_MASS_KG
    force_limit: float = FORCE_SAFETY_CAP_N

    def __post_init__(self) -> None:
        if not (100.0 <= self.tick_rate <= 1000.0):
            raise ValueError(f"tick rate must be in [100, 1000] Hz, got {self.tick_rate}")


@dataclass(frozen=True)
class ScheduledUtterance:
    t_s: float
    text: str


@dataclass(frozen=True)
class Scenario:
    config: SessionConfig
    utterances: tuple[ScheduledUtterance, ...] = ()


@dataclass(frozen=True)
class SessionState:
    """Reducer state: a pure function of the folded event sequence."""

    phase: ProcedurePhase | None = None
    time: float = 0.0
    phase_entered_at: float = 0.0
    probe_position: tuple[float, float, float] | None = None
    probe_orientation: tuple[float, float, float, float] | None = None
    contact_force: float = 0.0
    penetration: float = 0.0
    utterance_count: int = 0
    patient_utterances: int = 0
    agent_utterances: int = 0
    rejected_commands: int = 0
    executions_started: int = 0
    path_recorded: bool = False
    avatar_engaged: bool = False


def _phase_change(t: float, from_phase: ProcedurePhase | None, to: ProcedurePhase,
                  reason: str) -> SessionEvent:
    return SessionEvent(
        t,
        EventKind.PHASE_CHANGE,
        {"from": from_phase.value if from_phase else None, "to": to.value, "reason": reason},
    )


def _robot_state_event(t: float, pose: Pose, force: float, penetration: float,
                       phase: ProcedurePhase) -> SessionEvent:
    p = pose.position
    o = pose.orientation
    return SessionEvent(
        t,
        EventKind.ROBOT_STATE,
        {
            "probe": [p.x, p.y, p.z],
            "orientation_wxyz": [o.w, o.x, o.y, o.z],
            "force_n": force,
            "penetration_m": penetration,
            "phase": phase.value,
        },
    )


def _utterance_event(t: float, speaker: Speaker, text: str,
                     latency_ms: dict | None = None) -> SessionEvent:
    payload = {"speaker": speaker.value, "text": text}
    if latency_ms is not None:
        payload["latency_ms"] = latency_ms
    return SessionEvent(t, EventKind.UTTERANCE, payload)


def _reply_seed(config: SessionConfig, patient_turn: int) -> int:
    return config.seed * 100_003 + patient_turn


def handle_event(
    config: SessionConfig, state: SessionState, event: SessionEvent
) -> tuple[SessionState, list[SessionEvent]]:
    """Fold one event into the session state; return follow-up events.

    Invalid commands are rejected without touching the phase (only counted);
    a structurally impossible event for the current state raises instead,
    since it can only come from a corrupt or foreign log.
    """
    if event.timestamp < state.time - 1e-9:
        raise MalformedLog(
            f"event at t={event.timestamp} arrives before state time {state.time}"
        )
    state = replace(state, time=max(state.time, event.timestamp))
    t = event.timestamp
    emitted: list[SessionEvent] = []

    if event.kind is EventKind.PHASE_CHANGE:
        from_name = event.payload.get("from")
        to = ProcedurePhase(event.payload["to"])
        from_phase = ProcedurePhase(from_name) if from_name else None
        if from_phase != state.phase:
            raise MalformedLog(
                f"phase change from {from_name} but session is in {state.phase}"
            )
        check_transition(from_phase, to)
        state = replace(
            state,
            phase=to,
            phase_entered_at=t,
            executions_started=state.executions_started
            + (1 if to is ProcedurePhase.EXECUTION else 0),
        )
        announcement = agent_mod.phase_announcement(from_phase, to, t)
        emitted.append(_utterance_event(t, Speaker.AGENT, announcement.text))

    elif event.kind is EventKind.COMMAND:
        cmd = event.payload["command"]
        source = event.payload.get("source", "unknown")
        if cmd == "start_scan":
            if state.phase is ProcedurePhase.RESTING:
                emitted.append(
                    _phase_change(t, state.phase, ProcedurePhase.EXECUTION,
                                  f"start_command:{source}")
                )
            else:
                state = replace(state, rejected_commands=state.rejected_commands + 1)
        elif cmd == "stop_scan":
            if state.phase in (ProcedurePhase.RESTING, ProcedurePhase.EXECUTION):
                emitted.append(
                    _phase_change(t, state.phase, ProcedurePhase.ABORTED,
                                  f"stop_command:{source}")
                )
            else:
                state = replace(state, rejected_commands=state.rejected_commands + 1)
        elif cmd == "set_path":
            if state.phase is ProcedurePhase.SETUP:
                state = replace(state, path_recorded=True)
            else:
                state = replace(state, rejected_commands=state.rejected_commands + 1)
        else:
            raise MalformedLog(f"unknown command {cmd!r}")

    elif event.kind is EventKind.UTTERANCE:
        speaker = Speaker(event.payload["speaker"])
        state = replace(state, utterance_count=state.utterance_count + 1)
        if speaker is Speaker.PATIENT:
            turn = state.patient_utterances
            state = replace(state, patient_utterances=turn + 1)
            if state.phase is not None:
                u = Utterance(Speaker.PATIENT, event.payload["text"], t)
                reply = agent_mod.handle_utterance(
                    config.agent, state.phase, u, _reply_seed(config, turn)
                )
                emitted.append(
                    _utterance_event(t, Speaker.AGENT, reply.text, reply.simulated_latency_ms)
                )
                if reply.command is not None:
                    emitted.append(
                        SessionEvent(
                            t, EventKind.COMMAND,
                            {"command": reply.command.value, "source": "agent"},
                        )
                    )
        else:
            state = replace(state, agent_utterances=state.agent_utterances + 1)

    elif event.kind is EventKind.ROBOT_STATE:
        probe = tuple(float(v) for v in event.payload["probe"])
        orientation = tuple(float(v) for v in event.payload["orientation_wxyz"])
        shoulder = config.avatar_rig.shoulder_position
        dist = Vec3(*probe).distance_to(shoulder)
        radius = config.avatar_rig.reach_engage_radius
        if state.avatar_engaged:
            engaged = dist <= radius * REACH_DISENGAGE_FACTOR
        else:
            engaged = dist <= radius
        state = replace(
            state,
            probe_position=probe,
            probe_orientation=orientation,
            contact_force=float(event.payload["force_n"]),
            penetration=float(event.payload.get("penetration_m", 0.0)),
            avatar_engaged=engaged,
        )

    elif event.kind is EventKind.SAFETY_ABORT:
        if state.phase in (ProcedurePhase.RESTING, ProcedurePhase.EXECUTION):
            emitted.append(
                _phase_change(t, state.phase, ProcedurePhase.ABORTED, "safety")
            )

    else:  # pragma: no cover
        raise MalformedLog(f"unknown event kind {event.kind!r}")

    return state, emitted


@dataclass
class SessionLog:
    events: list[SessionEvent]
    final_state: SessionState

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for ev in self.events:
                f.write(json.dumps(ev.to_json_obj()) + "\n")

    @staticmethod
    def load_events(path) -> list[SessionEvent]:
        events = []
        with open(path, "r", encoding="utf-8") as f:
            for i, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise MalformedLog(f"line {i}: {e}") from e
                events.append(SessionEvent.from_json_obj(obj))
        return events


def replay_log(config: SessionConfig, events: list[SessionEvent]) -> SessionState:
    """Refold a recorded event stream; emissions are already in the log."""
    state = SessionState()
    for ev in events:
        state, _ = handle_event(config, state, ev)
    return state


def run_session(
    scenario: Scenario,
    *,
    inbound=None,
    on_event=None,
    realtime: bool = False,
) -> SessionLog:
    """Drive a full session to Complete or Aborted.

    Deterministic for a fixed (scenario, seed) when `inbound` is unused:
    time is purely tick-derived and all sampling is seeded. `inbound` is a
    queue of SessionEvents from protocol clients (timestamps are replaced
    with the current tick time); `on_event` observes each folded event.
    """
    config = scenario.config
    dt = 1.0 / config.tick_rate
    state = SessionState()
    events: list[SessionEvent] = []
    # In realtime mode an agent reply surfaces only after its sampled
    # pipeline latency has elapsed; batched scripted runs fold it instantly.
    deferred: list[tuple[float, list[SessionEvent]]] = []

    def submit(ev: SessionEvent) -> None:
        nonlocal state
        pending = [ev]
        while pending:
            e = pending.pop(0)
            new_state, emitted = handle_event(config, state, e)
            state = new_state
            events.append(e)
            if on_event is not None:
                on_event(e, state)
            if (
                realtime
                and emitted
                and e.kind is EventKind.UTTERANCE
                and e.payload.get("speaker") == Speaker.PATIENT.value
            ):
                latency = emitted[0].payload.get("latency_ms", {})
                due = e.timestamp + sum(latency.values()) / 1000.0
                deferred.append((due, emitted))
            else:
                pending[0:0] = emitted

    start_pose = scenario.config.scan_path.start_pose
    submit(_phase_change(0.0, None, ProcedurePhase.SETUP, "session_start"))
    p0, p1 = config.scan_path.start_pose, config.scan_path.end_pose
    submit(SessionEvent(0.0, EventKind.COMMAND, {
        "command": "set_path",
        "source": "operator",
        "path": {
            "start": [p0.position.x, p0.position.y, p0.position.z],
            "end": [p1.position.x, p1.position.y, p1.position.z],
            "speed_mps": config.scan_path.speed,
        },
    }))

    schedule = sorted(scenario.utterances, key=lambda s: s.t_s)
    next_utterance = 0
    sim: Simulator | None = None
    tick = 0
    wall_start = _time.monotonic()
    watchdog_s = (
        config.setup_duration_s + config.greeting_duration_s + config.resting_timeout_s
        + config.scan_path.duration() + 120.0
    )

    while state.phase not in (ProcedurePhase.COMPLETE, ProcedurePhase.ABORTED):
        tick += 1
        t = tick * dt
        if t > watchdog_s:
            raise RuntimeError("session watchdog expired without reaching a terminal phase")

        if state.phase is ProcedurePhase.SETUP and t >= config.setup_duration_s:
            submit(_phase_change(t, state.phase, ProcedurePhase.GREETING, "setup_complete"))
        elif (
            state.phase is ProcedurePhase.GREETING
            and t >= config.setup_duration_s + config.greeting_duration_s
        ):
            submit(_phase_change(t, state.phase, ProcedurePhase.RESTING, "greeting_done"))

        due_batches = [item for item in deferred if item[0] <= t]
        for item in due_batches:
            deferred.remove(item)
            for ev in item[1]:
                submit(SessionEvent(t, ev.kind, ev.payload))
                if state.phase in (ProcedurePhase.COMPLETE, ProcedurePhase.ABORTED):
                    break
        if state.phase in (ProcedurePhase.COMPLETE, ProcedurePhase.ABORTED):
            break

        while next_utterance < len(schedule) and schedule[next_utterance].t_s <= t:
            submit(_utterance_event(t, Speaker.PATIENT, schedule[next_utterance].text))
            next_utterance += 1
            if state.phase in (ProcedurePhase.COMPLETE, ProcedurePhase.ABORTED):
                break
        if state.phase in (ProcedurePhase.COMPLETE, ProcedurePhase.ABORTED):
            break

        if inbound is not None:
            while True:
                try:
                    ev = inbound.get_nowait()
                except queue_mod.Empty:
                    break
                submit(SessionEvent(t, ev.kind, ev.payload))
                if state.phase in (ProcedurePhase.COMPLETE, ProcedurePhase.ABORTED):
                    break
            if state.phase in (ProcedurePhase.COMPLETE, ProcedurePhase.ABORTED):
                break

        if state.phase is ProcedurePhase.RESTING:
            submit(_robot_state_event(t, start_pose, 0.0, 0.0, state.phase))
            if t - state.phase_entered_at >= config.resting_timeout_s:
                submit(_phase_change(t, state.phase, ProcedurePhase.ABORTED, "timeout"))
        elif state.phase is ProcedurePhase.EXECUTION:
            if sim is None:
                sim = Simulator(
                    config.gains, config.tissue, config.scan_path,
                    virtual_mass=config.virtual_mass, force_limit=config.force_limit,
                )
            try:
                s = sim.step(dt)
            except SafetyLimitExceeded as ex:
                submit(SessionEvent(
                    t, EventKind.SAFETY_ABORT,
                    {"force_n": ex.force, "limit_n": ex.limit},
                ))
            else:
                submit(_robot_state_event(t, s.probe_pose, s.contact_force,
                                          s.penetration, state.phase))
                if sim.scan_complete():
                    submit(_phase_change(t, state.phase, ProcedurePhase.COMPLETE,
                                         "scan_complete"))

        if realtime:
            lag = wall_start + t - _time.monotonic()
            if lag > 0:
                _time.sleep(lag)

    # The probe lifts away once the session ends (scan done or aborted); the
    # last robot events show the retraction, then the stream goes quiet.
    if state.probe_position is not None:
        px, py, pz = state.probe_position
        orientation = Rotation(*state.probe_orientation) if state.probe_orientation else Rotation.identity()
        steps = max(1, int(round(config.retract_duration_s * config.tick_rate)))
        for i in range(1, steps + 1):
            tick += 1
            t = tick * dt
            lift = config.retract_height_m * i / steps
            pose = Pose(Vec3(px, py, pz + lift), orientation)
            submit(_robot_state_event(t, pose, 0.0, 0.0, state.phase))

    return SessionLog(events, state)


@dataclass(frozen=True)
class PhaseInterval:
    phase: ProcedurePhase
    t_start: float
    t_end: float


def phase_intervals(events: list[SessionEvent]) -> list[PhaseInterval]:
    """Contiguous, non-overlapping phase intervals covering the session."""
    if not events:
        raise MalformedLog("empty event log")
    last_t = events[0].timestamp
    for ev in events:
        if ev.timestamp < last_t - 1e-9:
            raise MalformedLog("event timestamps decrease")
        last_t = max(last_t, ev.timestamp)
    changes = [ev for ev in events if ev.kind is EventKind.PHASE_CHANGE]
    if not changes or changes[0].payload.get("from") is not None:
        raise MalformedLog("log does not open with a session-start phase change")
    intervals: list[PhaseInterval] = []
    current_phase = ProcedurePhase(changes[0].payload["to"])
    current_start = changes[0].timestamp
    for ev in changes[1:]:
        intervals.append(PhaseInterval(current_phase, current_start, ev.timestamp))
        current_phase = ProcedurePhase(ev.payload["to"])
        current_start = ev.timestamp
    intervals.append(PhaseInterval(current_phase, current_start, last_t))
    return intervals


def write_phase_intervals_csv(intervals: list[PhaseInterval], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("phase,t_start,t_end\n")
        for iv in intervals:
            f.write(f"{iv.phase.value},{iv.t_start!r},{iv.t_end!r}\n")


def load_phase_intervals_csv(path) -> list[PhaseInterval]:
    intervals: list[PhaseInterval] = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if [c.strip() for c in header.split(",")] != ["phase", "t_start", "t_end"]:
            raise MalformedLog(f"expected header phase,t_start,t_end, got {header!r}")
        for i, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise MalformedLog(f"row {i}: expected 3 values, got {len(parts)}")
            try:
                intervals.append(
                    PhaseInterval(ProcedurePhase(parts[0]), float(parts[1]), float(parts[2]))
                )
            except ValueError as e:
                raise MalformedLog(f"row {i}: {e}") from e
    return intervals


def write_simulation_csv(events: list[SessionEvent], path, subsample_hz: float = 100.0) -> None:
    """Robot-state trace as CSV, subsampled onto a fixed output grid."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("t_s,px,py,pz,delta_m,force_n,phase\n")
        next_slot = 0
        for ev in events:
            if ev.kind is not EventKind.ROBOT_STATE:
                continue
            slot = int(ev.timestamp * subsample_hz + 1e-9)
            if slot < next_slot:
                continue
            next_slot = slot + 1
            px, py, pz = ev.payload["probe"]
            f.write(
                f"{ev.timestamp!r},{px!r},{py!r},{pz!r},"
                f"{ev.payload.get('penetration_m', 0.0)!r},{ev.payload['force_n']!r},"
                f"{ev.payload['phase']}\n"
            )


def _pose_from_json(obj: dict) -> Pose:
    pos = obj["position"]
    quat = obj.get("orientation_wxyz", [1.0, 0.0, 0.0, 0.0])
    return Pose(
        Vec3(float(pos[0]), float(pos[1]), float(pos[2])),
        Rotation(float(quat[0]), float(quat[1]), float(quat[2]), float(quat[3])),
    )


def load_scenario(path) -> Scenario:
    """Scenario JSON: session parameters plus a scripted utterance schedule."""
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)

    path_obj = obj["scan_path"]
    scan_path = ScanPath(
        _pose_from_json(path_obj["start"]),
        _pose_from_json(path_obj["end"]),
        float(path_obj["speed_mps"]),
    )
    g = obj.get("gains", {})
    if g:
        gains = ImpedanceGains(
            tuple(g["stiffness"]), tuple(g["damping"]),
            tuple(g["inertia"]), tuple(g["desired_wrench"]),
        )
    else:
        gains = ImpedanceGains.press_defaults()
    tis = obj.get("tissue", {})
    tissue = TissueModel(
        surface_height=float(tis.get("surface_height_m", 0.0)),
        stiffness=float(tis.get("stiffness_n_per_m", 50_000.0)),
        contact_damping=float(tis.get("contact_damping", 0.0)),
    )
    a = obj.get("agent", {})
    latencies = {
        stage: agent_mod.StageLatency(float(pair[0]), float(pair[1]))
        for stage, pair in a.get("stage_latency_ms", {}).items()
    } or dict(agent_mod.DEFAULT_STAGE_LATENCIES)
    agent_config = AgentConfig(
        persona_prompt=a.get("persona_prompt", agent_mod.DEFAULT_PERSONA),
        stage_latency_ms=latencies,
        command_keywords=tuple(a.get("command_keywords", ("start", "begin"))),
        stop_keywords=tuple(a.get("stop_keywords", ("stop",))),
    )
    timing = obj.get("timing", {})
    config = SessionConfig(
        scan_path=scan_path,
        gains=gains,
        tissue=tissue,
        agent=agent_config,
        seed=int(obj.get("seed", 0)),
        tick_rate=float(obj.get("tick_rate_hz", 100.0)),
        setup_duration_s=float(timing.get("setup_s", 1.0)),
        greeting_duration_s=float(timing.get("greeting_s", 2.0)),
        resting_timeout_s=float(timing.get("resting_timeout_s", 300.0)),
    )
    utterances = tuple(
        ScheduledUtterance(float(u["t_s"]), str(u["text"]))
        for u in obj.get("utterances", [])
    )
    return Scenario(config, utterances)
