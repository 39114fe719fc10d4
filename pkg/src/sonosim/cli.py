"""Operator command-line entry point.

Subcommands: simulate a scripted session, serve a live one over TCP plus a
WebSocket console bridge, solve a registration, run the HRV pipeline, and
run the statistics battery. Exit codes: 0 success, 1 domain error, 2 usage
error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import queue
import sys
from pathlib import Path

from . import biosignal, orchestrator, protocol, registration, stats
from .agent import Speaker
from .orchestrator import EventKind, SessionEvent

log = logging.getLogger("sonosim")

BUNDLED_DEMO = Path(__file__).parent / "data" / "demo.json"


class DomainError(Exception):
    """Raised by subcommands for failures that should exit with status 1."""


def _configure_logging() -> None:
    level_name = os.environ.get("SONO_LOG_LEVEL", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        level_name = "info"
    logging.basicConfig(
        level=levels[level_name],
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_scenario_or_usage_error(path: str, parser: argparse.ArgumentParser, seed: int | None):
    try:
        scenario = orchestrator.load_scenario(path)
    except (OSError, ValueError, KeyError) as e:
        parser.error(f"cannot load scenario {path!r}: {e}")
    if seed is not None:
        scenario = dataclasses.replace(
            scenario, config=dataclasses.replace(scenario.config, seed=seed)
        )
    return scenario


def _write_line_chart_svg(points, path, title: str, y_label: str) -> None:
    """Minimal polyline chart; charts are data displays, not artifacts."""
    width, height, pad = 640, 240, 36
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="18" font-family="sans-serif" font-size="12">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - 8}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{pad}" y2="24" stroke="black"/>',
    ]
    if len(points) >= 2:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(0.0, min(ys)), max(ys) or 1.0
        span_x = (x1 - x0) or 1.0
        span_y = (y1 - y0) or 1.0
        coords = " ".join(
            f"{pad + (x - x0) / span_x * (width - pad - 8):.2f},"
            f"{height - pad - (y - y0) / span_y * (height - pad - 24):.2f}"
            for x, y in points
        )
        body.append(
            f'<polyline points="{coords}" fill="none" stroke="steelblue" stroke-width="1.5"/>'
        )
        body.append(
            f'<text x="6" y="30" font-family="sans-serif" font-size="10">{y1:.3g} {y_label}</text>'
        )
        body.append(
            f'<text x="{width - 60}" y="{height - pad + 14}" font-family="sans-serif" '
            f'font-size="10">{x1:.3g} s</text>'
        )
    body.append("</svg>")
    Path(path).write_text("\n".join(body) + "\n", encoding="utf-8")


def cmd_simulate(args, parser) -> int:
    scenario = _load_scenario_or_usage_error(args.scenario, parser, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    session = orchestrator.run_session(scenario)
    session.save_jsonl(out_dir / "session_log.jsonl")
    intervals = orchestrator.phase_intervals(session.events)
    orchestrator.write_phase_intervals_csv(intervals, out_dir / "phase_intervals.csv")
    orchestrator.write_simulation_csv(session.events, out_dir / "simulation.csv")
    trace = [
        (ev.timestamp, ev.payload["force_n"])
        for ev in session.events
        if ev.kind is EventKind.ROBOT_STATE
    ]
    _write_line_chart_svg(trace, out_dir / "force_trace.svg",
                          "contact force over the session", "N")
    phase = session.final_state.phase.value
    print(
        f"session finished in {phase} after {session.final_state.time:.2f} s "
        f"({len(session.events)} events) -> {out_dir}"
    )
    return 0


def _message_to_session_event(msg, t: float) -> SessionEvent | None:
    if isinstance(msg, protocol.Command):
        return SessionEvent(t, EventKind.COMMAND,
                            {"command": msg.cmd, "source": "client"})
    if isinstance(msg, protocol.AgentEvent):
        if not msg.text.strip():
            return None
        return SessionEvent(t, EventKind.UTTERANCE,
                            {"speaker": Speaker.PATIENT.value, "text": msg.text})
    return None


class _InboundAdapter:
    """Converts protocol messages into session events as the loop drains them."""

    def __init__(self, messages: "queue.Queue"):
        self.messages = messages

    def get_nowait(self) -> SessionEvent:
        while True:
            msg = self.messages.get_nowait()  # raises queue.Empty when drained
            ev = _message_to_session_event(msg, 0.0)
            if ev is not None:
                return ev


def _parse_bind(text: str, parser) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        parser.error(f"bind address must be host:port, got {text!r}")
    return host, int(port)


def cmd_serve(args, parser) -> int:
    scenario = _load_scenario_or_usage_error(args.scenario, parser, args.seed)
    host, port = _parse_bind(args.bind, parser)
    ws_host, ws_port = _parse_bind(args.ws_bind, parser)

    inbound: "queue.Queue" = queue.Queue()
    server = protocol.ProtocolServer(host, port, inbound)
    bridge = protocol.ConsoleBridge(ws_host, ws_port, inbound)
    try:
        server.start()
        bridge.start()
    except protocol.BindError as e:
        server.stop()
        raise DomainError(str(e)) from e
    log.info("tcp endpoint on %s:%d, console bridge on ws://%s:%d",
             host, server.port, ws_host, bridge.port)

    tick_rate = scenario.config.tick_rate
    stride = max(1, round(tick_rate / 50.0))  # broadcast at <= 50 Hz
    frame_stride = max(1, round(tick_rate / 5.0))
    counters = {"robot": 0, "frames": 0}

    def on_event(ev: SessionEvent, state) -> None:
        if ev.kind is EventKind.ROBOT_STATE:
            counters["robot"] += 1
            if counters["robot"] % stride:
                return
            msg = protocol.RobotState(
                ev.timestamp,
                tuple(ev.payload["probe"]),
                tuple(ev.payload["orientation_wxyz"]),
                ev.payload["force_n"],
                ev.payload["phase"],
            )
            server.broadcast(msg)
            bridge.broadcast(msg)
            if ev.payload["phase"] == "execution" and counters["robot"] % frame_stride == 0:
                counters["frames"] += 1
                frame = protocol.synthetic_ultrasound_frame(
                    counters["frames"], int(ev.timestamp * 1000.0)
                )
                server.broadcast(frame)
        elif ev.kind is EventKind.UTTERANCE:
            msg = protocol.AgentEvent(
                ev.payload["speaker"], ev.payload["text"], ev.timestamp
            )
            server.broadcast(msg)
            bridge.broadcast(msg)

    session = None
    try:
        session = orchestrator.run_session(
            scenario, inbound=_InboundAdapter(inbound), on_event=on_event, realtime=True
        )
    except KeyboardInterrupt:
        log.info("interrupted; shutting down cleanly")
    finally:
        server.stop()
        bridge.stop()
        if session is not None and args.out:
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            session.save_jsonl(out_dir / "session_log.jsonl")
            orchestrator.write_phase_intervals_csv(
                orchestrator.phase_intervals(session.events),
                out_dir / "phase_intervals.csv",
            )
    if session is not None:
        print(f"session finished in {session.final_state.phase.value}")
    return 0


def cmd_register(args, parser) -> int:
    try:
        points = registration.load_points_csv(args.points)
    except OSError as e:
        raise DomainError(f"cannot read points file: {e}") from e
    except registration.ParseError as e:
        raise DomainError(f"bad points file: {e}") from e
    try:
        result = registration.kabsch_solve(points)
    except (registration.TooFewPoints, registration.DegenerateConfiguration) as e:
        raise DomainError(str(e)) from e
    if args.anchor_out:
        record = registration.AnchorRecord.create(result.transform, args.label, points)
        registration.save_anchor(record, args.anchor_out)
    t = result.transform.translation
    angle = result.transform.rotation.angle()
    print(
        f"registered {len(points)} points: rms residual {result.rms_residual:.3e} m, "
        f"rotation {math.degrees(angle):.3f} deg, translation "
        f"({t.x:.6f}, {t.y:.6f}, {t.z:.6f}) m"
    )
    return 0


def cmd_hrv(args, parser) -> int:
    try:
        ecg = biosignal.load_ecg_csv(args.ecg)
    except (OSError, ValueError) as e:
        raise DomainError(f"bad ECG file: {e}") from e
    try:
        intervals = orchestrator.load_phase_intervals_csv(args.intervals)
    except (OSError, orchestrator.MalformedLog) as e:
        raise DomainError(f"bad intervals file: {e}") from e
    try:
        reports = biosignal.segment_hrv(ecg, intervals)
    except (biosignal.SignalTooShort, biosignal.FlatSignal) as e:
        raise DomainError(str(e)) from e
    biosignal.write_hrv_report_csv(reports, args.out)
    chart = [
        (0.5 * (r.t_start + r.t_end), r.rmssd_ms)
        for r in reports
        if not math.isnan(r.rmssd_ms)
    ]
    _write_line_chart_svg(chart, Path(args.out).with_suffix(".svg"),
                          "RMSSD by phase interval", "ms")
    parts = []
    for r in reports:
        value = "n/a" if math.isnan(r.rmssd_ms) else f"{r.rmssd_ms:.1f} ms"
        parts.append(f"{r.phase.value}[{r.t_start:.0f}-{r.t_end:.0f}s]: {value} ({r.n_beats} beats)")
    print("rmssd " + "; ".join(parts) + f" -> {args.out}")
    return 0


def cmd_stats(args, parser) -> int:
    try:
        rows = stats.load_long_csv(args.data)
    except (OSError, ValueError) as e:
        raise DomainError(f"bad data file: {e}") from e
    if not rows:
        raise DomainError("data file holds no measurements")
    measure = args.measure
    if measure is None:
        available = stats.measures(rows)
        if len(available) != 1:
            raise DomainError(
                f"data holds measures {available}; pick one with --measure"
            )
        measure = available[0]

    try:
        results, labels = _run_design(args, rows, measure)
    except ValueError as e:
        raise DomainError(str(e)) from e

    try:
        stats.write_results_csv(results, args.out, labels)
    except OSError as e:
        raise DomainError(f"cannot write results: {e}") from e
    head = results[0]
    df_text = "" if head.df is None else f" df={head.df:g}"
    print(
        f"{labels[0]}: statistic={head.statistic:.4g}{df_text} "
        f"p={head.p_value:.3g} ({len(results)} rows) -> {args.out}"
    )
    return 0


def _run_design(args, rows, measure):
    results: list = []
    labels: list[str] = []
    if args.design == "kruskal":
        conditions, groups = stats.grouped_by_condition(rows, measure)
        res = stats.kruskal_wallis(groups)
        results.append(res)
        labels.append(f"kruskal_wallis[{measure}]")
        if res.p_value < 0.05:
            for pc in stats.dunn_sidak_grouped(groups):
                results.append(pc)
                labels.append(
                    f"dunn_sidak[{conditions[pc.group_a]} vs {conditions[pc.group_b]}]"
                )
    elif args.design == "friedman":
        _, conditions, matrix = stats.blocked_matrix(rows, measure)
        res = stats.friedman(matrix)
        results.append(res)
        labels.append(f"friedman[{measure}]")
        if res.p_value < 0.05:
            for pc in stats.dunn_sidak_blocked(matrix):
                results.append(pc)
                labels.append(
                    f"dunn_sidak[{conditions[pc.group_a]} vs {conditions[pc.group_b]}]"
                )
    elif args.design == "wilcoxon":
        conditions = sorted({r.condition for r in rows if r.measure == measure})
        for condition in conditions:
            pairs = stats.paired_by_phase(rows, measure, condition)
            res = stats.wilcoxon_signed_rank(pairs)
            results.append(res)
            labels.append(f"wilcoxon[{measure}/{condition}]")
    else:  # shapiro
        conditions, groups = stats.grouped_by_condition(rows, measure)
        for condition, group in zip(conditions, groups):
            results.append(stats.shapiro_wilk(group))
            labels.append(f"shapiro_wilk[{measure}/{condition}]")
    return results, labels


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonosim",
        description="Robotic ultrasound session simulator and analysis toolkit.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_sim = sub.add_parser("simulate", help="run a scripted session to completion")
    p_sim.add_argument("--scenario", default=str(BUNDLED_DEMO),
                       help="scenario JSON (default: bundled demo)")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p_sim.set_defaults(func=cmd_simulate)

    p_serve = sub.add_parser("serve", help="serve a live session over TCP + WebSocket")
    p_serve.add_argument("--bind", default="127.0.0.1:7420", help="TCP host:port")
    p_serve.add_argument("--ws-bind", default="127.0.0.1:7421", help="WebSocket host:port")
    p_serve.add_argument("--scenario", default=str(BUNDLED_DEMO))
    p_serve.add_argument("--seed", type=int, default=None)
    p_serve.add_argument("--out", default=None, help="directory for the session log")
    p_serve.set_defaults(func=cmd_serve)

    p_reg = sub.add_parser("register", help="solve a paired-point registration")
    p_reg.add_argument("--points", required=True, help="CSV with header vx,vy,vz,rx,ry,rz")
    p_reg.add_argument("--anchor-out", default=None, help="write the anchor JSON here")
    p_reg.add_argument("--label", default="registration", help="anchor label")
    p_reg.set_defaults(func=cmd_register)

    p_hrv = sub.add_parser("hrv", help="R-peaks, RR series, per-phase RMSSD")
    p_hrv.add_argument("--ecg", required=True, help="ECG CSV (t_s,mv with # fs=<Hz>)")
    p_hrv.add_argument("--intervals", required=True, help="phase intervals CSV")
    p_hrv.add_argument("--out", default="hrv_report.csv")
    p_hrv.set_defaults(func=cmd_hrv)

    p_stats = sub.add_parser("stats", help="nonparametric statistics battery")
    p_stats.add_argument("--data", required=True,
                         help="long CSV: subject,condition,phase,measure,value")
    p_stats.add_argument("--design", required=True,
                         choices=["wilcoxon", "kruskal", "friedman", "shapiro"])
    p_stats.add_argument("--measure", default=None)
    p_stats.add_argument("--out", default="stats_results.csv")
    p_stats.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
