"""Phase-aware conversational pipeline with a deterministic scripted generator.

Transcript in, reply plus extracted command out. The speech/language/voice
stages are behind an interface so live models can be plugged in; the shipped
generator is a script table keyed by procedure phase, and per-stage latency
is simulated from configured distributions (logged, not slept, by default).
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

from .phases import ProcedurePhase, check_transition


class GeneratorUnavailable(RuntimeError):
    pass


class Speaker(str, Enum):
    PATIENT = "patient"
    AGENT = "agent"


class AgentCommand(str, Enum):
    START_SCAN = "start_scan"
    STOP_SCAN = "stop_scan"


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str
    timestamp: float

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("utterance text is empty")


@dataclass(frozen=True)
class StageLatency:
    mean_ms: float
    sd_ms: float

    def __post_init__(self) -> None:
        if self.mean_ms < 0.0 or self.sd_ms < 0.0:
            raise ValueError("latency parameters must be >= 0")


# Measured stage latencies of the live pipeline, used as simulation defaults.
DEFAULT_STAGE_LATENCIES = {
    "stt": StageLatency(46.0, 5.0),
    "llm": StageLatency(552.0, 187.0),
    "tts": StageLatency(1281.0, 188.0),
}

DEFAULT_PERSONA = (
    "You are a calm, friendly clinical assistant guiding a patient through "
    "a robotic ultrasound scan. Keep answers short and reassuring."
)


@dataclass(frozen=True)
class AgentConfig:
    persona_prompt: str = DEFAULT_PERSONA
    stage_latency_ms: dict = field(default_factory=lambda: dict(DEFAULT_STAGE_LATENCIES))
    command_keywords: tuple[str, ...] = ("start", "begin")
    stop_keywords: tuple[str, ...] = ("stop",)
    script_table: dict | None = None

    def scripts(self) -> dict:
        return self.script_table if self.script_table is not None else DEFAULT_SCRIPT_TABLE


@dataclass(frozen=True)
class AgentReply:
    text: str
    command: AgentCommand | None
    simulated_latency_ms: dict[str, float]

    @property
    def total_latency_ms(self) -> float:
        return sum(self.simulated_latency_ms.values())


# Script table: phase -> entries tried in order; an entry without a pattern
# is the fallback. Patterns are case-insensitive substrings.
DEFAULT_SCRIPT_TABLE: dict[str, list[dict]] = {
    "greeting": [
        {"reply": "Hello! I'm your assistant for today's ultrasound. We'll take it step by step."},
    ],
    "resting": [
        {"pattern": "hurt", "reply": "It shouldn't hurt at all. The probe presses only gently, and I'm watching the force the whole time."},
        {"pattern": "how long", "reply": "The scan itself takes well under a minute. Whenever you feel ready, just tell me to begin."},
        {"pattern": "what", "reply": "The robot will glide the probe along your arm while I keep the pressure steady. You can talk to me the whole time."},
        {"pattern": "start", "reply": "Alright, starting the scan now. Keep your arm relaxed and still."},
        {"pattern": "begin", "reply": "Alright, starting the scan now. Keep your arm relaxed and still."},
        {"reply": "We can start whenever you like. Is there anything you'd like to know first?"},
    ],
    "execution": [
        {"pattern": "stop", "reply": "Of course, stopping right away and lifting the probe off."},
        {"pattern": "how much longer", "reply": "Almost there. Just a few more seconds of scanning."},
        {"pattern": "hurt", "reply": "You should only feel light, steady pressure. Tell me to stop if anything feels wrong."},
        {"reply": "Everything looks good. The probe is moving along the planned path with a steady, gentle force."},
    ],
    "complete": [
        {"reply": "The procedure is already finished. You can relax and move your arm again."},
    ],
    "setup": [
        {"reply": "One moment, we're still setting up the scan path."},
    ],
    "aborted": [
        {"reply": "The procedure has been stopped. You can relax and move your arm."},
    ],
}

# One announcement per phase entry, spoken by the agent on each transition.
PHASE_ANNOUNCEMENTS: dict[ProcedurePhase, str] = {
    ProcedurePhase.SETUP: "Setting up: the operator is recording the scan path.",
    ProcedurePhase.GREETING: "Hello! I'm your virtual assistant. I'll stay with you through the whole ultrasound.",
    ProcedurePhase.RESTING: "Feel free to ask me anything. Tell me to begin whenever you're ready.",
    ProcedurePhase.EXECUTION: "Starting the scan now. Keep your arm still and relaxed; I'm guiding the probe.",
    ProcedurePhase.COMPLETE: "All done! The procedure is finished. You can relax and move your arm now.",
    ProcedurePhase.ABORTED: "The procedure has been stopped and the probe is lifting away. You can relax now.",
}


def _contains_word(text: str, word: str) -> bool:
    return re.search(rf"(?<![\w]){re.escape(word)}(?![\w])", text, re.IGNORECASE) is not None


def extract_command(
    config: AgentConfig, phase: ProcedurePhase, text: str
) -> AgentCommand | None:
    """Keyword-based command extraction, gated by the current phase.

    Stop wins over start when both appear; starting is only honored while
    the session is resting, stopping while resting or executing.
    """
    if phase in (ProcedurePhase.RESTING, ProcedurePhase.EXECUTION):
        if any(_contains_word(text, w) for w in config.stop_keywords):
            return AgentCommand.STOP_SCAN
    if phase is ProcedurePhase.RESTING:
        if any(_contains_word(text, w) for w in config.command_keywords):
            return AgentCommand.START_SCAN
    return None


def _scripted_reply(table: dict, phase: ProcedurePhase, text: str) -> str:
    entries = table.get(phase.value, [])
    fallback = None
    lowered = text.lower()
    for entry in entries:
        pattern = entry.get("pattern")
        if pattern is None:
            if fallback is None:
                fallback = entry["reply"]
            continue
        if pattern.lower() in lowered:
            return entry["reply"]
    if fallback is not None:
        return fallback
    return "I'm here with you."


def sample_stage_latencies(config: AgentConfig, rng_seed: int) -> dict[str, float]:
    """Per-stage Gaussian latency draw, clamped at zero; deterministic per seed."""
    rng = random.Random(rng_seed)
    out = {}
    for stage in ("stt", "llm", "tts"):
        lat = config.stage_latency_ms[stage]
        out[stage] = max(0.0, rng.gauss(lat.mean_ms, lat.sd_ms))
    return out


class ResponseGenerator(Protocol):
    """Pluggable reply generation stage.

    The scripted default is deterministic given its inputs; adapters for
    external models may not be and are kept out of the automated suites.
    Raise GeneratorUnavailable to make the caller fall back to scripts.
    """

    def respond(self, prompt_context: str, transcript_window: list[Utterance]) -> str:
        ...


class ScriptedGenerator:
    def __init__(self, table: dict | None = None):
        self.table = table if table is not None else DEFAULT_SCRIPT_TABLE

    def respond(self, prompt_context: str, transcript_window: list[Utterance]) -> str:
        phase = ProcedurePhase(prompt_context)
        text = transcript_window[-1].text if transcript_window else ""
        return _scripted_reply(self.table, phase, text)


def handle_utterance(
    config: AgentConfig,
    phase: ProcedurePhase,
    utterance: Utterance,
    rng_seed: int,
    generator: ResponseGenerator | None = None,
) -> AgentReply:
    """One turn of the pipeline: extract a command, pick a reply, sample latency."""
    command = extract_command(config, phase, utterance.text)
    text = None
    if generator is not None:
        try:
            text = generator.respond(phase.value, [utterance])
        except GeneratorUnavailable:
            text = None
    if text is None:
        text = _scripted_reply(config.scripts(), phase, utterance.text)
    return AgentReply(text, command, sample_stage_latencies(config, rng_seed))


def phase_announcement(
    previous: ProcedurePhase | None, new: ProcedurePhase, timestamp: float
) -> Utterance:
    """Deterministic agent utterance announcing a legal phase transition."""
    check_transition(previous, new)
    return Utterance(Speaker.AGENT, PHASE_ANNOUNCEMENTS[new], timestamp)


def load_script_table(path) -> dict:
    """Load a phase -> entries script table from JSON, validating its shape."""
    with open(path, "r", encoding="utf-8") as f:
        table = json.load(f)
    if not isinstance(table, dict):
        raise ValueError("script table must be a JSON object keyed by phase")
    for phase_name, entries in table.items():
        ProcedurePhase(phase_name)
        if not isinstance(entries, list):
            raise ValueError(f"entries for {phase_name!r} must be a list")
        for entry in entries:
            if "reply" not in entry:
                raise ValueError(f"entry without reply under {phase_name!r}")
    return table
