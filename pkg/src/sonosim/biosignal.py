"""ECG processing to heart-rate variability: R-peaks, RR series, RMSSD.

Detection is moving-average thresholding: the signal (shifted nonnegative)
is compared against 1.02 times its 0.75 s rolling mean, one local maximum
is taken per suprathreshold region, and a 0.25 s refractory window merges
double fires. RR intervals outside 300..2000 ms are discarded and the gap
is marked so successive differences are never taken across it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .phases import ProcedurePhase

SMOOTHING_S = 0.10
MA_WINDOW_S = 0.75
MA_THRESHOLD_FACTOR = 1.02
PROMINENCE_FRACTION = 0.3
REFRACTORY_S = 0.25
RR_MIN_MS = 300.0
RR_MAX_MS = 2000.0
MIN_RECORD_S = 10.0


class SignalTooShort(ValueError):
    pass


class FlatSignal(ValueError):
    pass


class TooFewBeats(ValueError):
    pass


class TooFewIntervals(ValueError):
    pass


@dataclass(frozen=True)
class EcgRecord:
    sample_rate: float
    samples: tuple[float, ...]
    start_time: float = 0.0

    def __post_init__(self) -> None:
        if not (100.0 <= self.sample_rate <= 2000.0):
            raise ValueError(f"sample rate must be in [100, 2000] Hz, got {self.sample_rate}")
        object.__setattr__(self, "samples", tuple(float(v) for v in self.samples))

    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class RrSeries:
    """Successive beat intervals in ms; NaN entries mark discarded gaps."""

    rr_intervals: tuple[float, ...]
    beat_times: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.rr_intervals) != len(self.beat_times) - 1:
            raise ValueError("need exactly one interval between consecutive beats")

    def segments(self) -> list[list[float]]:
        """Maximal runs of valid intervals, split at the gap markers."""
        runs: list[list[float]] = []
        current: list[float] = []
        for v in self.rr_intervals:
            if math.isnan(v):
                if current:
                    runs.append(current)
                    current = []
            else:
                current.append(v)
        if current:
            runs.append(current)
        return runs


@dataclass(frozen=True)
class HrvReport:
    phase: ProcedurePhase
    t_start: float
    t_end: float
    n_beats: int
    rmssd_ms: float
    insufficient: bool = False


def _centered_boxcar(sig: np.ndarray, width: int) -> np.ndarray:
    width = max(3, width | 1)  # odd
    padded = np.pad(sig, width // 2, mode="reflect")
    return np.convolve(padded, np.full(width, 1.0 / width), mode="valid")


def detect_r_peaks(ecg: EcgRecord) -> list[float]:
    """Beat times in seconds."""
    if ecg.duration() < MIN_RECORD_S:
        raise SignalTooShort(
            f"need at least {MIN_RECORD_S} s of signal, got {ecg.duration():.2f} s"
        )
    sig = np.asarray(ecg.samples, dtype=float)
    if np.ptp(sig) == 0.0:
        raise FlatSignal("signal has zero variance")
    fs = ecg.sample_rate

    # Condition first: a short boxcar knocks broadband noise down before the
    # slow moving average sets the threshold.
    smoothed = _centered_boxcar(sig, int(round(SMOOTHING_S * fs)))
    shifted = smoothed - smoothed.min()
    rolling = _centered_boxcar(shifted, int(round(MA_WINDOW_S * fs)))
    # The multiplicative margin alone cannot reject noise where the signal
    # rides its own local mean; gate candidates on prominence relative to
    # the record's strongest deviations as well.
    deviation = shifted - rolling
    floor = PROMINENCE_FRACTION * float(np.percentile(deviation, 98.0))
    above = (shifted > rolling * MA_THRESHOLD_FACTOR) & (deviation >= floor)

    # One local maximum per suprathreshold region.
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    starts = list(edges[~above[edges]] + 1) if len(edges) else []
    ends = list(edges[above[edges]] + 1) if len(edges) else []
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        ends.append(len(above))
    candidates = [int(s + np.argmax(shifted[s:e])) for s, e in zip(starts, ends)]

    refractory = int(round(REFRACTORY_S * fs))
    kept: list[int] = []
    for idx in candidates:
        if kept and idx - kept[-1] < refractory:
            if shifted[idx] > shifted[kept[-1]]:
                kept[-1] = idx
        else:
            kept.append(idx)
    return [ecg.start_time + i / fs for i in kept]


def rr_from_peaks(beat_times: list[float]) -> RrSeries:
    """RR intervals in ms with out-of-range intervals replaced by gap markers."""
    if len(beat_times) < 3:
        raise TooFewBeats(f"need at least 3 beats, got {len(beat_times)}")
    times = sorted(beat_times)
    rr = []
    for a, b in zip(times, times[1:]):
        interval = (b - a) * 1000.0
        rr.append(interval if RR_MIN_MS <= interval <= RR_MAX_MS else math.nan)
    return RrSeries(tuple(rr), tuple(times))


def rmssd(rr: RrSeries) -> float:
    """Root mean square of successive differences, never across gap markers."""
    sq = []
    for run in rr.segments():
        for a, b in zip(run, run[1:]):
            sq.append((b - a) ** 2)
    if not sq:
        raise TooFewIntervals("no unbroken pair of successive RR intervals")
    return math.sqrt(sum(sq) / len(sq))


def segment_hrv(ecg: EcgRecord, intervals) -> list[HrvReport]:
    """One report per resting/execution interval (others are skipped).

    Intervals short on beats are flagged rather than fatal so a single thin
    phase does not sink the whole analysis.
    """
    beats = detect_r_peaks(ecg)
    reports: list[HrvReport] = []
    for iv in intervals:
        if iv.phase not in (ProcedurePhase.RESTING, ProcedurePhase.EXECUTION):
            continue
        inside = [b for b in beats if iv.t_start <= b < iv.t_end]
        try:
            value = rmssd(rr_from_peaks(inside))
            flagged = False
        except (TooFewBeats, TooFewIntervals):
            value = math.nan
            flagged = True
        reports.append(
            HrvReport(iv.phase, iv.t_start, iv.t_end, len(inside), value, flagged)
        )
    return reports


def synthetic_ecg(
    beat_times: list[float],
    sample_rate: float,
    duration: float,
    *,
    amplitude: float = 1.0,
    bump_sigma_s: float = 0.03,
    noise_sd: float = 0.0,
    seed: int = 0,
) -> EcgRecord:
    """Gaussian-bump train at known beat times, for fixtures and demos."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    sig = np.zeros(n)
    for bt in beat_times:
        sig += amplitude * np.exp(-0.5 * ((t - bt) / bump_sigma_s) ** 2)
    if noise_sd > 0.0:
        rng = np.random.default_rng(seed)
        sig = sig + rng.normal(0.0, noise_sd, size=n)
    return EcgRecord(sample_rate, tuple(sig))


def save_ecg_csv(ecg: EcgRecord, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# fs={ecg.sample_rate!r}\n")
        f.write("t_s,mv\n")
        for i, v in enumerate(ecg.samples):
            f.write(f"{ecg.start_time + i / ecg.sample_rate!r},{v!r}\n")


def load_ecg_csv(path) -> EcgRecord:
    """CSV with a `# fs=<Hz>` comment line, then header t_s,mv."""
    fs = None
    start_time = 0.0
    samples: list[float] = []
    with open(path, "r", encoding="utf-8") as f:
        header_seen = False
        for i, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("fs="):
                    fs = float(body[3:])
                continue
            if not header_seen:
                if [c.strip() for c in line.split(",")] != ["t_s", "mv"]:
                    raise ValueError(f"row {i}: expected header t_s,mv, got {line!r}")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"row {i}: expected 2 values, got {len(parts)}")
            try:
                t_val, mv = float(parts[0]), float(parts[1])
            except ValueError as e:
                raise ValueError(f"row {i}: {e}") from e
            if not samples:
                start_time = t_val
            samples.append(mv)
    if fs is None:
        raise ValueError("missing `# fs=<Hz>` comment line")
    if not samples:
        raise ValueError("no samples in file")
    return EcgRecord(fs, tuple(samples), start_time)


def load_rr_csv(path) -> RrSeries:
    """Raw RR CSV with header rr_ms; beat times are reconstructed from zero."""
    rr: list[float] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["rr_ms"]:
            raise ValueError("expected header rr_ms")
        for i, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            try:
                v = float(row[0])
            except ValueError as e:
                raise ValueError(f"row {i}: {e}") from e
            rr.append(v if RR_MIN_MS <= v <= RR_MAX_MS else math.nan)
    beats = [0.0]
    for v in rr:
        beats.append(beats[-1] + (v if not math.isnan(v) else RR_MAX_MS) / 1000.0)
    return RrSeries(tuple(rr), tuple(beats))


def write_hrv_report_csv(reports: list[HrvReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("phase,t_start,t_end,n_beats,rmssd_ms\n")
        for r in reports:
            rmssd_text = "" if math.isnan(r.rmssd_ms) else repr(r.rmssd_ms)
            f.write(f"{r.phase.value},{r.t_start!r},{r.t_end!r},{r.n_beats},{rmssd_text}\n")
