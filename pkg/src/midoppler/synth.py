"""Synthetic spectral Doppler study generator with exact ground truth.

Waves are piecewise linear on purpose: peak amplitudes, timings, and the
deceleration-time geometry are then analytically exact, so the generator
can serve as an assumption-free oracle for the measurement pipeline. The E
wave rises linearly to its peak and descends with slope -E/dt; a nonzero
``dt_second_slope_fraction`` inserts a slope-change knee after which the
descent continues at half the initial slope. The A wave is a symmetric
triangle ending shortly before the next QRS. Speckle is multiplicative
uniform noise; artifacts (bright spikes, dropouts, an aliasing band below
the baseline) are drawn after the envelope.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import GenerationError
from .ingestion import CalibrationManifest, RasterImage, atomic_write_text
from .measurement import CSV_HEADER, _fmt1, _fmt3

ENVELOPE_INTENSITY = 205
BACKGROUND_INTENSITY = 12
SPIKE_INTENSITY = 235
ALIAS_INTENSITY = 185


@dataclass(frozen=True)
class Spike:
    """Bright artifactual peak attached to the baseline, like a valve click."""

    time_ms: float
    velocity: float
    width_ms: float


@dataclass(frozen=True)
class Dropout:
    """Columns where the flow signal is missing entirely."""

    time_ms: float
    width_ms: float


@dataclass(frozen=True)
class AliasBand:
    """Bright band below the baseline mimicking wrap-around content."""


@dataclass(frozen=True)
class SynthParams:
    e_velocity: float = 0.8     # m/s
    a_velocity: float = 0.5     # m/s; 0 renders a fused (E-only) pattern
    dt: float = 180.0           # ms, E-peak to extrapolated baseline crossing
    heart_rate: float = 60.0    # bpm
    n_beats: int = 3
    dt_second_slope_fraction: float = 0.0  # 0 = straight descent to the foot
    noise_sigma: float = 0.0    # 0..1 speckle intensity
    artifacts: tuple = ()
    seed: int = 0
    label: str = "mitral_inflow"
    width: int = 1016
    height: int = 758
    # wave timing knobs (defaults fit the whole supported HR range)
    systole_frac: float = 0.30  # fraction of the beat before the E upstroke ends
    e_rise_ms: float = 70.0
    a_half_ms: float = 55.0     # A-wave half width
    a_gap_ms: float = 15.0      # A-wave foot to the next QRS
    lead_in_ms: float = 40.0
    tail_ms: float = 60.0
    e_peak_frac: float | None = None  # overrides systole_frac positioning


@dataclass(frozen=True)
class TrueBeat:
    e_velocity: float
    a_velocity: float | None
    ea_ratio: float | None
    dt_ms: float
    e_time: float
    a_time: float | None


@dataclass
class GroundTruth:
    beats: list
    qrs_times: np.ndarray   # ms from the spectral left edge, n_beats + 1 marks
    envelope: np.ndarray    # analytic per-column velocity, m/s
    mask: np.ndarray        # analytic binary mask over the spectral region
    ecg_rows: np.ndarray    # absolute pixel row of the ECG polyline per column


@dataclass(frozen=True)
class _BeatGeometry:
    q_start: float
    q_end: float
    e_on: float
    e_time: float
    knee_time: float | None
    knee_velocity: float
    foot: float
    a_on: float | None
    a_time: float | None
    a_end: float | None


def _validate(params: SynthParams) -> None:
    if params.e_velocity <= 0:
        raise GenerationError(f"e_velocity must be positive, got {params.e_velocity}")
    if params.a_velocity < 0:
        raise GenerationError(f"a_velocity must be >= 0, got {params.a_velocity}")
    if params.dt <= 0:
        raise GenerationError(f"dt must be positive, got {params.dt}")
    if not (30.0 <= params.heart_rate <= 220.0):
        raise GenerationError(f"heart_rate must be in [30, 220], got {params.heart_rate}")
    if params.n_beats < 1:
        raise GenerationError(f"n_beats must be >= 1, got {params.n_beats}")
    if not (0.0 <= params.noise_sigma <= 1.0):
        raise GenerationError(f"noise_sigma must be in [0, 1], got {params.noise_sigma}")
    if not (0.0 <= params.dt_second_slope_fraction <= 1.0):
        raise GenerationError(
            f"dt_second_slope_fraction must be in [0, 1], got {params.dt_second_slope_fraction}"
        )
    if params.width < 300 or params.height < 300:
        raise GenerationError("rendered image must be at least 300x300")


def _beat_geometry(
    params: SynthParams, q_start: float, q_end: float, index: int, time_scale: float
) -> _BeatGeometry:
    beat_ms = q_end - q_start

    def snap(t):
        # wave apexes land exactly on a pixel column so the rendered peak
        # carries the full amplitude
        return round(t / time_scale) * time_scale

    if params.e_peak_frac is not None:
        e_time = snap(q_start + params.e_peak_frac * beat_ms)
    else:
        e_time = snap(q_start + params.systole_frac * beat_ms + params.e_rise_ms)
    e_on = e_time - params.e_rise_ms
    if e_on < q_start - time_scale:
        raise GenerationError(
            f"beat {index}: E upstroke begins at {e_on:.1f} ms, before the beat "
            f"start at {q_start:.1f} ms"
        )

    if params.a_velocity > 0:
        a_time = snap(q_end - params.a_gap_ms - params.a_half_ms)
        a_on = a_time - params.a_half_ms
        a_end = a_time + params.a_half_ms
        if a_on < q_start:
            raise GenerationError(
                f"beat {index}: A wave does not fit inside a {beat_ms:.0f} ms beat"
            )
        if a_time >= q_end:
            raise GenerationError(f"beat {index}: A peak lands after the closing QRS")
        limit = a_on
    else:
        a_time = a_on = a_end = None
        limit = q_end - 10.0

    fraction = params.dt_second_slope_fraction
    if fraction > 0:
        knee_time = e_time + (1.0 - fraction) * params.dt
        knee_velocity = fraction * params.e_velocity
        foot = knee_time + 2.0 * fraction * params.dt  # second slope = s1 / 2
    else:
        knee_time = None
        knee_velocity = 0.0
        foot = e_time + params.dt

    if foot > limit + 1e-9:
        target = "the A wave starts" if a_on is not None else "the beat ends"
        raise GenerationError(
            f"beat {index}: E descent ends at {foot:.1f} ms but {target} at "
            f"{limit:.1f} ms (E and A supports overlap); reduce dt or heart_rate"
        )
    return _BeatGeometry(
        q_start=q_start,
        q_end=q_end,
        e_on=e_on,
        e_time=e_time,
        knee_time=knee_time,
        knee_velocity=knee_velocity,
        foot=foot,
        a_on=a_on,
        a_time=a_time,
        a_end=a_end,
    )


def _envelope(params: SynthParams, geoms, times: np.ndarray) -> np.ndarray:
    v = np.zeros_like(times)
    for g in geoms:
        rise = (times >= g.e_on) & (times <= g.e_time)
        if params.e_rise_ms > 0:
            np.maximum(
                v,
                np.where(rise, params.e_velocity * (times - g.e_on) / params.e_rise_ms, 0.0),
                out=v,
            )
        seg1_end = g.knee_time if g.knee_time is not None else g.foot
        slope1 = -params.e_velocity / params.dt
        descent = (times > g.e_time) & (times <= seg1_end)
        np.maximum(
            v,
            np.where(descent, params.e_velocity + slope1 * (times - g.e_time), 0.0),
            out=v,
        )
        if g.knee_time is not None and g.foot > g.knee_time:
            slope2 = -g.knee_velocity / (g.foot - g.knee_time)
            tail = (times > g.knee_time) & (times <= g.foot)
            np.maximum(
                v,
                np.where(tail, g.knee_velocity + slope2 * (times - g.knee_time), 0.0),
                out=v,
            )
        if g.a_time is not None:
            awave = (times >= g.a_on) & (times <= g.a_end)
            np.maximum(
                v,
                np.where(
                    awave,
                    params.a_velocity * (1.0 - np.abs(times - g.a_time) / params.a_half_ms),
                    0.0,
                ),
                out=v,
            )
    return np.clip(v, 0.0, None)


def generate_synthetic(params: SynthParams):
    """Render a synthetic study.

    Returns (RasterImage, CalibrationManifest, GroundTruth). Deterministic
    for a given parameter set including the seed.
    """
    _validate(params)
    beat_ms = 60000.0 / params.heart_rate
    total_ms = params.lead_in_ms + params.n_beats * beat_ms + params.tail_ms

    sx0, sy0 = 60, 60
    sx1 = params.width - 61
    sy1 = int(round(params.height * 0.818))
    region_w = sx1 - sx0 + 1
    region_h = sy1 - sy0 + 1
    baseline = sy0 + int(round(0.85 * (sy1 - sy0)))
    baseline_local = baseline - sy0

    time_scale = total_ms / region_w
    spike_velocities = [a.velocity for a in params.artifacts if isinstance(a, Spike)]
    vmax = max(
        1.55 * params.e_velocity,
        1.15 * params.a_velocity,
        1.05 * max(spike_velocities, default=0.0),
        0.8,
    )
    velocity_scale = vmax / (baseline - sy0)

    ey0 = sy1 + 30
    ey1 = min(params.height - 13, ey0 + 95)
    if ey1 - ey0 < 40:
        raise GenerationError("image too short to place the ECG strip")

    qrs_times = params.lead_in_ms + beat_ms * np.arange(params.n_beats + 1)
    geoms = [
        _beat_geometry(params, qrs_times[i], qrs_times[i + 1], i, time_scale)
        for i in range(params.n_beats)
    ]

    times = np.arange(region_w, dtype=np.float64) * time_scale
    envelope = _envelope(params, geoms, times)

    # every column carries at least the baseline row: zero-flow columns show
    # the bright baseline band, so the envelope touches the baseline everywhere
    top = baseline_local - np.round(envelope / velocity_scale).astype(np.int64)
    top = np.clip(top, 0, baseline_local)
    row_idx = np.arange(region_h)[:, None]
    mask = (row_idx >= top[None, :]) & (row_idx <= baseline_local)

    rng = np.random.default_rng(params.seed)
    pixels = np.full((params.height, params.width, 3), BACKGROUND_INTENSITY, np.uint8)
    # the bright baseline band extends two rows below the baseline so that
    # zero-flow columns survive median filtering and opening; the analysis
    # keeps only the flow side, so the band reads back as exactly zero
    render_mask = mask.copy()
    render_mask[baseline_local + 1:baseline_local + 3, :] = True
    gray = np.where(render_mask, float(ENVELOPE_INTENSITY), float(BACKGROUND_INTENSITY))
    if params.noise_sigma > 0:
        factor = 1.0 + params.noise_sigma * rng.uniform(-1.0, 1.0, gray.shape)
        gray = gray * factor
    region_u8 = np.clip(np.round(gray), 0, 255).astype(np.uint8)
    pixels[sy0:sy1 + 1, sx0:sx1 + 1] = region_u8[:, :, None]

    region_view = pixels[sy0:sy1 + 1, sx0:sx1 + 1]
    for artifact in params.artifacts:
        if isinstance(artifact, Spike):
            c0 = int(round(artifact.time_ms / time_scale))
            span = max(1, int(round(artifact.width_ms / time_scale)))
            c0 = max(0, min(region_w - 1, c0))
            c1 = min(region_w, c0 + span)
            spike_top = max(0, baseline_local - int(round(artifact.velocity / velocity_scale)))
            region_view[spike_top:baseline_local + 1, c0:c1] = SPIKE_INTENSITY
        elif isinstance(artifact, Dropout):
            c0 = int(round(artifact.time_ms / time_scale))
            span = max(1, int(round(artifact.width_ms / time_scale)))
            c0 = max(0, min(region_w - 1, c0))
            c1 = min(region_w, c0 + span)
            region_view[:baseline_local + 1, c0:c1] = BACKGROUND_INTENSITY
        elif isinstance(artifact, AliasBand):
            r0 = baseline_local + 8
            r1 = min(region_h, baseline_local + 28)
            if r0 < r1:
                region_view[r0:r1, :] = ALIAS_INTENSITY

    ecg_rows = _render_ecg(pixels, params, qrs_times, time_scale, sx0, ey0, ey1, region_w)

    manifest = CalibrationManifest(
        label=params.label,
        velocity_scale=velocity_scale,
        time_scale=time_scale,
        baseline_row=baseline,
        spectral_region=(sx0, sy0, sx1, sy1),
        flow_above_baseline=True,
        ecg_region=(sx0, ey0, sx1, ey1),
    )

    has_a = params.a_velocity > 0
    beats = [
        TrueBeat(
            e_velocity=params.e_velocity,
            a_velocity=params.a_velocity if has_a else None,
            ea_ratio=params.e_velocity / params.a_velocity if has_a else None,
            dt_ms=params.dt,
            e_time=g.e_time,
            a_time=g.a_time,
        )
        for g in geoms
    ]
    truth = GroundTruth(
        beats=beats,
        qrs_times=qrs_times,
        envelope=envelope,
        mask=mask,
        ecg_rows=ecg_rows,
    )
    return RasterImage(pixels), manifest, truth


def _render_ecg(pixels, params, qrs_times, time_scale, ecg_x0, ey0, ey1, region_w):
    """One ECG pixel per column: a flat line with a triangular R spike."""
    ecg_h = ey1 - ey0 + 1
    base_local = int(round(0.70 * (ecg_h - 1)))
    amp = 0.45 * ecg_h
    half_cols = max(2, int(round(9.0 / time_scale)))

    rows_local = np.full(region_w, base_local, dtype=np.int64)
    for q in qrs_times:
        center = int(round(q / time_scale))
        for dc in range(-half_cols, half_cols + 1):
            col = center + dc
            if 0 <= col < region_w:
                deviation = amp * (1.0 - abs(dc) / (half_cols + 1.0))
                rows_local[col] = min(rows_local[col], base_local - int(round(deviation)))

    color = np.array((0, 255, 0), dtype=np.uint8)
    cols = np.arange(region_w)
    pixels[ey0 + rows_local, ecg_x0 + cols] = color
    return ey0 + rows_local


def truth_csv_text(truth: GroundTruth) -> str:
    """Ground truth in the measurement CSV schema, one row per beat."""
    lines = [CSV_HEADER]
    e_values, a_values, ea_values, dt_values = [], [], [], []
    for i, b in enumerate(truth.beats, start=1):
        lines.append(
            f"{i},{_fmt3(b.e_velocity)},{_fmt3(b.a_velocity)},{_fmt3(b.ea_ratio)},"
            f"{_fmt1(b.dt_ms)},{_fmt1(b.e_time)},{_fmt1(b.a_time)},"
        )
        e_values.append(b.e_velocity)
        if b.a_velocity is not None:
            a_values.append(b.a_velocity)
            ea_values.append(b.ea_ratio)
        dt_values.append(b.dt_ms)

    def mean(values):
        return sum(values) / len(values) if values else None

    lines.append(
        f"mean,{_fmt3(mean(e_values))},{_fmt3(mean(a_values))},"
        f"{_fmt3(mean(ea_values))},{_fmt1(mean(dt_values))},,,"
    )
    return "\n".join(lines) + "\n"


def write_truth_csv(path, truth: GroundTruth) -> None:
    atomic_write_text(path, truth_csv_text(truth))


def corpus_params(base: SynthParams, seed: int) -> SynthParams:
    """Draw one corpus member: E, A, HR uniform; dt uniform inside the
    geometrically feasible part of [120, 260] ms for the drawn heart rate."""
    rng = np.random.default_rng(seed)
    e = rng.uniform(0.4, 1.2)
    a = rng.uniform(0.3, 1.0)
    hr = rng.uniform(50.0, 110.0)
    beat_ms = 60000.0 / hr
    a_span = base.a_gap_ms + 2.0 * base.a_half_ms
    e_end = base.systole_frac * beat_ms + base.e_rise_ms
    knee_stretch = 1.0 + base.dt_second_slope_fraction
    # 10 ms margin also absorbs apex snapping to the column grid
    dt_max = (beat_ms - a_span - e_end - 10.0) / knee_stretch
    dt = rng.uniform(120.0, min(260.0, dt_max))
    return replace(base, e_velocity=e, a_velocity=a, heart_rate=hr, dt=dt, seed=seed)
