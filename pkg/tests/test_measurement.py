"""Flow peak detection, beat labeling, deceleration time, aggregation."""

import numpy as np
import pytest

from midoppler.ecg import QrsMarks
from midoppler.errors import AggregationError, LabelingError
from midoppler.measurement import (
    FLAG_FUSED_EA,
    FLAG_GAP_IN_DESCENT,
    FLAG_NO_SLOPE_CHANGE,
    BeatMeasurement,
    FlowPeak,
    PeakParams,
    StudyResult,
    aggregate,
    deceleration_time,
    detect_flow_peaks,
    label_beats,
    measure_beats,
    summarize_beats,
)

from conftest import make_trace, triangle

SPACING = 2.5


def grid(n):
    return SPACING * np.arange(n)


def peak(time, velocity, prominence=None, width=60.0):
    return FlowPeak(time=time, velocity=velocity, prominence=prominence or velocity, width=width)


def beat(e=0.8, a=0.5, dt=180.0, flags=()):
    return BeatMeasurement(
        e_velocity=e,
        a_velocity=a,
        ea_ratio=e / a if a else None,
        dt_ms=dt,
        e_time=300.0,
        a_time=700.0 if a else None,
        quality=frozenset(flags),
    )


# detect_flow_peaks -----------------------------------------------------------


def test_single_triangle_peak_geometry():
    times = grid(200)
    trace = make_trace(triangle(times, 250.0, 80.0, 1.0))
    peaks = detect_flow_peaks(trace)
    assert len(peaks) == 1
    assert peaks[0].velocity == pytest.approx(1.0, abs=0.01)
    assert peaks[0].width == pytest.approx(80.0, abs=SPACING)
    assert peaks[0].prominence == pytest.approx(1.0, abs=0.01)
    assert peaks[0].time == pytest.approx(250.0, abs=SPACING)


def test_two_triangles_in_time_order():
    times = grid(400)
    v = triangle(times, 250.0, 80.0, 0.8) + triangle(times, 650.0, 70.0, 0.6)
    peaks = detect_flow_peaks(make_trace(v))
    assert [round(p.velocity, 2) for p in peaks] == [0.8, 0.6]
    assert peaks[0].time < peaks[1].time


def test_narrow_spike_fails_width_gate():
    times = grid(400)
    v = triangle(times, 250.0, 80.0, 0.8) + triangle(times, 500.0, 2.5, 1.2)
    peaks = detect_flow_peaks(make_trace(v), PeakParams(min_width_ms=30.0))
    assert len(peaks) == 1
    assert peaks[0].velocity == pytest.approx(0.8, abs=0.01)


def test_peaks_invariant_under_narrow_spikes():
    rng = np.random.default_rng(51)
    times = grid(500)
    base = triangle(times, 300.0, 90.0, 0.9) + triangle(times, 900.0, 70.0, 0.5)
    reference = [(p.time, round(p.velocity, 6)) for p in detect_flow_peaks(make_trace(base))]
    trials = 0
    while trials < 20:
        center = float(rng.uniform(50, 1150))
        if min(abs(center - 300.0), abs(center - 900.0)) < 120.0:
            continue  # a spike on an apex legitimately extends that peak
        trials += 1
        v = np.maximum(base, triangle(times, center, float(rng.uniform(2.0, 10.0)), 1.4))
        got = [(p.time, round(p.velocity, 6)) for p in detect_flow_peaks(make_trace(v))]
        assert got == reference


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        detect_flow_peaks(make_trace(np.empty(0)))


# label_beats -----------------------------------------------------------------


def test_label_two_peaks_e_then_a():
    qrs = QrsMarks(times=np.array([0.0, 800.0]))
    peaks = [peak(160.0, 0.8), peak(660.0, 0.6)]
    labeled = label_beats(peaks, qrs)
    assert len(labeled) == 1
    assert labeled[0].e_peak.time == 160.0
    assert labeled[0].a_peak.time == 660.0
    assert not labeled[0].flags


def test_label_single_peak_is_fused_e():
    qrs = QrsMarks(times=np.array([0.0, 800.0]))
    labeled = label_beats([peak(300.0, 0.7)], qrs)
    assert labeled[0].e_peak.time == 300.0
    assert labeled[0].a_peak is None
    assert FLAG_FUSED_EA in labeled[0].flags


def test_label_three_peaks_largest_early_is_e():
    qrs = QrsMarks(times=np.array([0.0, 800.0]))
    peaks = [peak(160.0, 0.8), peak(400.0, 0.3), peak(660.0, 0.6)]
    labeled = label_beats(peaks, qrs)
    assert labeled[0].e_peak.time == 160.0
    assert labeled[0].a_peak.time == 660.0


def test_label_requires_two_marks():
    with pytest.raises(LabelingError):
        label_beats([peak(100.0, 0.8)], QrsMarks(times=np.array([0.0])))


def test_label_drops_empty_windows_and_keeps_a_before_qrs():
    qrs = QrsMarks(times=np.array([0.0, 500.0, 1000.0, 1500.0]))
    peaks = [peak(100.0, 0.9), peak(450.0, 0.5), peak(1100.0, 0.8), peak(1400.0, 0.6)]
    labeled = label_beats(peaks, qrs)
    assert len(labeled) == 2  # middle window has no peaks
    for lb in labeled:
        if lb.a_peak is not None:
            assert lb.a_peak.time < lb.window[1]


# deceleration_time -----------------------------------------------------------


def straight_descent_trace():
    """1.0 m/s at 500 ms falling linearly to 0 at 700 ms, flat after."""
    times = grid(400)
    v = np.where(times < 500.0, 1.0, np.clip(1.0 - (times - 500.0) / 200.0, 0.0, None))
    rise = times < 500.0
    v[rise] = np.clip((times[rise] - 100.0) / 400.0, 0.0, 1.0)
    return make_trace(v)


def test_dt_straight_line_descent(manifest):
    trace = straight_descent_trace()
    result = deceleration_time(trace, peak(500.0, 1.0), manifest)
    assert result.dt_ms == pytest.approx(200.0, abs=SPACING)


def test_dt_bilinear_slope_change(manifest):
    # 1.0 m/s at 500 ms, slope -0.005 m/s/ms to 0.5 at 600 ms, then -0.001
    times = grid(600)
    v = np.zeros_like(times)
    pre = times <= 500.0
    v[pre] = np.clip((times[pre] - 100.0) / 400.0, 0.0, 1.0)
    seg1 = (times > 500.0) & (times <= 600.0)
    v[seg1] = 1.0 - 0.005 * (times[seg1] - 500.0)
    seg2 = times > 600.0
    v[seg2] = np.clip(0.5 - 0.001 * (times[seg2] - 600.0), 0.0, None)
    result = deceleration_time(make_trace(v), peak(500.0, 1.0), manifest)
    assert result.dt_ms == pytest.approx(200.0, abs=10.0)
    assert result.slope_change_time == pytest.approx(600.0, abs=15.0)
    assert FLAG_NO_SLOPE_CHANGE not in result.flags


def test_dt_truncated_descent_is_absent(manifest):
    # linear descent that leaves the trace at 0.4 m/s with no slope change
    times = grid(200)
    v = 1.0 - 0.0012 * times  # ends near 0.4, never reaches the 5% floor
    result = deceleration_time(make_trace(v), peak(0.0, 1.0), manifest)
    assert result.dt_ms is None
    assert FLAG_NO_SLOPE_CHANGE in result.flags


def test_dt_gap_in_descent_flagged(manifest):
    trace = straight_descent_trace()
    gaps = np.zeros(len(trace.velocities), bool)
    gaps[210:220] = True  # 525..550 ms, on the descent
    trace = make_trace(trace.velocities, gaps=gaps)
    result = deceleration_time(trace, peak(500.0, 1.0), manifest)
    assert FLAG_GAP_IN_DESCENT in result.flags


def test_dt_peak_off_trace_rejected(manifest):
    with pytest.raises(ValueError):
        deceleration_time(make_trace(np.ones(50)), peak(1e5, 1.0), manifest)


@pytest.mark.parametrize("v_peak", [0.4, 0.8, 1.2])
@pytest.mark.parametrize("dt_true", [120.0, 180.0, 260.0])
def test_dt_exact_for_linear_descents(manifest, v_peak, dt_true):
    times = grid(400)
    apex = 300.0
    slope = v_peak / dt_true
    v = np.clip(np.where(times <= apex, v_peak * times / apex, v_peak - slope * (times - apex)), 0.0, None)
    result = deceleration_time(make_trace(v), peak(apex, v_peak), manifest)
    assert result.dt_ms == pytest.approx(dt_true, abs=SPACING)


# measure_beats / aggregation -------------------------------------------------


def ea_trace(e=0.8, a=0.5, scale=1.0, spacing=SPACING):
    times = spacing * np.arange(int(1900 / spacing))
    v = np.zeros_like(times)
    for start in (0.0, 900.0):
        v = np.maximum(v, triangle(times, start + 300.0, 70.0, e))
        v = np.maximum(v, triangle(times, start + 750.0, 60.0, a))
    qrs = QrsMarks(times=np.array([40.0, 940.0, 1840.0]))
    return make_trace(v * scale, spacing_ms=spacing), qrs


def test_measure_beats_labels_and_ratio(manifest):
    trace, qrs = ea_trace()
    details = measure_beats(trace, qrs, manifest)
    assert len(details) == 2
    for d in details:
        m = d.measurement
        assert m.e_velocity == pytest.approx(0.8, abs=0.02)
        assert m.a_velocity == pytest.approx(0.5, abs=0.02)
        assert m.ea_ratio == pytest.approx(1.6, abs=0.07)


def test_ea_ratio_scale_invariance(manifest):
    base_trace, qrs = ea_trace()
    base = [d.measurement.ea_ratio for d in measure_beats(base_trace, qrs, manifest)]
    for k in (0.5, 2.0):
        scaled_trace, _ = ea_trace(scale=k)
        ratios = [d.measurement.ea_ratio for d in measure_beats(scaled_trace, qrs, manifest)]
        for r0, r1 in zip(base, ratios):
            assert r1 == pytest.approx(r0, rel=1e-9)


def test_time_translation_shifts_times_only(manifest):
    trace, qrs = ea_trace()
    base = measure_beats(trace, qrs, manifest)
    offset = 500.0
    shifted_trace = make_trace(trace.velocities, t0=offset)
    shifted_qrs = QrsMarks(times=qrs.times + offset)
    shifted = measure_beats(shifted_trace, shifted_qrs, manifest)
    assert len(base) == len(shifted)
    for d0, d1 in zip(base, shifted):
        assert d1.measurement.e_velocity == d0.measurement.e_velocity
        assert d1.measurement.ea_ratio == d0.measurement.ea_ratio
        assert d1.measurement.dt_ms == pytest.approx(d0.measurement.dt_ms, abs=1e-9)
        assert d1.measurement.e_time == pytest.approx(d0.measurement.e_time + offset, abs=1e-9)


def test_measure_beats_without_marks_is_empty(manifest):
    trace, _ = ea_trace()
    assert measure_beats(trace, QrsMarks(times=np.array([40.0])), manifest) == []


def test_aggregate_means():
    result = StudyResult(beats=[beat(e=0.8), beat(e=0.8), beat(e=0.8)],
                         mean_e=None, mean_a=None, mean_ea=None, mean_dt=None)
    assert aggregate(result).mean_e == pytest.approx(0.8)

    result = StudyResult(beats=[beat(e=0.7), beat(e=0.9)],
                         mean_e=None, mean_a=None, mean_ea=None, mean_dt=None)
    assert aggregate(result).mean_e == pytest.approx(0.8)


def test_aggregate_uses_present_fields_only():
    beats = [beat(a=0.5), beat(a=0.7), beat(a=None)]
    means = summarize_beats(beats)
    assert means.mean_a == pytest.approx(0.6)
    assert means.n_beats == 3


def test_aggregate_excludes_fused_from_a_and_ratio():
    beats = [beat(a=0.5), beat(a=0.4, flags={FLAG_FUSED_EA})]
    means = summarize_beats(beats)
    assert means.mean_a == pytest.approx(0.5)
    assert means.mean_ea == pytest.approx(1.6)
    assert means.mean_e == pytest.approx(0.8)  # fused beats still count for E


def test_aggregate_zero_beats_is_an_error():
    empty = StudyResult(beats=[], mean_e=None, mean_a=None, mean_ea=None, mean_dt=None)
    with pytest.raises(AggregationError):
        aggregate(empty)


def test_outlier_mode_drops_far_beats():
    beats = [beat(dt=180.0), beat(dt=182.0), beat(dt=178.0), beat(dt=420.0)]
    plain = summarize_beats(beats)
    filtered = summarize_beats(beats, drop_outliers=True)
    assert plain.mean_dt > 200.0
    assert filtered.mean_dt == pytest.approx(180.0, abs=2.0)
