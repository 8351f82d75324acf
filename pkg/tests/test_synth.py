"""Synthetic study generator: determinism, ground-truth consistency, geometry."""

import numpy as np
import pytest

from midoppler.errors import GenerationError
from midoppler.measurement import FLAG_FUSED_EA, measure_study
from midoppler.segmentation import SegmentationParams, segment_envelope_threshold
from midoppler.synth import (
    AliasBand,
    Dropout,
    Spike,
    SynthParams,
    generate_synthetic,
    truth_csv_text,
)


def test_generation_is_deterministic():
    params = SynthParams(seed=17, noise_sigma=0.2)
    first_image, first_manifest, first_truth = generate_synthetic(params)
    second_image, second_manifest, second_truth = generate_synthetic(params)
    assert first_image.pixels.tobytes() == second_image.pixels.tobytes()
    assert first_manifest == second_manifest
    assert truth_csv_text(first_truth) == truth_csv_text(second_truth)


def test_different_seeds_change_noise():
    a, _, _ = generate_synthetic(SynthParams(seed=1, noise_sigma=0.2))
    b, _, _ = generate_synthetic(SynthParams(seed=2, noise_sigma=0.2))
    assert a.pixels.tobytes() != b.pixels.tobytes()


def test_ground_truth_echoes_parameters():
    _, _, truth = generate_synthetic(
        SynthParams(e_velocity=0.8, a_velocity=0.5, dt=180.0, heart_rate=60.0, n_beats=3)
    )
    assert len(truth.beats) == 3
    for b in truth.beats:
        assert b.e_velocity == 0.8
        assert b.a_velocity == 0.5
        assert b.ea_ratio == pytest.approx(1.6)
        assert b.dt_ms == 180.0


def test_a_time_precedes_each_closing_qrs():
    _, _, truth = generate_synthetic(SynthParams(seed=23, n_beats=4))
    assert len(truth.qrs_times) == 5
    for i, b in enumerate(truth.beats):
        assert truth.qrs_times[i] < b.a_time < truth.qrs_times[i + 1]


def test_analytic_mask_equals_thresholded_rendering():
    image, manifest, truth = generate_synthetic(SynthParams(seed=5, noise_sigma=0.0))
    mask = segment_envelope_threshold(
        image,
        manifest,
        SegmentationParams(
            median_window=1, threshold_mode="fixed", fixed_threshold=128,
            open_radius=0, min_component_area=0,
        ),
    )
    assert np.array_equal(mask.cells, truth.mask)


def test_wave_overlap_raises_generation_error():
    with pytest.raises(GenerationError, match="overlap"):
        generate_synthetic(SynthParams(heart_rate=200.0, dt=300.0))


def test_feasible_geometry_does_not_raise():
    generate_synthetic(SynthParams(heart_rate=110.0, dt=180.0))


def test_overlap_error_iff_supports_overlap():
    # beat is 1000 ms; E foot must stay left of the A-wave onset
    base = dict(heart_rate=60.0, systole_frac=0.30, e_rise_ms=70.0,
                a_half_ms=55.0, a_gap_ms=15.0)
    # a_on ~ 875 ms, e_time ~ 370 ms: dt just inside vs far outside
    generate_synthetic(SynthParams(dt=495.0, **base))
    with pytest.raises(GenerationError):
        generate_synthetic(SynthParams(dt=540.0, **base))


def test_fused_pattern_when_a_velocity_zero():
    image, manifest, truth = generate_synthetic(SynthParams(a_velocity=0.0, seed=7))
    assert all(b.a_velocity is None and b.ea_ratio is None for b in truth.beats)
    result = measure_study(image, manifest)
    assert result.n_beats == 3
    for beat in result.beats:
        assert beat.a_velocity is None
        assert FLAG_FUSED_EA in beat.quality


def test_invalid_parameters_rejected():
    with pytest.raises(GenerationError):
        generate_synthetic(SynthParams(heart_rate=10.0))
    with pytest.raises(GenerationError):
        generate_synthetic(SynthParams(e_velocity=0.0))
    with pytest.raises(GenerationError):
        generate_synthetic(SynthParams(noise_sigma=1.5))


def test_artifacts_paint_the_spectral_region():
    clean, manifest, _ = generate_synthetic(SynthParams(seed=9))
    spiked, _, _ = generate_synthetic(
        SynthParams(
            seed=9,
            artifacts=(
                Spike(time_ms=650.0, velocity=1.2, width_ms=5.0),
                Dropout(time_ms=1650.0, width_ms=40.0),
                AliasBand(),
            ),
        )
    )
    assert clean.pixels.tobytes() != spiked.pixels.tobytes()
    x0, y0, x1, y1 = manifest.spectral_region
    below = spiked.pixels[manifest.baseline_row + 8:y1, x0:x1, 0]
    assert (below == 185).any()  # alias band rendered below the baseline


def test_knee_fraction_renders_bilinear_descent():
    _, manifest, truth = generate_synthetic(
        SynthParams(seed=11, dt=160.0, dt_second_slope_fraction=0.4)
    )
    spacing = manifest.time_scale
    envelope = truth.envelope
    e_time = truth.beats[0].e_time
    # slope magnitude halves after the knee
    i_mid = int(round((e_time + 0.3 * 160.0) / spacing))
    i_tail = int(round((e_time + 0.8 * 160.0 + 0.2 * 160.0) / spacing))
    slope_head = (envelope[i_mid + 1] - envelope[i_mid]) / spacing
    slope_tail = (envelope[i_tail + 1] - envelope[i_tail]) / spacing
    assert slope_head < 0 and slope_tail < 0
    assert abs(slope_tail) < abs(slope_head)
