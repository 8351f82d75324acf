"""ECG color-key extraction and QRS detection."""

import numpy as np
import pytest

from midoppler.ecg import EcgSignal, QrsParams, detect_qrs, extract_ecg
from midoppler.errors import EcgExtractionError
from midoppler.ingestion import RasterImage
from midoppler.synth import SynthParams, generate_synthetic

from conftest import make_manifest


def blank_image():
    return RasterImage(np.zeros((150, 200, 3), np.uint8))


def spike_signal(length, centers, height=30.0, half=4, base=20.0):
    """Flat signal with triangular spikes; returns amplitudes in pixel rows."""
    amp = np.full(length, base)
    for c in centers:
        for dc in range(-half, half + 1):
            if 0 <= c + dc < length:
                amp[c + dc] = max(amp[c + dc], base + height * (1 - abs(dc) / (half + 1)))
    return amp


def test_extract_centroid_of_two_rows(manifest):
    image = blank_image()
    # ecg_region rows 110..140; matches at absolute rows 120 and 122, col 50
    image.pixels[120, 50] = (0, 255, 0)
    image.pixels[122, 50] = (0, 255, 0)
    signal = extract_ecg(image, manifest)
    local_col = 50 - manifest.ecg_region[0]
    height = manifest.ecg_region[3] - manifest.ecg_region[1] + 1
    assert signal.samples[local_col] == pytest.approx((height - 1) - 11.0)
    assert signal.valid_flags[local_col]


def test_extract_without_matching_pixels_fails(manifest):
    with pytest.raises(EcgExtractionError):
        extract_ecg(blank_image(), manifest)


def test_extract_interpolates_unmatched_columns(manifest):
    image = blank_image()
    image.pixels[120, 20] = (0, 255, 0)
    image.pixels[124, 24] = (0, 255, 0)
    signal = extract_ecg(image, manifest)
    x0 = manifest.ecg_region[0]
    assert not signal.valid_flags[22 - x0]
    expected = (signal.samples[20 - x0] + signal.samples[24 - x0]) / 2
    assert signal.samples[22 - x0] == pytest.approx(expected)


def test_extract_recovers_rendered_polyline_subpixel():
    image, manifest, truth = generate_synthetic(SynthParams(seed=12))
    signal = extract_ecg(image, manifest)
    ey0, ey1 = manifest.ecg_region[1], manifest.ecg_region[3]
    height = ey1 - ey0 + 1
    expected = (height - 1) - (truth.ecg_rows - ey0)
    assert np.abs(signal.samples - expected).max() <= 0.5


# detect_qrs ------------------------------------------------------------------


def test_qrs_marks_land_on_spikes():
    centers = [50, 250, 450]
    manifest = make_manifest(
        spectral_region=(10, 10, 509, 99), ecg_region=(10, 110, 509, 140)
    )
    amp = spike_signal(500, centers)
    marks = detect_qrs(EcgSignal(amp, np.ones(500, bool)), QrsParams(), manifest)
    # oracle: amplitude argmax within +/-10 columns of each known spike
    expected_cols = [c - 10 + int(np.argmax(amp[c - 10:c + 11])) for c in centers]
    assert len(marks) == 3
    detected_cols = np.round(marks.times / manifest.time_scale).astype(int)
    assert all(abs(d - e) <= 1 for d, e in zip(detected_cols, expected_cols))


def test_flat_signal_yields_no_marks(manifest):
    signal = EcgSignal(np.full(180, 12.0), np.ones(180, bool))
    assert len(detect_qrs(signal, QrsParams(), manifest)) == 0


def test_refractory_keeps_taller_of_close_spikes(manifest):
    # 100 ms apart at 2.5 ms/col = 40 columns; refractory 200 ms
    amp = spike_signal(180, [60], height=20.0)
    amp = np.maximum(amp, spike_signal(180, [100], height=35.0))
    marks = detect_qrs(EcgSignal(amp, np.ones(180, bool)), QrsParams(), manifest)
    assert len(marks) == 1
    col = round(marks.times[0] / manifest.time_scale)
    assert abs(col - 100) <= 1


def test_detection_invariant_under_amplitude_scaling(manifest):
    rng = np.random.default_rng(41)
    for _ in range(25):
        centers = sorted(rng.choice(np.arange(20, 160), size=2, replace=False))
        if centers[1] - centers[0] < 85:  # keep above the refractory spacing
            centers[1] = centers[0] + 85
        amp = spike_signal(260, centers, height=float(rng.uniform(10, 60)))
        amp += rng.normal(0, 0.3, amp.shape)
        signal = EcgSignal(amp, np.ones(amp.size, bool))
        base = detect_qrs(signal, QrsParams(), manifest)
        for k in (0.25, 2.0, 8.0):
            scaled = detect_qrs(EcgSignal(amp * k, signal.valid_flags), QrsParams(), manifest)
            assert np.array_equal(base.times, scaled.times)


def test_marks_strictly_increasing_with_refractory_gap(manifest):
    rng = np.random.default_rng(42)
    params = QrsParams(refractory_ms=120.0)
    for _ in range(40):
        n_spikes = int(rng.integers(1, 6))
        centers = sorted(rng.choice(np.arange(10, 690), size=n_spikes, replace=False))
        amp = spike_signal(700, centers, height=float(rng.uniform(15, 50)))
        amp += rng.normal(0, 0.2, amp.shape)
        marks = detect_qrs(EcgSignal(amp, np.ones(700, bool)), params, manifest)
        gaps = np.diff(marks.times)
        assert (gaps > 0).all()
        assert (gaps >= params.refractory_ms).all()
