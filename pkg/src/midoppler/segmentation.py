"""Envelope segmentation and trace extraction.

The classical route converts the spectral region to grayscale, median
filters, thresholds (fixed or automatic two-class variance maximization),
opens, drops small connected components, keeps the flow side of the
baseline, and fills each column down to the baseline. Externally produced
masks (e.g. from a segmentation network) enter through ``import_mask`` and
go through the same trace reduction.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import SegmentationError
from .ingestion import CalibrationManifest, RasterImage, load_gray_image, save_gray_image

PADDED_MASK_SIZE = 1024  # externally produced masks may arrive zero-padded
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass(frozen=True)
class SegmentationParams:
    median_window: int = 3
    threshold_mode: str = "automatic"  # "automatic" | "fixed"
    fixed_threshold: int = 128
    open_radius: int = 1
    min_component_area: float = 25.0

    def __post_init__(self):
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError(f"median_window must be odd and >= 1, got {self.median_window}")
        if self.threshold_mode not in ("automatic", "fixed"):
            raise ValueError(f"threshold_mode must be automatic or fixed, got {self.threshold_mode!r}")
        if not (0 <= self.fixed_threshold <= 255):
            raise ValueError(f"fixed_threshold must be in [0, 255], got {self.fixed_threshold}")
        if self.open_radius < 0:
            raise ValueError(f"open_radius must be >= 0, got {self.open_radius}")
        if self.min_component_area < 0:
            raise ValueError(f"min_component_area must be >= 0, got {self.min_component_area}")


@dataclass
class EnvelopeMask:
    """Binary flow mask over the spectral region, 1 = flow signal."""

    cells: np.ndarray

    def __post_init__(self):
        if self.cells.ndim != 2:
            raise ValueError("mask cells must be a 2-D array")
        self.cells = self.cells.astype(bool, copy=False)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]


@dataclass
class EnvelopeTrace:
    """Per-column envelope velocity; gap_flags marks interpolated columns."""

    times: np.ndarray      # ms from spectral left edge, strictly increasing
    velocities: np.ndarray  # m/s, >= 0
    gap_flags: np.ndarray   # bool

    def __post_init__(self):
        if not (len(self.times) == len(self.velocities) == len(self.gap_flags)):
            raise ValueError("trace arrays must have equal length")

    def spacing(self) -> float:
        """Column spacing in ms (traces are uniformly sampled)."""
        if len(self.times) < 2:
            raise ValueError("trace has fewer than two samples")
        return float(self.times[1] - self.times[0])


def _region_slice(manifest: CalibrationManifest):
    x0, y0, x1, y1 = manifest.spectral_region
    return slice(y0, y1 + 1), slice(x0, x1 + 1)


def _region_shape(manifest: CalibrationManifest):
    x0, y0, x1, y1 = manifest.spectral_region
    return y1 - y0 + 1, x1 - x0 + 1


def otsu_threshold(gray: np.ndarray) -> int:
    """Two-class between-class variance maximization on a 0..255 histogram.

    Returns the lowest maximizing threshold t; foreground is gray > t.
    """
    levels = np.clip(np.round(gray), 0, 255).astype(np.uint8)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    w0 = np.cumsum(hist)
    total = w0[-1]
    moments = np.cumsum(hist * np.arange(256))
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    mu0 = np.divide(moments, w0, out=np.zeros(256), where=w0 > 0)
    mu1 = np.divide(moments[-1] - moments, w1, out=np.zeros(256), where=w1 > 0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return int(np.argmax(between))


def segment_envelope_threshold(
    image: RasterImage,
    manifest: CalibrationManifest,
    params: SegmentationParams | None = None,
) -> EnvelopeMask:
    """Classical threshold segmentation of the flow envelope.

    Output columns contain a single vertical run from the baseline to the
    envelope border (holes inside the flow signal are filled by
    construction).
    """
    params = params or SegmentationParams()
    rows, cols = _region_slice(manifest)
    region = image.pixels[rows, cols]
    if region.size == 0:
        raise SegmentationError("spectral region is empty")

    gray = region.astype(np.float32) @ _LUMA
    gray = kernels.column_median(gray, params.median_window)

    if params.threshold_mode == "fixed":
        threshold = float(params.fixed_threshold)
        foreground = gray >= threshold
    else:
        threshold = float(otsu_threshold(gray))
        foreground = gray > threshold
    if not foreground.any():
        raise SegmentationError(
            f"threshold {threshold:.0f} produced zero foreground pixels "
            f"(mode={params.threshold_mode})"
        )

    foreground = kernels.vertical_opening(foreground, params.open_radius)
    foreground = kernels.remove_small_components(
        foreground, int(round(params.min_component_area))
    )

    baseline_local = manifest.baseline_row - manifest.spectral_region[1]
    if manifest.flow_above_baseline:
        foreground[baseline_local + 1:, :] = False
    else:
        foreground[:baseline_local, :] = False

    filled = _fill_to_baseline(foreground, baseline_local, manifest.flow_above_baseline)
    if not filled.any():
        raise SegmentationError("no foreground remains after cleanup")
    return EnvelopeMask(filled)


def _fill_to_baseline(mask: np.ndarray, baseline_local: int, flow_above: bool) -> np.ndarray:
    """Per column, fill from the outermost foreground pixel to the baseline."""
    height, width = mask.shape
    out = np.zeros_like(mask)
    row_idx = np.arange(height)[:, None]
    has = mask.any(axis=0)
    if flow_above:
        outer = np.argmax(mask, axis=0)  # topmost True
        out[:] = has[None, :] & (row_idx >= outer[None, :]) & (row_idx <= baseline_local)
    else:
        outer = height - 1 - np.argmax(mask[::-1], axis=0)  # bottommost True
        out[:] = has[None, :] & (row_idx <= outer[None, :]) & (row_idx >= baseline_local)
    return out


def import_mask(path, manifest: CalibrationManifest) -> EnvelopeMask:
    """Load an externally produced grayscale mask (>=128 means foreground).

    The file must either match the spectral region exactly or be a
    zero-padded PADDED_MASK_SIZE square covering the full frame, in which
    case the spectral window is cropped back out.
    """
    gray = load_gray_image(path)
    height, width = _region_shape(manifest)
    if gray.shape == (height, width):
        return EnvelopeMask(gray >= 128)
    if gray.shape == (PADDED_MASK_SIZE, PADDED_MASK_SIZE):
        rows, cols = _region_slice(manifest)
        if rows.stop > PADDED_MASK_SIZE or cols.stop > PADDED_MASK_SIZE:
            raise SegmentationError(
                f"{path}: spectral region does not fit inside the "
                f"{PADDED_MASK_SIZE}x{PADDED_MASK_SIZE} padded frame"
            )
        return EnvelopeMask(gray[rows, cols] >= 128)
    raise SegmentationError(
        f"{path}: mask is {gray.shape[1]}x{gray.shape[0]}, expected "
        f"{width}x{height} (spectral region) or "
        f"{PADDED_MASK_SIZE}x{PADDED_MASK_SIZE} (padded frame)"
    )


def export_mask(path, mask: EnvelopeMask) -> None:
    save_gray_image(path, mask.cells.astype(np.uint8) * 255)


def mask_to_trace(mask: EnvelopeMask, manifest: CalibrationManifest) -> EnvelopeTrace:
    """Reduce a mask to the per-column envelope border velocity.

    Columns without foreground are linearly interpolated from their nearest
    measured neighbors (edge columns take the nearest value) and flagged.
    """
    height, width = _region_shape(manifest)
    if mask.cells.shape != (height, width):
        raise SegmentationError(
            f"mask is {mask.width}x{mask.height}, spectral region is {width}x{height}"
        )
    cells = mask.cells
    if not cells.any():
        raise SegmentationError("mask is entirely empty")

    _, y0, _, _ = manifest.spectral_region
    has = cells.any(axis=0)
    if manifest.flow_above_baseline:
        outer = np.argmax(cells, axis=0)
    else:
        outer = height - 1 - np.argmax(cells[::-1], axis=0)
    measured = np.nonzero(has)[0]
    rows_abs = y0 + outer[measured]
    velocities = (manifest.baseline_row - rows_abs) * manifest.velocity_scale
    if not manifest.flow_above_baseline:
        velocities = -velocities
    velocities = np.maximum(velocities.astype(np.float64), 0.0)

    cols = np.arange(width)
    full = np.interp(cols, measured, velocities)
    times = cols * manifest.time_scale
    return EnvelopeTrace(times=times.astype(np.float64), velocities=full, gap_flags=~has)


def smooth_trace(trace: EnvelopeTrace, window_ms: float) -> EnvelopeTrace:
    """Centered moving average over window_ms rounded to an odd column count.

    Windows are clipped at the trace edges, so a window wider than the trace
    degrades to the global mean. Time stamps and gap flags pass through.
    """
    if window_ms <= 0:
        raise ValueError(f"window_ms must be positive, got {window_ms}")
    n = len(trace.velocities)
    if n < 2:
        return EnvelopeTrace(trace.times.copy(), trace.velocities.copy(), trace.gap_flags.copy())
    cols = smoothing_columns(window_ms, trace.spacing())
    if cols == 1:
        return EnvelopeTrace(trace.times.copy(), trace.velocities.copy(), trace.gap_flags.copy())
    half = cols // 2
    sums = np.concatenate(([0.0], np.cumsum(trace.velocities)))
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx + half + 1, 0, n)
    smoothed = np.maximum((sums[hi] - sums[lo]) / (hi - lo), 0.0)
    return EnvelopeTrace(trace.times.copy(), smoothed, trace.gap_flags.copy())


def smoothing_columns(window_ms: float, spacing_ms: float) -> int:
    """Odd number of columns covering window_ms at the given spacing."""
    cols = max(1, int(round(window_ms / spacing_ms)))
    return cols if cols % 2 == 1 else cols + 1
