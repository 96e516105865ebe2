import csv
import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np

from core.errors import PersistenceError
from tools.drift_simulator import CoincidenceTrace
from tools.histogram_fit import fit_gaussian_histogram
from tools.visibility_estimator import HistogramData
from utils.persistence import save_trace, write_json

# ============================================================================
# 설정 및 초기화
# ============================================================================

logger = logging.getLogger(__name__)

PlotKind = Literal["fringe-trace", "count-histogram", "gamma-curve", "visibility-vs-bandwidth", "cd-histogram"]

SVG_WIDTH = 640
SVG_HEIGHT = 400
MARGIN = 50
SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e")


# ============================================================================
# CSV
# ============================================================================

def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    except OSError as e:
        logger.error(f"❌ [CSV저장] 오류 발생: {path} ({e})")
        raise PersistenceError(f"CSV 저장 실패: {path} ({e})") from e
    return path


# ============================================================================
# SVG (선/막대 기본 도형)
# ============================================================================

def _fmt(value: float) -> str:
    return f"{value:.3f}"


class _Canvas:
    def __init__(self, title: str, x_range: tuple[float, float], y_range: tuple[float, float],
                 x_label: str, y_label: str):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0
        self.root = ET.Element("svg", {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(SVG_WIDTH), "height": str(SVG_HEIGHT),
            "viewBox": f"0 0 {SVG_WIDTH} {SVG_HEIGHT}",
        })
        ET.SubElement(self.root, "rect", {"width": str(SVG_WIDTH), "height": str(SVG_HEIGHT), "fill": "white"})
        self._text(SVG_WIDTH / 2, MARGIN / 2, title, anchor="middle")
        self._axes(x_label, y_label)

    def px(self, x: float) -> float:
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (SVG_WIDTH - 2 * MARGIN)

    def py(self, y: float) -> float:
        return SVG_HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (SVG_HEIGHT - 2 * MARGIN)

    def _text(self, x: float, y: float, label: str, anchor: str = "start") -> None:
        node = ET.SubElement(self.root, "text", {"x": _fmt(x), "y": _fmt(y), "font-size": "12",
                                                 "text-anchor": anchor, "font-family": "sans-serif"})
        node.text = label

    def _axes(self, x_label: str, y_label: str) -> None:
        left, right = MARGIN, SVG_WIDTH - MARGIN
        top, bottom = MARGIN, SVG_HEIGHT - MARGIN
        ET.SubElement(self.root, "polyline", {
            "points": f"{left},{top} {left},{bottom} {right},{bottom}",
            "fill": "none", "stroke": "black",
        })
        self._text((left + right) / 2, SVG_HEIGHT - 12, x_label, anchor="middle")
        self._text(8, top - 8, y_label)
        self._text(left, bottom + 16, f"{self.x0:.4g}", anchor="middle")
        self._text(right, bottom + 16, f"{self.x1:.4g}", anchor="middle")
        self._text(left - 4, bottom, f"{self.y0:.4g}", anchor="end")
        self._text(left - 4, top + 4, f"{self.y1:.4g}", anchor="end")

    def line(self, xs, ys, color: str) -> None:
        points = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in zip(xs, ys) if np.isfinite(y))
        ET.SubElement(self.root, "polyline", {"points": points, "fill": "none", "stroke": color,
                                              "stroke-width": "1.5"})

    def markers(self, xs, ys, color: str) -> None:
        for x, y in zip(xs, ys):
            ET.SubElement(self.root, "circle", {"cx": _fmt(self.px(x)), "cy": _fmt(self.py(y)),
                                                "r": "3", "fill": color})

    def bars(self, lefts, rights, heights, color: str) -> None:
        for a, b, h in zip(lefts, rights, heights):
            ET.SubElement(self.root, "rect", {
                "x": _fmt(self.px(a)), "y": _fmt(self.py(h)),
                "width": _fmt(max(self.px(b) - self.px(a), 0.0)),
                "height": _fmt(max(self.py(self.y0) - self.py(h), 0.0)),
                "fill": color, "fill-opacity": "0.5", "stroke": "none",
            })

    def save(self, path: Path) -> Path:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            ET.ElementTree(self.root).write(path, encoding="utf-8", xml_declaration=True)
        except OSError as e:
            logger.error(f"❌ [SVG저장] 오류 발생: {path} ({e})")
            raise PersistenceError(f"SVG 저장 실패: {path} ({e})") from e
        return path


def _span(*arrays) -> tuple[float, float]:
    values = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays])
    values = values[np.isfinite(values)]
    return float(values.min()), float(values.max())


# ============================================================================
# 종류별 출력
# ============================================================================

def _emit_fringe_trace(trace: CoincidenceTrace, base: Path) -> list[Path]:
    csv_path, json_path = save_trace(trace, base.with_suffix(".csv"))
    times, counts = trace.times(), trace.counts_array()
    canvas = _Canvas("fringe trace", _span(times), (0.0, float(counts.max())), "time (s)", "counts")
    canvas.line(times, counts, SERIES_COLORS[0])
    return [csv_path, json_path, canvas.save(base.with_suffix(".svg"))]


def _emit_histogram(histogram: HistogramData, base: Path, title: str, x_label: str) -> list[Path]:
    rows = list(zip(histogram.bin_left, histogram.bin_right, histogram.count, histogram.fit_value))
    csv_path = _write_csv(base.with_suffix(".csv"), ["bin_left", "bin_right", "count", "fit_value"], rows)
    canvas = _Canvas(title, _span(histogram.bin_left, histogram.bin_right),
                     (0.0, max(_span(histogram.count, histogram.fit_value)[1], 1.0)), x_label, "occurrences")
    canvas.bars(histogram.bin_left, histogram.bin_right, histogram.count, SERIES_COLORS[0])
    centers = [(a + b) / 2 for a, b in zip(histogram.bin_left, histogram.bin_right)]
    canvas.line(centers, histogram.fit_value, SERIES_COLORS[1])
    return [csv_path, canvas.save(base.with_suffix(".svg"))]


def _emit_curves(series: dict[str, tuple[Sequence[float], Sequence[float]]], base: Path,
                 title: str, x_label: str, y_label: str, marker_series: Sequence[str] = ()) -> list[Path]:
    paths = []
    all_x = [np.asarray(x, dtype=float) for x, _ in series.values()]
    all_y = [np.asarray(y, dtype=float) for _, y in series.values()]
    y_low, y_high = _span(*all_y)
    canvas = _Canvas(title, _span(*all_x), (min(y_low, 0.0), y_high), x_label, y_label)
    for index, (name, (xs, ys)) in enumerate(sorted(series.items())):
        if len(xs) == 0:
            raise PersistenceError(f"빈 데이터 시리즈: {name}")
        paths.append(_write_csv(base.with_name(f"{base.name}_{name}.csv"), ["x", "y"], list(zip(xs, ys))))
        color = SERIES_COLORS[index % len(SERIES_COLORS)]
        if name in marker_series:
            canvas.markers(xs, ys, color)
        else:
            canvas.line(xs, ys, color)
    paths.append(canvas.save(base.with_suffix(".svg")))
    return paths


def _emit_cd_histogram(samples: Sequence[float], base: Path) -> list[Path]:
    fit = fit_gaussian_histogram(samples)
    histogram = HistogramData(bin_left=fit.bin_edges[:-1], bin_right=fit.bin_edges[1:],
                              count=fit.counts, fit_value=fit.fit_values)
    paths = _emit_histogram(histogram, base, "CD histogram", "D (ps/(nm km))")
    paths.append(write_json(base.with_name(f"{base.name}_fit.json"), {
        "schema": 1,
        "mean": fit.mean,
        "std": fit.std,
        "mean_error": fit.mean_error,
        "sample_mean": fit.sample_mean,
        "sample_std": fit.sample_std,
        "n_samples": fit.n_samples,
        "fit_converged": fit.fit_converged,
    }))
    return paths


def _is_empty(data: Any) -> bool:
    if data is None:
        return True
    if isinstance(data, CoincidenceTrace):
        return len(data) == 0
    if isinstance(data, HistogramData):
        return len(data.count) == 0
    if isinstance(data, dict):
        return len(data) == 0 or all(len(x) == 0 for x, _ in data.values())
    return len(data) == 0


def emit_plot_data(kind: PlotKind, data: Any, output_dir: str | Path, stem: str | None = None) -> list[Path]:
    """플롯 데이터를 열 CSV 와 SVG 로 저장

    data 형식: fringe-trace → CoincidenceTrace, count-histogram → HistogramData,
    gamma-curve / visibility-vs-bandwidth → {이름: (x, y)}, cd-histogram → D 표본 리스트.
    """
    if _is_empty(data):
        raise PersistenceError(f"빈 데이터셋은 출력할 수 없습니다: {kind}")
    base = Path(output_dir) / "plots" / (stem or kind)

    if kind == "fringe-trace":
        paths = _emit_fringe_trace(data, base)
    elif kind == "count-histogram":
        paths = _emit_histogram(data, base, "count histogram", "counts per bin")
    elif kind == "gamma-curve":
        paths = _emit_curves(data, base, "visibility vs gamma", "gamma", "V")
    elif kind == "visibility-vs-bandwidth":
        paths = _emit_curves(data, base, "visibility vs bandwidth", "sigma (nm)", "V", marker_series=("measured",))
    elif kind == "cd-histogram":
        paths = _emit_cd_histogram(data, base)
    else:
        raise PersistenceError(f"알 수 없는 플롯 종류: {kind}")

    logger.info(f"✅ 플롯 데이터 저장 [{kind}]: {len(paths)}개 파일")
    return paths
