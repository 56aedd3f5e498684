"""Report emission: summary CSVs, convergence curves, and contact sheets."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geom.camera import Camera
from .geom.io import save_png
from .geom.model import ObjectModel
from .geom.oracle import render_oracle
from .geom.pose import Pose
from .pipeline.record import RunRecord

_CSV_HEADER = "stage,step,name,value"


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_report(record: RunRecord, directory) -> list:
    """Write summary and curve CSVs for a run record; returns written paths.

    Emission is deterministic, so re-emitting the same record reproduces
    byte-identical files.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    summary = directory / "summary.csv"
    lines = [_CSV_HEADER]
    for row in record.metrics:
        lines.append(f"{row['stage']},{row['step']},{row['name']},"
                     f"{_fmt(row['value'])}")
    summary.write_text("\n".join(lines) + "\n")
    written.append(summary)

    curve = directory / "curve.csv"
    if record.curve:
        cols = list(record.curve[0].keys())
        lines = [",".join(cols)]
        for row in record.curve:
            lines.append(",".join(_fmt(row.get(c)) for c in cols))
        curve.write_text("\n".join(lines) + "\n")
    else:
        curve.write_text("step\n")
    written.append(curve)

    events = directory / "events.txt"
    events.write_text("\n".join(record.events) + ("\n" if record.events else ""))
    written.append(events)
    return written


def draw_line(image: np.ndarray, p0, p1, colour) -> None:
    """In-place anti-alias-free segment rasterisation."""
    h, w = image.shape[:2]
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]), 1)) * 2
    xs = np.linspace(p0[0], p1[0], n)
    ys = np.linspace(p0[1], p1[1], n)
    ix = np.round(xs).astype(int)
    iy = np.round(ys).astype(int)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    image[iy[ok], ix[ok]] = colour


_BOX_EDGES = [(0, 1), (0, 2), (0, 4), (1, 3), (1, 5), (2, 3), (2, 6),
              (3, 7), (4, 5), (4, 6), (5, 7), (6, 7)]


def overlay_box(image: np.ndarray, cam: Camera, pose: Pose,
                model: ObjectModel, colour=(0.1, 1.0, 0.2)) -> np.ndarray:
    """Model bounding box wireframe projected under a pose."""
    out = image.copy()
    lo, hi = model.bbox_min, model.bbox_max
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    pix = cam.project(pose.apply(corners))
    for a, b in _BOX_EDGES:
        draw_line(out, pix[a], pix[b], colour)
    return out


def contact_sheet(path, model: ObjectModel, cam: Camera, field, estimator,
                  views, crop, max_rows=4) -> None:
    """Rows of [observed view | field synthesis | prediction overlay]."""
    from .geom.oracle import project_centre
    rows = []
    for view in views[:max_rows]:
        synth = field.render_image(cam, view.pose_gt, mode="synthesis")
        pred, _ = estimator.estimate(view.image, cam,
                                     project_centre(cam, view.pose_gt), crop)
        overlay = overlay_box(view.image, cam, view.pose_gt, model,
                              colour=(0.1, 1.0, 0.2))
        overlay = overlay_box(overlay, cam, pred, model,
                              colour=(0.2, 0.4, 1.0))
        rows.append(np.concatenate(
            [view.image, np.clip(synth["C"], 0, 1), overlay], axis=1))
    if rows:
        save_png(path, np.concatenate(rows, axis=0))
