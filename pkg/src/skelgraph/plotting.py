"""Static SVG renderings: skeleton overlays and error-vs-time curves."""

from __future__ import annotations

import numpy as np

GT_COLOR = "#2ca02c"
PRED_COLOR = "#d62728"
PATH_COLOR = "#1f77b4"
SIZE = 400
MARGIN = 20


def _fmt(v: float) -> str:
    return f"{v:.3f}"


class _Projection:
    """Fixed orthographic view (x right, y up) fitted to every frame shown."""

    def __init__(self, *poses: np.ndarray):
        pts = np.concatenate([p.reshape(-1, 3)[:, :2] for p in poses])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
        self.center = (lo + hi) / 2
        self.scale = (SIZE - 2 * MARGIN) / span

    def __call__(self, p: np.ndarray) -> tuple[float, float]:
        x = SIZE / 2 + (p[0] - self.center[0]) * self.scale
        y = SIZE / 2 - (p[1] - self.center[1]) * self.scale
        return x, y


def _skeleton(pose: np.ndarray, bones, proj: _Projection, color: str, cls: str) -> list[str]:
    lines = []
    for a, b in bones:
        x1, y1 = proj(pose[a])
        x2, y2 = proj(pose[b])
        lines.append(f'  <line class="{cls}" x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
                     f'stroke="{color}" stroke-width="2"/>')
    return lines


def skeleton_svg(gt: np.ndarray, pred: np.ndarray, bones, proj: _Projection | None = None, title: str = "") -> str:
    """One frame: ground-truth and predicted skeletons, bones as segments."""
    proj = proj or _Projection(gt, pred)
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
            f'  <rect width="{SIZE}" height="{SIZE}" fill="white"/>']
    if title:
        body.append(f'  <text x="10" y="16" font-size="12">{title}</text>')
    body += _skeleton(gt, bones, proj, GT_COLOR, "gt")
    body += _skeleton(pred, bones, proj, PRED_COLOR, "pred")
    body.append("</svg>")
    return "\n".join(body) + "\n"


def skeleton_frames(gt: np.ndarray, pred: np.ndarray, bones, frames) -> dict[int, str]:
    """SVG per selected frame with one projection shared across all of them."""
    proj = _Projection(gt[frames], pred[frames])
    return {t: skeleton_svg(gt[t], pred[t], bones, proj, title=f"frame {t}") for t in frames}


def curves_svg(pose_curve, path_curve, fps: float | None = None) -> str:
    """MPJPE-vs-time plot (mm) of the pose and path curves."""
    pose, path = np.asarray(pose_curve, float), np.asarray(path_curve, float)
    n = len(pose)
    top = float(max(pose.max(initial=0), path.max(initial=0)))
    top = top * 1.1 if top > 0 else 1.0
    w, h = 2 * SIZE, SIZE

    def xy(i, v):
        x = MARGIN * 2 + (i / max(n - 1, 1)) * (w - 4 * MARGIN)
        y = h - MARGIN * 2 - (v / top) * (h - 4 * MARGIN)
        return _fmt(x), _fmt(y)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           f'  <rect width="{w}" height="{h}" fill="white"/>',
           f'  <text x="10" y="16" font-size="12">MPJPE (mm) vs {"time (s)" if fps else "step"}; max {top:.1f}</text>']
    for name, curve, color in (("pose", pose, PRED_COLOR), ("path", path, PATH_COLOR)):
        pts = [xy(i, v) for i, v in enumerate(curve)]
        out.append(f'  <polyline class="{name}" fill="none" stroke="{color}" stroke-width="2" '
                   f'points="{" ".join(f"{x},{y}" for x, y in pts)}"/>')
        out += [f'  <circle class="{name}" cx="{x}" cy="{y}" r="2" fill="{color}"/>' for x, y in pts]
    out.append("</svg>")
    return "\n".join(out) + "\n"
