"""Overlap measures for image rectangles and yaw-only 3D boxes."""
from typing import List, Sequence, Tuple

from geometry.boxes import BBox3D, Rect2D, box_corners

Point = Tuple[float, float]

# Bottom corners (y negative) walked around the footprint.
_FOOTPRINT = (0, 4, 5, 1)


def iou_rect(a: Rect2D, b: Rect2D) -> float:
    """Intersection over union of two axis-aligned rectangles."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def _polygon_area_signed(points: Sequence[Point]) -> float:
    if len(points) < 3:
        return 0.0
    area = 0.0
    for i in range(len(points)):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % len(points)]
        area += x1 * y2 - x2 * y1
    return area / 2.0


def polygon_area(points: Sequence[Point]) -> float:
    return abs(_polygon_area_signed(points))


def clip_polygon(subject: List[Point], clip: List[Point]) -> List[Point]:
    """Sutherland-Hodgman clipping of `subject` by the convex polygon `clip`."""
    if not subject or not clip:
        return []
    is_ccw = _polygon_area_signed(clip) > 0

    def inside(p: Point, cp1: Point, cp2: Point) -> bool:
        cross = (cp2[0] - cp1[0]) * (p[1] - cp1[1]) - (cp2[1] - cp1[1]) * (p[0] - cp1[0])
        return cross >= -1e-12 if is_ccw else cross <= 1e-12

    def intersection(s: Point, e: Point, cp1: Point, cp2: Point) -> Point:
        x1, y1 = s
        x2, y2 = e
        x3, y3 = cp1
        x4, y4 = cp2
        den = (x1 - x2) * (y3 - y4) - (y1 - y2) * (x3 - x4)
        if den == 0.0:
            return e
        t = ((x1 - x3) * (y3 - y4) - (y1 - y3) * (x3 - x4)) / den
        return (x1 + t * (x2 - x1), y1 + t * (y2 - y1))

    output = list(subject)
    for i in range(len(clip)):
        candidates = output
        output = []
        if not candidates:
            break
        cp1 = clip[i]
        cp2 = clip[(i + 1) % len(clip)]
        s = candidates[-1]
        for e in candidates:
            if inside(e, cp1, cp2):
                if not inside(s, cp1, cp2):
                    output.append(intersection(s, e, cp1, cp2))
                output.append(e)
            elif inside(s, cp1, cp2):
                output.append(intersection(s, e, cp1, cp2))
            s = e
    return output


def footprint(box: BBox3D) -> List[Point]:
    """The box's floor polygon in the (x, z) plane."""
    corners = box_corners(box)
    return [(float(corners[i, 0]), float(corners[i, 2])) for i in _FOOTPRINT]


def _vertical_extent(box: BBox3D) -> Tuple[float, float]:
    ys = box_corners(box)[:, 1]
    return float(ys.min()), float(ys.max())


def iou_box3d(a: BBox3D, b: BBox3D) -> float:
    """Exact IoU of two yaw-only boxes: footprint intersection times vertical overlap."""
    a_lo, a_hi = _vertical_extent(a)
    b_lo, b_hi = _vertical_extent(b)
    overlap_h = min(a_hi, b_hi) - max(a_lo, b_lo)
    if overlap_h <= 0.0:
        return 0.0
    poly_a = footprint(a)
    poly_b = footprint(b)
    inter_area = polygon_area(clip_polygon(poly_a, poly_b))
    if inter_area <= 0.0:
        return 0.0
    vol_a = polygon_area(poly_a) * (a_hi - a_lo)
    vol_b = polygon_area(poly_b) * (b_hi - b_lo)
    inter = inter_area * overlap_h
    union = vol_a + vol_b - inter
    if union <= 0.0:
        return 0.0
    return max(0.0, min(1.0, inter / union))
