"""Axis-aligned bounding volume hierarchy for exact point-to-mesh distance queries."""
import numpy as np

LEAF_SIZE = 8


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point on triangle (a, b, c) to p, broadcast over leading dimensions.

    Vectorized form of Ericson's ClosestPtPointTriangle (Real-Time Collision Detection, 2004).
    """
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v_face = vb * denom
        w_face = vc * denom

    in_a = (d1 <= 0.0) & (d2 <= 0.0)
    in_b = (d3 >= 0.0) & (d4 <= d3)
    on_ab = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
    in_c = (d6 >= 0.0) & (d5 <= d6)
    on_ac = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0)
    on_bc = (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0)

    shape = np.broadcast_shapes(p.shape, a.shape)
    a, b, c = (np.broadcast_to(x, shape) for x in (a, b, c))
    ab, ac = b - a, c - a
    conditions = [in_a, in_b, on_ab, in_c, on_ac, on_bc]
    choices = [
        a,
        b,
        a + v_ab[..., None] * ab,
        c,
        a + w_ac[..., None] * ac,
        b + w_bc[..., None] * (c - b),
    ]
    result = a + ab * v_face[..., None] + ac * w_face[..., None]
    # Earlier regions take precedence, so apply them last.
    for cond, choice in zip(reversed(conditions), reversed(choices)):
        result = np.where(cond[..., None], choice, result)
    return result


def squared_distances_to_triangles(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """(P, T) squared distances from every point to every triangle."""
    p = points[:, None, :]
    closest = closest_points_on_triangles(p, triangles[None, :, 0], triangles[None, :, 1],
                                          triangles[None, :, 2])
    diff = p - closest
    return np.einsum("...i,...i->...", diff, diff)


def _box_squared_distance(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    delta = np.maximum(lo - points, 0.0) + np.maximum(points - hi, 0.0)
    return np.einsum("ij,ij->i", delta, delta)


class BVH:
    """Median-split AABB tree over triangles, queried in batches of points."""

    def __init__(self, triangles: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.triangles = np.asarray(triangles, dtype=float)
        self.leaf_size = leaf_size
        self.lo: list[np.ndarray] = []
        self.hi: list[np.ndarray] = []
        self.children: list[tuple[int, int] | None] = []
        self.spans: list[tuple[int, int]] = []
        centroids = self.triangles.mean(axis=1)
        order = np.arange(len(self.triangles))
        self.order = self._build(order, centroids)
        self.leaf_triangles = self.triangles[self.order]

    def _build(self, root_order: np.ndarray, centroids: np.ndarray) -> np.ndarray:
        ordered: list[np.ndarray] = []
        offset = 0
        # Iterative pre-order build so deep meshes cannot exhaust the recursion limit.
        stack = [(root_order, None, None)]
        while stack:
            idx, parent, side = stack.pop()
            node = len(self.lo)
            tri = self.triangles[idx]
            self.lo.append(tri.min(axis=(0, 1)))
            self.hi.append(tri.max(axis=(0, 1)))
            self.children.append(None)
            self.spans.append((0, 0))
            if parent is not None:
                left, right = self.children[parent]
                self.children[parent] = (node, right) if side == 0 else (left, node)
            if len(idx) <= self.leaf_size:
                self.spans[node] = (offset, offset + len(idx))
                ordered.append(idx)
                offset += len(idx)
                continue
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            sorted_idx = idx[np.argsort(c[:, axis], kind="stable")]
            half = len(sorted_idx) // 2
            self.children[node] = (-1, -1)
            # Push right first so the left subtree is laid out first.
            stack.append((sorted_idx[half:], node, 1))
            stack.append((sorted_idx[:half], node, 0))
        return np.concatenate(ordered)

    def squared_distances(self, points: np.ndarray) -> np.ndarray:
        """Exact minimum squared distance from each point to the triangle set."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        best = np.full(len(points), np.inf)
        stack = [(0, np.arange(len(points)))]
        while stack:
            node, idx = stack.pop()
            bound = _box_squared_distance(points[idx], self.lo[node], self.hi[node])
            idx = idx[bound < best[idx]]
            if not idx.size:
                continue
            children = self.children[node]
            if children is None:
                start, stop = self.spans[node]
                d2 = squared_distances_to_triangles(points[idx], self.leaf_triangles[start:stop])
                best[idx] = np.minimum(best[idx], d2.min(axis=1))
            else:
                stack.append((children[1], idx))
                stack.append((children[0], idx))
        return best

    def distances(self, points: np.ndarray) -> np.ndarray:
        return np.sqrt(self.squared_distances(points))
