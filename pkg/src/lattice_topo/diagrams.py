"""Shape summaries of persistence diagrams and distances between them."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import maximum_bipartite_matching

from .homology import PersistenceDiagram


class DegenerateHullError(ValueError):
    """The retained points do not span a polygon."""

    def __init__(self, message, retained):
        super().__init__(message)
        self.retained = retained


def _as_points(diagram):
    if isinstance(diagram, PersistenceDiagram):
        return diagram.points
    pts = np.asarray(diagram, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 2)
    return pts.reshape(-1, 2)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points):
    """Strictly convex hull vertices, counter-clockwise (monotone chain).

    Collinear boundary points are not vertices.  Fewer than three vertices
    are returned for degenerate input.
    """
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).reshape(-1, 2).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)
    lower = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True)
class Peel:
    hull: np.ndarray
    retained: np.ndarray
    n_peels: int


def convex_peel(diagram, retain_fraction=0.9):
    """Peel convex hulls until the next peel would leave fewer than
    ``ceil(retain_fraction * n)`` points.

    Each peel removes every point coinciding with a vertex of the current
    hull.  Returns the hull of the last admissible set and that set (sorted
    lexicographically, so the result does not depend on input order).
    """
    if not 0.0 < retain_fraction <= 1.0:
        raise ValueError("retain_fraction must lie in (0, 1]")
    pts = _as_points(diagram)
    n = len(pts)
    threshold = math.ceil(retain_fraction * n - 1e-9)
    current = pts[np.lexsort((pts[:, 1], pts[:, 0]))] if n else pts
    peels = 0
    while len(current) > threshold:
        hull = convex_hull(current)
        if len(hull) < 3:
            break
        on_hull = (current[:, None, :] == hull[None, :, :]).all(-1).any(-1)
        nxt = current[~on_hull]
        if len(nxt) < threshold:
            break
        current = nxt
        peels += 1
    hull = convex_hull(current)
    if len(hull) < 3:
        raise DegenerateHullError(
            f"degenerate hull: {len(current)} retained point(s) do not span a polygon", current
        )
    return Peel(hull, current, peels)


def polygon_area(vertices):
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_perimeter(vertices):
    return float(np.hypot(*(np.roll(vertices, -1, axis=0) - vertices).T).sum())


def polygon_centroid(vertices):
    x, y = vertices[:, 0], vertices[:, 1]
    x1, y1 = np.roll(x, -1), np.roll(y, -1)
    cr = x * y1 - x1 * y
    a = 0.5 * cr.sum()
    return float(((x + x1) * cr).sum() / (6 * a)), float(((y + y1) * cr).sum() / (6 * a))


def filamentarity(perimeter, area):
    """``(P^2 - 4 pi A) / (P^2 + 4 pi A)``: 0 for a disc, 1 for a segment."""
    p2 = perimeter * perimeter
    fa = 4.0 * math.pi * area
    return (p2 - fa) / (p2 + fa)


@dataclass(frozen=True)
class PeelSummary:
    centroid_birth: float
    centroid_death: float
    perimeter: float
    area: float
    filamentarity: float
    retained_points: int
    n_peels: int = 0

    def to_dict(self):
        return asdict(self)


def summarize_hull(hull, retained, centroid="polygon", n_peels=0):
    area = abs(polygon_area(hull))
    perim = polygon_perimeter(hull)
    if centroid == "polygon":
        cb, cd = polygon_centroid(hull)
    elif centroid == "points":
        cb, cd = (float(v) for v in retained.mean(axis=0))
    else:
        raise ValueError("centroid must be 'polygon' or 'points'")
    return PeelSummary(cb, cd, perim, area, filamentarity(perim, area), len(retained), n_peels)


def peel_summary(diagram, retain_fraction=0.9, centroid="polygon"):
    """The five hull statistics of the final convex peel.

    ``centroid="polygon"`` gives the area centroid of the hull;
    ``"points"`` the mean of the retained points.
    """
    peel = convex_peel(diagram, retain_fraction)
    return summarize_hull(peel.hull, peel.retained, centroid, peel.n_peels)


# ---------------------------------------------------------------------------
# distances


def _cost_blocks(A, B):
    if len(A) and len(B):
        C = np.maximum(
            np.abs(A[:, None, 0] - B[None, :, 0]),
            np.abs(A[:, None, 1] - B[None, :, 1]),
        )
    else:
        C = np.zeros((len(A), len(B)))
    da = (A[:, 1] - A[:, 0]) / 2.0 if len(A) else np.zeros(0)
    db = (B[:, 1] - B[:, 0]) / 2.0 if len(B) else np.zeros(0)
    return C, da, db


def _perfect_matching_exists(C, da, db, eps):
    # left: A (n) then diagonal copies of B (m); right: B (m) then diagonal copies of A (n)
    n, m = C.shape
    rows, cols = np.nonzero(C <= eps)
    ia = np.nonzero(da <= eps)[0]
    jb = np.nonzero(db <= eps)[0]
    r = [rows, ia, n + jb, np.repeat(n + np.arange(m), n)]
    c = [cols, m + ia, jb, np.tile(m + np.arange(n), m)]
    r = np.concatenate(r)
    c = np.concatenate(c)
    size = n + m
    g = sparse.csr_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(size, size))
    match = maximum_bipartite_matching(g, perm_type="column")
    return bool(np.all(match >= 0))


def bottleneck_distance(A, B):
    """Bottleneck distance with L-infinity ground cost.

    Points may be matched to each other or to their diagonal projections
    (cost ``(death - birth) / 2``).  Exact: the answer is the smallest
    candidate cost admitting a perfect matching in the usual augmented
    bipartite graph, found by binary search.
    """
    A = _as_points(A)
    B = _as_points(B)
    if len(A) == 0 and len(B) == 0:
        return 0.0
    C, da, db = _cost_blocks(A, B)
    cand = np.unique(np.concatenate([C.ravel(), da, db, [0.0]]))
    lo, hi = 0, len(cand) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _perfect_matching_exists(C, da, db, cand[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(cand[lo])


def wasserstein_distance(A, B):
    """Minimum total (sum) L-infinity matching cost, diagonal allowed."""
    A = _as_points(A)
    B = _as_points(B)
    n, m = len(A), len(B)
    if n == 0 and m == 0:
        return 0.0
    C, da, db = _cost_blocks(A, B)
    big = 1e300
    M = np.zeros((n + m, m + n))
    M[:n, :m] = C
    M[:n, m:] = big
    M[np.arange(n), m + np.arange(n)] = da
    M[n:, :m] = big
    M[n + np.arange(m), np.arange(m)] = db
    M[n:, m:] = 0.0
    r, c = linear_sum_assignment(M)
    return float(M[r, c].sum())


def distance_matrix(diagrams, metric="bottleneck", threads=1):
    """Symmetric matrix of pairwise distances; cells may run on threads,
    the result does not depend on scheduling."""
    fn = {"bottleneck": bottleneck_distance, "wasserstein": wasserstein_distance}[metric]
    k = len(diagrams)
    cells = [(i, j) for i in range(k) for j in range(i + 1, k)]
    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(threads) as ex:
            vals = list(ex.map(lambda ij: fn(diagrams[ij[0]], diagrams[ij[1]]), cells))
    else:
        vals = [fn(diagrams[i], diagrams[j]) for i, j in cells]
    out = np.zeros((k, k))
    for (i, j), v in zip(cells, vals):
        out[i, j] = out[j, i] = v
    return out
