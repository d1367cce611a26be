"""
Sublevel-set persistence of a field on a 2-D lattice.

Components are tracked by a union-find sweep over sites in ascending order
(ties broken by row-major index); a site with no already-present neighbour
starts a component, and when components meet the one born later dies (elder
rule).  Holes are the components of the complement that do not reach the
edge of the window.  They are found by the same sweep over the negated field
with an extra "outside" vertex, present from the start and adjacent to every
boundary site.  A hole is born at the level where it is cut off from its
elder and dies at the local maximum that fills it.  Boundary maxima give
zero-persistence hole pairs, so there is exactly one hole pair per local
maximum, as there is one component pair per local minimum.
"""

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from ._jit import njit
from .grid import as_field


class Neighborhood(str, Enum):
    CROSS = "cross"
    SQUARE = "square"

    @property
    def offsets(self):
        if self is Neighborhood.CROSS:
            return ((-1, 0), (0, -1), (0, 1), (1, 0))
        return ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

    @property
    def k(self):
        return len(self.offsets)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


class FeatureKind(str, Enum):
    COMPONENT = "component"
    HOLE = "hole"


class PersistencePair(NamedTuple):
    birth: float
    death: float
    kind: FeatureKind
    birth_site: tuple
    death_site: tuple
    essential: bool = False


@dataclass(frozen=True)
class PersistenceDiagram:
    """Multiset of (birth, death) points of one feature kind.

    ``birth_sites``/``death_sites`` are ``(m, 2)`` lattice coordinates, or
    ``None`` for diagrams read back from birth/death columns only.  At most
    one point is ``essential``: the first-born component, whose death is
    pinned to the global maximum.
    """

    birth: np.ndarray
    death: np.ndarray
    kind: FeatureKind = FeatureKind.COMPONENT
    birth_sites: np.ndarray = None
    death_sites: np.ndarray = None
    essential: np.ndarray = None

    def __post_init__(self):
        b = np.asarray(self.birth, dtype=np.float64).reshape(-1)
        d = np.asarray(self.death, dtype=np.float64).reshape(-1)
        if b.shape != d.shape:
            raise ValueError("birth and death must have equal length")
        if np.any(b > d):
            raise ValueError("every point needs birth <= death")
        ess = np.zeros(b.shape, bool) if self.essential is None else np.asarray(self.essential, bool)
        object.__setattr__(self, "birth", b)
        object.__setattr__(self, "death", d)
        object.__setattr__(self, "essential", ess)
        object.__setattr__(self, "kind", FeatureKind(self.kind))

    @classmethod
    def from_points(cls, points, kind=FeatureKind.COMPONENT):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return cls(pts[:, 0], pts[:, 1], kind)

    @property
    def points(self):
        return np.column_stack([self.birth, self.death])

    @property
    def persistence(self):
        return self.death - self.birth

    def __len__(self):
        return self.birth.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            bs = tuple(int(v) for v in self.birth_sites[i]) if self.birth_sites is not None else None
            ds = tuple(int(v) for v in self.death_sites[i]) if self.death_sites is not None else None
            yield PersistencePair(
                float(self.birth[i]), float(self.death[i]), self.kind, bs, ds, bool(self.essential[i])
            )


# ---------------------------------------------------------------------------
# sweep kernel


@njit
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@njit
def _age(root, outside, pos, root_birth):
    if root == outside:
        return -1
    return pos[root_birth[root]]


@njit
def _sweep(order, rows, cols, offs, with_outside):
    """Elder-rule union-find over ``order``.

    Returns ``(birth_site, death_site, n_pairs)``.  A pair's death site is
    the site whose arrival caused the merge; the surviving unmerged
    component (if no outside vertex) gets death site -1.
    """
    n = rows * cols
    outside = n
    parent = np.full(n + 1, -1, dtype=np.int64)
    root_birth = np.full(n + 1, -1, dtype=np.int64)
    pos = np.empty(n + 1, dtype=np.int64)
    for t in range(n):
        pos[order[t]] = t
    if with_outside:
        parent[outside] = outside
        pos[outside] = -1
    pair_birth = np.empty(n + 1, dtype=np.int64)
    pair_death = np.empty(n + 1, dtype=np.int64)
    npairs = 0
    roots = np.empty(offs.shape[0] + 1, dtype=np.int64)
    for t in range(n):
        s = order[t]
        r = s // cols
        c = s - r * cols
        nroots = 0
        for q in range(offs.shape[0]):
            rr = r + offs[q, 0]
            cc = c + offs[q, 1]
            if rr < 0 or rr >= rows or cc < 0 or cc >= cols:
                continue
            ns = rr * cols + cc
            if parent[ns] < 0:
                continue
            roots[nroots] = _find(parent, ns)
            nroots += 1
        on_edge = r == 0 or r == rows - 1 or c == 0 or c == cols - 1
        if nroots == 0:
            # new component, born here
            parent[s] = s
            root_birth[s] = s
            cur = s
        else:
            # join the eldest neighbouring component
            eldest = roots[0]
            for q in range(1, nroots):
                if _age(roots[q], outside, pos, root_birth) < _age(eldest, outside, pos, root_birth):
                    eldest = roots[q]
            parent[s] = eldest
            cur = eldest
        if with_outside and on_edge:
            roots[nroots] = outside
            nroots += 1
        for q in range(nroots):
            other = _find(parent, roots[q])
            cur = _find(parent, cur)
            if other == cur:
                continue
            if _age(other, outside, pos, root_birth) < _age(cur, outside, pos, root_birth):
                old, young = other, cur
            else:
                old, young = cur, other
            pair_birth[npairs] = root_birth[young]
            pair_death[npairs] = s
            npairs += 1
            parent[young] = old
    if not with_outside:
        last = _find(parent, order[0])
        pair_birth[npairs] = root_birth[last]
        pair_death[npairs] = -1
        npairs += 1
    return pair_birth[:npairs], pair_death[:npairs], npairs


def _offsets_array(nbhd):
    return np.array(Neighborhood.parse(nbhd).offsets, dtype=np.int64)


def _filtration_order(values, descending=False):
    flat = values.ravel()
    key = -flat if descending else flat
    return np.argsort(key, kind="stable").astype(np.int64)


def _sites(idx, cols):
    idx = np.asarray(idx, dtype=np.int64)
    return np.column_stack([idx // cols, idx % cols])


def sublevel_components(fld, nbhd=Neighborhood.CROSS):
    """Component persistence pairs of the sublevel filtration."""
    fld = as_field(fld)
    nbhd = Neighborhood.parse(nbhd)
    z = fld.values
    flat = z.ravel()
    order = _filtration_order(z)
    pb, pd, _ = _sweep(order, fld.rows, fld.cols, _offsets_array(nbhd), False)
    ess = pd < 0
    pd = np.where(ess, order[-1], pd)
    return PersistenceDiagram(
        flat[pb],
        flat[pd],
        FeatureKind.COMPONENT,
        _sites(pb, fld.cols),
        _sites(pd, fld.cols),
        ess,
    )


def sublevel_holes(fld, nbhd=Neighborhood.CROSS, enclosed_only=False):
    """Hole persistence pairs of the sublevel filtration.

    Reported in sublevel convention: birth is the level at which the hole
    is cut off from the outside or an elder hole, death the local maximum
    at which it fills.  A boundary maximum touches the outside as soon as it
    appears and yields a pair born and dying at the same site;
    ``enclosed_only=True`` drops those, leaving only holes that were ever
    enclosed.
    """
    fld = as_field(fld)
    nbhd = Neighborhood.parse(nbhd)
    z = fld.values
    flat = z.ravel()
    order = _filtration_order(z, descending=True)
    pmax, psad, _ = _sweep(order, fld.rows, fld.cols, _offsets_array(nbhd), True)
    if enclosed_only:
        keep = pmax != psad
        pmax, psad = pmax[keep], psad[keep]
    return PersistenceDiagram(
        flat[psad],
        flat[pmax],
        FeatureKind.HOLE,
        _sites(psad, fld.cols),
        _sites(pmax, fld.cols),
        np.zeros(len(pmax), bool),
    )


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class BettiCurve:
    levels: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray

    def to_csv(self):
        lines = ["level,beta0,beta1"]
        lines += [f"{t!r},{b0},{b1}" for t, b0, b1 in zip(self.levels.tolist(), self.beta0, self.beta1)]
        return "\n".join(lines) + "\n"


def _alive(diagram, levels):
    b = np.sort(diagram.birth)
    d = np.sort(diagram.death)
    return np.searchsorted(b, levels, side="right") - np.searchsorted(d, levels, side="right")


def betti_curve(fld, nbhd=Neighborhood.CROSS, levels=None, components=None, holes=None):
    """Betti numbers of ``{z <= t}`` for each ``t`` in ``levels``.

    ``levels`` defaults to the distinct field values.  Precomputed diagrams
    may be passed to avoid recomputation.
    """
    fld = as_field(fld)
    if components is None:
        components = sublevel_components(fld, nbhd)
    if holes is None:
        holes = sublevel_holes(fld, nbhd)
    if levels is None:
        levels = np.unique(fld.values)
    levels = np.asarray(levels, dtype=np.float64)
    if np.any(np.diff(levels) < 0):
        raise ValueError("levels must be sorted ascending")
    ess = components.essential
    finite = PersistenceDiagram(components.birth[~ess], components.death[~ess])
    beta0 = _alive(finite, levels)
    if ess.any():
        beta0 = beta0 + (levels >= components.birth[ess][0]).astype(int)
    beta1 = _alive(holes, levels)
    return BettiCurve(levels, beta0.astype(np.int64), beta1.astype(np.int64))


class CountCurve(NamedTuple):
    levels: np.ndarray
    counts: np.ndarray
    se: np.ndarray
    by: str = "birth"

    def __call__(self, t):
        i = np.searchsorted(self.levels, np.asarray(t, dtype=float), side="right")
        return np.where(i > 0, self.counts[np.maximum(i - 1, 0)], 0)

    def to_csv(self):
        lines = ["level,count,se"]
        lines += [f"{t!r},{c},{s!r}" for t, c, s in zip(self.levels.tolist(), self.counts.tolist(), self.se.tolist())]
        return "\n".join(lines) + "\n"


def cumulative_count_curve(diagram, by="birth"):
    """Cumulative number of features born (or dead) at or below each level.

    ``se`` is the naive counting-process band ``sqrt(count)``.
    """
    by = str(by).lower()
    if by not in ("birth", "death"):
        raise ValueError("by must be 'birth' or 'death'")
    if len(diagram) == 0:
        raise ValueError("diagram is empty")
    vals = np.sort(diagram.birth if by == "birth" else diagram.death)
    levels, idx = np.unique(vals, return_index=True)
    counts = np.append(idx[1:], len(vals))
    return CountCurve(levels, counts.astype(np.int64), np.sqrt(counts), by)


def block_count_band(fld, nbhd=Neighborhood.CROSS, kind=FeatureKind.COMPONENT, levels=None,
                     subset_size=64, buffer=32, by="birth"):
    """Block-resampling standard error for a whole-field cumulative count.

    The field is tiled into subsets; the across-subset variance of each
    subset's cumulative count is scaled by ``full area / subset area``.
    Returns ``(levels, se)``.
    """
    from .grid import split_subsets

    fld = as_field(fld)
    kind = FeatureKind(kind)
    subs = split_subsets(fld, subset_size, buffer)
    if len(subs) < 2:
        raise ValueError("need at least two subsets for a block band")
    if levels is None:
        levels = np.unique(fld.values)
    levels = np.asarray(levels, dtype=float)
    fn = sublevel_components if kind is FeatureKind.COMPONENT else sublevel_holes
    curves = np.array([cumulative_count_curve(fn(s, nbhd), by)(levels) for s in subs], dtype=float)
    scale = fld.size / subs[0].size
    return levels, np.sqrt(scale * curves.var(axis=0, ddof=1))


def local_extrema_mask(fld, nbhd=Neighborhood.CROSS, which="maxima"):
    """Boolean mask of sites strictly above (maxima) or below (minima)
    every existing neighbour."""
    fld = as_field(fld)
    which = str(which).lower()
    if which not in ("maxima", "minima"):
        raise ValueError("which must be 'maxima' or 'minima'")
    z = fld.values if which == "maxima" else -fld.values
    R, C = z.shape
    pad = np.full((R + 2, C + 2), -np.inf)
    pad[1:-1, 1:-1] = z
    mask = np.ones_like(z, dtype=bool)
    for dr, dc in Neighborhood.parse(nbhd).offsets:
        mask &= z > pad[1 + dr: 1 + dr + R, 1 + dc: 1 + dc + C]
    return mask


def count_local_extrema(fld, nbhd=Neighborhood.CROSS, which="maxima"):
    """Sites strictly above (maxima) or below (minima) every existing neighbour."""
    return int(local_extrema_mask(fld, nbhd, which).sum())


# ---------------------------------------------------------------------------
# diagram CSV

DIAGRAM_COLUMNS = ("kind", "birth", "death", "birth_row", "birth_col", "death_row", "death_col")


def diagrams_to_csv(*diagrams):
    """Persistence pairs as CSV; site columns are blank when unknown."""
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIAGRAM_COLUMNS)
    for dg in diagrams:
        for p in dg:
            bs = p.birth_site or ("", "")
            ds = p.death_site or ("", "")
            w.writerow([p.kind.value, repr(p.birth), repr(p.death), *bs, *ds])
    return buf.getvalue()


def parse_diagram_csv(text):
    """Read pairs back, grouped by kind.  Only ``birth`` and ``death`` are
    required; a missing ``kind`` column means components.

    Returns ``{FeatureKind: PersistenceDiagram}``.
    """
    import csv
    import io

    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"birth", "death"} <= set(reader.fieldnames):
        raise ValueError("diagram CSV needs birth and death columns")
    site_cols = {"birth_row", "birth_col", "death_row", "death_col"} <= set(reader.fieldnames)
    rows = {}
    for line, rec in enumerate(reader, start=2):
        try:
            kind = FeatureKind(rec.get("kind") or FeatureKind.COMPONENT.value)
            b, d = float(rec["birth"]), float(rec["death"])
            sites = None
            if site_cols and rec["birth_row"] != "":
                sites = tuple(int(rec[c]) for c in ("birth_row", "birth_col", "death_row", "death_col"))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"bad diagram row at line {line}: {exc}") from None
        rows.setdefault(kind, []).append((b, d, sites))
    out = {}
    for kind, recs in rows.items():
        b = np.array([r[0] for r in recs])
        d = np.array([r[1] for r in recs])
        if all(r[2] is not None for r in recs):
            s = np.array([r[2] for r in recs], dtype=np.int64)
            out[kind] = PersistenceDiagram(b, d, kind, s[:, :2], s[:, 2:])
        else:
            out[kind] = PersistenceDiagram(b, d, kind)
    return out
