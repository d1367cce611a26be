"""Scalar fields on a rectangular lattice: I/O, detrending, normal scores,
isotropic correlation estimates and subset tiling."""

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre
from scipy.special import ndtri
from scipy.stats import rankdata

MAGIC = b"LTGF"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")


class FieldFormatError(ValueError):
    """Malformed grid file.  ``row``/``col`` are 0-based when known."""

    def __init__(self, message, row=None, col=None):
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + where)
        self.row = row
        self.col = col


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ScalarField:
    """Real values on a ``rows x cols`` lattice (row-major).

    ``origin`` and ``spacing`` are carried along for provenance only; no
    computation in this package looks at them.
    """

    values: np.ndarray
    origin: tuple = (0.0, 0.0)
    spacing: tuple = (1.0, 1.0)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.size == 0:
            raise ValueError("field values must be a non-empty 2-D array")
        if not np.all(np.isfinite(v)):
            r, c = np.argwhere(~np.isfinite(v))[0]
            raise FieldFormatError("non-finite field value", int(r), int(c))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def with_values(self, values, **meta):
        return ScalarField(values, self.origin, self.spacing, {**self.meta, **meta})

    def __neg__(self):
        return self.with_values(-self.values)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))

    __hash__ = None


def as_field(obj):
    if isinstance(obj, ScalarField):
        return obj
    return ScalarField(np.asarray(obj, dtype=np.float64))


# ---------------------------------------------------------------------------
# I/O


def _parse_header(line):
    body = line.lstrip("#").strip()
    dims = {}
    for tok in body.replace(",", " ").split():
        if "=" not in tok:
            raise FieldFormatError(f"malformed header token {tok!r}", 0)
        key, _, val = tok.partition("=")
        try:
            dims[key.strip().lower()] = int(val)
        except ValueError:
            raise FieldFormatError(f"malformed header value {tok!r}", 0) from None
    if set(dims) != {"rows", "cols"} or dims["rows"] < 1 or dims["cols"] < 1:
        raise FieldFormatError("header must be '# rows=R cols=C' with positive R, C", 0)
    return dims["rows"], dims["cols"]


def parse_csv_grid(text):
    lines = text.splitlines()
    declared = None
    start = 0
    if lines and lines[0].lstrip().startswith("#"):
        declared = _parse_header(lines[0])
        start = 1
    rows = []
    for ln, line in enumerate(lines[start:], start=start):
        if not line.strip():
            continue
        row = []
        for cn, tok in enumerate(line.split(",")):
            try:
                val = float(tok)
            except ValueError:
                raise FieldFormatError(f"non-numeric entry {tok.strip()!r}", len(rows), cn) from None
            if not math.isfinite(val):
                raise FieldFormatError("NaN/Inf entry", len(rows), cn)
            row.append(val)
        if rows and len(row) != len(rows[0]):
            raise FieldFormatError(
                f"dimension mismatch: {len(row)} values, expected {len(rows[0])}", len(rows)
            )
        rows.append(row)
    if not rows:
        raise FieldFormatError("empty grid")
    arr = np.array(rows, dtype=np.float64)
    if declared is not None:
        if arr.shape[0] != declared[0]:
            raise FieldFormatError(
                f"dimension mismatch: header declares {declared[0]} rows, found {arr.shape[0]}",
                min(arr.shape[0], declared[0]),
            )
        if arr.shape[1] != declared[1]:
            raise FieldFormatError(
                f"dimension mismatch: header declares {declared[1]} cols, found {arr.shape[1]}",
                0,
                min(arr.shape[1], declared[1]),
            )
    return ScalarField(arr)


def parse_binary_grid(data):
    if len(data) < _HEADER.size:
        raise FieldFormatError("truncated binary header")
    magic, version, reserved, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    if version != VERSION or reserved != 0:
        raise FieldFormatError(f"unsupported header (version {version}, reserved {reserved})")
    if rows < 1 or cols < 1:
        raise FieldFormatError("header dimensions must be positive")
    expected = rows * cols * 8
    payload = data[_HEADER.size:]
    if len(payload) != expected:
        raise FieldFormatError(
            f"dimension mismatch: {len(payload) // 8} values for declared {rows}x{cols} grid",
            min(len(payload) // 8 // cols, rows),
        )
    arr = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
    bad = ~np.isfinite(arr)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise FieldFormatError("NaN/Inf entry", int(r), int(c))
    return ScalarField(arr)


def load_field(source):
    """Read a grid from a path or bytes.  The binary format is sniffed from
    its magic bytes; anything else is parsed as CSV."""
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = Path(source).read_bytes()
    if data[:4] == MAGIC:
        return parse_binary_grid(data)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise FieldFormatError("not a binary grid and not UTF-8 text") from None
    return parse_csv_grid(text)


def field_to_bytes(fld):
    fld = as_field(fld)
    header = _HEADER.pack(MAGIC, VERSION, 0, fld.rows, fld.cols)
    return header + np.ascontiguousarray(fld.values, dtype="<f8").tobytes()


def field_to_csv(fld, header=True):
    fld = as_field(fld)
    buf = io.StringIO()
    if header:
        buf.write(f"# rows={fld.rows} cols={fld.cols}\n")
    for row in fld.values:
        buf.write(",".join(repr(float(v)) for v in row))
        buf.write("\n")
    return buf.getvalue()


def save_field(fld, path, fmt=None):
    """Write ``fld``; ``fmt`` is ``"csv"`` or ``"binary"`` (default: by
    extension, ``.csv``/``.txt`` meaning CSV)."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() in (".csv", ".txt") else "binary"
    if fmt == "csv":
        path.write_text(field_to_csv(fld))
    elif fmt == "binary":
        path.write_bytes(field_to_bytes(fld))
    else:
        raise ValueError(f"unknown grid format {fmt!r}")
    return path


# ---------------------------------------------------------------------------
# detrending and marginal transform


def _unit_coords(n):
    if n == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n)


def polynomial_design(rows, cols, degree):
    """Tensor-product Legendre design matrix, ``(rows*cols, (degree+1)**2)``.

    Spans the same space as ``{x**i * y**j : 0 <= i, j <= degree}`` on
    coordinates rescaled to [-1, 1].
    """
    y, x = np.meshgrid(_unit_coords(rows), _unit_coords(cols), indexing="ij")
    return legendre.legvander2d(x.ravel(), y.ravel(), [degree, degree])


def detrend_polynomial(fld, degree=4):
    """Residuals after a least-squares tensor-product polynomial surface."""
    fld = as_field(fld)
    if degree < 0:
        raise ValueError("degree must be non-negative")
    nb = (degree + 1) ** 2
    if nb > fld.size:
        raise RankDeficientError(f"{nb} basis terms exceed {fld.size} lattice sites")
    X = polynomial_design(fld.rows, fld.cols, degree)
    z = fld.values.ravel()
    coef, _, rank, sv = np.linalg.lstsq(X, z, rcond=None)
    if rank < nb:
        raise RankDeficientError(
            f"polynomial design of degree {degree} on a {fld.rows}x{fld.cols} grid "
            f"has rank {rank} < {nb}"
        )
    resid = z - X @ coef
    return fld.with_values(resid.reshape(fld.shape), detrend_degree=degree)


def marginal_gaussianize(fld):
    """Normal scores: ``ndtri((rank - 0.5) / n)`` with mid-ranks for ties."""
    fld = as_field(fld)
    n = fld.size
    ranks = rankdata(fld.values.ravel(), method="average")
    return fld.with_values(ndtri((ranks - 0.5) / n).reshape(fld.shape), gaussianized=True)


# ---------------------------------------------------------------------------
# isotropic correlation


@dataclass(frozen=True)
class EmpiricalCorrelation:
    lags: np.ndarray
    estimates: np.ndarray
    counts: np.ndarray

    def at(self, lag):
        i = np.searchsorted(self.lags, lag)
        if i >= len(self.lags) or self.lags[i] != lag:
            raise KeyError(lag)
        return float(self.estimates[i])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lag", "estimate", "pairs"])
        for lag, est, cnt in zip(self.lags, self.estimates, self.counts):
            w.writerow([f"{lag:g}", repr(float(est)), int(cnt)])
        return buf.getvalue()


def _xcorr(a, b, shape):
    fa = np.fft.rfft2(a, shape)
    fb = np.fft.rfft2(b, shape)
    return np.fft.irfft2(np.conj(fa) * fb, shape)


def displacement_sums(values, max_shift):
    """Per-displacement pair sums ``(n, Sa, Sb, Saa, Sbb, Sab)``.

    For displacement ``(dy, dx)`` (both in ``[-max_shift, max_shift]``) the
    pairs are ``(z[p], z[p + (dy, dx)])`` over all ``p`` with both sites in
    the grid.  Arrays are indexed ``[dy + max_shift, dx + max_shift]``.
    """
    z = np.asarray(values, dtype=np.float64)
    R, C = z.shape
    shape = (2 * R, 2 * C)
    one = np.ones_like(z)
    n = _xcorr(one, one, shape)
    sa = _xcorr(z, one, shape)
    sb = _xcorr(one, z, shape)
    saa = _xcorr(z * z, one, shape)
    sbb = _xcorr(one, z * z, shape)
    sab = _xcorr(z, z, shape)
    idx_y = np.arange(-max_shift, max_shift + 1) % shape[0]
    idx_x = np.arange(-max_shift, max_shift + 1) % shape[1]
    take = np.ix_(idx_y, idx_x)
    out = [np.rint(n[take])] + [s[take] for s in (sa, sb, saa, sbb, sab)]
    return tuple(out)


def empirical_correlation(fld, max_lag=50, binning="nearest"):
    """Isotropic product-moment correlation by integer lag.

    With ``binning="nearest"`` pairs at Euclidean pixel distance ``d`` are
    pooled into lag ``round(d)`` (so diagonal neighbours count at lag 1).
    ``"exact"`` keeps only pairs whose distance is exactly the integer lag.
    Each unordered pair enters in both orders, so the two margins of the
    pooled sample coincide.  ``counts`` are unordered pairs.
    """
    if binning not in ("nearest", "exact"):
        raise ValueError("binning must be 'nearest' or 'exact'")
    fld = as_field(fld)
    if max_lag <= 0:
        raise ValueError("max_lag must be positive")
    if max_lag >= min(fld.rows, fld.cols):
        raise ValueError("max_lag must be smaller than both grid dimensions")
    z = fld.values
    sd = z.std()
    z = (z - z.mean()) / (sd if sd > 0 else 1.0)
    m = int(math.floor(max_lag))
    n, sa, sb, saa, sbb, sab = displacement_sums(z, m)
    dy, dx = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    lag = np.floor(np.hypot(dy, dx) + 0.5).astype(int)
    ok = (lag <= max_lag) & (lag >= 1) & (n > 0)
    if binning == "exact":
        ok &= dy * dy + dx * dx == lag * lag
    nbins = m + 1

    def binsum(a):
        return np.bincount(lag[ok], weights=a[ok], minlength=nbins)

    N, Sa, Sb, Saa, Sbb, Sab = (binsum(a) for a in (n, sa, sb, saa, sbb, sab))
    lags = [0]
    est = [1.0]
    cnt = [fld.size]
    for d in range(1, nbins):
        if N[d] <= 0:
            continue
        num = N[d] * Sab[d] - Sa[d] * Sb[d]
        den = math.sqrt(max(N[d] * Saa[d] - Sa[d] ** 2, 0.0) * max(N[d] * Sbb[d] - Sb[d] ** 2, 0.0))
        r = num / den if den > 0 else 0.0
        lags.append(d)
        est.append(float(np.clip(r, -1.0, 1.0)))
        cnt.append(int(round(N[d] / 2)))
    return EmpiricalCorrelation(np.array(lags, dtype=float), np.array(est), np.array(cnt, dtype=np.int64))


# ---------------------------------------------------------------------------
# subsets


def subset_offsets(shape, subset_size=64, buffer=32):
    """Top-left corners of the ``g_r x g_c`` subset arrangement."""
    rows, cols = shape
    if subset_size < 1 or buffer < 0:
        raise ValueError("subset_size must be positive and buffer non-negative")
    step = subset_size + buffer
    gr = (rows + buffer) // step
    gc = (cols + buffer) // step
    if gr < 1 or gc < 1:
        raise ValueError(f"{rows}x{cols} field is too small for a {subset_size}x{subset_size} subset")
    return [(i * step, j * step) for i in range(gr) for j in range(gc)]


def split_subsets(fld, subset_size=64, buffer=32):
    fld = as_field(fld)
    out = []
    for r0, c0 in subset_offsets(fld.shape, subset_size, buffer):
        sub = fld.values[r0: r0 + subset_size, c0: c0 + subset_size]
        out.append(fld.with_values(sub, subset_offset=(r0, c0)))
    return out
