"""Samples and discrete measures.

A :class:`Dataset` holds M feature/target pairs together with per-axis
sorted index arrays (``sorted_idx[d]`` lists row indices in increasing
order of feature coordinate d); the sorted arrays are what the space
partitioning slices, so they are built once per dataset.

A :class:`DiscreteMeasure` is either a uniformly weighted atom list in
the target space or the Lebesgue fallback on the unit target box, which
is what an empty cluster degenerates to.  ``clustered_empirical`` maps a
set of row indices to the corresponding measure:

    members nonempty  ->  (1/n) sum_i delta_{y_i}
    members empty     ->  Lebesgue on [0,1]^{d_Y}

Duplicate target values are kept as repeated atoms so that every
measure stays uniformly weighted.

Datasets round-trip through a fixed binary layout (little-endian):

    magic  b"CONDSET\\x00"   8 bytes
    version u32              currently 1
    M       u64
    d_X     u32
    d_Y     u32
    seed    u64              generator seed recorded in meta
    xs      M*d_X f64        row-major
    ys      M*d_Y f64        row-major

``sorted_idx`` is cheap to recompute and is rebuilt on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument

_MAGIC = b"CONDSET\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIQIIQ")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DatasetMeta:
    m: int
    d_x: int
    d_y: int
    seed: int


@dataclass(frozen=True)
class Dataset:
    """Immutable sample set; safe to share across concurrent readers."""

    xs: np.ndarray          # (M, d_X)
    ys: np.ndarray          # (M, d_Y)
    sorted_idx: np.ndarray  # (d_X, M) int64, argsort of each feature axis
    meta: DatasetMeta

    @property
    def m(self) -> int:
        return self.meta.m

    @property
    def d_x(self) -> int:
        return self.meta.d_x

    @property
    def d_y(self) -> int:
        return self.meta.d_y


def dataset_from_arrays(xs: np.ndarray, ys: np.ndarray, seed: int = 0) -> Dataset:
    """Build a Dataset (and its sorted index arrays) from raw samples."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 2 or ys.ndim != 2:
        raise InvalidArgument("xs and ys must be 2-d arrays")
    if xs.shape[0] != ys.shape[0]:
        raise InvalidArgument(
            f"xs and ys must have the same number of rows, got {xs.shape[0]} and {ys.shape[0]}")
    if xs.shape[0] < 1:
        raise InvalidArgument("a dataset needs at least one sample")
    m, d_x = xs.shape
    # Stable sort keeps tied coordinates in row order, which makes
    # partitioning deterministic.
    sorted_idx = np.stack([np.argsort(xs[:, d], kind="stable") for d in range(d_x)])
    sorted_idx.flags.writeable = False
    return Dataset(
        xs=_readonly(xs),
        ys=_readonly(ys),
        sorted_idx=sorted_idx,
        meta=DatasetMeta(m=m, d_x=d_x, d_y=ys.shape[1], seed=int(seed)),
    )


@dataclass(frozen=True)
class DiscreteMeasure:
    """Uniformly weighted atoms in the target space, or the Lebesgue fallback.

    ``points`` is an (n, d_Y) array for the atom variant and ``None`` for
    the Lebesgue variant (uniform on [0,1]^{d_Y}).
    """

    points: np.ndarray | None
    d_y: int

    @staticmethod
    def atoms(points: np.ndarray) -> "DiscreteMeasure":
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.shape[0] < 1:
            raise InvalidArgument("atom measure needs at least one atom")
        return DiscreteMeasure(points=_readonly(points), d_y=points.shape[1])

    @staticmethod
    def lebesgue_box(d_y: int) -> "DiscreteMeasure":
        return DiscreteMeasure(points=None, d_y=int(d_y))

    @property
    def is_lebesgue(self) -> bool:
        return self.points is None

    @property
    def n_atoms(self) -> int:
        return 0 if self.points is None else self.points.shape[0]

    def mean(self) -> np.ndarray:
        if self.is_lebesgue:
            return np.full(self.d_y, 0.5)
        return self.points.mean(axis=0)

    def cdf(self):
        """Return the CDF as a vectorized callable (d_Y = 1 only)."""
        if self.d_y != 1:
            raise InvalidArgument("cdf() is defined for one-dimensional targets only")
        if self.is_lebesgue:
            return lambda t: np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
        atoms = np.sort(self.points[:, 0])
        n = atoms.size

        def step(t):
            t = np.asarray(t, dtype=np.float64)
            return np.searchsorted(atoms, t, side="right") / n

        return step


def clustered_empirical(data: Dataset, members) -> DiscreteMeasure:
    """Empirical measure of the targets selected by ``members``.

    Empty member sets fall back to the Lebesgue measure on the unit
    target box.  Indices out of range raise :class:`InvalidArgument`.
    """
    idx = np.asarray(list(members) if not isinstance(members, np.ndarray) else members,
                     dtype=np.int64)
    if idx.size == 0:
        return DiscreteMeasure.lebesgue_box(data.d_y)
    if idx.min() < 0 or idx.max() >= data.m:
        raise InvalidArgument(
            f"member index out of range: dataset has {data.m} rows")
    return DiscreteMeasure.atoms(data.ys[idx])


@dataclass(frozen=True)
class EvalMeasure:
    """Discretization of the uniform evaluation measure on [0,1]^{d_X}."""

    points: np.ndarray  # (N, d_X), uniform weights 1/N

    @staticmethod
    def grid(d_x: int, resolution: int) -> "EvalMeasure":
        if resolution < 1:
            raise InvalidArgument("grid resolution must be >= 1")
        axes = [np.linspace(0.0, 1.0, resolution) for _ in range(d_x)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return EvalMeasure(points=_readonly(pts))

    @staticmethod
    def monte_carlo(d_x: int, n: int, rng: np.random.Generator) -> "EvalMeasure":
        if n < 1:
            raise InvalidArgument("monte carlo evaluation needs n >= 1")
        return EvalMeasure(points=_readonly(rng.uniform(0.0, 1.0, size=(n, d_x))))

    @property
    def n(self) -> int:
        return self.points.shape[0]


def save_dataset(data: Dataset, path) -> None:
    """Write the fixed binary layout documented in the module docstring."""
    header = _HEADER.pack(_MAGIC, _VERSION, data.m, data.d_x, data.d_y, data.meta.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data.xs, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data.ys, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    """Read a dataset written by :func:`save_dataset` (bit-exact round trip)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"file too short for header: {len(raw)} bytes")
    magic, version, m, d_x, d_y, seed = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported format version {version}, expected {_VERSION}")
    want = _HEADER.size + 8 * m * (d_x + d_y)
    if len(raw) != want:
        raise FormatError(f"file has {len(raw)} bytes, expected {want} (truncated or trailing data)")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    xs = body[: m * d_x].reshape(m, d_x)
    ys = body[m * d_x:].reshape(m, d_y)
    return dataset_from_arrays(xs, ys, seed=seed)
