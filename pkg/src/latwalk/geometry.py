"""Discrete geometry on Z^2 / Z^3: windows, dyadic boxes, circles, annuli,
connectivity, openings, and cut sets.

Conventions used throughout the package (chosen once, documented here):

* A *window* is an axis-aligned box of lattice sites with inclusive corners.
  Everything outside the window is treated as free space, so "infinity" means
  the window edge.
* Centers may sit on half-integer points (box centers do), so all distance
  tests are carried out in *doubled coordinates*: a site ``x`` and a doubled
  center ``c2`` compare via ``D2 = sum((2*x - c2)**2)`` against ``4*v**2``.
  Every test below is an exact integer comparison — no floating point.
* The discrete circle of radius ``v`` is the band of sites with Euclidean
  distance in ``[v-1, v]``, i.e. ``4*(v-1)**2 <= D2 <= 4*v**2``.  The band is
  one site thick, and a 4-neighbor step cannot jump it (for ``v >= 1``).
* Complement connectivity is 4-neighbor in 2D and 6-neighbor in 3D.  Path
  masks are plain site sets; this is a documented approximation of continuum
  disconnection, adequate at the oversampled resolutions used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage as ndi


@lru_cache(maxsize=None)
def plus_structure(dim: int) -> np.ndarray:
    """Structuring element for 4-neighbor (2D) / 6-neighbor (3D) adjacency.

    The array is cached and shared; treat it as read-only.
    """
    return ndi.generate_binary_structure(dim, 1)


# ---------------------------------------------------------------------------
# Windows and masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Axis-aligned box of lattice sites, corners inclusive."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("corner dimensions differ")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"empty window: lo={self.lo} hi={self.hi}")

    @classmethod
    def centered(cls, halfwidth: int, dim: int = 2) -> "Window":
        return cls((-halfwidth,) * dim, (halfwidth,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    def grids(self) -> list[np.ndarray]:
        """Open coordinate grids (site units), one array per axis."""
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        return list(np.ix_(*axes))

    def clip_sites(self, sites: np.ndarray) -> np.ndarray:
        """Keep the rows of an (m, dim) site array that lie in the window."""
        sites = np.asarray(sites)
        lo = np.array(self.lo)
        hi = np.array(self.hi)
        keep = np.all((sites >= lo) & (sites <= hi), axis=1)
        return sites[keep]

    def index(self, sites: np.ndarray) -> tuple[np.ndarray, ...]:
        """Array indices for an (m, dim) site array (caller clips first)."""
        sites = np.asarray(sites)
        return tuple(sites[:, a] - self.lo[a] for a in range(self.dim))

    def edge_mask(self) -> np.ndarray:
        """Boolean mask of sites on the window boundary."""
        m = np.zeros(self.shape, dtype=bool)
        for a in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[a] = 0
            m[tuple(sl)] = True
            sl[a] = -1
            m[tuple(sl)] = True
        return m


@dataclass
class GridMask:
    """Occupied-site mask over a window.

    The complement (free space) is traversed with 4-/6-neighbor adjacency.
    """

    window: Window
    occupied: np.ndarray

    def __post_init__(self):
        self.occupied = np.asarray(self.occupied, dtype=bool)
        if self.occupied.shape != self.window.shape:
            raise ValueError(
                f"mask shape {self.occupied.shape} != window shape {self.window.shape}"
            )

    @property
    def dim(self) -> int:
        return self.window.dim

    def free(self) -> np.ndarray:
        return ~self.occupied


def rasterize(paths, window: Window) -> GridMask:
    """Union of the visited sites of several paths, clipped to the window.

    Each element of ``paths`` is an (m, dim) integer array of sites (ordered
    or not — only the set matters here).
    """
    occ = np.zeros(window.shape, dtype=bool)
    for p in paths:
        p = np.asarray(p)
        if p.size == 0:
            continue
        if p.ndim != 2 or p.shape[1] != window.dim:
            raise ValueError(f"path shape {p.shape} does not match window dim {window.dim}")
        kept = window.clip_sites(p)
        if kept.size:
            occ[window.index(kept)] = True
    return GridMask(window, occ)


# --- run-length text serialization (golden-test fixtures) -------------------


def mask_to_rle(mask: GridMask) -> str:
    """Portable run-length text: header line, then one line per row.

    Rows list run lengths alternating free/occupied, starting with free.
    3D masks emit planes in order, separated by ``;`` header rows.
    """
    w = mask.window
    lines = [f"rle {w.dim} " + " ".join(map(str, w.lo + w.hi))]
    arr = mask.occupied.reshape((-1,) + mask.occupied.shape[-2:])
    for plane in arr:
        for row in plane:
            runs = []
            val = False
            count = 0
            for cell in row:
                if cell == val:
                    count += 1
                else:
                    runs.append(count)
                    val = cell
                    count = 1
            runs.append(count)
            lines.append(" ".join(map(str, runs)))
        lines.append(";")
    return "\n".join(lines[:-1]) + "\n"


def mask_from_rle(text: str) -> GridMask:
    lines = [ln for ln in text.strip().split("\n")]
    head = lines[0].split()
    if head[0] != "rle":
        raise ValueError("not an rle mask")
    dim = int(head[1])
    nums = list(map(int, head[2:]))
    window = Window(tuple(nums[:dim]), tuple(nums[dim:]))
    rows = []
    for ln in lines[1:]:
        if ln == ";":
            continue
        runs = list(map(int, ln.split()))
        row = np.zeros(sum(runs), dtype=bool)
        pos = 0
        val = False
        for r in runs:
            row[pos : pos + r] = val
            pos += r
            val = not val
        rows.append(row)
    occ = np.array(rows).reshape(window.shape)
    return GridMask(window, occ)


# ---------------------------------------------------------------------------
# Exact distance tests (doubled coordinates)
# ---------------------------------------------------------------------------


def dist2x4(window: Window, center2: tuple[int, ...]) -> np.ndarray:
    """4 * (Euclidean distance)^2 from each window site to a doubled center."""
    grids = window.grids()
    d2 = np.zeros(window.shape, dtype=np.int64)
    for g, c in zip(grids, center2):
        d2 = d2 + (2 * g.astype(np.int64) - c) ** 2
    return d2


def disc_mask(window: Window, center2: tuple[int, ...], v: int) -> np.ndarray:
    """Sites with distance <= v from the doubled center."""
    return dist2x4(window, center2) <= 4 * v * v


def circle_band_mask(window: Window, center2: tuple[int, ...], v: int) -> np.ndarray:
    """The discrete circle at radius v: distance in [v-1, v]."""
    d2 = dist2x4(window, center2)
    return (d2 >= 4 * (v - 1) * (v - 1)) & (d2 <= 4 * v * v)


@dataclass(frozen=True)
class Annulus:
    """Closed annulus {r_in <= dist <= r_out} around a doubled center.

    Its discrete site set also includes the inner circle band [r_in-1, r_in],
    so both boundary circles are part of the region.
    """

    center2: tuple[int, ...]
    r_in: int
    r_out: int
    resolution: int | None = None

    def __post_init__(self):
        if self.r_in >= self.r_out:
            raise ValueError(f"degenerate annulus: r_in={self.r_in} >= r_out={self.r_out}")

    def region_mask(self, window: Window) -> np.ndarray:
        d2 = dist2x4(window, self.center2)
        lo = max(self.r_in - 1, 0)
        return (d2 >= 4 * lo * lo) & (d2 <= 4 * self.r_out * self.r_out)

    def inner_band(self, window: Window) -> np.ndarray:
        return circle_band_mask(window, self.center2, self.r_in)

    def outer_band(self, window: Window) -> np.ndarray:
        return circle_band_mask(window, self.center2, self.r_out)


# ---------------------------------------------------------------------------
# Dyadic boxes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Dyadic box of scale n: continuum side 2^-n, lattice side R * 2^-n.

    Sites are ``[i*B, (i+1)*B) x [j*B, (j+1)*B)`` with ``B = R >> n``; the
    center sits on the half-integer point encoded by :meth:`center2`.
    """

    n: int
    idx: tuple[int, ...]
    resolution: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("scale index must be >= 0")
        if self.resolution % (1 << self.n):
            raise ValueError(f"resolution {self.resolution} not divisible by 2^{self.n}")

    @property
    def side(self) -> int:
        return self.resolution >> self.n

    @property
    def dim(self) -> int:
        return len(self.idx)

    def center2(self) -> tuple[int, ...]:
        b = self.side
        return tuple(b * (2 * i + 1) - 1 for i in self.idx)

    def site_ranges(self) -> list[tuple[int, int]]:
        """Per-axis inclusive (lo, hi) site bounds."""
        b = self.side
        return [(i * b, (i + 1) * b - 1) for i in self.idx]

    def site_mask(self, window: Window) -> np.ndarray:
        m = np.ones(window.shape, dtype=bool)
        for g, (lo, hi) in zip(window.grids(), self.site_ranges()):
            m = m & (g >= lo) & (g <= hi)
        return m

    def children(self) -> list["Box"]:
        if self.side < 2:
            raise ValueError("box side 1 cannot be subdivided")
        out = []
        for off in np.ndindex(*(2,) * self.dim):
            out.append(Box(self.n + 1, tuple(2 * i + o for i, o in zip(self.idx, off)), self.resolution))
        return out

    def parent(self) -> "Box":
        if self.n == 0:
            raise ValueError("scale-0 box has no parent")
        return Box(self.n - 1, tuple(i >> 1 for i in self.idx), self.resolution)


def ceil_half_diag(b: int) -> int:
    """Smallest integer q with q >= b / sqrt(2), computed exactly."""
    # q >= b/sqrt(2)  <=>  2*q*q >= b*b
    q = math.isqrt((b * b) // 2)
    while 2 * q * q < b * b:
        q += 1
    return q


def margin_radii(resolution: int, coarsest: int, finest: int) -> dict[int, int]:
    """Integer margin radii rho_n approximating delta - 2^(-n-1/2).

    Here ``delta = 2^(1-coarsest)`` so ``delta * R = 2 * B_coarsest``.  The
    radii are anchored at the coarsest scale and recurse downward,

        rho_N = 2*B_N - ceil(B_N / sqrt2),    rho_n = rho_(n-1) + ceil(B_n / sqrt2).

    The anchor rounds the coarsest margin down (conservative), and every
    increment satisfies ``rho_n - rho_(n-1) >= B_n/sqrt2`` — exactly the
    child-to-parent center offset — so a far excursion of a child box is a
    far excursion of its parent.  That inequality is what makes good-box sets
    nested across scales with no floating-point caveats.  The price is a
    small upward drift at fine scales: ``delta*R - h_n - 1 <= rho_n <=
    delta*R - h_n + (n - N)`` with ``h_n = B_n/sqrt2``, i.e. within a few
    sites of the continuum margin either way.
    """
    if coarsest > finest:
        raise ValueError("coarsest scale index must be <= finest")
    if resolution % (1 << finest):
        raise ValueError("resolution not divisible at finest scale")
    b = resolution >> coarsest
    rho = {coarsest: 2 * b - ceil_half_diag(b)}
    for n in range(coarsest + 1, finest + 1):
        rho[n] = rho[n - 1] + ceil_half_diag(resolution >> n)
    return rho


def box_in_annulus(box: Box, annulus: Annulus) -> bool:
    """True iff every site of the box lies in the (closed) annulus.

    Exact integer corner test: per axis the doubled offsets to the annulus
    center span an interval, and min/max of the squared distance over the box
    are attained at interval ends (or zero if the interval straddles 0).
    """
    min_d2 = 0
    max_d2 = 0
    for (lo, hi), c in zip(box.site_ranges(), annulus.center2):
        a, b2 = 2 * lo - c, 2 * hi - c
        max_d2 += max(a * a, b2 * b2)
        if a <= 0 <= b2:
            lo_term = 0
        else:
            lo_term = min(a * a, b2 * b2)
        min_d2 += lo_term
    lo_r = max(annulus.r_in - 1, 0)
    return min_d2 >= 4 * lo_r * lo_r and max_d2 <= 4 * annulus.r_out * annulus.r_out


def box_margin_contained(box: Box, annulus: Annulus) -> bool:
    """True iff the disc of radius one box side around the box center lies in
    the annulus (the box "fits with margin").

    Site-exact: enumerates the disc sites on a cropped grid.  Raises if the
    box and annulus were built for different resolutions.
    """
    if annulus.resolution is not None and annulus.resolution != box.resolution:
        raise ValueError(
            f"resolution mismatch: box {box.resolution} vs annulus {annulus.resolution}"
        )
    b = box.side
    c2 = box.center2()
    # crop window: disc of radius b around the (half-integer) center
    lo = tuple((c - 2 * b) // 2 for c in c2)
    hi = tuple((c + 2 * b + 1) // 2 for c in c2)
    win = Window(lo, hi)
    disc = disc_mask(win, c2, b)
    d2 = dist2x4(win, annulus.center2)
    lo_r = max(annulus.r_in - 1, 0)
    inside = (d2 >= 4 * lo_r * lo_r) & (d2 <= 4 * annulus.r_out * annulus.r_out)
    return bool(np.all(inside[disc]))


# ---------------------------------------------------------------------------
# Connectivity: disconnection, openings, cut sets
# ---------------------------------------------------------------------------


def _as_bool_mask(window: Window, sites) -> np.ndarray:
    """Accept a boolean mask over the window or an (m, dim) site array."""
    if isinstance(sites, np.ndarray) and sites.dtype == bool:
        if sites.shape != window.shape:
            raise ValueError("boolean site mask has wrong shape")
        return sites
    arr = np.asarray(sites)
    if arr.ndim != 2:
        raise ValueError("site set must be a boolean mask or an (m, dim) array")
    m = np.zeros(window.shape, dtype=bool)
    kept = window.clip_sites(arr)
    if kept.size:
        m[window.index(kept)] = True
    return m


def is_disconnected(mask: GridMask, inner, outer) -> bool:
    """Whether the occupied set walls ``inner`` off from ``outer``.

    Returns True iff no 4-/6-neighbor path through free sites joins a site of
    ``inner`` (or a free site adjacent to it) with a free site of ``outer``.
    Per the window convention, passing ``window.edge_mask()`` as ``outer``
    asks whether ``inner`` is disconnected from infinity.
    """
    w = mask.window
    inner_b = _as_bool_mask(w, inner)
    outer_b = _as_bool_mask(w, outer)
    if np.any(inner_b & outer_b):
        raise ValueError("inner and outer site sets overlap")
    free = mask.free()
    st = plus_structure(w.dim)
    seeds = ndi.binary_dilation(inner_b, structure=st) & free
    targets = outer_b & free
    if not seeds.any() or not targets.any():
        return True
    labels, _ = ndi.label(free, structure=st)
    return not np.any(np.isin(np.unique(labels[seeds]), np.unique(labels[targets])))


@dataclass
class OpeningSet:
    """Free components of an annulus touching both of its boundary circles."""

    components: list[np.ndarray]
    cut_points: dict[int, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.components)


def _sorted_coords(window: Window, mask: np.ndarray) -> np.ndarray:
    coords = np.argwhere(mask) + np.array(window.lo)
    if coords.size == 0:
        return coords.reshape(0, window.dim)
    order = np.lexsort(coords.T[::-1])
    return coords[order]


def openings(mask: GridMask, annulus: Annulus) -> OpeningSet:
    """Connected components of annulus-minus-occupied meeting both boundaries."""
    w = mask.window
    if w.dim != 2:
        raise ValueError("openings are only defined in 2D")
    region = annulus.region_mask(w)
    free = region & mask.free()
    labels, nlab = ndi.label(free, structure=plus_structure(2))
    if nlab == 0:
        return OpeningSet([])
    inner_ids = np.unique(labels[annulus.inner_band(w) & free])
    outer_ids = np.unique(labels[annulus.outer_band(w) & free])
    good = np.intersect1d(inner_ids[inner_ids > 0], outer_ids[outer_ids > 0])
    comps = [_sorted_coords(w, labels == g) for g in good]
    return OpeningSet(comps)


def cut_set(mask: GridMask, annulus: Annulus, v: int) -> np.ndarray:
    """First-crossing sites of the circle at radius v, dead ends excluded.

    A free inner-to-outer path inside the annulus meets the one-site band of
    the circle at radius ``v`` in a first maximal consecutive run (it cannot
    jump the band; it may slide along it).  Stage one collects every band
    site lying on such a first run of a path that goes on to reach the outer
    boundary.  Stage two keeps only sites whose witnessing path, once it
    leaves that first run, never touches the stage-one set again — this is
    what excludes "dead ends": band arcs one can enter first but must back
    out of, re-crossing the circle elsewhere.

    Returns the cut sites as a lexicographically sorted (m, 2) array.
    """
    w = mask.window
    if w.dim != 2:
        raise ValueError("cut sets are only defined in 2D")
    if not (annulus.r_in < v < annulus.r_out):
        raise ValueError(f"need r_in < v < r_out, got {annulus.r_in}, {v}, {annulus.r_out}")
    st = plus_structure(2)
    region = annulus.region_mask(w)
    free = region & mask.free()
    d2 = dist2x4(w, annulus.center2)
    band_v = (d2 >= 4 * (v - 1) * (v - 1)) & (d2 <= 4 * v * v) & free
    start = annulus.inner_band(w) & free
    goal = annulus.outer_band(w) & free
    if not start.any() or not goal.any():
        return np.zeros((0, 2), dtype=np.int64)

    # stage 1a: the approach region (strictly inside the band) reachable from
    # the inner boundary
    approach = (free & (d2 < 4 * (v - 1) * (v - 1))) | start
    lab_a, _ = ndi.label(approach, structure=st)
    start_ids = np.unique(lab_a[start])
    reached = np.isin(lab_a, start_ids[start_ids > 0]) & approach

    # stage 1b: band runs entered from the approach region
    entries = ndi.binary_dilation(reached, structure=st) & band_v
    lab_b, _ = ndi.label(band_v, structure=st)
    run_ids = np.unique(lab_b[entries])
    first_runs = np.isin(lab_b, run_ids[run_ids > 0]) & band_v

    # stage 1c: keep runs that connect onward to the outer boundary
    lab_f, _ = ndi.label(free, structure=st)
    goal_ids = np.unique(lab_f[goal])
    to_outer = np.isin(lab_f, goal_ids[goal_ids > 0])
    o0 = first_runs & to_outer
    if not o0.any():
        return np.zeros((0, 2), dtype=np.int64)

    # stage 2: a run survives if, stepping off it, the outer boundary is
    # reachable through free sites that avoid the whole stage-1 set
    avoid = free & ~o0
    lab_v, _ = ndi.label(avoid, structure=st)
    tail_ids = np.unique(lab_v[goal & avoid])
    tail_ok = np.isin(lab_v, tail_ids[tail_ids > 0]) & avoid
    touch = ndi.binary_dilation(tail_ok, structure=st) & o0
    good_runs = np.unique(lab_b[touch])
    cut = np.isin(lab_b, good_runs[good_runs > 0]) & o0
    return _sorted_coords(w, cut)
