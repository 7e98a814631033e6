"""Random-walk path engine: sampling, hitting times, annulus excursions, and
the excursion/bridge decomposition around a dyadic box.

Simple random walk on Z^d stands in for Brownian motion throughout; walk and
Brownian crossing exponents agree, which is what justifies estimating the
continuum quantities on the lattice.  The unit disc maps to lattice radius
``R = 2**(n_max + g)`` with oversampling ``g`` so that every dyadic radius in
play is an exact integer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry

MOVES = {
    2: np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64),
    3: np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=np.int64,
    ),
}

# step letters: x axis E/W, y axis N/S, z axis U/D
_LETTERS = {2: "EWNS", 3: "EWNSUD"}

_PACK_OFFSET = 1 << 19
_PACK_STRIDE = 1 << 20


class BudgetExceededError(RuntimeError):
    """A walk hit its step budget before its stop rule fired."""

    def __init__(self, msg: str, partial_length: int):
        super().__init__(f"{msg} (partial path length {partial_length})")
        self.partial_length = partial_length


class MissingCrossingError(ValueError):
    """A decomposition precondition failed; the message names the first
    crossing of the visit/far-excursion alternation that could not be found."""


def rng_stream(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based stream: one independent generator per (seed, trial).

    Streams are keyed by value, not by draw order, so results are identical
    no matter how trials are sharded across workers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, index))))


def pack_sites(sites: np.ndarray) -> np.ndarray:
    """Injective int64 code per site; valid for coordinates < 2^19."""
    sites = np.asarray(sites)
    if sites.size and np.abs(sites).max() >= _PACK_OFFSET:
        raise ValueError("site coordinates too large to pack")
    code = np.zeros(len(sites), dtype=np.int64)
    for a in range(sites.shape[1]):
        code = code * _PACK_STRIDE + (sites[:, a] + _PACK_OFFSET)
    return code


class LatticePath:
    """An ordered nearest-neighbor path on Z^d.

    ``sites`` has shape (steps + 1, d); consecutive rows differ by one unit
    step.  Instances are treated as immutable.
    """

    __slots__ = ("sites", "_codes")

    def __init__(self, sites, validate: bool = True):
        sites = np.ascontiguousarray(np.asarray(sites, dtype=np.int64))
        if sites.ndim != 2 or sites.shape[1] not in (2, 3):
            raise ValueError(f"bad site array shape {sites.shape}")
        if validate and len(sites) > 1:
            d = np.abs(np.diff(sites, axis=0)).sum(axis=1)
            bad = np.flatnonzero(d != 1)
            if bad.size:
                raise ValueError(f"non-unit step at time {bad[0]}")
        self.sites = sites
        self._codes = None

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    @property
    def n_steps(self) -> int:
        return len(self.sites) - 1

    def __len__(self) -> int:
        return len(self.sites)

    def codes(self) -> np.ndarray:
        if self._codes is None:
            self._codes = pack_sites(self.sites)
        return self._codes

    def visit_times(self, site) -> np.ndarray:
        """Sorted times at which the path sits on ``site``."""
        target = pack_sites(np.asarray(site, dtype=np.int64).reshape(1, -1))[0]
        return np.flatnonzero(self.codes() == target)

    def reverse(self) -> "LatticePath":
        return LatticePath(self.sites[::-1], validate=False)

    def segment(self, a: int, b: int) -> "LatticePath":
        """Sub-path from time a to time b inclusive (endpoints shared)."""
        if not 0 <= a <= b <= self.n_steps:
            raise ValueError(f"bad segment [{a}, {b}] of path with {self.n_steps} steps")
        return LatticePath(self.sites[a : b + 1], validate=False)

    def is_closed(self) -> bool:
        return bool(np.array_equal(self.sites[0], self.sites[-1]))

    # -- serialization ------------------------------------------------------

    def to_letters(self) -> str:
        letters = _LETTERS[self.dim]
        diffs = np.diff(self.sites, axis=0)
        axis = np.argmax(np.abs(diffs), axis=1)
        sign = np.take_along_axis(diffs, axis[:, None], axis=1)[:, 0]
        idx = 2 * axis + (sign < 0)
        header = f"{self.dim} " + " ".join(map(str, self.sites[0])) + f" {self.n_steps}"
        return header + "\n" + "".join(letters[i] for i in idx)

    @classmethod
    def from_letters(cls, text: str) -> "LatticePath":
        head, _, body = text.partition("\n")
        parts = head.split()
        dim = int(parts[0])
        start = np.array(parts[1 : 1 + dim], dtype=np.int64)
        n = int(parts[1 + dim])
        body = body.strip()
        if len(body) != n:
            raise ValueError(f"header says {n} steps, body has {len(body)}")
        letters = _LETTERS[dim]
        idx = np.array([letters.index(ch) for ch in body], dtype=np.int64)
        # letter 2a is +axis, 2a+1 is -axis
        moves = np.zeros((n, dim), dtype=np.int64)
        axis = idx // 2
        moves[np.arange(n), axis] = np.where(idx % 2 == 0, 1, -1)
        sites = np.concatenate([start[None, :], start[None, :] + np.cumsum(moves, axis=0)])
        return cls(sites, validate=False)


# ---------------------------------------------------------------------------
# stop rules and walk sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExitDisc:
    """Stop at the first time the walk is at distance >= radius from center."""

    center: tuple[int, ...]
    radius: int


@dataclass(frozen=True)
class HitSet:
    """Stop at the first visit to any of the given sites."""

    sites: np.ndarray
    budget: int

    def __init__(self, sites, budget: int):
        object.__setattr__(self, "sites", np.asarray(sites, dtype=np.int64))
        object.__setattr__(self, "budget", int(budget))


@dataclass(frozen=True)
class FixedLength:
    steps: int


def sample_walk(start, stop, rng: np.random.Generator, validate_budget: bool = True) -> LatticePath:
    """Simple random walk from ``start`` until the stop rule fires.

    The step budget is ``64 * R**2`` for disc exits (comfortably above the
    exit-time scale), the explicit budget for hit-set stops, and the length
    itself for fixed-length walks.  Exceeding it raises
    :class:`BudgetExceededError` carrying the partial length.
    """
    start = np.asarray(start, dtype=np.int64)
    dim = len(start)
    moves = MOVES[dim]

    if isinstance(stop, FixedLength):
        n = int(stop.steps)
        idx = rng.integers(0, 2 * dim, size=n)
        sites = np.concatenate(
            [start[None, :], start[None, :] + np.cumsum(moves[idx], axis=0)]
        )
        return LatticePath(sites, validate=False)

    if isinstance(stop, ExitDisc):
        budget = 64 * stop.radius * stop.radius
        center = np.asarray(stop.center, dtype=np.int64)
        thr = 4 * stop.radius * stop.radius

        def fired(block):
            d2 = np.zeros(len(block), dtype=np.int64)
            for a in range(dim):
                d2 += (2 * block[:, a] - 2 * center[a]) ** 2
            return d2 >= thr

    elif isinstance(stop, HitSet):
        budget = stop.budget
        target = np.sort(pack_sites(stop.sites.reshape(-1, dim)))

        def fired(block):
            codes = pack_sites(block)
            pos = np.searchsorted(target, codes)
            pos[pos == len(target)] = 0
            return target[pos] == codes

    else:
        raise TypeError(f"unknown stop rule {stop!r}")

    if fired(start[None, :])[0]:
        return LatticePath(start[None, :], validate=False)

    chunks = [start[None, :]]
    pos = start.copy()
    done = 0
    block_size = 1 << 12
    while done < budget:
        m = min(block_size, budget - done)
        idx = rng.integers(0, 2 * dim, size=m)
        block = pos[None, :] + np.cumsum(moves[idx], axis=0)
        hit = fired(block)
        k = int(np.argmax(hit))
        if hit[k]:
            chunks.append(block[: k + 1])
            return LatticePath(np.concatenate(chunks), validate=False)
        chunks.append(block)
        pos = block[-1]
        done += m
        block_size = min(block_size * 2, 1 << 20)
    if validate_budget:
        raise BudgetExceededError("stop rule did not fire within step budget", budget)
    return LatticePath(np.concatenate(chunks), validate=False)


# ---------------------------------------------------------------------------
# hitting-time queries
# ---------------------------------------------------------------------------


def _target_codes(target, dim) -> np.ndarray:
    if isinstance(target, (set, frozenset)):
        target = np.array(sorted(target), dtype=np.int64)
    arr = np.asarray(target, dtype=np.int64).reshape(-1, dim)
    return np.sort(pack_sites(arr))


def hitting_time(path: LatticePath, target, start: int = 0):
    """Minimal time t >= start with path(t) in target, else None."""
    if start > path.n_steps:
        raise ValueError(f"start index {start} beyond path end {path.n_steps}")
    codes = path.codes()[start:]
    tc = _target_codes(target, path.dim)
    pos = np.searchsorted(tc, codes)
    pos[pos == len(tc)] = 0
    hit = tc[pos] == codes
    k = int(np.argmax(hit))
    if not hit[k]:
        return None
    return start + k


def last_hitting_time(path: LatticePath, target, before: int | None = None):
    """Maximal time t < before with path(t) in target, else None.

    ``before=None`` means "past the end", so the final site is eligible.
    """
    if before is None:
        before = path.n_steps + 1
    codes = path.codes()[:before]
    tc = _target_codes(target, path.dim)
    pos = np.searchsorted(tc, codes)
    pos[pos == len(tc)] = 0
    hit = tc[pos] == codes
    if not hit.any():
        return None
    return int(len(hit) - 1 - np.argmax(hit[::-1]))


def _d2x4_along(path: LatticePath, center2) -> np.ndarray:
    d2 = np.zeros(len(path.sites), dtype=np.int64)
    for a, c in enumerate(center2):
        d2 += (2 * path.sites[:, a] - c) ** 2
    return d2


def first_reach(path, center2, v, start=0, d2=None):
    """First t >= start with distance >= v from the doubled center, or None."""
    if d2 is None:
        d2 = _d2x4_along(path, center2)
    return _first_true(d2 >= 4 * v * v, start)


def _first_true(flags: np.ndarray, start: int):
    if start >= len(flags):
        return None
    seg = flags[start:]
    k = int(np.argmax(seg))
    if not seg[k]:
        return None
    return start + k


def _last_true_before(flags: np.ndarray, before: int):
    seg = flags[:before]
    if not seg.any():
        return None
    return int(len(seg) - 1 - np.argmax(seg[::-1]))


# ---------------------------------------------------------------------------
# annulus excursions
# ---------------------------------------------------------------------------


def band_sites(center, r: int, dim: int = 2) -> np.ndarray:
    """All sites of the discrete circle band [r-1, r] around a site center."""
    w = geometry.Window(
        tuple(c - r for c in center), tuple(c + r for c in center)
    )
    c2 = tuple(2 * c for c in center)
    m = geometry.circle_band_mask(w, c2, r)
    return np.argwhere(m) + np.array(w.lo)


def sample_excursion(center, r1: int, r2: int, rng: np.random.Generator) -> LatticePath:
    """Excursion across the annulus: starts on the inner circle band, never
    re-enters the open inner disc, ends at its first arrival on the outer band.

    Construction: walk from a uniform inner-band site until the outer band,
    then keep only the part after the last visit to the inner band.  The band
    is one site thick, so the kept part cannot dip strictly inside it.
    """
    if r1 < 2:
        raise ValueError("inner radius must be >= 2")
    if r2 - r1 < 2:
        raise ValueError(f"annulus thinner than 2 sites: r1={r1} r2={r2}")
    inner = band_sites(center, r1)
    start = inner[rng.integers(0, len(inner))]
    c2 = tuple(2 * c for c in center)
    # stop on entering the outer band from inside: distance >= r2 - 1
    walk = sample_walk(start, ExitDisc(tuple(center), r2 - 1), rng)
    d2 = _d2x4_along(walk, c2)
    in_band = (d2 >= 4 * (r1 - 1) * (r1 - 1)) & (d2 <= 4 * r1 * r1)
    sigma = _last_true_before(in_band, walk.n_steps + 1)
    return walk.segment(sigma, walk.n_steps)


# ---------------------------------------------------------------------------
# excursion / bridge decomposition
# ---------------------------------------------------------------------------


@dataclass
class Decomposition:
    """Excursions and bridges of a path around a box, plus the cut times.

    ``excursions[i]`` crosses the annulus between the box circle and the
    half-delta circle; odd-numbered crossings (inward in the original time
    parametrization) are stored time-reversed so that every excursion runs
    inside to outside.  Bridges are the complementary pieces; adjacent pieces
    share their endpoint site.  ``reconstruct`` undoes everything and returns
    the original path up to the final visit time (for a loop: the original
    loop rotated to start at the first cut time).
    """

    excursions: list[LatticePath]
    bridges: list[LatticePath]
    cut_times: dict[str, list[int]]
    visits: int
    closed: bool = False

    def reconstruct(self) -> LatticePath:
        pieces = []
        ex = self.excursions
        br = self.bridges
        if self.closed:
            for i in range(len(ex)):
                pieces.append(ex[i].reverse() if i % 2 == 0 else ex[i])
                pieces.append(br[i])
        else:
            for i in range(len(ex)):
                pieces.append(br[i])
                pieces.append(ex[i].reverse() if i % 2 == 0 else ex[i])
            pieces.append(br[len(ex)])
        sites = [pieces[0].sites]
        for p in pieces[1:]:
            if not np.array_equal(p.sites[0], sites[-1][-1]):
                raise AssertionError("pieces do not chain")
            sites.append(p.sites[1:])
        return LatticePath(np.concatenate(sites), validate=False)


def _chain_visit_far(path, box, m, rho, closed):
    """u_i / v_i alternation: arrival, then visits interleaved with
    excursions to distance rho.  Returns (u_list, v_list) or raises."""
    c2 = box.center2()
    d2 = _d2x4_along(path, c2)
    lo, hi = zip(*box.site_ranges())
    in_box = np.ones(len(path.sites), dtype=bool)
    for a in range(box.dim):
        col = path.sites[:, a]
        in_box &= (col >= lo[a]) & (col <= hi[a])
    thr = 4 * rho * rho

    u = [_first_true(d2 <= thr, 0)]
    if u[0] is None:
        raise MissingCrossingError("path never approaches the box: no arrival at the far circle")
    v = []
    for i in range(m):
        vi = _first_true(in_box, u[-1])
        if vi is None:
            raise MissingCrossingError(
                f"visit {i + 1} of {m} not found (after time {u[-1]})"
            )
        v.append(vi)
        need_far = (i < m - 1) or closed
        if need_far:
            ui = _first_true(d2 >= thr, v[-1])
            if ui is None:
                raise MissingCrossingError(
                    f"far excursion after visit {i + 1} not found (after time {v[-1]})"
                )
            u.append(ui)
    return u, v, d2


def excursion_bridge_decompose(
    path: LatticePath, box: geometry.Box, visits: int, delta: float
) -> Decomposition:
    """Cut a qualifying path into annulus excursions and bridges.

    ``visits`` = 3 for the triple-visit pattern (5 excursions, 6 bridges) or
    2 for the double-visit pattern (3 excursions, 4 bridges).  ``delta`` is
    the continuum excursion length 2^(1-K); the far radius is the exact
    integer margin radius for the box scale, the crossing annulus runs from
    the box circle to the circle at delta/2.

    If the visit/excursion alternation is incomplete the error names the
    first missing crossing.
    """
    return _decompose(path, box, visits, delta, closed=False)


def loop_decompose(loop: LatticePath, box: geometry.Box, delta: float) -> Decomposition:
    """Decomposition of a closed path (double visit): 4 excursions and 4
    bridges, the last bridge wrapping around the loop's root."""
    if not loop.is_closed():
        raise ValueError("loop decomposition requires a closed path")
    return _decompose(loop, box, 2, delta, closed=True)


def _decompose(path, box, m, delta, closed):
    if m not in (2, 3):
        raise ValueError("visits must be 2 or 3")
    res = box.resolution
    delta_r = delta * res
    if delta_r != int(delta_r) or int(delta_r) & (int(delta_r) - 1):
        raise ValueError(f"delta * resolution = {delta_r} must be a power of two")
    delta_r = int(delta_r)
    coarsest = res.bit_length() - delta_r.bit_length() + 1  # K with delta = 2^(1-K)
    b = box.side
    if b >= delta_r // 2:
        raise ValueError(
            f"box side {b} too coarse for the delta/2 = {delta_r // 2} crossing annulus"
        )
    rho = geometry.margin_radii(res, coarsest, box.n)[box.n]
    c2 = box.center2()
    if closed:
        root_d2 = sum((2 * x - c) ** 2 for x, c in zip(path.sites[0], c2))
        if root_d2 <= 4 * rho * rho:
            raise MissingCrossingError("loop root lies inside the far circle")

    u, v, d2 = _chain_visit_far(path, box, m, rho, closed)

    half = delta_r // 2
    band_half = (d2 >= 4 * (half - 1) * (half - 1)) & (d2 <= 4 * half * half)
    band_box = (d2 >= 4 * (b - 1) * (b - 1)) & (d2 <= 4 * b * b)

    s: list[int] = []
    t: list[int] = []
    n_exc = 2 * m - 1 + (1 if closed else 0)
    for j in range(1, n_exc + 1):
        if j % 2 == 1:  # inward crossing, ends at visit (j+1)//2
            i = (j + 1) // 2
            sj = _last_true_before(band_half, v[i - 1])
            if sj is None:
                raise MissingCrossingError(f"no half-delta circle visit before visit {i}")
            tj = _first_true(band_box, sj)
        else:  # outward crossing, before far time u_{j//2 + 1}
            i = j // 2
            sj = _last_true_before(band_box, u[i])
            if sj is None:
                raise MissingCrossingError(f"no box circle visit before far excursion {i}")
            tj = _first_true(band_half, sj)
        if tj is None:
            raise MissingCrossingError(f"crossing {j} does not complete")
        s.append(sj)
        t.append(tj)

    order = [0]
    for j in range(n_exc):
        order += [s[j], t[j]]
    order.append(v[m - 1] if not closed else path.n_steps)
    if any(a > b2 for a, b2 in zip(order, order[1:])):
        raise AssertionError(f"cut times out of order: {order}")

    excursions = []
    for j in range(n_exc):
        seg = path.segment(s[j], t[j])
        excursions.append(seg.reverse() if j % 2 == 0 else seg)
    bridges = []
    if closed:
        # no leading bridge: the loop is cut open at s_1, and the last bridge
        # wraps around the root
        for j in range(1, n_exc):
            bridges.append(path.segment(t[j - 1], s[j]))
        wrap = np.concatenate([path.sites[t[-1] :], path.sites[1 : s[0] + 1]])
        bridges.append(LatticePath(wrap, validate=False))
    else:
        bridges.append(path.segment(0, s[0]))
        for j in range(1, n_exc):
            bridges.append(path.segment(t[j - 1], s[j]))
        bridges.append(path.segment(t[-1], v[m - 1]))

    cut = {"u": u, "v": v, "s": s, "t": t}
    return Decomposition(excursions, bridges, cut, m, closed)
