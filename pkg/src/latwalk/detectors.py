"""Good-box detectors for three kinds of exceptional lattice points.

A dyadic box S at scale n (side ``R >> n``) is "good" for a walk or loop when
the trajectory revisits it with macroscopic excursions in between and leaves
it exposed to infinity:

* triple-visit pioneer boxes ("ptp"): three visits to S separated by two
  excursions to distance ``rho_n`` from the box center, and the ball of
  radius ``R*2^-n`` around the center is not disconnected from the window
  edge by the stopped trajectory;
* double-visit cut boxes ("pdcp"): two visits separated by one excursion,
  the approach trace (up to first entry of the ball) is site-disjoint from
  the return trace (from the post-visit circle crossing to the second
  visit), and — in the plane — at least two components of the excursion
  disc minus the trajectory touch the ball and lead out to the window edge;
* boundary double-visit boxes ("bdp"): a conditioned macroscopic loop
  revisits S with an excursion, and the loop's cluster within an
  independent soup does not disconnect S from the window edge.

``rho_n`` is the margin radius of geometry.margin_radii: the lattice version
of "distance delta minus half a box diagonal", rounded so that a good box's
parent at scale n-1 is always good (the excursion circles nest exactly).

The detector window is the square of halfwidth ``resolution + 1``; its edge
plays the role of infinity in every connectivity statement.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (
    Annulus,
    Box,
    Window,
    box_in_annulus,
    ceil_half_diag,
    disc_mask,
    margin_radii,
    plus_structure,
    rasterize,
)
from .loopsoup import LatticeLoop, LoopSoup, clusters
from .paths import LatticePath

__all__ = [
    "DetectorConfig",
    "GoodBoxReport",
    "bulk_boxes",
    "good_boxes_ptp",
    "good_boxes_pdcp",
    "good_boxes_bdp",
    "has_macroscopic_ptp",
]

_KINDS = ("ptp", "pdcp", "bdp")


@dataclass(frozen=True)
class DetectorConfig:
    """Parameters shared by the three detectors.

    ``delta`` must be ``2**(1-K)`` for integer K; the coarsest usable scale
    N(delta) equals K, and ``n`` must not be coarser.  ``iota`` is the bulk
    margin: only boxes whose scale-N(delta) ancestor lies fully inside the
    annulus ``iota*R <= |x| <= (1-iota)*R`` are examined (membership is
    decided at the coarsest scale and inherited, so the candidate family is
    closed under taking parents).  ``resolution`` R maps the unit disc to the
    lattice disc of radius R.
    """

    kind: str
    n: int
    delta: float = 2.0**-4
    iota: float = 0.25
    resolution: int = 512
    d: int = 2
    two_loop: bool = False

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        k = round(1 - math.log2(self.delta))
        if self.delta != 2.0 ** (1 - k):
            raise ValueError("delta must be a power of two, delta = 2**(1-K)")
        if self.n < k:
            raise ValueError(f"scale n={self.n} is coarser than N(delta)={k}")
        if not 0 < self.iota < 0.5:
            raise ValueError("iota must lie in (0, 1/2)")
        if self.delta > self.iota / 2:
            raise ValueError("delta must be at most iota/2")
        r = self.resolution
        if r < 2 or r & (r - 1):
            raise ValueError("resolution must be a power of two")
        if r >> self.n < 1:
            raise ValueError(f"scale n={self.n} is below the lattice spacing at R={r}")
        if self.kind == "ptp" and self.d != 2:
            raise ValueError("triple-visit detection is planar")
        if self.kind == "pdcp" and self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.kind == "bdp" and self.d != 2:
            raise ValueError("loop-soup detection is planar")
        if self.two_loop and self.kind != "bdp":
            raise ValueError("two_loop applies to the bdp kind only")

    @property
    def coarsest(self) -> int:
        """N(delta): the coarsest admissible scale."""
        return round(1 - math.log2(self.delta))

    @property
    def box_side(self) -> int:
        return self.resolution >> self.n

    @property
    def ball_radius(self) -> int:
        """Radius of the protected ball around a box center (= box side)."""
        return self.box_side

    @property
    def rho(self) -> int:
        """Excursion radius at scale n (exactly nested across scales)."""
        return margin_radii(self.resolution, self.coarsest, self.n)[self.n]

    def window(self) -> Window:
        return Window.centered(self.resolution + 1, self.d)

    def bulk(self) -> Annulus:
        r = self.resolution
        return Annulus((0,) * self.d, self.iota * r, (1 - self.iota) * r)

    def hash(self) -> str:
        key = (
            f"{self.kind} d={self.d} n={self.n} K={self.coarsest} "
            f"iota={self.iota} R={self.resolution} two_loop={self.two_loop}"
        )
        return hashlib.sha256(key.encode()).hexdigest()[:12]


@dataclass
class GoodBoxReport:
    """The good boxes found at one scale, with each box's completion time."""

    config: DetectorConfig
    boxes: list[Box]
    stopping_times: dict[tuple[int, ...], int]
    bulk: Annulus

    def __len__(self) -> int:
        return len(self.boxes)

    def indices(self) -> set[tuple[int, ...]]:
        return {b.idx for b in self.boxes}

    def to_text(self) -> str:
        lines = [
            f"{b.n} " + " ".join(str(i) for i in b.idx) + f" {self.stopping_times[b.idx]}"
            for b in sorted(self.boxes, key=lambda b: b.idx)
        ]
        lines.append(f"# n={self.config.n} count={len(self.boxes)} config={self.config.hash()}")
        return "\n".join(lines)


def bulk_boxes(cfg: DetectorConfig):
    """All scale-n boxes counted as bulk boxes by the detectors.

    Bulk membership is decided once at the coarsest scale: a scale-n box
    belongs to the bulk iff its scale-N(delta) ancestor lies fully inside the
    bulk annulus.  Descendants inherit membership, which keeps the box family
    hierarchical (every box's parent is again a bulk box, or the box is
    itself coarsest).  Boxes come out grouped by ancestor, ancestors in
    row-major order.
    """
    r = cfg.resolution
    ann = cfg.bulk()
    bk = r >> cfg.coarsest
    lim = int((1 - cfg.iota) * r) // bk + 1
    shift = cfg.n - cfg.coarsest
    for idx in np.ndindex(*(2 * lim + 1,) * cfg.d):
        anc = tuple(i - lim for i in idx)
        if not box_in_annulus(Box(cfg.coarsest, anc, r), ann):
            continue
        for off in np.ndindex(*(1 << shift,) * cfg.d):
            yield Box(cfg.n, tuple((a << shift) + o for a, o in zip(anc, off)), r)


# ---------------------------------------------------------------------------
# per-path screening
# ---------------------------------------------------------------------------


def _first_at_distance(sites: np.ndarray, t: int, center2, thr4: int, far: bool):
    """First time >= t whose site has 4*dist^2 >= thr4 (far=True) or
    <= thr4 (far=False) from the doubled center, scanned in growing chunks."""
    n = len(sites)
    if t >= n:
        return None
    c2 = np.asarray(center2)
    chunk, a = 256, t
    while a < n:
        b = min(n, a + chunk)
        seg = 2 * sites[a:b] - c2
        d2 = np.sum(seg * seg, axis=1)
        hit = np.flatnonzero(d2 >= thr4 if far else d2 <= thr4)
        if hit.size:
            return a + int(hit[0])
        a = b
        chunk = min(4 * chunk, 1 << 20)
    return None


def _grouped_box_visits(
    sites: np.ndarray, cfg: DetectorConfig, min_count: int, min_gap: int | None = None
):
    """Visit-time arrays for every bulk box visited at least min_count times.

    With ``min_gap`` the box must additionally show min_count - 1
    consecutive-visit gaps of at least that many steps — a cheap necessary
    condition for the excursion chain, since each round trip out to distance
    rho and back straddles its own pair of consecutive visits.
    """
    b, r, d = cfg.box_side, cfg.resolution, cfg.d
    offset = r // b + 2
    base = 2 * offset
    idx = sites // b + offset
    if idx.min() < 0 or idx.max() >= base:
        raise ValueError("path leaves the detector window")
    code = idx[:, 0]
    for a in range(1, d):
        code = code * base + idx[:, a]
    counts = np.bincount(code, minlength=base**d)
    sel = counts[code] >= min_count
    times = np.flatnonzero(sel)
    if times.size == 0:
        return {}
    order = np.argsort(code[times], kind="stable")
    times = times[order]
    codes = code[times]
    boundary = np.diff(codes) != 0
    starts = np.concatenate([[0], np.flatnonzero(boundary) + 1])
    ends = np.concatenate([starts[1:], [len(times)]])
    if min_gap is None:
        kept = np.arange(len(starts))
    else:
        group_of = np.concatenate([[0], np.cumsum(boundary)])
        big = (np.diff(times) >= min_gap) & ~boundary
        per_group = np.bincount(group_of[1:][big], minlength=len(starts))
        kept = np.flatnonzero(per_group >= min_count - 1)
    ann = cfg.bulk()
    shift = cfg.n - cfg.coarsest
    out = {}
    for gi in kept:
        f = int(starts[gi])
        digits = []
        c = int(codes[f])
        for _ in range(d):
            digits.append(c % base - offset)
            c //= base
        tup = tuple(reversed(digits))
        # bulk membership is inherited from the coarsest-scale ancestor so
        # that the candidate family is closed under taking parents
        anc = tuple(i >> shift for i in tup)
        if box_in_annulus(Box(cfg.coarsest, anc, r), ann):
            out[tup] = times[f : int(ends[gi])]
    return out


def _visit_excursion_chain(
    sites: np.ndarray, visits: np.ndarray, center2, rho: int, n_visits: int
) -> int | None:
    """Completion time of the chain visit -> distance rho -> visit -> ... with
    n_visits box visits, or None if it does not complete."""
    t = int(visits[0])
    thr = 4 * rho * rho
    for _ in range(n_visits - 1):
        far = _first_at_distance(sites, t + 1, center2, thr, far=True)
        if far is None:
            return None
        j = int(np.searchsorted(visits, far))
        if j == len(visits):
            return None
        t = int(visits[j])
    return t


# ---------------------------------------------------------------------------
# detectors
# ---------------------------------------------------------------------------


def _label_free(occ: np.ndarray):
    """Components of the free sites, a lookup table over component ids that
    marks the ones touching the array edge, and the component count."""
    labels, n = ndimage.label(~occ, structure=plus_structure(occ.ndim))
    reaches_edge = np.zeros(n + 1, dtype=bool)
    reaches_edge[_border_ids(labels)] = True
    return labels, reaches_edge


def _probe_sites(pts: np.ndarray, dim: int) -> np.ndarray:
    """A site set together with its lattice neighbours (duplicates kept).

    The freeness of exactly these cells decides whether the set is walled off,
    matching the dilated-seed convention of ``is_disconnected``.
    """
    stack = [pts]
    for a in range(dim):
        e = np.zeros(dim, dtype=pts.dtype)
        e[a] = 1
        stack.append(pts + e)
        stack.append(pts - e)
    return np.concatenate(stack)


def _flat_in(window: Window, sites: np.ndarray) -> np.ndarray:
    """Flat window indices of the in-window rows of a site array."""
    kept = window.clip_sites(sites)
    return np.ravel_multi_index(window.index(kept), window.shape)


def _sealed_in_crop(occ: np.ndarray, window: Window, probe: np.ndarray, hw: int) -> bool:
    """Definitely-disconnected test on a cropped subwindow.

    A free probe cell that cannot reach the crop border cannot reach the
    window edge either, so True is conclusive; False only means the crop was
    too small to decide and the full labeling must settle it.
    """
    wlo = np.asarray(window.lo)
    lo = np.maximum(probe.min(axis=0) - hw, wlo)
    hi = np.minimum(probe.max(axis=0) + hw, np.asarray(window.hi))
    sub = occ[tuple(slice(int(l - w), int(h - w + 1)) for l, h, w in zip(lo, hi, wlo))]
    labels, n = ndimage.label(~sub, structure=plus_structure(occ.ndim))
    reaches_border = np.zeros(n + 1, dtype=bool)
    reaches_border[_border_ids(labels)] = True
    local = np.ravel_multi_index(tuple((probe - lo).T), sub.shape)
    return not reaches_border[labels.reshape(-1)[local]].any()


def _border_ids(labels: np.ndarray) -> np.ndarray:
    """Positive component ids present on the boundary faces of the array."""
    if labels.ndim == 2:
        border = [labels[0], labels[-1], labels[:, 0], labels[:, -1]]
    else:
        border = []
        for a in range(labels.ndim):
            border.append(np.take(labels, 0, axis=a).ravel())
            border.append(np.take(labels, -1, axis=a).ravel())
    ids = np.unique(np.concatenate(border))
    return ids[ids > 0]


def _ball_sites(center2, radius: int) -> np.ndarray:
    """Sites of the lattice ball dist <= radius about a doubled center."""
    c2 = np.asarray(center2)
    lo = [-((2 * radius - c) // 2) for c in c2]
    hi = [(c + 2 * radius) // 2 for c in c2]
    axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts[np.sum((2 * pts - c2) ** 2, axis=1) <= 4 * radius * radius]


def _probe_connected(labels_flat, reaches_edge, occ_flat, probe) -> bool:
    """Whether any free probe cell lies in a component reaching the edge."""
    free = probe[~occ_flat[probe]]
    return bool(free.size) and bool(reaches_edge[labels_flat[free]].any())


def _box_sites(box: Box) -> np.ndarray:
    """All sites of a dyadic box as an (side**d, d) array."""
    axes = [np.arange(l, h + 1) for l, h in box.site_ranges()]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _candidate_chains(path_sites: np.ndarray, cfg: DetectorConfig, n_visits: int):
    """(box, visits, completion time) for boxes passing the visit pattern,
    sorted by completion time."""
    least = max(2 * (cfg.rho - ceil_half_diag(cfg.box_side)), 1)
    groups = _grouped_box_visits(path_sites, cfg, n_visits, min_gap=least)
    found = []
    for tup, visits in groups.items():
        box = Box(cfg.n, tup, cfg.resolution)
        t = _visit_excursion_chain(path_sites, visits, box.center2(), cfg.rho, n_visits)
        if t is not None:
            found.append((box, visits, t))
    found.sort(key=lambda item: item[2])
    return found


def good_boxes_ptp(
    path: LatticePath, cfg: DetectorConfig, first_only: bool = False
) -> GoodBoxReport:
    """Boxes visited three times with two rho-excursions, not sealed off.

    The path should be a walk stopped at its exit of the lattice disc of
    radius ``cfg.resolution`` (the completion times are then exactly the
    stopped chain times of the definition).

    Candidates are settled in decreasing order of completion time: the
    occupied set only grows along the walk, so a ball still joined to the
    window edge by the full prefix up to some time is joined by every shorter
    prefix as well.  One component labeling therefore clears many candidates
    at once, and only the top unresolved candidate per round needs its exact
    prefix, obtained by un-painting cells whose first visit is too late.

    With ``first_only`` the scan stops at the first good box found (which
    round-robin order makes an arbitrary good box, not a distinguished one);
    use it when only emptiness of the report matters.
    """
    if cfg.kind != "ptp":
        raise ValueError(f"config kind is {cfg.kind!r}, not 'ptp'")
    if path.dim != cfg.d:
        raise ValueError("path dimension does not match config")
    found = _candidate_chains(path.sites, cfg, 3)
    window = cfg.window()
    boxes, times = [], {}
    if found:
        sites = path.sites
        lo, hi = np.array(window.lo), np.array(window.hi)
        t_in = np.flatnonzero(np.all((sites >= lo) & (sites <= hi), axis=1))
        flat = np.ravel_multi_index(window.index(sites[t_in]), window.shape)
        first_visit = np.full(math.prod(window.shape), len(sites), dtype=np.int64)
        first_visit[flat[::-1]] = t_in[::-1]
        cells = np.flatnonzero(first_visit < len(sites))
        order = np.argsort(first_visit[cells])
        cells = cells[order]
        cell_times = first_visit[cells]
        occ = np.zeros(window.shape, dtype=bool)
        occ_flat = occ.reshape(-1)
        # every box at this scale carries the same probe shape relative to
        # its corner, so build it once and shift
        probe0 = _probe_sites(
            _ball_sites((cfg.box_side - 1,) * cfg.d, cfg.ball_radius), cfg.d
        )
        p_lo, p_hi = probe0.min(axis=0), probe0.max(axis=0)
        strides = np.array(
            [math.prod(window.shape[a + 1 :]) for a in range(cfg.d)], dtype=np.int64
        )
        flat0 = (probe0 - lo) @ strides
        probes, flats = {}, {}
        for box, _v, _t in found:
            shift = np.array(box.idx) * cfg.box_side
            if np.any(shift + p_lo < lo) or np.any(shift + p_hi > hi):
                raise ValueError("candidate box probe leaves the window")
            probes[box.idx] = probe0 + shift
            flats[box.idx] = flat0 + int(shift @ strides)
        # ascending sweep: drop candidates whose ball is already walled in
        # within a small crop at their own completion time (conclusive)
        horizon = 0
        survivors = []
        for box, _v, t in found:
            cut = int(np.searchsorted(cell_times, t, side="right"))
            if cut > horizon:
                occ_flat[cells[horizon:cut]] = True
                horizon = cut
            p = probes[box.idx]
            if _sealed_in_crop(occ, window, p, 12):
                continue
            if _sealed_in_crop(occ, window, p, 40):
                continue
            survivors.append((box, _v, t))
        unresolved = survivors[::-1]
        cached = None
        while unresolved:
            top_box, _tv, t_top = unresolved[0]
            cut = int(np.searchsorted(cell_times, t_top, side="right"))
            if cut < horizon:
                occ_flat[cells[cut:horizon]] = False
                horizon = cut
                cached = None
            if _sealed_in_crop(occ, window, probes[top_box.idx], 96):
                unresolved.pop(0)
                continue
            if cached is None:
                cached = _label_free(occ)
            labels, reaches_edge = cached
            labels_flat = labels.reshape(-1)
            cat = np.concatenate([flats[b.idx] for b, _v, _t in unresolved])
            lens = np.fromiter(
                (flats[b.idx].size for b, _v, _t in unresolved), dtype=np.int64
            )
            seg = np.concatenate([[0], np.cumsum(lens)[:-1]])
            hit = reaches_edge[labels_flat[cat]] & ~occ_flat[cat]
            passed = np.maximum.reduceat(hit, seg)
            remaining = []
            for k, (box, _v, t) in enumerate(unresolved):
                if passed[k]:
                    boxes.append(box)
                    times[box.idx] = t
                    if first_only:
                        return GoodBoxReport(cfg, boxes, times, cfg.bulk())
                elif t < t_top:
                    remaining.append((box, _v, t))
            unresolved = remaining
    boxes.sort(key=lambda b: b.idx)
    return GoodBoxReport(cfg, boxes, times, cfg.bulk())


def good_boxes_pdcp(path: LatticePath, cfg: DetectorConfig) -> GoodBoxReport:
    """Boxes visited twice with one rho-excursion, with disjoint approach and
    return traces, and (planar case) two escape routes to the window edge."""
    if cfg.kind != "pdcp":
        raise ValueError(f"config kind is {cfg.kind!r}, not 'pdcp'")
    if path.dim != cfg.d:
        raise ValueError("path dimension does not match config")
    found = _candidate_chains(path.sites, cfg, 2)
    window = cfg.window()
    edge = window.edge_mask()
    structure = plus_structure(cfg.d)
    b = cfg.ball_radius
    boxes, times = [], {}
    for box, visits, t in found:
        c2 = box.center2()
        # approach piece: everything up to the first entry of the ball
        tau_ball = _first_at_distance(path.sites, 0, c2, 4 * b * b, far=False)
        # return piece: from the post-visit crossing of the ball's circle
        tau_circ = _first_at_distance(
            path.sites, int(visits[0]), c2, 4 * (b - 1) * (b - 1), far=True
        )
        if tau_ball is None or tau_circ is None or tau_circ > t:
            continue
        head = np.unique(
            np.ravel_multi_index(
                (path.sites[: tau_ball + 1] + 2 * cfg.resolution).T, (4 * cfg.resolution + 2,) * cfg.d
            )
        )
        tail = np.unique(
            np.ravel_multi_index(
                (path.sites[tau_circ : t + 1] + 2 * cfg.resolution).T, (4 * cfg.resolution + 2,) * cfg.d
            )
        )
        if np.intersect1d(head, tail, assume_unique=True).size:
            continue
        if cfg.d == 2:
            prefix = rasterize([path.sites[: t + 1]], window)
            region = disc_mask(window, c2, cfg.rho)
            free_all = prefix.free()
            labels_all, _n = ndimage.label(free_all, structure=structure)
            edge_ids = np.unique(labels_all[edge & free_all])
            to_edge = np.isin(labels_all, edge_ids[edge_ids > 0])
            labels_reg, n_reg = ndimage.label(region & free_all, structure=structure)
            ball_mask = disc_mask(window, c2, b)
            touching = np.unique(labels_reg[ball_mask & (labels_reg > 0)])
            escapes = 0
            for rid in touching:
                comp = labels_reg == rid
                if bool(np.any(to_edge & comp)):
                    escapes += 1
                if escapes >= 2:
                    break
            if escapes < 2:
                continue
        boxes.append(box)
        times[box.idx] = t
    boxes.sort(key=lambda b_: b_.idx)
    return GoodBoxReport(cfg, boxes, times, cfg.bulk())


def good_boxes_bdp(
    loop: LatticeLoop,
    soup: LoopSoup,
    cfg: DetectorConfig,
    second_loop: LatticeLoop | None = None,
) -> GoodBoxReport:
    """Boxes revisited by a macroscopic loop whose soup cluster leaves them
    connected to the window edge.

    Single-loop mode: the loop must visit the box twice around a
    rho-excursion (completion strictly before the loop closes), and the
    cluster of {loop} + soup containing the loop must not disconnect the box
    from the window edge.  With ``cfg.two_loop`` a second loop is required
    instead: the box must be visited by both loops, the loops must share a
    cluster of {loop, second_loop} + soup, and that cluster must not
    disconnect the box.  Reported times are chain completions (single) or the
    second loop's first visit (two-loop).
    """
    if cfg.kind != "bdp":
        raise ValueError(f"config kind is {cfg.kind!r}, not 'bdp'")
    if cfg.two_loop and second_loop is None:
        raise ValueError("two_loop mode needs a second loop")
    if not cfg.two_loop and second_loop is not None:
        raise ValueError("second loop given but two_loop mode is off")
    window = cfg.window()
    extra = [loop] if second_loop is None else [loop, second_loop]
    combined = LoopSoup(extra + list(soup.loops), soup.intensity, soup.domain, soup.cutoff)
    part = clusters(combined)
    boxes, times = [], {}
    if cfg.two_loop:
        if part.assignment[0] != part.assignment[1]:
            return GoodBoxReport(cfg, boxes, times, cfg.bulk())
        groups1 = _grouped_box_visits(loop.sites, cfg, 1)
        groups2 = _grouped_box_visits(second_loop.sites, cfg, 1)
        candidates = [
            (Box(cfg.n, tup, cfg.resolution), int(groups2[tup][0]))
            for tup in sorted(set(groups1) & set(groups2))
        ]
    else:
        # the chain must finish strictly before the loop closes at its root
        found = _candidate_chains(loop.sites, cfg, 2)
        candidates = [(box, t) for box, _v, t in found if t < loop.length]
    if candidates:
        occ = rasterize([part.sites[part.assignment[0]]], window).occupied
        labels, edge_ids = _label_free(occ)
        labels_flat = labels.reshape(-1)
        occ_flat = occ.reshape(-1)
        for box, t in candidates:
            probe = _flat_in(window, _probe_sites(_box_sites(box), cfg.d))
            if _probe_connected(labels_flat, edge_ids, occ_flat, probe):
                boxes.append(box)
                times[box.idx] = t
    boxes.sort(key=lambda b: b.idx)
    return GoodBoxReport(cfg, boxes, times, cfg.bulk())


# ---------------------------------------------------------------------------
# discrete macroscopic triple point
# ---------------------------------------------------------------------------


def has_macroscopic_ptp(walk: LatticePath, n_steps: int, delta: float) -> bool:
    """Whether the first ``n_steps`` of the walk contain a site z revisited at
    three times t1 < t2 < t, all gaps and t1 at least ``delta * n_steps``,
    with z on the outer boundary of the trace up to t (adjacent to the
    complement component reaching the window edge)."""
    if n_steps > walk.n_steps:
        raise ValueError(f"walk has {walk.n_steps} steps, {n_steps} requested")
    if walk.dim != 2:
        raise ValueError("macroscopic triple-point test is planar")
    gap = math.ceil(delta * n_steps)
    if 3 * gap > n_steps:
        return False
    sites = walk.sites[: n_steps + 1]
    codes = (sites[:, 0].astype(np.int64) << 21) ^ (sites[:, 1] & 0x1FFFFF)
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    cuts = np.flatnonzero(np.diff(sorted_codes)) + 1
    candidates = []
    for g in np.split(order, cuts):
        if len(g) < 3:
            continue
        ts = g  # visit times of one site, ascending (stable sort)
        t1 = ts[np.searchsorted(ts, gap)] if np.searchsorted(ts, gap) < len(ts) else None
        if t1 is None:
            continue
        j2 = np.searchsorted(ts, t1 + gap)
        if j2 == len(ts):
            continue
        t2 = ts[j2]
        j3 = np.searchsorted(ts, t2 + gap)
        if j3 == len(ts):
            continue
        t3 = int(ts[j3])
        if t3 <= n_steps:
            candidates.append((t3, tuple(int(c) for c in sites[t3])))
    if not candidates:
        return False
    candidates.sort()
    lo = sites.min(axis=0) - 1
    hi = sites.max(axis=0) + 1
    window = Window(tuple(lo), tuple(hi))
    structure = plus_structure(2)

    def outer_ok(t, z):
        occ = np.zeros(window.shape, dtype=bool)
        occ[window.index(sites[: t + 1])] = True
        labels, _ = ndimage.label(~occ, structure=structure)
        edge_ids = np.unique(labels[window.edge_mask() & ~occ])
        reach = np.isin(labels, edge_ids[edge_ids > 0])
        exposed = ndimage.binary_dilation(reach, structure=structure)
        return bool(exposed[z[0] - lo[0], z[1] - lo[1]])

    # screen: membership can only be lost as t grows, so a candidate failing
    # the test at the earliest candidate time fails at its own time too
    t_min = candidates[0][0]
    occ = np.zeros(window.shape, dtype=bool)
    occ[window.index(sites[: t_min + 1])] = True
    labels, _ = ndimage.label(~occ, structure=structure)
    edge_ids = np.unique(labels[window.edge_mask() & ~occ])
    reach = np.isin(labels, edge_ids[edge_ids > 0])
    exposed = ndimage.binary_dilation(reach, structure=structure)
    for t, z in candidates:
        if not exposed[z[0] - lo[0], z[1] - lo[1]]:
            continue
        if outer_ok(t, z):
            return True
    return False
