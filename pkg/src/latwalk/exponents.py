"""Crossing exponents: closed forms and Monte Carlo estimation.

Closed forms cover the planar pairwise intersection exponents, the
disconnection exponents obtained from them in the ``lambda -> 0`` limit, and
the loop-soup-weighted (generalized) disconnection family that interpolates
down to the plain disconnection values at intensity zero.

The Monte Carlo side estimates the decaying crossing probabilities behind
those exponents.  All events live on a family of concentric discrete circles:
walks start uniformly on the circle band at radius :data:`INNER_RADIUS` and
are stopped on reaching the band at radius ``2**j`` for each requested level
``j``.  One sampled configuration serves every level at once — the walks
stopped at a deeper circle extend the walks stopped at a shallower one — so
per-trial survival is non-increasing in ``j`` by construction and a trial that
fails a level is scored as failing all deeper ones without simulating them.

Three event kinds are supported:

``nonintersection`` (params ``k``, ``l``, ``d``)
    two packets of ``k`` and ``l`` independent walks share no site;
``disconnection`` (params ``k``, ``d = 2``)
    the union of ``k`` walks does not disconnect the origin from the window
    edge;
``generalized`` (params ``c``, ``k``, ``d = 2``)
    same, with an independent intensity-``c`` loop soup added to the union;
    the soup at level ``j`` holds the loops inside the radius-``2**j`` disc
    but not inside the inner disc, built up level by level through the
    restriction property.

Randomness is organized in per-trial streams (walks and soup draw from
separate substreams), so trial loops are order-independent and estimates at
different ``k`` or ``c`` sharing a seed are coupled pathwise: the walks drawn
for ``k`` walks are the first ``k`` walks drawn for ``k + 1``, and the
``c = 0`` generalized run reproduces the disconnection run exactly.

For probabilities too small for direct sampling, :func:`split_estimate` runs
fixed-effort multilevel splitting: a population of configurations is evolved
circle by circle, survivors are cloned back up to the population size after
each level (balanced copy counts, seed-derived assignment), and the per-level
survival fractions multiply to the curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GridMask, Window, is_disconnected
from .loopsoup import Disc, sample_loop_soup
from .paths import ExitDisc, rng_stream, sample_walk

__all__ = [
    "INNER_RADIUS",
    "ProbabilityCurve",
    "ExponentEstimate",
    "PopulationExtinct",
    "closed_form_exponent",
    "estimate_crossing_prob",
    "split_estimate",
    "fit_exponent",
    "curve_csv_rows",
    "estimate_csv_row",
]


INNER_RADIUS = 4
"""Radius of the inner circle that walks start from (band ``[3, 4]``)."""

_SOUP_STREAM_OFFSET = 1 << 40  # substream index offset separating soup draws


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def closed_form_exponent(kind: str, k: int, lam: float | None = None, c: float | None = None) -> float:
    """Exact value of a planar crossing exponent.

    ``kind`` selects the family: ``"intersection"`` needs ``k`` and ``lam``,
    ``"disconnection"`` needs ``k`` alone, ``"generalized"`` needs ``k`` and
    the soup intensity ``c`` in ``[0, 1]``.  ``k`` must be a positive integer;
    ``lam`` may be any nonnegative real.
    """
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ValueError(f"k must be a positive integer, got {k!r}")
    if kind == "intersection":
        if lam is None or lam < 0:
            raise ValueError("intersection exponent needs lam >= 0")
        return ((math.sqrt(24 * k + 1) + math.sqrt(24 * lam + 1) - 2) ** 2 - 4) / 48
    if kind == "disconnection":
        return ((math.sqrt(24 * k + 1) - 1) ** 2 - 4) / 48
    if kind == "generalized":
        if c is None or not 0 <= c <= 1:
            raise ValueError("generalized exponent needs intensity c in [0, 1]")
        root = math.sqrt(24 * k + 1 - c) - math.sqrt(1 - c)
        return (root**2 - 4 * (1 - c)) / 48
    raise ValueError(f"unknown exponent kind {kind!r}")


# ---------------------------------------------------------------------------
# curves and estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbabilityCurve:
    """Per-level trial counts for one crossing event.

    Level ``j`` stands for the circle of radius ``2**j``.  For direct curves
    ``successes[i] / trials[i]`` is the survival probability at level
    ``levels[i]``; splitting curves (``conditional=True``) store per-level
    conditional counts whose fractions multiply to the survival probability.
    ``steps`` is the total number of walk steps consumed, and ``truncated``
    marks curves cut short by a step budget.
    """

    kind: str
    params: dict
    levels: tuple[int, ...]
    trials: tuple[int, ...]
    successes: tuple[int, ...]
    conditional: bool = False
    truncated: bool = False
    steps: int = 0

    def __post_init__(self):
        if not (len(self.levels) == len(self.trials) == len(self.successes)):
            raise ValueError("levels, trials and successes must align")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if any(s > t for s, t in zip(self.successes, self.trials)):
            raise ValueError("successes cannot exceed trials")
        if any(t < 0 or s < 0 for s, t in zip(self.successes, self.trials)):
            raise ValueError("counts must be nonnegative")

    def probabilities(self) -> np.ndarray:
        frac = np.array(self.successes, dtype=float) / np.array(self.trials, dtype=float)
        return np.cumprod(frac) if self.conditional else frac

    def stderrs(self) -> np.ndarray:
        """Standard error of each probability.

        Binomial for direct curves; for splitting curves the delta-method
        product form ``p * sqrt(sum (1-f_i) / (f_i n_i))``, which treats the
        per-level fractions as independent.
        """
        n = np.array(self.trials, dtype=float)
        f = np.array(self.successes, dtype=float) / n
        if not self.conditional:
            return np.sqrt(f * (1.0 - f) / n)
        p = self.probabilities()
        with np.errstate(divide="ignore"):
            var_terms = np.where(f > 0, (1.0 - f) / (np.maximum(f, 1e-300) * n), np.inf)
        return p * np.sqrt(np.cumsum(var_terms))


@dataclass(frozen=True)
class ExponentEstimate:
    """A fitted exponent: slope of ``-log2 p_j`` against ``j``."""

    slope: float
    stderr: float
    fit_range: tuple[int, int]
    method: str

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")
        if self.fit_range[0] > self.fit_range[1]:
            raise ValueError("fit range is empty")
        if self.method not in ("regression", "ratio"):
            raise ValueError(f"unknown fit method {self.method!r}")


class PopulationExtinct(RuntimeError):
    """Raised when a splitting population loses every member at some level.

    ``last_level`` is the deepest level completed before extinction (None if
    the population died at the first level).
    """

    def __init__(self, level: int, last_level: int | None):
        self.level = level
        self.last_level = last_level
        super().__init__(
            f"population went extinct at level {level}"
            + (f" (last completed level {last_level})" if last_level is not None else "")
        )


def _param_string(params: dict) -> str:
    return ";".join(f"{key}={params[key]}" for key in params)


def curve_csv_rows(curve: ProbabilityCurve) -> list[str]:
    """One CSV row per level: kind, params, j, trials, successes."""
    tag = _param_string(curve.params) + (";split=1" if curve.conditional else "")
    return [
        f"{curve.kind},{tag},{j},{t},{s}"
        for j, t, s in zip(curve.levels, curve.trials, curve.successes)
    ]


def estimate_csv_row(curve: ProbabilityCurve, est: ExponentEstimate, seed: int) -> str:
    """CSV row: kind, params, slope, stderr, j0, j1, method, seed."""
    return (
        f"{curve.kind},{_param_string(curve.params)},{est.slope:.8g},{est.stderr:.4g},"
        f"{est.fit_range[0]},{est.fit_range[1]},{est.method},{seed}"
    )


# ---------------------------------------------------------------------------
# event machinery
# ---------------------------------------------------------------------------


def _check_params(kind: str, params: dict) -> dict:
    """Validate and canonicalize event parameters."""
    p = dict(params)
    needed = {"nonintersection": ("k", "l"), "disconnection": ("k",), "generalized": ("c", "k")}
    for name in needed.get(kind, ()):
        if name not in p:
            raise ValueError(f"kind {kind!r} needs parameter {name!r}")
    d = int(p.pop("d", 2))
    if kind == "nonintersection":
        k, l = int(p.pop("k")), int(p.pop("l"))
        if k < 1 or l < 1:
            raise ValueError("nonintersection needs k >= 1 and l >= 1")
        if d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        out = {"k": k, "l": l, "d": d}
    elif kind == "disconnection":
        k = int(p.pop("k"))
        if k < 0:
            raise ValueError("disconnection needs k >= 0")
        if d != 2:
            raise ValueError("disconnection events are planar")
        out = {"k": k, "d": d}
    elif kind == "generalized":
        c, k = float(p.pop("c")), int(p.pop("k"))
        if not 0 <= c <= 1:
            raise ValueError("soup intensity c must lie in [0, 1]")
        if k < 1:
            raise ValueError("generalized disconnection needs k >= 1")
        if d != 2:
            raise ValueError("generalized disconnection events are planar")
        out = {"c": c, "k": k, "d": d}
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    if p:
        raise ValueError(f"unexpected parameters {sorted(p)} for kind {kind!r}")
    return out


def _check_levels(levels) -> tuple[int, ...]:
    levels = tuple(int(j) for j in levels)
    if not levels:
        raise ValueError("need at least one level")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    if 2**levels[0] < INNER_RADIUS:
        raise ValueError(f"levels must satisfy 2**j >= {INNER_RADIUS}")
    return levels


def _start_band(d: int) -> np.ndarray:
    """Sites of the discrete inner circle: distance in [INNER_RADIUS-1, INNER_RADIUS]."""
    r = INNER_RADIUS
    axes = [np.arange(-r, r + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    d2 = np.sum(grid * grid, axis=1)
    return grid[(d2 >= (r - 1) ** 2) & (d2 <= r * r)]


class _Config:
    """One trial / population member: growing walks plus (optionally) a soup.

    Site arrays are only ever replaced, never mutated, so cloned members may
    share them; cloning copies the list containers alone.
    """

    __slots__ = ("walks", "packet_codes", "soup", "radius")

    def __init__(self, walks, packet_codes, soup, radius):
        self.walks = walks              # list of (m_i, d) site arrays
        self.packet_codes = packet_codes  # per packet: sorted unique site codes
        self.soup = soup                # list of loop site arrays, or None
        self.radius = radius            # circle the walks currently stand on

    def clone(self) -> "_Config":
        soup = None if self.soup is None else list(self.soup)
        return _Config(list(self.walks), list(self.packet_codes), soup, self.radius)


class _Event:
    """Shared level-extension and evaluation engine for one event kind."""

    def __init__(self, kind: str, params: dict, deepest: int):
        self.kind = kind
        self.params = params
        self.d = params["d"]
        if kind == "nonintersection":
            self.n_walks = params["k"] + params["l"]
            self.packets = ([*range(params["k"])], [*range(params["k"], self.n_walks)])
        else:
            self.n_walks = params["k"]
            self.packets = ()
        half = deepest + 1
        self.code_shape = (2 * half + 1,) * self.d
        self.code_offset = half
        self.band = _start_band(self.d)
        self.origin = np.zeros((1, self.d), dtype=np.int64)

    def _codes(self, sites: np.ndarray) -> np.ndarray:
        return np.unique(
            np.ravel_multi_index((sites + self.code_offset).T, self.code_shape)
        )

    def fresh(self, stream) -> _Config:
        starts = self.band[stream.integers(len(self.band), size=self.n_walks)]
        walks = [s.reshape(1, -1) for s in starts]
        codes = [
            self._codes(np.concatenate([walks[i] for i in pack])) if pack else None
            for pack in self.packets
        ]
        soup = [] if self.kind == "generalized" else None
        return _Config(walks, codes, soup, INNER_RADIUS)

    def extend(self, cfg: _Config, v: int, walk_stream, soup_stream) -> int:
        """Grow every walk (and the soup) out to the circle at radius v."""
        stop = ExitDisc((0,) * self.d, v - 1)
        steps = 0
        new_segs = []
        for i, trace in enumerate(cfg.walks):
            seg = sample_walk(trace[-1], stop, walk_stream).sites
            steps += len(seg) - 1
            new_segs.append(seg)
            cfg.walks[i] = np.concatenate([trace, seg[1:]]) if len(seg) > 1 else trace
        for pi, pack in enumerate(self.packets):
            fresh = np.concatenate([new_segs[i] for i in pack])
            cfg.packet_codes[pi] = np.union1d(cfg.packet_codes[pi], self._codes(fresh))
        if cfg.soup is not None and self.params["c"] > 0:
            grown = sample_loop_soup(
                Disc((0,) * self.d, v), self.params["c"], 0.0, soup_stream
            )
            prev2 = cfg.radius * cfg.radius
            for loop in grown:
                if int(np.max(np.sum(loop.sites * loop.sites, axis=1))) > prev2:
                    cfg.soup.append(loop.sites)
        cfg.radius = v
        return steps

    def holds(self, cfg: _Config) -> bool:
        if self.kind == "nonintersection":
            a, b = cfg.packet_codes
            return np.intersect1d(a, b, assume_unique=True).size == 0
        if self.n_walks == 0 and not cfg.soup:
            return True
        window = Window.centered(cfg.radius + 1, self.d)
        occ = np.zeros(window.shape, dtype=bool)
        for sites in cfg.walks + (cfg.soup or []):
            occ[window.index(sites)] = True
        mask = GridMask(window, occ)
        return not is_disconnected(mask, self.origin, window.edge_mask())


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def estimate_crossing_prob(
    kind: str,
    params: dict,
    levels,
    trials: int,
    seed: int,
    max_steps: int | None = None,
) -> ProbabilityCurve:
    """Direct Monte Carlo survival curve over circle levels.

    Each trial draws one configuration from the per-trial stream
    ``rng_stream(seed, t)`` and pushes it through every level; failures
    propagate to deeper levels without further simulation.  If ``max_steps``
    is given, the run stops once the cumulative walk-step count passes it —
    levels no trial reached are dropped and the curve is marked truncated.
    """
    params = _check_params(kind, params)
    levels = _check_levels(levels)
    if trials < 1:
        raise ValueError("need at least one trial")
    event = _Event(kind, params, 2 ** levels[-1])
    attempted = np.zeros(len(levels), dtype=np.int64)
    survived = np.zeros(len(levels), dtype=np.int64)
    total_steps = 0
    truncated = False
    for t in range(trials):
        if max_steps is not None and total_steps >= max_steps:
            truncated = True
            break
        walk_stream = rng_stream(seed, t)
        soup_stream = rng_stream(seed, _SOUP_STREAM_OFFSET + t)
        cfg = event.fresh(walk_stream)
        alive = True
        for li, j in enumerate(levels):
            if li and max_steps is not None and total_steps >= max_steps:
                truncated = True
                break
            if alive:
                total_steps += event.extend(cfg, 2**j, walk_stream, soup_stream)
                alive = event.holds(cfg)
            attempted[li] += 1
            survived[li] += alive
    kept = attempted > 0
    return ProbabilityCurve(
        kind,
        params,
        tuple(np.array(levels)[kept]),
        tuple(attempted[kept]),
        tuple(survived[kept]),
        truncated=truncated or not kept.all(),
        steps=total_steps,
    )


def split_estimate(
    kind: str,
    params: dict,
    levels,
    population: int,
    seed: int,
) -> ProbabilityCurve:
    """Fixed-effort multilevel splitting estimate of the survival curve.

    A population of ``population`` configurations is extended level by level;
    after each level the survivors are cloned back up to full size with
    balanced copy counts, assigned through a permutation drawn from the master
    seed.  The per-level surviving counts are returned as a conditional curve
    (their fractions multiply to the survival probability), which is unbiased
    for this fixed resampling schedule.  Walk futures extend survivors by the
    Markov property, and soup increments are independent by the restriction
    property, so no resampled history is ever re-weighted.
    """
    params = _check_params(kind, params)
    levels = _check_levels(levels)
    if population < 100:
        raise ValueError("population must be at least 100")
    event = _Event(kind, params, 2 ** levels[-1])
    resample_stream = rng_stream(seed, _SOUP_STREAM_OFFSET - 1)
    members = [
        event.fresh(rng_stream(seed, member)) for member in range(population)
    ]
    total_steps = 0
    counts = []
    for li, j in enumerate(levels):
        base = (li + 1) * population
        for i, cfg in enumerate(members):
            total_steps += event.extend(
                cfg,
                2**j,
                rng_stream(seed, base + i),
                rng_stream(seed, _SOUP_STREAM_OFFSET + base + i),
            )
        survivors = [cfg for cfg in members if event.holds(cfg)]
        counts.append(len(survivors))
        if not survivors:
            last = levels[li - 1] if li else None
            raise PopulationExtinct(j, last)
        order = resample_stream.permutation(len(survivors))
        members = [
            survivors[order[i % len(survivors)]].clone() for i in range(population)
        ]
    return ProbabilityCurve(
        kind,
        params,
        levels,
        (population,) * len(levels),
        tuple(counts),
        conditional=True,
        steps=total_steps,
    )


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def fit_exponent(
    curve: ProbabilityCurve,
    fit_range: tuple[int, int] | None = None,
    method: str = "regression",
) -> ExponentEstimate:
    """Exponent from the decay of a survival curve.

    Fits ``-log2(p_j)`` against ``j``.  The default range drops the two
    smallest levels, where the circle radii are only a few lattice spacings
    and the decay has not settled.  ``method="regression"`` is least squares
    with a residual-based standard error; ``method="ratio"`` averages the
    per-gap slopes of consecutive levels.
    """
    levels = np.array(curve.levels)
    if fit_range is None:
        if len(levels) < 5:
            raise ValueError("default fit range needs at least 5 levels (2 are dropped)")
        fit_range = (int(levels[2]), int(levels[-1]))
    j0, j1 = fit_range
    if j0 < levels[0] or j1 > levels[-1]:
        raise ValueError(f"fit range [{j0}, {j1}] outside curve levels")
    sel = (levels >= j0) & (levels <= j1)
    if sel.sum() < 3:
        raise ValueError("need at least 3 levels with data in the fit range")
    p = curve.probabilities()[sel]
    if np.any(p == 0):
        dead = levels[sel][np.argmax(p == 0)]
        raise ValueError(
            f"level {dead} has zero successes; use split_estimate to reach it"
        )
    x = levels[sel].astype(float)
    y = -np.log2(p)
    if method == "regression":
        xc = x - x.mean()
        sxx = float(xc @ xc)
        slope = float(xc @ y) / sxx
        resid = y - y.mean() - slope * xc
        sigma2 = float(resid @ resid) / (len(x) - 2)
        stderr = math.sqrt(max(sigma2, 0.0) / sxx)
    elif method == "ratio":
        gaps = (y[1:] - y[:-1]) / (x[1:] - x[:-1])
        slope = float(gaps.mean())
        stderr = float(gaps.std(ddof=1) / math.sqrt(len(gaps))) if len(gaps) > 1 else 0.0
    else:
        raise ValueError(f"unknown fit method {method!r}")
    return ExponentEstimate(slope, stderr, (int(j0), int(j1)), method)
