"""Reproducible experiment drivers and an append-only result store.

Five drivers measure the statistics of good boxes and of the discrete
macroscopic triple-point event:

* :func:`run_moment_scaling` — the first moment E[#good boxes] per scale;
* :func:`run_pair_correlation` — joint goodness of box pairs binned by
  dyadic distance;
* :func:`run_existence_decay` — P(at least one good box) per scale;
* :func:`run_annulus_profile` — conditional structure around a uniformly
  chosen good box: annulus occupation counts and the negative first moment;
* :func:`run_discrete_ptp_decay` — P(a length-N walk has a delta-macroscopic
  triple point) along a dyadic range of N.

Protocol.  Trial t draws its randomness from ``rng_stream(seed, offset + t)``
— a global per-trial index, so a run over trials ``[0, T)`` equals the
concatenation of runs over ``[0, S)`` and ``[S, T)`` (same seed, offsets 0
and S) configuration by configuration.  One sampled configuration (walk, or
conditioned loop plus soup) serves every scale of its trial; scales are
scanned coarse to fine, and for the triple-visit kind the scan stops at the
first empty scale, which is exact because a good box's parent is good.
Likewise the discrete driver samples one walk of the largest requested
length and evaluates all shorter lengths on its prefixes.

Every stored statistic is an integer counter (sums of counts, indicator
sums, sparse occupation histograms).  Aggregation over trials is therefore
exact: it does not depend on worker count, chunking, or merge order, and
re-running an identical spec reproduces identical statistics byte for byte.
Derived quantities — means, consecutive-scale ratios, pair-correlation
slopes, inverse moments — are computed from merged counters at summary time.

The store is a line-delimited JSON file.  Each configuration contributes one
header line carrying its full canonical key next to its 12-hex hash, and one
line per record; appends rewrite the file through a temporary name, so a
reader never observes a torn write.  The hash covers everything that changes
the law of a single trial (experiment, kind, geometry, intensity, seed) but
not the sample size, which is what lets split runs merge by key.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import os
import tempfile
import time
from dataclasses import dataclass, field

import hashlib

import numpy as np

from . import __version__
from .detectors import (
    DetectorConfig,
    GoodBoxReport,
    bulk_boxes,
    good_boxes_bdp,
    good_boxes_pdcp,
    good_boxes_ptp,
    has_macroscopic_ptp,
)
from .loopsoup import Disc, sample_conditioned_loop, sample_loop_soup
from .paths import ExitDisc, FixedLength, rng_stream, sample_walk

__all__ = [
    "ExperimentSpec",
    "ExperimentRecord",
    "ResultStore",
    "StoreCollisionError",
    "run_moment_scaling",
    "run_pair_correlation",
    "run_existence_decay",
    "run_annulus_profile",
    "run_discrete_ptp_decay",
    "run_experiment",
    "save_records",
    "load_store",
    "aggregate",
    "records_to_csv",
    "summarize",
    "bulk_pair_bins",
    "pair_slope",
    "inverse_moment",
    "paired_gap",
    "annulus_schedule",
    "low_count",
    "worker_count",
]

EXPERIMENTS = (
    "moment-scaling",
    "pair-correlation",
    "existence-decay",
    "annulus-profile",
    "discrete-ptp-decay",
)

_DETECTOR_KINDS = ("ptp", "pdcp", "bdp")
_LOW_COUNT_PAIRS = 50


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment configuration plus its sample-size window.

    ``scales`` is the range of dyadic scales n for the good-box experiments;
    ``lengths`` is the range of walk lengths N for the discrete decay (and
    must be powers of two).  ``trials`` and ``trial_offset`` select the
    window ``[offset, offset + trials)`` of the per-seed trial sequence;
    they do not enter the configuration hash, so runs over disjoint windows
    of the same configuration land under one store key and merge exactly.
    ``delta`` doubles as the detector margin (a power of two, validated by
    the detector config) and as the gap fraction of the discrete event
    (any value in (0, 1)).
    """

    experiment: str
    kind: str | None = None
    scales: tuple[int, ...] = ()
    lengths: tuple[int, ...] = ()
    trials: int = 1
    seed: int = 0
    trial_offset: int = 0
    delta: float = 2.0**-4
    iota: float = 0.25
    resolution: int = 256
    d: int = 2
    c: float = 1.0
    two_loop: bool = False
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(n) for n in self.scales))
        object.__setattr__(self, "lengths", tuple(int(n) for n in self.lengths))
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.trial_offset < 0:
            raise ValueError("trial offset must be >= 0")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("soup intensity c must lie in [0, 1]")
        if self.experiment == "discrete-ptp-decay":
            if self.kind not in (None, "ptp"):
                raise ValueError("discrete decay is a triple-point experiment")
            if self.scales:
                raise ValueError("discrete decay takes lengths, not scales")
            if not self.lengths:
                raise ValueError("length range must be nonempty")
            if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])):
                raise ValueError("lengths must be strictly increasing")
            if any(n < 2 or n & (n - 1) for n in self.lengths):
                raise ValueError("lengths must be powers of two")
            if not 0.0 < self.delta < 1.0:
                raise ValueError("delta must lie in (0, 1)")
            if self.d != 2:
                raise ValueError("discrete decay is planar")
            return
        if self.kind not in _DETECTOR_KINDS:
            raise ValueError(f"experiment {self.experiment!r} needs a detector kind")
        if self.lengths:
            raise ValueError(f"experiment {self.experiment!r} takes scales, not lengths")
        if not self.scales:
            raise ValueError("scale range must be nonempty")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError("scales must be strictly increasing")
        if self.experiment == "annulus-profile" and self.kind != "ptp":
            raise ValueError("annulus profile is defined for the ptp kind")
        self.detector_configs()  # validates delta/iota/resolution/d per scale

    def detector_configs(self) -> dict[int, DetectorConfig]:
        return {
            n: DetectorConfig(
                self.kind, n, self.delta, self.iota, self.resolution, self.d, self.two_loop
            )
            for n in self.scales
        }

    def key(self) -> str:
        """Canonical configuration key: everything but the trial window."""
        return (
            f"{self.experiment} kind={self.kind} d={self.d} R={self.resolution} "
            f"delta={self.delta!r} iota={self.iota!r} c={self.c!r} "
            f"two_loop={self.two_loop} scales={','.join(map(str, self.scales))} "
            f"lengths={','.join(map(str, self.lengths))} seed={self.seed}"
        )

    def hash(self) -> str:
        return hashlib.sha256(self.key().encode()).hexdigest()[:12]


@dataclass(frozen=True)
class ExperimentRecord:
    """Aggregated counters for one label (one scale or one length) of a run.

    ``stats`` holds integer counters only; the wall time is the whole run's
    elapsed seconds (trials are shared across labels, so per-label timing is
    not separable) and is excluded from equality.
    """

    config: str
    seed: int
    label: str
    stats: dict[str, int]
    walltime: float = field(compare=False, default=0.0)
    version: str = __version__

    def __post_init__(self):
        if not self.label:
            raise ValueError("record label must be nonempty")
        for k, v in self.stats.items():
            if not isinstance(v, int):
                raise ValueError(f"stat {k!r} is not an integer counter")

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config,
                "seed": self.seed,
                "label": self.label,
                "stats": self.stats,
                "walltime": self.walltime,
                "version": self.version,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "ExperimentRecord":
        obj = json.loads(line)
        return ExperimentRecord(
            obj["config"],
            obj["seed"],
            obj["label"],
            obj["stats"],
            obj.get("walltime", 0.0),
            obj.get("version", __version__),
        )


class StoreCollisionError(RuntimeError):
    """Two different configuration keys map to the same stored hash."""


@dataclass
class ResultStore:
    """In-memory view of a result file: config keys by hash, plus records."""

    specs: dict[str, str]
    records: list[ExperimentRecord]

    def merge(self, other: "ResultStore") -> "ResultStore":
        specs = dict(self.specs)
        for h, key in other.specs.items():
            if specs.setdefault(h, key) != key:
                raise StoreCollisionError(f"hash {h} maps to two different configurations")
        return ResultStore(specs, self.records + other.records)


def aggregate(records) -> dict[tuple[str, int, str, str], dict[str, int]]:
    """Sum counters over records sharing (config, seed, label, version).

    Missing keys count as zero, so sparse histograms merge correctly; the
    operation is commutative and associative because every value is an int.
    """
    out: dict[tuple[str, int, str, str], dict[str, int]] = {}
    for rec in records:
        tot = out.setdefault((rec.config, rec.seed, rec.label, rec.version), {})
        for k, v in rec.stats.items():
            tot[k] = tot.get(k, 0) + v
    return out


def save_records(path, spec: ExperimentSpec, records) -> None:
    """Append records (and the spec header, if new) atomically.

    The whole file is rewritten through a temporary name in the same
    directory and moved into place, so concurrent readers see either the old
    or the new contents.  A stored hash whose key differs from ``spec.key()``
    aborts with :class:`StoreCollisionError` before anything is written.
    """
    store = load_store(path) if os.path.exists(path) else ResultStore({}, [])
    h = spec.hash()
    if store.specs.get(h, spec.key()) != spec.key():
        raise StoreCollisionError(f"store {path} already uses hash {h} for another configuration")
    lines = []
    for hh, key in store.specs.items():
        lines.append(json.dumps({"config": hh, "key": key}, sort_keys=True))
    if h not in store.specs:
        lines.append(json.dumps({"config": h, "key": spec.key()}, sort_keys=True))
    lines += [r.to_json() for r in store.records]
    lines += [r.to_json() for r in records]
    _atomic_write(path, "\n".join(lines) + "\n")


def load_store(path) -> ResultStore:
    specs: dict[str, str] = {}
    records: list[ExperimentRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "key" in obj:
                h = obj["config"]
                if specs.setdefault(h, obj["key"]) != obj["key"]:
                    raise StoreCollisionError(f"hash {h} maps to two different configurations")
            else:
                records.append(ExperimentRecord.from_json(line))
    return ResultStore(specs, records)


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".latwalk-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


CSV_HEADER = "# latwalk results v1"


def records_to_csv(records) -> str:
    """Flat CSV rendering: one row per counter, fixed versioned header."""
    lines = [CSV_HEADER, "config,seed,label,stat,value"]
    for rec in records:
        for k in sorted(rec.stats):
            lines.append(f"{rec.config},{rec.seed},{rec.label},{k},{rec.stats[k]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# trial evaluation
# ---------------------------------------------------------------------------


def worker_count() -> int:
    env = os.environ.get("LATWALK_WORKERS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _chunk_worker(args):
    spec, lo, hi = args
    return _rows(spec, lo, hi)


def _all_rows(spec: ExperimentSpec):
    """Per-trial rows for the whole window, in trial order.

    Workers evaluate disjoint chunks; the master concatenates them by chunk
    index, so the row sequence never depends on the worker count.
    """
    workers = worker_count()
    if workers <= 1 or spec.trials < 4 * workers:
        return _rows(spec, 0, spec.trials)
    chunk = math.ceil(spec.trials / (4 * workers))
    tasks = [
        (spec, lo, min(lo + chunk, spec.trials)) for lo in range(0, spec.trials, chunk)
    ]
    with multiprocessing.Pool(workers) as pool:
        parts = pool.map(_chunk_worker, tasks)
    return [row for part in parts for row in part]


def _rows(spec: ExperimentSpec, lo: int, hi: int):
    if spec.experiment == "discrete-ptp-decay":
        return _discrete_rows(spec, lo, hi)
    return _detector_rows(spec, lo, hi)


def _sample_parts(spec: ExperimentSpec, rng):
    if spec.kind in ("ptp", "pdcp"):
        start = (0,) * spec.d
        return (sample_walk(start, ExitDisc(start, spec.resolution), rng),)
    domain = Disc((0, 0), spec.resolution)
    loop = sample_conditioned_loop(spec.iota, domain, rng)
    second = sample_conditioned_loop(spec.iota, domain, rng) if spec.two_loop else None
    soup = sample_loop_soup(domain, spec.c, 0.0, rng)
    return (loop, soup, second)


def _scan(spec: ExperimentSpec, cfg: DetectorConfig, parts, first_only: bool) -> GoodBoxReport:
    if spec.kind == "ptp":
        return good_boxes_ptp(parts[0], cfg, first_only=first_only)
    if spec.kind == "pdcp":
        return good_boxes_pdcp(parts[0], cfg)
    loop, soup, second = parts
    return good_boxes_bdp(loop, soup, cfg, second)


def _dist_bin(d2x4, resolution: int):
    """Dyadic distance bin: center distance in (2^-m-1, 2^-m] * R -> m.

    The argument is the squared distance between doubled centers, an exact
    integer, and distances equal to R * 2^-m sit exactly on a representable
    power of two, so the boundary assignment is exact.
    """
    return np.floor(
        0.5 * (np.log2(4.0 * resolution * resolution) - np.log2(d2x4))
    ).astype(np.int64)


def _centers(boxes) -> np.ndarray:
    return np.array([b.center2() for b in boxes], dtype=np.int64).reshape(-1, len(boxes[0].idx) if boxes else 2)


def _pair_bins(report: GoodBoxReport, cfg: DetectorConfig) -> tuple[int, ...]:
    """Unordered good pairs per distance bin m = -1 .. n (index shifted by 1)."""
    bins = np.zeros(cfg.n + 2, dtype=np.int64)
    if len(report.boxes) >= 2:
        c = _centers(report.boxes)
        iu = np.triu_indices(len(c), 1)
        d2 = ((c[iu[0]] - c[iu[1]]) ** 2).sum(axis=1)
        np.add.at(bins, _dist_bin(d2, cfg.resolution) + 1, 1)
    return tuple(int(x) for x in bins)


def annulus_schedule(n: int) -> list[tuple[int, int]]:
    """Annulus radius exponents for scale n: L = floor(sqrt(n)) and, for
    i = 1 .. floor(L/2), the annulus between 2^(-n+iL) and 2^(-n+(i+1)L)."""
    ell = math.isqrt(n)
    return [(i * ell, (i + 1) * ell) for i in range(1, ell // 2 + 1)]


def _annulus_entry(report: GoodBoxReport, cfg: DetectorConfig, rng):
    """(count, annulus counts, truncation flags) around a uniform good box.

    The picked box is excluded from every annulus (its center is at distance
    zero); annuli are half-open at their outer radius so they are disjoint;
    a flag marks annuli not fully contained in the bulk.
    """
    count = len(report.boxes)
    sched = annulus_schedule(cfg.n)
    if count == 0:
        return 0, (0,) * len(sched), (0,) * len(sched)
    pick = _centers(report.boxes)[int(rng.integers(count))]
    c = _centers(report.boxes)
    d2 = ((c - pick) ** 2).sum(axis=1)
    radius = math.sqrt(float((pick.astype(float) ** 2).sum())) / 2.0
    counts, flags = [], []
    for lo_e, hi_e in sched:
        r_in = cfg.box_side << lo_e
        r_out = cfg.box_side << hi_e
        counts.append(int(np.count_nonzero((d2 >= 4 * r_in * r_in) & (d2 < 4 * r_out * r_out))))
        inside = (radius - r_out >= cfg.iota * cfg.resolution) and (
            radius + r_out <= (1 - cfg.iota) * cfg.resolution
        )
        flags.append(0 if inside else 1)
    return count, tuple(counts), tuple(flags)


def _detector_rows(spec: ExperimentSpec, lo: int, hi: int):
    cfgs = spec.detector_configs()
    probe_only = spec.experiment == "existence-decay" and spec.kind == "ptp"
    rows = []
    for t in range(lo, hi):
        rng = rng_stream(spec.seed, spec.trial_offset + t)
        parts = _sample_parts(spec, rng)
        per = []
        alive = True
        for n in spec.scales:
            cfg = cfgs[n]
            if alive:
                rep = _scan(spec, cfg, parts, probe_only)
                # a good box's parent is good, so one empty scale settles
                # every finer scale of this trial exactly
                if spec.kind == "ptp" and len(rep) == 0:
                    alive = False
            else:
                rep = GoodBoxReport(cfg, [], {}, cfg.bulk())
            if spec.experiment == "moment-scaling":
                per.append(len(rep))
            elif spec.experiment == "existence-decay":
                per.append(int(len(rep) > 0))
            elif spec.experiment == "pair-correlation":
                per.append(_pair_bins(rep, cfg))
            else:
                per.append(_annulus_entry(rep, cfg, rng))
        rows.append(tuple(per))
    return rows


def _discrete_rows(spec: ExperimentSpec, lo: int, hi: int):
    lengths = spec.lengths
    # three spaced revisits need 3*ceil(delta*N) <= N steps: otherwise the
    # probability is exactly zero and the walk need not be sampled
    short = [3 * math.ceil(spec.delta * n) > n for n in lengths]
    rows = []
    for t in range(lo, hi):
        if all(short):
            rows.append((0,) * len(lengths))
            continue
        rng = rng_stream(spec.seed, spec.trial_offset + t)
        walk = sample_walk((0, 0), FixedLength(max(lengths)), rng)
        rows.append(
            tuple(
                0 if s else int(has_macroscopic_ptp(walk, n, spec.delta))
                for n, s in zip(lengths, short)
            )
        )
    return rows


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _fold(spec: ExperimentSpec, rows) -> list[tuple[str, dict[str, int]]]:
    trials = len(rows)
    out = []
    if spec.experiment == "discrete-ptp-decay":
        short = [3 * math.ceil(spec.delta * n) > n for n in spec.lengths]
        cols = list(zip(*rows))
        for i, n in enumerate(spec.lengths):
            out.append(
                (
                    f"N={n}",
                    {
                        "trials": trials,
                        "hits": int(sum(cols[i])),
                        "exact_zero": trials if short[i] else 0,
                    },
                )
            )
        first, last = cols[0], cols[-1]
        diffs = [a - b for a, b in zip(first, last)]
        out.append(
            (
                "gap",
                {
                    "trials": trials,
                    "first_minus_last": int(sum(diffs)),
                    "abs_diff": int(sum(abs(x) for x in diffs)),
                },
            )
        )
        return out
    for i, n in enumerate(spec.scales):
        col = [row[i] for row in rows]
        if spec.experiment == "moment-scaling":
            stats = {
                "trials": trials,
                "boxes": int(sum(col)),
                "nonempty": int(sum(1 for x in col if x)),
            }
        elif spec.experiment == "existence-decay":
            stats = {"trials": trials, "nonempty": int(sum(col))}
        elif spec.experiment == "pair-correlation":
            sums = [int(sum(b)) for b in zip(*col)]
            stats = {"trials": trials, "pairs": int(sum(sums))}
            for m, s in enumerate(sums, start=-1):
                stats[f"pairs_m{m}"] = s
        else:
            stats = {"trials": trials, "nonempty": int(sum(1 for cnt, _a, _f in col if cnt))}
            for cnt, _a, _f in col:
                if cnt:
                    key = f"hist_{cnt}"
                    stats[key] = stats.get(key, 0) + 1
            n_ann = len(annulus_schedule(n))
            for j in range(n_ann):
                stats[f"ann_{j + 1}"] = int(sum(a[j] for _c, a, _f in col))
                stats[f"trunc_{j + 1}"] = int(sum(f[j] for _c, _a, f in col))
        out.append((f"n={n}", stats))
    return out


def _run(spec: ExperimentSpec, name: str) -> list[ExperimentRecord]:
    if spec.experiment != name:
        raise ValueError(f"spec is for experiment {spec.experiment!r}, not {name!r}")
    t0 = time.perf_counter()
    rows = _all_rows(spec)
    wall = time.perf_counter() - t0
    h = spec.hash()
    return [
        ExperimentRecord(h, spec.seed, label, stats, wall)
        for label, stats in _fold(spec, rows)
    ]


def run_moment_scaling(spec: ExperimentSpec) -> list[ExperimentRecord]:
    """E[#good boxes] per scale, from full counts on shared configurations."""
    return _run(spec, "moment-scaling")


def run_pair_correlation(spec: ExperimentSpec) -> list[ExperimentRecord]:
    """Joint pair counts per dyadic distance bin, per scale."""
    return _run(spec, "pair-correlation")


def run_existence_decay(spec: ExperimentSpec) -> list[ExperimentRecord]:
    """P(#good boxes >= 1) per scale on shared configurations."""
    return _run(spec, "existence-decay")


def run_annulus_profile(spec: ExperimentSpec) -> list[ExperimentRecord]:
    """Conditional annulus counts and the occupation histogram per scale."""
    return _run(spec, "annulus-profile")


def run_discrete_ptp_decay(spec: ExperimentSpec) -> list[ExperimentRecord]:
    """P(delta-macroscopic triple point) per walk length, on shared walks."""
    return _run(spec, "discrete-ptp-decay")


_RUNNERS = {
    "moment-scaling": run_moment_scaling,
    "pair-correlation": run_pair_correlation,
    "existence-decay": run_existence_decay,
    "annulus-profile": run_annulus_profile,
    "discrete-ptp-decay": run_discrete_ptp_decay,
}


def run_experiment(spec: ExperimentSpec) -> list[ExperimentRecord]:
    return _RUNNERS[spec.experiment](spec)


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------


def bulk_pair_bins(cfg: DetectorConfig) -> np.ndarray:
    """Unordered bulk-box pairs per distance bin m = -1 .. n (index m+1).

    Recomputable denominator for the pair-correlation estimate; evaluated in
    row blocks to keep the pairwise distance table small.
    """
    centers = _centers(list(bulk_boxes(cfg)))
    total = len(centers)
    bins = np.zeros(cfg.n + 2, dtype=np.int64)
    cols = np.arange(total)
    for lo in range(0, total, 256):
        blk = centers[lo : lo + 256]
        d2 = np.zeros((len(blk), total), dtype=np.int64)
        for a in range(centers.shape[1]):
            d2 += (blk[:, a : a + 1] - centers[None, :, a]) ** 2
        upper = cols[None, :] > (lo + np.arange(len(blk)))[:, None]
        bins += np.bincount(
            _dist_bin(d2[upper], cfg.resolution) + 1, minlength=cfg.n + 2
        )
    return bins


def low_count(stats: dict[str, int], threshold: int = _LOW_COUNT_PAIRS) -> bool:
    """Whether a pair-correlation record rests on too few joint events."""
    return stats.get("pairs", 0) < threshold


def pair_slope(
    spec: ExperimentSpec, n: int, stats: dict[str, int], min_pairs: int = 10
):
    """Least-squares slope of log2 Phat against the bin index m.

    Phat(m) divides the joint counts by trials times the bulk-pair
    denominator; bins with fewer than ``min_pairs`` joint events (or none in
    the bulk) are left out.  Returns (slope, bins used).
    """
    cfg = DetectorConfig(spec.kind, n, spec.delta, spec.iota, spec.resolution, spec.d, spec.two_loop)
    denom = bulk_pair_bins(cfg)
    ms, ys = [], []
    for m in range(0, cfg.n + 1):
        pairs = stats.get(f"pairs_m{m}", 0)
        if pairs >= min_pairs and denom[m + 1] > 0:
            ms.append(m)
            ys.append(math.log2(pairs / (stats["trials"] * int(denom[m + 1]))))
    if len(ms) < 2:
        raise ValueError("need at least 2 usable bins for a pair-correlation slope")
    slope = np.polyfit(np.array(ms, dtype=float), np.array(ys), 1)[0]
    return float(slope), ms


def inverse_moment(stats: dict[str, int]) -> float:
    """E[1/#good boxes | at least one], from the sparse occupation histogram."""
    nonempty = stats.get("nonempty", 0)
    if nonempty == 0:
        raise ValueError("no nonempty trials: the conditional moment is undefined")
    acc = math.fsum(
        cnt / int(key[5:])
        for key, cnt in sorted(stats.items())
        if key.startswith("hist_")
    )
    return acc / nonempty


def paired_gap(stats: dict[str, int]) -> tuple[float, float]:
    """Mean and standard error of the per-trial first-minus-last indicator
    difference of a discrete-decay run (a paired comparison, so the shared
    walk only sharpens it)."""
    t = stats["trials"]
    mean = stats["first_minus_last"] / t
    var = max(stats["abs_diff"] / t - mean * mean, 0.0)
    return mean, math.sqrt(var / t)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def _stats_by_label(spec: ExperimentSpec, records) -> dict[str, dict[str, int]]:
    merged = aggregate(records)
    out = {}
    for (config, _seed, label, _version), stats in merged.items():
        if config == spec.hash():
            out[label] = stats
    return out


def summarize(spec: ExperimentSpec, records) -> str:
    """Deterministic plain-text summary of one configuration's records."""
    by = _stats_by_label(spec, records)
    head = f"{spec.experiment} config={spec.hash()} seed={spec.seed}"
    lines = [head]
    if spec.experiment == "discrete-ptp-decay":
        lines.append("  N trials hits p")
        for n in spec.lengths:
            s = by[f"N={n}"]
            p = s["hits"] / s["trials"]
            mark = " exact-zero" if s["exact_zero"] else ""
            lines.append(f"  {n} {s['trials']} {s['hits']} {p:.6g}{mark}")
        mean, se = paired_gap(by["gap"])
        lines.append(f"  gap first-last: {mean:.6g} +- {se:.3g}")
        return "\n".join(lines)
    if spec.experiment == "moment-scaling":
        lines.append("  n trials boxes mean nonempty")
        means = {}
        for n in spec.scales:
            s = by[f"n={n}"]
            means[n] = s["boxes"] / s["trials"]
            lines.append(
                f"  {n} {s['trials']} {s['boxes']} {means[n]:.6g} {s['nonempty']}"
            )
        for a, b in zip(spec.scales, spec.scales[1:]):
            ratio = "n/a" if means[a] == 0 else f"{means[b] / means[a]:.6g}"
            lines.append(f"  ratio {a}->{b}: {ratio}")
        return "\n".join(lines)
    if spec.experiment == "existence-decay":
        lines.append("  n trials nonempty p stderr")
        for n in spec.scales:
            s = by[f"n={n}"]
            p = s["nonempty"] / s["trials"]
            se = math.sqrt(p * (1 - p) / s["trials"])
            lines.append(f"  {n} {s['trials']} {s['nonempty']} {p:.6g} {se:.3g}")
        return "\n".join(lines)
    if spec.experiment == "pair-correlation":
        for n in spec.scales:
            s = by[f"n={n}"]
            mark = " low-count" if low_count(s) else ""
            lines.append(f"  n={n} trials={s['trials']} pairs={s['pairs']}{mark}")
            try:
                slope, ms = pair_slope(spec, n, s)
                lines.append(f"  slope n={n}: {slope:.6g} over m={ms}")
            except ValueError:
                lines.append(f"  slope n={n}: n/a")
        return "\n".join(lines)
    lines.append("  n trials nonempty invmoment annuli")
    for n in spec.scales:
        s = by[f"n={n}"]
        if s["nonempty"] == 0:
            lines.append(f"  {n} {s['trials']} 0 empty")
            continue
        inv = inverse_moment(s)
        parts = []
        for j in range(1, len(annulus_schedule(n)) + 1):
            mean = s[f"ann_{j}"] / s["nonempty"]
            frac = s[f"trunc_{j}"] / s["nonempty"]
            parts.append(f"N_{j}={mean:.6g}(trunc {frac:.3g})")
        lines.append(
            f"  {n} {s['trials']} {s['nonempty']} {inv:.6g} " + " ".join(parts)
        )
    return "\n".join(lines)
