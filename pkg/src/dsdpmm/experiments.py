"""Experiment harness: single-cluster consistency grid and galaxy clustering.

The consistency grid fits both models to the same simulated single-cluster
datasets across a range of concentration settings and extracts the posterior
frequency of the number of blocks; the galaxy pipeline standardizes a
three-feature catalog, clusters it, and reports posterior topic densities
and final assignments in plot coordinates.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ValidationError
from .expfam_model import ExpFamSpec
from .partition_laws import MarkedHyper
from .samplers import SamplerConfig, Trace, run_chain
from .sgp_prior import KernelParams


@dataclass(frozen=True)
class ExperimentGrid:
    """Axes of the consistency experiment.

    ``alpha_fractions`` holds divisors d; each cell runs with concentration
    n / d.  Every (n, replicate) pair shares one dataset across models and
    divisors, which is what makes cross-divisor histograms comparable.
    """

    data_sizes: tuple
    alpha_fractions: tuple
    replicates: int
    models: tuple = ("dsdp", "dpmm")

    def __post_init__(self):
        if any(int(n) < 2 for n in self.data_sizes):
            raise ValidationError("data sizes must be >= 2")
        if any(float(d) < 1 for d in self.alpha_fractions):
            raise ValidationError("alpha fractions (divisors) must be >= 1")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if any(m not in ("dsdp", "dpmm") for m in self.models):
            raise ValidationError("models must be a subset of {'dsdp', 'dpmm'}")


@dataclass(frozen=True)
class GalaxyRecord:
    right_ascension: float
    declination: float
    velocity: float


def gen_single_cluster(n: int, seed: int) -> np.ndarray:
    """n draws from a single one-dimensional standard Gaussian, as (n, 1)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 1))


def posterior_k_histogram(trace: Trace, last: int) -> dict:
    """Normalized frequency of the block count over the final ``last`` records."""
    if last < 1 or last > len(trace):
        raise ValidationError(
            f"window must satisfy 1 <= last <= len(trace); got {last} of {len(trace)}"
        )
    counts = {}
    for r in trace.records[-last:]:
        counts[r.num_blocks] = counts.get(r.num_blocks, 0) + 1
    return {k: counts[k] / last for k in sorted(counts)}


def histogram_tv(a: dict, b: dict) -> float:
    """Total variation distance between two histograms over integer support."""
    support = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in support)


@dataclass
class GridReport:
    rows: list = field(default_factory=list)
    histograms: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "alpha_fraction", "model", "replicate", "num_blocks", "frequency"])
            for row in self.rows:
                writer.writerow([row[0], repr(float(row[1])), row[2], row[3], row[4], repr(row[5])])


def _cell_seed(master: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master)] + [int(k) for k in key])


def _run_grid_cell(args):
    (data, n, frac, model, rep, cfg_kwargs, hyper_kwargs, spec, kernel,
     chain_seed, score_last) = args
    hyper = MarkedHyper(alpha_star=float(n) / float(frac), **hyper_kwargs)
    cfg = SamplerConfig(model=model, **cfg_kwargs)
    trace = run_chain(data, cfg, hyper, spec, kernel, seed=chain_seed)
    hist = posterior_k_histogram(trace, min(score_last, len(trace)))
    return (n, frac, model, rep), hist


def run_consistency_grid(grid: ExperimentGrid, cfg: SamplerConfig, hyper_template: MarkedHyper,
                         spec: ExpFamSpec, kernel: KernelParams = None, seed: int = 0,
                         score_last: int = 1000, workers: int = 1) -> GridReport:
    """Run every grid cell and collect posterior block-count histograms.

    ``hyper_template`` supplies a0, b0 and gamma; alpha* is set per cell to
    n / divisor.  Cells are independent, so with ``workers > 1`` they run in
    separate processes; the report is assembled in deterministic cell order
    either way.
    """
    hyper_kwargs = {
        "a0": hyper_template.a0,
        "b0": hyper_template.b0,
        "gamma_mfm": hyper_template.gamma_mfm,
    }
    cfg_kwargs = {
        "aux_m": cfg.aux_m,
        "iters": cfg.iters,
        "burn_in": cfg.burn_in,
        "split_merge_every": cfg.split_merge_every,
        "restricted_scans": cfg.restricted_scans,
        "domain_expand": cfg.domain_expand,
    }
    tasks = []
    for ni, n in enumerate(grid.data_sizes):
        for rep in range(grid.replicates):
            data_seed = _cell_seed(seed, 1, ni, rep).generate_state(1)[0]
            data = gen_single_cluster(int(n), int(data_seed))
            for mi, model in enumerate(grid.models):
                for fi, frac in enumerate(grid.alpha_fractions):
                    chain_seed = int(_cell_seed(seed, 2, ni, rep, mi, fi).generate_state(1)[0])
                    tasks.append((data, int(n), float(frac), model, rep, cfg_kwargs,
                                  hyper_kwargs, spec, kernel, chain_seed, score_last))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_grid_cell, tasks))
    else:
        results = [_run_grid_cell(t) for t in tasks]
    report = GridReport()
    for key, hist in results:
        report.histograms[key] = hist
        n, frac, model, rep = key
        for k in sorted(hist):
            report.rows.append((n, frac, model, rep, k, hist[k]))
    return report


# ---------------------------------------------------------------------------
# galaxy pipeline

_RA_NAMES = {"ra", "rightascension", "radeg"}
_DEC_NAMES = {"dec", "declination", "de", "decdeg"}
_VEL_NAMES = {"velocity", "vel", "v", "speed", "cz", "velkms"}


def _normalize_header(token: str) -> str:
    return "".join(ch for ch in token.lower() if ch.isalnum())


def _split_line(line: str):
    return [t for t in line.replace(",", " ").split() if t]


def load_galaxy_csv(path):
    """Parse a galaxy catalog with right ascension, declination and velocity.

    The header row is required; column names are matched case-insensitively
    against common synonyms, extra columns are ignored, and both comma- and
    whitespace-separated files are accepted.  Returns
    ``(records, raw, standardized)`` where the arrays are (n, 3) and each
    standardized feature has zero mean and unit variance.
    """
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = [_normalize_header(t) for t in _split_line(lines[0])]
    cols = {}
    for want, names in (("ra", _RA_NAMES), ("dec", _DEC_NAMES), ("velocity", _VEL_NAMES)):
        idx = [i for i, tok in enumerate(header) if tok in names]
        if not idx:
            raise DataFormatError(f"{path}: no column matching '{want}' in header {lines[0]!r}")
        cols[want] = idx[0]
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        toks = _split_line(line)
        try:
            ra = float(toks[cols["ra"]])
            dec = float(toks[cols["dec"]])
            vel = float(toks[cols["velocity"]])
        except (ValueError, IndexError) as exc:
            raise DataFormatError(f"{path}: line {lineno}: cannot parse row: {exc}") from exc
        if not all(map(math.isfinite, (ra, dec, vel))):
            raise DataFormatError(f"{path}: line {lineno}: non-finite value")
        if vel <= 0:
            raise DataFormatError(f"{path}: line {lineno}: velocity must be positive")
        records.append(GalaxyRecord(ra, dec, vel))
    if not records:
        raise DataFormatError(f"{path}: no data rows")
    raw = np.array([[r.right_ascension, r.declination, r.velocity] for r in records])
    std = (raw - raw.mean(axis=0)) / raw.std(axis=0)
    return records, raw, std


def galaxy_plot_coordinates(records):
    """Display coordinates: 1e-4 * v * (cos, sin) of the declination angle."""
    out = np.empty((len(records), 2))
    for i, r in enumerate(records):
        ang = math.radians(r.declination)
        out[i, 0] = 1e-4 * r.velocity * math.cos(ang)
        out[i, 1] = 1e-4 * r.velocity * math.sin(ang)
    return out


def collect_topic_samples(trace: Trace, start: int = 0):
    """Flatten per-iteration block topics from ``records[start:]`` into one list."""
    samples = []
    for r in trace.records[start:]:
        if r.topics is None:
            raise ValidationError("trace was recorded without collect_topics")
        samples.extend(np.asarray(t) for t in r.topics)
    return samples


def topic_density_report(samples, dimension: int, bin_width: float = 0.1):
    """Histogram density of topic samples along one feature dimension.

    Returns a list of (bin_center, density) rows; density integrates to one
    (sum of density * bin_width == 1).
    """
    if bin_width <= 0:
        raise ValidationError("bin_width must be positive")
    values = [float(np.asarray(s).reshape(-1)[dimension]) for s in samples]
    if not values:
        raise ValidationError("no topic samples to bin")
    counts = {}
    for v in values:
        idx = math.floor(v / bin_width)
        counts[idx] = counts.get(idx, 0) + 1
    total = len(values)
    return [
        ((idx + 0.5) * bin_width, counts[idx] / (total * bin_width))
        for idx in sorted(counts)
    ]


def write_density_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "density"])
        for center, density in rows:
            writer.writerow([repr(float(center)), repr(float(density))])


def write_assignments_csv(records, assignments, path):
    coords = galaxy_plot_coordinates(records)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "block", "x", "y"])
        for i, z in enumerate(assignments):
            writer.writerow([i, int(z), repr(float(coords[i, 0])), repr(float(coords[i, 1]))])
