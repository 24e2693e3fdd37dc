"""Inference engines for the marked-DP mixture and its DPMM baseline.

Four samplers share one chain state:

* a thinned assignment Gibbs sweep (auxiliary-component style, with the
  marked size weights and Cox-thinning factors of the doubly stochastic
  model),
* a split-merge Metropolis move built from restricted Gibbs scans,
* the plain-DPMM baseline (all marked and thinning factors set to one), and
* a prior-only chain (likelihood also set to one) whose stationary law must
  match the enumerated partition mass, which is how the whole stack is
  validated.

Within a chain everything is single-threaded and owned by one mutable
ChainState; chains are cheap to run in parallel because they share only
immutable inputs.  The assignment sweep is the hot path: per-block weight
ingredients that do not depend on the observation are cached in flat arrays
and maintained incrementally, so one reassignment costs a handful of float
operations per candidate block.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError
from .expfam_model import ExpFamSpec, SuffStats, log_marginal_mq, merge_stats
from .partition_laws import MarkedHyper, Partition, log_marked_q_exact
from .sgp_prior import (
    KernelParams,
    KnotPredictor,
    SgpState,
    data_domain,
    latent_birth_death_step,
    log_sigmoid,
    sigmoid,
    solve_intensity_values,
)

_LOG_2PI = math.log(2.0 * math.pi)

#: block count at which the per-observation weight computation switches from
#: scalar python arithmetic to vectorized numpy (faster only for wide states).
_VECTOR_MIN_K = 24

_MODELS = ("dsdp", "dpmm")


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the chain driver.

    ``unit_thinning`` forces every Cox-thinning factor to one (the SGP layer
    is disabled entirely); ``unit_likelihood`` additionally forces the
    likelihood to one, which turns the chain into a prior-only partition
    sampler.  Both are diagnostics used by the validation suite.
    """

    model: str = "dsdp"
    aux_m: int = 3
    iters: int = 100
    burn_in: int = 0
    split_merge_every: int = 1
    restricted_scans: int = 3
    unit_thinning: bool = False
    unit_likelihood: bool = False
    collect_topics: bool = False
    domain_expand: float = 0.1

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ValidationError(f"model must be one of {_MODELS}, got {self.model!r}")
        if self.aux_m < 1:
            raise ValidationError("aux_m must be >= 1")
        if self.iters < 1:
            raise ValidationError("iters must be >= 1")
        if not 0 <= self.burn_in < self.iters:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < iters")
        if self.split_merge_every < 1:
            raise ValidationError("split_merge_every must be >= 1")
        if self.restricted_scans < 0:
            raise ValidationError("restricted_scans must be >= 0")

    @property
    def uses_gp(self) -> bool:
        return self.model == "dsdp" and not self.unit_thinning

    @property
    def uses_marked_q(self) -> bool:
        return self.model == "dsdp"


@dataclass
class ChainState:
    """Full mutable sampler state for one chain.

    Block statistics live in flat arrays with spare capacity; ``counts`` is
    float64 but always holds exact integers.  ``w_base``, ``pm`` and
    ``i2pv`` cache the observation-independent part of each block's
    assignment weight (log size x marked ratio x thinning plus the
    log-normalizer of the predictive), the predictive mean, and 1/(2 x
    predictive variance).  For a dsdp chain with the GP enabled, block k's
    topic knot is ``sgp.locations[k]``.
    """

    data: np.ndarray
    assignments: np.ndarray
    counts: np.ndarray
    sums: np.ndarray
    sqsums: np.ndarray
    num_blocks: int
    log_sig: np.ndarray
    w_base: np.ndarray
    pm: np.ndarray
    i2pv: np.ndarray
    sgp: SgpState | None
    hyper: MarkedHyper
    spec: ExpFamSpec
    cfg: SamplerConfig
    kernel: KernelParams | None
    aux_base: float = 0.0
    iteration: int = 0
    rng_seed: int = 0
    rng: np.random.Generator = None
    _rows: list = None

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]

    @property
    def partition(self) -> Partition:
        return Partition.from_labels(self.assignments.tolist())

    @property
    def cluster_stats(self):
        return [
            SuffStats(
                int(self.counts[k]),
                tuple(self.sums[k]),
                tuple(self.sqsums[k]),
            )
            for k in range(self.num_blocks)
        ]

    def block_members(self, k) -> np.ndarray:
        return np.nonzero(self.assignments == k)[0]

    def posterior_mean(self, k) -> np.ndarray:
        eta1 = np.asarray(self.spec.base_eta1)
        return (eta1 + self.sums[k]) / (self.spec.base_eta2 + self.counts[k])

    def check_consistency(self):
        """Recompute block statistics and weight caches and compare."""
        k = self.num_blocks
        counts = np.zeros(k)
        sums = np.zeros((k, self.dim))
        sqsums = np.zeros((k, self.dim))
        np.add.at(counts, self.assignments, 1.0)
        np.add.at(sums, self.assignments, self.data)
        np.add.at(sqsums, self.assignments, self.data**2)
        if np.any(counts < 1):
            raise ValidationError("internal invariant violated: empty block present")
        if not (
            np.array_equal(counts, self.counts[:k])
            and np.allclose(sums, self.sums[:k], atol=1e-6)
            and np.allclose(sqsums, self.sqsums[:k], atol=1e-6)
        ):
            raise ValidationError("internal invariant violated: stats out of sync")
        stale = (self.w_base[:k].copy(), self.pm[:k].copy(), self.i2pv[:k].copy())
        for kk in range(k):
            _update_block_cache(self, kk)
        if not (
            np.allclose(stale[0], self.w_base[:k], atol=1e-9)
            and np.allclose(stale[1], self.pm[:k], atol=1e-9)
            and np.allclose(stale[2], self.i2pv[:k], atol=1e-9)
        ):
            raise ValidationError("internal invariant violated: weight cache out of sync")
        if self.sgp is not None and self.sgp.accepted_count != k:
            raise ValidationError("internal invariant violated: SGP knots out of sync")

    def _snap_stats(self):
        # Replace accumulated sums with freshly recomputed ones so float
        # drift from incremental add/remove never compounds.
        k = self.num_blocks
        sums = np.zeros((k, self.dim))
        sqsums = np.zeros((k, self.dim))
        np.add.at(sums, self.assignments, self.data)
        np.add.at(sqsums, self.assignments, self.data**2)
        self.sums[:k] = sums
        self.sqsums[:k] = sqsums
        for kk in range(k):
            _update_block_cache(self, kk)

    def clone(self) -> "ChainState":
        """Independent copy sharing only the immutable inputs."""
        import copy

        sgp = None
        if self.sgp is not None:
            sgp = SgpState(
                locations=[loc.copy() for loc in self.sgp.locations],
                values=list(self.sgp.values),
                accepted_count=self.sgp.accepted_count,
                thinned_count=self.sgp.thinned_count,
                alpha_star=self.sgp.alpha_star,
                proposal_b=self.sgp.proposal_b,
                domain=self.sgp.domain,
            )
        return ChainState(
            data=self.data,
            assignments=self.assignments.copy(),
            counts=self.counts.copy(),
            sums=self.sums.copy(),
            sqsums=self.sqsums.copy(),
            num_blocks=self.num_blocks,
            log_sig=self.log_sig.copy(),
            w_base=self.w_base.copy(),
            pm=self.pm.copy(),
            i2pv=self.i2pv.copy(),
            sgp=sgp,
            hyper=self.hyper,
            spec=self.spec,
            cfg=self.cfg,
            kernel=self.kernel,
            aux_base=self.aux_base,
            iteration=self.iteration,
            rng_seed=self.rng_seed,
            rng=copy.deepcopy(self.rng),
            _rows=self._rows,
        )


@dataclass
class IterationRecord:
    iteration: int
    num_blocks: int
    block_sizes: tuple
    sm_move: str = None
    sm_accepted: bool = None
    sm_log_accept: float = None
    bd_move: str = None
    bd_accepted: bool = None
    bd_a_value: float = None
    thinned_count: int = None
    wall_ms: float = 0.0
    topics: tuple = None


@dataclass
class Trace:
    """Per-iteration chain records plus the final assignment snapshot.

    Wall-clock times are kept in memory for reporting but are never written
    to the serialized artifacts, which keeps every artifact byte-reproducible
    under a fixed seed.
    """

    model: str
    seed: int
    records: list = field(default_factory=list)
    final_assignments: np.ndarray = None

    def __len__(self):
        return len(self.records)

    def k_series(self):
        return [r.num_blocks for r in self.records]

    def total_wall_ms(self):
        return sum(r.wall_ms for r in self.records)

    def to_jsonl(self, path):
        import json

        with open(path, "w") as fh:
            for r in self.records:
                row = {
                    "iteration": r.iteration,
                    "num_blocks": r.num_blocks,
                    "block_sizes": list(r.block_sizes),
                    "sm_move": r.sm_move,
                    "sm_accepted": r.sm_accepted,
                    "sm_log_accept": r.sm_log_accept,
                    "bd_move": r.bd_move,
                    "bd_accepted": r.bd_accepted,
                    "bd_a_value": r.bd_a_value,
                    "thinned_count": r.thinned_count,
                }
                if r.topics is not None:
                    row["topics"] = [list(t) for t in r.topics]
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def summary_csv(self, path):
        import csv

        splits = merges = 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iteration", "num_blocks", "max_block_size", "accepted_splits", "accepted_merges"]
            )
            for r in self.records:
                if r.sm_accepted:
                    if r.sm_move == "split":
                        splits += 1
                    elif r.sm_move == "merge":
                        merges += 1
                writer.writerow(
                    [r.iteration, r.num_blocks, max(r.block_sizes), splits, merges]
                )


def partition_key(assignments) -> bytes:
    """Canonical restricted-growth key of a labeling (for frequency counting)."""
    remap = {}
    out = bytearray()
    for a in assignments:
        a = int(a)
        if a not in remap:
            remap[a] = len(remap)
        out.append(remap[a])
    return bytes(out)


# ---------------------------------------------------------------------------
# chain construction and weight caches


def _update_block_cache(state: ChainState, k: int):
    """Recompute the cached weight ingredients of block k from its stats."""
    c = state.counts[k]
    cfg = state.cfg
    spec = state.spec
    w = math.log(c)
    if cfg.uses_marked_q:
        w += math.log((state.hyper.a0 + c) / (c + 1.0))
    if cfg.uses_gp:
        w += state.log_sig[k]
    if not cfg.unit_likelihood:
        eta = spec.base_eta2 + c
        ratio = (eta + 1.0) / eta
        for dd in range(state.data.shape[1]):
            pv = spec.known_variance[dd] * ratio
            state.pm[k, dd] = (spec.base_eta1[dd] + state.sums[k, dd]) / eta
            state.i2pv[k, dd] = 0.5 / pv
            w += -0.5 * (_LOG_2PI + math.log(pv))
    state.w_base[k] = w


def init_chain_state(data, cfg: SamplerConfig, hyper: MarkedHyper, spec: ExpFamSpec,
                     kernel: KernelParams = None, seed: int = 0) -> ChainState:
    """Build a chain with every observation in a single starting block."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValidationError("data must be a nonempty (n, d) matrix")
    if data.shape[1] != spec.dimension:
        raise ValidationError(
            f"data dimension {data.shape[1]} does not match spec dimension {spec.dimension}"
        )
    if cfg.uses_gp and kernel is None:
        raise ValidationError("dsdp with GP thinning enabled requires kernel parameters")
    n, d = data.shape
    cap = n + cfg.aux_m + 1
    aux_base = math.log(hyper.alpha_star / cfg.aux_m)
    if cfg.uses_marked_q:
        aux_base += math.log(hyper.a0) - hyper.a0 * math.log(n + hyper.b0)
    state = ChainState(
        data=data,
        assignments=np.zeros(n, dtype=np.int64),
        counts=np.zeros(cap),
        sums=np.zeros((cap, d)),
        sqsums=np.zeros((cap, d)),
        num_blocks=1,
        log_sig=np.zeros(cap),
        w_base=np.zeros(cap),
        pm=np.zeros((cap, d)),
        i2pv=np.zeros((cap, d)),
        sgp=None,
        hyper=hyper,
        spec=spec,
        cfg=cfg,
        kernel=kernel,
        aux_base=aux_base,
        rng_seed=int(seed),
        rng=np.random.default_rng(seed),
        _rows=[tuple(row) for row in data],
    )
    state.counts[0] = n
    state.sums[0] = data.sum(axis=0)
    state.sqsums[0] = (data**2).sum(axis=0)
    if cfg.uses_gp:
        lo, hi = data_domain(data, cfg.domain_expand)
        state.sgp = SgpState(
            locations=[state.posterior_mean(0)],
            values=[0.0],
            accepted_count=1,
            thinned_count=0,
            alpha_star=hyper.alpha_star,
            domain=(lo, hi),
        )
        _refresh_knots(state)
    else:
        _update_block_cache(state, 0)
    return state


def _refresh_knots(state: ChainState):
    """Move accepted knots to the block posterior means and re-solve values."""
    sgp = state.sgp
    for k in range(state.num_blocks):
        sgp.locations[k] = state.posterior_mean(k)
    y0 = np.asarray(sgp.values, dtype=float)
    y = solve_intensity_values(sgp, state.kernel, y0=y0)
    sgp.values = [float(v) for v in y]
    sgp.check()
    for k in range(state.num_blocks):
        state.log_sig[k] = log_sigmoid(sgp.values[k])
        _update_block_cache(state, k)


# ---------------------------------------------------------------------------
# assignment sampling


def _remove_observation(state: ChainState, i: int):
    z = int(state.assignments[i])
    x = state._rows[i]
    state.counts[z] -= 1.0
    for dd in range(len(x)):
        state.sums[z, dd] -= x[dd]
        state.sqsums[z, dd] -= x[dd] * x[dd]
    if state.counts[z] == 0.0:
        last = state.num_blocks - 1
        if z != last:
            state.counts[z] = state.counts[last]
            state.sums[z] = state.sums[last]
            state.sqsums[z] = state.sqsums[last]
            state.log_sig[z] = state.log_sig[last]
            state.w_base[z] = state.w_base[last]
            state.pm[z] = state.pm[last]
            state.i2pv[z] = state.i2pv[last]
            state.assignments[state.assignments == last] = z
            if state.sgp is not None:
                state.sgp.locations[z] = state.sgp.locations[last]
                state.sgp.values[z] = state.sgp.values[last]
        if state.sgp is not None:
            del state.sgp.locations[last]
            del state.sgp.values[last]
            state.sgp.accepted_count -= 1
        state.counts[last] = 0.0
        state.num_blocks = last
    else:
        _update_block_cache(state, z)
    state.assignments[i] = -1
    return x


def _insert_observation(state: ChainState, i: int, pick: int, aux_theta=None, aux_y=None):
    x = state._rows[i]
    if pick < state.num_blocks:
        state.counts[pick] += 1.0
        for dd in range(len(x)):
            state.sums[pick, dd] += x[dd]
            state.sqsums[pick, dd] += x[dd] * x[dd]
        state.assignments[i] = pick
        _update_block_cache(state, pick)
        return
    k = state.num_blocks
    state.counts[k] = 1.0
    for dd in range(len(x)):
        state.sums[k, dd] = x[dd]
        state.sqsums[k, dd] = x[dd] * x[dd]
    state.assignments[i] = k
    state.num_blocks = k + 1
    if state.sgp is not None:
        state.sgp.locations.insert(k, np.asarray(aux_theta, dtype=float))
        state.sgp.values.insert(k, float(aux_y))
        state.sgp.accepted_count += 1
        state.log_sig[k] = log_sigmoid(float(aux_y))
    _update_block_cache(state, k)


def _existing_log_weights_scalar(state: ChainState, x):
    kk = state.num_blocks
    wb = state.w_base[:kk].tolist()
    if state.cfg.unit_likelihood:
        return wb
    if state.data.shape[1] == 1:
        pm = state.pm[:kk, 0].tolist()
        ip = state.i2pv[:kk, 0].tolist()
        x0 = x[0]
        return [wb[k] - (x0 - pm[k]) * (x0 - pm[k]) * ip[k] for k in range(kk)]
    out = []
    pm = state.pm
    ip = state.i2pv
    for k in range(kk):
        acc = wb[k]
        for dd in range(len(x)):
            dxd = x[dd] - pm[k, dd]
            acc -= dxd * dxd * ip[k, dd]
        out.append(acc)
    return out


def _existing_log_weights_vector(state: ChainState, x):
    kk = state.num_blocks
    if state.cfg.unit_likelihood:
        return state.w_base[:kk].copy()
    if state.data.shape[1] == 1:
        dx = x[0] - state.pm[:kk, 0]
        return state.w_base[:kk] - dx * dx * state.i2pv[:kk, 0]
    dx = np.asarray(x)[None, :] - state.pm[:kk]
    return state.w_base[:kk] - np.sum(dx * dx * state.i2pv[:kk], axis=1)


def assignment_log_weights(state: ChainState, i: int, aux_theta=None, aux_log_sig=None):
    """Log weights for reassigning observation i, for inspection and tests.

    Works on a clone, so the caller's state is untouched.  Returns
    ``(existing, aux)`` log-weight lists computed after removing observation
    i from its block.  ``aux_theta`` must be (aux_m, d) when the likelihood
    is active; ``aux_log_sig`` must be length aux_m when thinning is active.
    """
    cfg = state.cfg
    work = state.clone()
    x = _remove_observation(work, i)
    existing = _existing_log_weights_scalar(work, x)
    aux = []
    for j in range(cfg.aux_m):
        lw = work.aux_base
        if cfg.uses_gp:
            lw += float(aux_log_sig[j])
        if not cfg.unit_likelihood:
            for dd in range(work.dim):
                v = work.spec.known_variance[dd]
                dxd = x[dd] - aux_theta[j][dd]
                lw += -0.5 * (_LOG_2PI + math.log(v)) - dxd * dxd / (2.0 * v)
        aux.append(lw)
    return existing, aux


def _sample_index_scalar(log_weights, u: float) -> int:
    m = max(log_weights)
    total = 0.0
    acc = []
    for v in log_weights:
        total += math.exp(v - m)
        acc.append(total)
    t = u * total
    for idx, a in enumerate(acc):
        if a > t:
            return idx
    return len(acc) - 1


def _sample_index_vector(lw: np.ndarray, u: float) -> int:
    w = np.exp(lw - np.max(lw))
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(idx, lw.shape[0] - 1)


def _assignment_update(state: ChainState, i: int, u: float,
                       aux_theta=None, aux_y=None, aux_log_sig=None,
                       aux_loglik=None):
    """Reassign observation i given pre-drawn randomness.

    ``aux_log_sig`` and ``aux_loglik`` are per-auxiliary lists aligned with
    ``aux_theta``; whichever factors the configuration disables are simply
    not consumed.
    """
    cfg = state.cfg
    x = _remove_observation(state, i)
    kk = state.num_blocks
    base = state.aux_base
    if kk >= _VECTOR_MIN_K:
        lw_exist = _existing_log_weights_vector(state, x)
        lw_aux = np.full(cfg.aux_m, base)
        if cfg.uses_gp:
            lw_aux += np.asarray(aux_log_sig)
        if not cfg.unit_likelihood:
            lw_aux += np.asarray(aux_loglik)
        pick = _sample_index_vector(np.concatenate([lw_exist, lw_aux]), u)
    else:
        lw = _existing_log_weights_scalar(state, x)
        use_lik = not cfg.unit_likelihood
        use_gp = cfg.uses_gp
        for j in range(cfg.aux_m):
            v = base
            if use_gp:
                v += aux_log_sig[j]
            if use_lik:
                v += aux_loglik[j]
            lw.append(v)
        pick = _sample_index_scalar(lw, u)
    if pick >= kk:
        j = pick - kk
        theta = aux_theta[j] if aux_theta is not None else state.data[i]
        y = aux_y[j] if aux_y is not None else 0.0
        _insert_observation(state, i, kk, theta, y)
    else:
        _insert_observation(state, i, pick)


def _draw_aux_batch(state: ChainState, rng, rows):
    """Pre-draw auxiliary topics, values and per-row likelihoods for ``rows``.

    Auxiliary topics come from the base distribution; their latent values
    come from the GP conditional given the current knot set (evaluated once
    per batch), which is the per-sweep granularity the knots are refreshed
    at anyway.
    """
    cfg = state.cfg
    size, d = rows.shape
    m = cfg.aux_m
    aux_theta = aux_y = aux_logsig = aux_loglik = None
    if not cfg.unit_likelihood:
        pm = np.asarray(state.spec.prior_mean)
        psd = np.sqrt(np.asarray(state.spec.prior_variance))
        aux_theta = pm[None, None, :] + psd[None, None, :] * rng.standard_normal((size, m, d))
        kv = np.asarray(state.spec.known_variance)
        dx = rows[:, None, :] - aux_theta
        aux_loglik = np.sum(-0.5 * (_LOG_2PI + np.log(kv))[None, None, :]
                            - dx * dx / (2.0 * kv)[None, None, :], axis=2)
    if cfg.uses_gp:
        z = rng.standard_normal((size, m))
        if state.sgp.total > 0:
            pred = KnotPredictor(state.sgp.locations, state.sgp.values, state.kernel)
            mean, var = pred.mean_and_var(aux_theta.reshape(size * m, d))
        else:
            mean = np.zeros(size * m)
            var = np.full(size * m, state.kernel.variance + state.kernel.jitter)
        aux_y = (mean + np.sqrt(var) * z.ravel()).reshape(size, m)
        np.clip(aux_y, -600.0, 600.0, out=aux_y)
        aux_logsig = -np.log1p(np.exp(-np.abs(aux_y))) + np.minimum(aux_y, 0.0)
    return aux_theta, aux_y, aux_logsig, aux_loglik


def _assignment_sweep(state: ChainState, rng):
    """One full pass reassigning every observation in index order."""
    n = state.n
    u_cat = rng.random(n).tolist()
    aux_theta, aux_y, aux_logsig, aux_loglik = _draw_aux_batch(state, rng, state.data)
    logsig_rows = aux_logsig.tolist() if aux_logsig is not None else None
    loglik_rows = aux_loglik.tolist() if aux_loglik is not None else None
    for i in range(n):
        _assignment_update(
            state, i, u_cat[i],
            aux_theta[i] if aux_theta is not None else None,
            aux_y[i] if aux_y is not None else None,
            logsig_rows[i] if logsig_rows is not None else None,
            loglik_rows[i] if loglik_rows is not None else None,
        )


def assignment_step(state: ChainState, i: int, rng) -> ChainState:
    """Resample the block of observation i (single-site public operation)."""
    if not 0 <= i < state.n:
        raise ValidationError(f"observation index {i} out of range")
    u = rng.random()
    aux_theta, aux_y, aux_logsig, aux_loglik = _draw_aux_batch(
        state, rng, state.data[i : i + 1]
    )
    _assignment_update(
        state, i, float(u),
        aux_theta[0] if aux_theta is not None else None,
        aux_y[0] if aux_y is not None else None,
        aux_logsig[0].tolist() if aux_logsig is not None else None,
        aux_loglik[0].tolist() if aux_loglik is not None else None,
    )
    return state


def dpmm_baseline_step(state: ChainState, i: int, rng) -> ChainState:
    """Single-site update under plain-DPMM semantics; state must be a dpmm chain."""
    if state.cfg.model != "dpmm":
        raise ValidationError("dpmm_baseline_step requires a chain configured with model='dpmm'")
    return assignment_step(state, i, rng)


def prior_partition_step(state: ChainState, rng) -> ChainState:
    """One prior-only sweep: likelihood and thinning factors all equal one.

    The stationary partition law of repeated application is the exact marked
    partition mass, which the enumeration oracle can verify for small n.
    """
    if not (state.cfg.unit_likelihood and not state.cfg.uses_gp):
        raise ValidationError(
            "prior_partition_step requires unit_likelihood=True and thinning disabled"
        )
    _assignment_sweep(state, rng)
    return state


def run_prior_partition_chain(n, hyper: MarkedHyper, sweeps: int, seed: int = 0,
                              record_per_step: bool = True):
    """Run a prior-only chain and count visited partitions.

    Weights need no log-space here (n is desk scale), so block weights come
    from small lookup tables, which keeps long validation chains cheap.
    Returns ``(counter over canonical partition keys, number of samples)``.
    Recording happens after every site update by default, which thins the
    autocorrelation of the sweep-level chain.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    a0 = hyper.a0
    # weight tables indexed by the block size excluding the current item
    w_exist = [0.0] + [c * (a0 + c) / (c + 1.0) for c in range(1, n + 1)]
    w_new = hyper.alpha_star * a0 / (n + hyper.b0) ** a0
    labels = [0] * n
    sizes = {0: n}
    counts = {}
    samples = 0
    for _ in range(sweeps):
        u_cat = rng.random(n).tolist()
        for i in range(n):
            z = labels[i]
            sizes[z] -= 1
            if sizes[z] == 0:
                del sizes[z]
            keys = list(sizes.keys())
            total = 0.0
            acc = []
            for k in keys:
                total += w_exist[sizes[k]]
                acc.append(total)
            total += w_new
            t = u_cat[i] * total
            pick = None
            for idx, a in enumerate(acc):
                if a > t:
                    pick = keys[idx]
                    break
            if pick is None:
                # new block: reuse the smallest free label to keep labels < n
                for cand in range(n):
                    if cand not in sizes:
                        pick = cand
                        break
                sizes[pick] = 0
            sizes[pick] += 1
            labels[i] = pick
            if record_per_step:
                key = partition_key(labels)
                counts[key] = counts.get(key, 0) + 1
                samples += 1
        if not record_per_step:
            key = partition_key(labels)
            counts[key] = counts.get(key, 0) + 1
            samples += 1
    return counts, samples


# ---------------------------------------------------------------------------
# split-merge


class _ScanSide:
    """Running statistics of one side of a restricted scan (python floats)."""

    __slots__ = ("count", "ssum", "sqsum")

    def __init__(self, x):
        self.count = 1.0
        self.ssum = list(x)
        self.sqsum = [v * v for v in x]

    def add(self, x):
        self.count += 1.0
        for dd in range(len(x)):
            self.ssum[dd] += x[dd]
            self.sqsum[dd] += x[dd] * x[dd]

    def remove(self, x):
        self.count -= 1.0
        for dd in range(len(x)):
            self.ssum[dd] -= x[dd]
            self.sqsum[dd] -= x[dd] * x[dd]

    def stats(self) -> SuffStats:
        return SuffStats(int(self.count), tuple(self.ssum), tuple(self.sqsum))


def _scan_log_cond(side: _ScanSide, x, state: ChainState, eta1, kv) -> float:
    c = side.count
    lw = math.log(c)
    if state.cfg.uses_marked_q:
        lw += math.log((state.hyper.a0 + c) / (c + 1.0))
    if not state.cfg.unit_likelihood:
        eta = state.spec.base_eta2 + c
        ratio = (eta + 1.0) / eta
        for dd in range(len(x)):
            pv = kv[dd] * ratio
            dxd = x[dd] - (eta1[dd] + side.ssum[dd]) / eta
            lw += -0.5 * (_LOG_2PI + math.log(pv)) - dxd * dxd / (2.0 * pv)
    return lw


def _restricted_fill(state: ChainState, left: _ScanSide, right: _ScanSide,
                     members, rng, forced_sides=None):
    """Allocate members to two seeded sides via restricted Gibbs scans.

    Runs a sequential allocation pass, then ``restricted_scans - 1`` free
    sweeps (launch construction), then one final sweep whose realized
    conditional probabilities are accumulated into the returned log
    transition probability.  When ``forced_sides`` is given the final sweep
    is forced to reproduce it and the accumulated value is the probability
    of that reproduction.  With ``restricted_scans == 0`` the sequential
    allocation itself plays the role of the final sweep.  Returns
    ``(side_of, log_T)``.
    """
    scans = state.cfg.restricted_scans
    order = [members[k] for k in rng.permutation(len(members))] if members else []
    side_of = {}
    rows = state._rows
    eta1 = state.spec.base_eta1
    kv = state.spec.known_variance

    def conditional(x):
        # returns (p_left, log p_left, log p_right), all computed stably
        gap = (_scan_log_cond(right, x, state, eta1, kv)
               - _scan_log_cond(left, x, state, eta1, kv))
        return sigmoid(-gap), log_sigmoid(-gap), log_sigmoid(gap)

    accumulate_now = scans == 0
    log_t = 0.0
    for m in order:
        x = rows[m]
        p_left, lp_left, lp_right = conditional(x)
        if accumulate_now and forced_sides is not None:
            go_left = forced_sides[m]
        else:
            go_left = rng.random() < p_left
        side_of[m] = go_left
        (left if go_left else right).add(x)
        if accumulate_now:
            log_t += lp_left if go_left else lp_right
    for _ in range(max(0, scans - 1)):
        for m in order:
            x = rows[m]
            (left if side_of[m] else right).remove(x)
            p_left, _, _ = conditional(x)
            go_left = rng.random() < p_left
            side_of[m] = go_left
            (left if go_left else right).add(x)
    if scans > 0:
        for m in order:
            x = rows[m]
            (left if side_of[m] else right).remove(x)
            p_left, lp_left, lp_right = conditional(x)
            if forced_sides is None:
                go_left = rng.random() < p_left
            else:
                go_left = forced_sides[m]
            side_of[m] = go_left
            (left if go_left else right).add(x)
            log_t += lp_left if go_left else lp_right
    return side_of, log_t


def _sigma_predictor_excluding(state: ChainState, exclude_blocks):
    """GP predictor over the knots minus the affected accepted blocks."""
    sgp = state.sgp
    keep = [t for t in range(sgp.total) if t not in exclude_blocks]
    if not keep:
        return None
    locs = [sgp.locations[t] for t in keep]
    vals = [sgp.values[t] for t in keep]
    return KnotPredictor(locs, vals, state.kernel)


def _log_sigma_at(pred, theta) -> float:
    if pred is None:
        return log_sigmoid(0.0)
    return log_sigmoid(float(pred.mean(theta)[0]))


def _block_log_score(state: ChainState, stats: SuffStats, theta_hat, sigma_pred) -> float:
    """Score contribution of one block under the acceptance-ratio reading.

    prior partition factor x thinning factor x marginal likelihood; the
    partition factor carries Gamma(n_k) and the marked weight, the per-state
    alpha*^K term is added by the caller.
    """
    out = gammaln(stats.count)
    if state.cfg.uses_marked_q:
        out += log_marked_q_exact(stats.count, state.n, state.hyper)
    if not state.cfg.unit_likelihood:
        out += log_marginal_mq(stats, state.spec)
    if state.cfg.uses_gp:
        out += _log_sigma_at(sigma_pred, theta_hat)
    return out


def _theta_hat(stats: SuffStats, spec: ExpFamSpec):
    eta1 = np.asarray(spec.base_eta1)
    return (eta1 + np.asarray(stats.stat_sum)) / (spec.base_eta2 + stats.count)


def _split_vs_merged_log_score(state: ChainState, left: SuffStats, right: SuffStats,
                               exclude_blocks) -> float:
    """log score(split configuration) - log score(merged configuration)."""
    parent = merge_stats(left, right)
    pred = _sigma_predictor_excluding(state, exclude_blocks) if state.cfg.uses_gp else None
    spec = state.spec
    return (
        _block_log_score(state, left, _theta_hat(left, spec), pred)
        + _block_log_score(state, right, _theta_hat(right, spec), pred)
        + math.log(state.hyper.alpha_star)
        - _block_log_score(state, parent, _theta_hat(parent, spec), pred)
    )


def split_merge_step(state: ChainState, rng):
    """One split-merge Metropolis move (two-observation seeding).

    Returns ``(state, move, accepted, log_accept)`` where move is "split" or
    "merge".  The acceptance ratio multiplies the partition-mass, thinning
    and evidence factors of the affected blocks with the restricted-scan
    transition probabilities of the proposal and its reverse.
    """
    n = state.n
    if n < 2:
        raise ValidationError("split-merge requires at least two observations")
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    zi, zj = int(state.assignments[i]), int(state.assignments[j])
    if zi == zj:
        members = [int(m) for m in state.block_members(zi) if m != i and m != j]
        left = _ScanSide(state._rows[i])
        right = _ScanSide(state._rows[j])
        side_of, log_t_fwd = _restricted_fill(state, left, right, members, rng)
        delta = _split_vs_merged_log_score(state, left.stats(), right.stats(), {zi})
        log_a = float(delta - log_t_fwd)
        accepted = bool(math.log(rng.random()) < log_a)
        if accepted:
            _commit_split(state, zi, i, j, side_of)
        return state, "split", accepted, log_a
    # merge case: deterministic merged proposal, reverse probability from a
    # forced restricted scan that replays the current two-block split
    members = [int(m) for m in np.concatenate([state.block_members(zi),
                                               state.block_members(zj)])
               if m != i and m != j]
    forced = {m: int(state.assignments[m]) == zi for m in members}
    left = _ScanSide(state._rows[i])
    right = _ScanSide(state._rows[j])
    _, log_t_rev = _restricted_fill(state, left, right, members, rng, forced_sides=forced)
    cur_left = SuffStats(int(state.counts[zi]), tuple(state.sums[zi]), tuple(state.sqsums[zi]))
    cur_right = SuffStats(int(state.counts[zj]), tuple(state.sums[zj]), tuple(state.sqsums[zj]))
    delta = _split_vs_merged_log_score(state, cur_left, cur_right, {zi, zj})
    log_a = float(-delta + log_t_rev)
    accepted = bool(math.log(rng.random()) < log_a)
    if accepted:
        _commit_merge(state, zi, zj)
    return state, "merge", accepted, log_a


def _commit_split(state: ChainState, z: int, i: int, j: int, side_of):
    x_right = [j] + [m for m, left in side_of.items() if not left]
    k = state.num_blocks
    for m in x_right:
        state.assignments[m] = k
    right_idx = np.asarray(x_right, dtype=np.int64)
    cr = float(len(x_right))
    sr = state.data[right_idx].sum(axis=0)
    qr = (state.data[right_idx] ** 2).sum(axis=0)
    state.counts[k] = cr
    state.sums[k] = sr
    state.sqsums[k] = qr
    state.counts[z] -= cr
    state.sums[z] -= sr
    state.sqsums[z] -= qr
    state.num_blocks = k + 1
    if state.sgp is not None:
        sgp = state.sgp
        sgp.locations.insert(k, state.posterior_mean(z))
        sgp.values.insert(k, 0.0)
        sgp.accepted_count += 1
        _reset_block_knot(state, z)
        _reset_block_knot(state, k)
    else:
        _update_block_cache(state, z)
        _update_block_cache(state, k)


def _commit_merge(state: ChainState, zi: int, zj: int):
    lo, hi = (zi, zj) if zi < zj else (zj, zi)
    state.counts[lo] += state.counts[hi]
    state.sums[lo] += state.sums[hi]
    state.sqsums[lo] += state.sqsums[hi]
    state.assignments[state.assignments == hi] = lo
    last = state.num_blocks - 1
    if hi != last:
        state.counts[hi] = state.counts[last]
        state.sums[hi] = state.sums[last]
        state.sqsums[hi] = state.sqsums[last]
        state.log_sig[hi] = state.log_sig[last]
        state.w_base[hi] = state.w_base[last]
        state.pm[hi] = state.pm[last]
        state.i2pv[hi] = state.i2pv[last]
        state.assignments[state.assignments == last] = hi
        if state.sgp is not None:
            state.sgp.locations[hi] = state.sgp.locations[last]
            state.sgp.values[hi] = state.sgp.values[last]
    if state.sgp is not None:
        del state.sgp.locations[last]
        del state.sgp.values[last]
        state.sgp.accepted_count -= 1
    state.counts[last] = 0.0
    state.num_blocks = last
    if state.sgp is not None:
        _reset_block_knot(state, lo)
    else:
        _update_block_cache(state, lo)


def _reset_block_knot(state: ChainState, k: int):
    """Re-anchor block k's knot at its posterior mean with a conditional value."""
    sgp = state.sgp
    theta = state.posterior_mean(k)
    pred = _sigma_predictor_excluding(state, {k})
    value = 0.0 if pred is None else float(pred.mean(theta)[0])
    sgp.locations[k] = theta
    sgp.values[k] = value
    state.log_sig[k] = log_sigmoid(value)
    _update_block_cache(state, k)


# ---------------------------------------------------------------------------
# chain driver


def run_chain(data, cfg: SamplerConfig, hyper: MarkedHyper, spec: ExpFamSpec,
              kernel: KernelParams = None, seed: int = 0) -> Trace:
    """Drive a full chain: assignment sweeps, knot upkeep, birth/death moves
    and periodic split-merge proposals.  Deterministic given the seed."""
    state = init_chain_state(data, cfg, hyper, spec, kernel, seed)
    rng = state.rng
    trace = Trace(model=cfg.model, seed=int(seed))
    kplusm_bound = 10.0 * hyper.alpha_star
    for it in range(cfg.iters):
        t0 = time.perf_counter()
        _assignment_sweep(state, rng)
        state._snap_stats()
        bd = None
        if cfg.uses_gp:
            _refresh_knots(state)
            _, bd = latent_birth_death_step(state.sgp, state.kernel, rng)
            for k in range(state.num_blocks):
                state.log_sig[k] = log_sigmoid(state.sgp.values[k])
                _update_block_cache(state, k)
            if state.sgp.total > kplusm_bound:
                raise ValidationError(
                    f"K+M = {state.sgp.total} exceeded the 10*alpha_star support bound"
                )
        sm_move = sm_accepted = sm_log_a = None
        if state.n >= 2 and (it + 1) % cfg.split_merge_every == 0:
            _, sm_move, sm_accepted, sm_log_a = split_merge_step(state, rng)
        state.iteration = it + 1
        sizes = tuple(sorted((int(c) for c in state.counts[: state.num_blocks]), reverse=True))
        topics = None
        if cfg.collect_topics:
            topics = tuple(tuple(state.posterior_mean(k)) for k in range(state.num_blocks))
        trace.records.append(
            IterationRecord(
                iteration=it + 1,
                num_blocks=state.num_blocks,
                block_sizes=sizes,
                sm_move=sm_move,
                sm_accepted=sm_accepted,
                sm_log_accept=sm_log_a,
                bd_move=bd.move if bd is not None else None,
                bd_accepted=bd.accepted if bd is not None else None,
                bd_a_value=bd.a_value if bd is not None else None,
                thinned_count=state.sgp.thinned_count if state.sgp is not None else None,
                wall_ms=(time.perf_counter() - t0) * 1000.0,
                topics=topics,
            )
        )
    state.check_consistency()
    trace.final_assignments = state.assignments.copy()
    return trace
