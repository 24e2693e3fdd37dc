"""Self-checks of the partition laws against the enumeration oracle.

Each check computes a value and a bound; the CLI turns the battery into a
JSON report and an exit code.  The long-running entries drive the prior-only
sampler and compare its empirical partition law against the exact enumerated
law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ResourceLimitError
from .partition_laws import (
    MAX_ENUMERATION_N,
    MarkedHyper,
    Partition,
    enumerate_set_partitions,
    enumerated_partition_pmf,
    log_cond_size_weight,
    log_marked_q_asymptotic,
    log_marked_q_exact,
    log_partition_mass,
    ordered_size_prob_by_enumeration,
    size_law_compare,
)
from .samplers import partition_key, run_prior_partition_chain


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool
    note: str = ""


def bell_number(n: int) -> int:
    """Bell numbers via the standard binomial recurrence (oracle)."""
    bells = [1]
    for m in range(n):
        nxt = sum(math.comb(m, k) * bells[k] for k in range(m + 1))
        bells.append(nxt)
    return bells[n]


def exact_partition_law_by_key(n: int, h: MarkedHyper):
    parts, probs, log_z = enumerated_partition_pmf(n, h)
    return {partition_key(p.assignments): q for p, q in zip(parts, probs)}, log_z


def prior_chain_tv(n: int, h: MarkedHyper, sweeps: int, seed: int = 0) -> float:
    """TV distance between the prior chain's empirical law and the exact law."""
    exact, _ = exact_partition_law_by_key(n, h)
    counts, total = run_prior_partition_chain(n, h, sweeps, seed=seed)
    tv = 0.0
    for key, p in exact.items():
        tv += abs(counts.get(key, 0) / total - p)
    for key in counts:
        if key not in exact:
            tv += counts[key] / total
    return 0.5 * tv


def _sizes_of_key(key: bytes):
    sizes = {}
    for b in key:
        sizes[b] = sizes.get(b, 0) + 1
    return tuple(sorted(sizes.values()))


def _orderings(multiset) -> int:
    mult = {}
    for s in multiset:
        mult[s] = mult.get(s, 0) + 1
    out = math.factorial(len(multiset))
    for m in mult.values():
        out //= math.factorial(m)
    return out


def conditional_size_law_tvs(n: int, h: MarkedHyper, sweeps: int, seed: int = 0,
                             k_blocks: int = 2):
    """Empirical conditional size law versus two references.

    Conditions prior-chain samples on the number of blocks and compares the
    size-multiset frequencies against (a) the conditional law derived from
    the exact enumerated partition mass and (b) the normalized verbatim
    conditional size weight.  Returns ``(tv_exact, tv_verbatim)``.  The two
    references differ by one power of the block size, so (b) stays bounded
    away from zero; it is reported for documentation, not asserted.
    """
    exact, _ = exact_partition_law_by_key(n, h)
    cond_exact = {}
    for key, p in exact.items():
        sizes = _sizes_of_key(key)
        if len(sizes) == k_blocks:
            cond_exact[sizes] = cond_exact.get(sizes, 0.0) + p
    z = sum(cond_exact.values())
    cond_exact = {s: v / z for s, v in cond_exact.items()}

    verbatim = {}
    for sizes in cond_exact:
        verbatim[sizes] = _orderings(sizes) * math.exp(log_cond_size_weight(sizes, h.a0))
    zv = sum(verbatim.values())
    verbatim = {s: v / zv for s, v in verbatim.items()}

    counts, _ = run_prior_partition_chain(n, h, sweeps, seed=seed)
    cond_emp = {}
    total = 0
    for key, c in counts.items():
        sizes = _sizes_of_key(key)
        if len(sizes) == k_blocks:
            cond_emp[sizes] = cond_emp.get(sizes, 0) + c
            total += c
    cond_emp = {s: c / total for s, c in cond_emp.items()}

    def tv(a, b):
        support = set(a) | set(b)
        return 0.5 * sum(abs(a.get(s, 0.0) - b.get(s, 0.0)) for s in support)

    return tv(cond_emp, cond_exact), tv(cond_emp, verbatim)


def expected_num_blocks(n: int, h: MarkedHyper) -> float:
    parts, probs, _ = enumerated_partition_pmf(n, h)
    return sum(p.num_blocks * q for p, q in zip(parts, probs))


def run_verification_battery(h: MarkedHyper, max_n: int = 6, seed: int = 0,
                             chain_sweeps: int = 200_000) -> list:
    """The oracle check battery behind the CLI verify command."""
    if max_n > MAX_ENUMERATION_N:
        raise ResourceLimitError(
            f"max_n={max_n} exceeds the enumeration ceiling {MAX_ENUMERATION_N}"
        )
    if max_n < 2:
        raise ResourceLimitError("max_n must be at least 2")
    rng = np.random.default_rng(seed)
    checks = []

    for n in range(1, min(max_n, 8) + 1):
        count = len(enumerate_set_partitions(n))
        expect = bell_number(n)
        checks.append(Check(f"enumeration_count_n{n}", count, expect, count == expect))

    worst = 0.0
    for n in range(2, min(max_n, 8) + 1):
        for a0 in (1.0, 2.0):
            for alpha in (0.5, 1.0, 5.0):
                hh = MarkedHyper(alpha, a0, 1.0, h.gamma_mfm)
                _, probs, log_z = enumerated_partition_pmf(n, hh)
                if not math.isfinite(log_z):
                    worst = math.inf
                worst = max(worst, abs(sum(probs) - 1.0))
    checks.append(Check("pmf_normalization_grid", worst, 1e-9, worst <= 1e-9))

    diff = 0.0
    for _ in range(20):
        n = int(rng.integers(2, max_n + 1))
        labels = rng.integers(0, 3, size=n).tolist()
        p = Partition.from_labels(labels)
        perm = rng.permutation(n)
        q = Partition.from_labels([labels[i] for i in perm])
        diff = max(diff, abs(log_partition_mass(p, h) - log_partition_mass(q, h)))
    checks.append(Check("exchangeability_relabeling", diff, 0.0, diff == 0.0))

    worst = 0.0
    for n in (5, 50, 500, 5000):
        for n_k in (1, n // 2, n):
            got = log_marked_q_exact(max(n_k, 1), n, MarkedHyper(1.0, 1.0, 1.0))
            worst = max(worst, abs(got + math.log(n + 1.0)))
    checks.append(Check("a0_one_collapse", worst, 1e-12, worst <= 1e-12))

    n = 10_000
    ratio = math.exp(
        log_marked_q_exact(n // 2, n, MarkedHyper(1.0, 1.0, 1.0))
        - log_marked_q_asymptotic(n // 2, n, 1.0)
    )
    val = abs(ratio - 1.0)
    checks.append(Check("asymptotic_agreement_a0_one", val, 1e-3, val < 1e-3))

    worst = 0.0
    for a0 in (0.5, 2.0, 3.0):
        for p_frac in (0.2, 0.5):
            ratios = []
            for n in (10_000, 100_000):
                n_k = int(p_frac * n)
                ratios.append(
                    math.exp(
                        log_marked_q_exact(n_k, n, MarkedHyper(1.0, a0, 1.0))
                        - log_marked_q_asymptotic(n_k, n, a0)
                    )
                )
            worst = max(worst, abs(ratios[0] / ratios[1] - 1.0))
    checks.append(Check("asymptotic_ratio_stabilization", worst, 0.01, worst < 0.01))

    worst = 0.0
    for n in range(2, min(max_n, 6) + 1):
        _, _, log_z = enumerated_partition_pmf(n, h)
        total = 0.0
        seen = set()
        for p in enumerate_set_partitions(n):
            multiset = tuple(sorted(p.block_sizes))
            if multiset in seen:
                continue
            seen.add(multiset)
            for ordered in set(_permutations(multiset)):
                total += ordered_size_prob_by_enumeration(ordered, h)
        worst = max(worst, abs(total / math.exp(log_z) - 1.0))
    checks.append(Check("ordered_size_law_total", worst, 1e-9, worst <= 1e-9))

    worst_fm = worst_dp = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 7))
        sizes = tuple(int(s) for s in rng.integers(1, 40, size=k))
        gamma = float(rng.uniform(0.2, 3.0))
        p_ds, p_fm, _ = size_law_compare(sizes, gamma + 1.0, gamma)
        worst_fm = max(worst_fm, abs(math.log(p_ds) - math.log(p_fm)))
        p_ds, _, p_dp = size_law_compare(sizes, 1.0, gamma)
        worst_dp = max(worst_dp, abs(math.log(p_ds) - math.log(p_dp)))
    checks.append(Check("size_law_identity_fm", worst_fm, 1e-12, worst_fm <= 1e-12))
    checks.append(Check("size_law_identity_dp", worst_dp, 1e-12, worst_dp <= 1e-12))

    means = [expected_num_blocks(min(max_n, 6), MarkedHyper(a, h.a0, h.b0, h.gamma_mfm))
             for a in (0.1, 1.0, 10.0)]
    mono = means[0] < means[1] < means[2]
    checks.append(Check("mean_blocks_monotone_in_alpha", float(min(np.diff(means))), 0.0,
                        mono, note=f"means={['%.4f' % m for m in means]}"))

    tv4 = prior_chain_tv(4, h, chain_sweeps, seed=seed + 1)
    checks.append(Check("prior_chain_tv_n4", tv4, 0.02, tv4 <= 0.02))
    if max_n >= 6:
        tv6 = prior_chain_tv(6, h, chain_sweeps, seed=seed + 2)
        checks.append(Check("prior_chain_tv_n6", tv6, 0.02, tv6 <= 0.02))
        tv_exact, tv_verbatim = conditional_size_law_tvs(6, h, chain_sweeps, seed=seed + 3)
        checks.append(Check("cond_size_law_tv_vs_enumeration", tv_exact, 0.03,
                            tv_exact <= 0.03))
        checks.append(Check(
            "cond_size_display_gap_info", tv_verbatim, None, True,
            note="distance to the verbatim conditional size weight; the verbatim "
                 "display differs from the enumerated law by one power of the "
                 "block size, so this stays far from zero (documented, not asserted)",
        ))
    return checks


def _permutations(multiset):
    from itertools import permutations

    return permutations(multiset)


def checks_to_dict(checks):
    rows = []
    for c in checks:
        row = asdict(c)
        row["value"] = None if row["value"] is None else float(row["value"])
        row["bound"] = None if row["bound"] is None else float(row["bound"])
        row["passed"] = bool(row["passed"])
        rows.append(row)
    return {"all_passed": bool(all(c.passed for c in checks)), "checks": rows}
