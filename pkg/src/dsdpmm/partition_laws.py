"""Probability laws over exchangeable partitions for the marked-DP mixture.

The doubly stochastic model attaches a per-block "marked" weight Q(m) to the
usual Dirichlet-process partition mass.  This module provides the exact and
asymptotic forms of Q, the (unnormalized) partition mass built from them,
conditional size-vector weights, the asymptotic size-law comparison against
finite mixtures and the plain DP, and a brute-force set-partition enumerator
that acts as the oracle for every distributional test in the suite.

All probability arithmetic is done in natural-log space with log-gamma so
that partition masses stay finite for data sizes up to ~1e6.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import gammaln

from .errors import ResourceLimitError, ValidationError

#: Bell(12) = 4,213,597 set partitions is the desk-scale enumeration ceiling.
MAX_ENUMERATION_N = 12

_Q_MODES = ("exact", "asymptotic")


def _check_positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class MarkedHyper:
    """Scalar hyperparameters governing all partition laws.

    Attributes
    ----------
    alpha_star : float
        DP concentration, doubling as the Cox-process intensity upper bound.
    a0, b0 : float
        Gamma shape and rate of the marked per-block weight Q.
    gamma_mfm : float
        Exponent hyperparameter of the finite-mixture comparison law.
    """

    alpha_star: float
    a0: float
    b0: float
    gamma_mfm: float = 1.0

    def __post_init__(self):
        _check_positive("alpha_star", self.alpha_star)
        _check_positive("a0", self.a0)
        _check_positive("b0", self.b0)
        _check_positive("gamma_mfm", self.gamma_mfm)


@dataclass(frozen=True)
class Partition:
    """An assignment of n items to K nonempty blocks, with cached block sizes.

    ``assignments`` uses restricted-growth labeling: the first item is in
    block 0 and every new block gets the next unused index.  Use
    :meth:`from_labels` to canonicalize an arbitrary labeling.
    """

    assignments: tuple
    block_sizes: tuple

    def __post_init__(self):
        n = len(self.assignments)
        k = len(self.block_sizes)
        if n < 1:
            raise ValidationError("a partition needs at least one item")
        counts = [0] * k
        for a in self.assignments:
            if not (isinstance(a, int) and 0 <= a < k):
                raise ValidationError(f"block index {a!r} outside [0, {k})")
            counts[a] += 1
        if min(counts) < 1:
            raise ValidationError("every block must be nonempty")
        if tuple(counts) != tuple(self.block_sizes):
            raise ValidationError("block_sizes inconsistent with assignments")

    @property
    def n(self):
        return len(self.assignments)

    @property
    def num_blocks(self):
        return len(self.block_sizes)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Build a Partition from any labeling, relabeled to canonical form."""
        remap = {}
        canon = []
        for lab in labels:
            if lab not in remap:
                remap[lab] = len(remap)
            canon.append(remap[lab])
        sizes = [0] * len(remap)
        for c in canon:
            sizes[c] += 1
        return cls(tuple(canon), tuple(sizes))


_RGS_ALPHABET = "0123456789abcdefghijklmnopqrstuvwxyz"


def rgs_string(p: Partition) -> str:
    """Restricted-growth string of a partition (one base-36 digit per item)."""
    return "".join(_RGS_ALPHABET[a] for a in p.assignments)


def partition_from_rgs(s: str) -> Partition:
    """Inverse of :func:`rgs_string`; validates the canonical-label invariant."""
    try:
        labels = [_RGS_ALPHABET.index(ch) for ch in s.lower()]
    except ValueError as exc:
        raise ValidationError(f"invalid restricted-growth string {s!r}") from exc
    p = Partition.from_labels(labels)
    if list(p.assignments) != labels:
        raise ValidationError(f"{s!r} is not in canonical restricted-growth form")
    return p


def _check_size_vector(sizes):
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 1 or any(s < 1 for s in sizes):
        raise ValidationError(f"size vector entries must be >= 1, got {sizes}")
    return sizes


def log_marked_q_exact(n_k: int, n: int, h: MarkedHyper) -> float:
    """Exact log marked weight: Q(m) = G(a0+m)/(G(a0)G(m)) * m^-1 * (n+b0)^-a0."""
    if not 1 <= n_k <= n:
        raise ValidationError(f"n_k must satisfy 1 <= n_k <= n, got n_k={n_k}, n={n}")
    if h.a0 == 1.0:
        # G(1+m) = m G(m) cancels the m^-1 factor exactly
        return -math.log(n + h.b0)
    return (
        gammaln(h.a0 + n_k)
        - gammaln(h.a0)
        - gammaln(n_k)
        - math.log(n_k)
        - h.a0 * math.log(n + h.b0)
    )


def log_marked_q_asymptotic(n_k: int, n: int, a0: float) -> float:
    """Large-n log marked weight: Q(m) ~ (m+1)^(a0-1) / n^a0."""
    if not 1 <= n_k <= n:
        raise ValidationError(f"n_k must satisfy 1 <= n_k <= n, got n_k={n_k}, n={n}")
    _check_positive("a0", a0)
    return (a0 - 1.0) * math.log(n_k + 1) - a0 * math.log(n)


def log_partition_mass(p: Partition, h: MarkedHyper, q_mode: str = "exact") -> float:
    """Unnormalized log mass of an unordered partition.

    mass = alpha*^K G(alpha*)/G(alpha*+n) * prod_k G(n_k) Q(n_k), with Q taken
    from the exact or asymptotic form.  Depends on the partition only through
    its multiset of block sizes, so it is exactly exchangeable.
    """
    if q_mode not in _Q_MODES:
        raise ValidationError(f"q_mode must be one of {_Q_MODES}, got {q_mode!r}")
    n = p.n
    out = (
        p.num_blocks * math.log(h.alpha_star)
        + gammaln(h.alpha_star)
        - gammaln(h.alpha_star + n)
    )
    # summing in sorted-size order makes the value bit-identical under any
    # relabeling of items or blocks, not just equal up to rounding
    for n_k in sorted(p.block_sizes):
        out += gammaln(n_k)
        if q_mode == "exact":
            out += log_marked_q_exact(n_k, n, h)
        else:
            out += log_marked_q_asymptotic(n_k, n, h.a0)
    return out


def enumerate_set_partitions(n: int) -> list:
    """Every set partition of {0,...,n-1}, as canonical Partitions.

    Partitions are generated as restricted-growth strings in lexicographic
    order, so each unordered partition appears exactly once.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if n > MAX_ENUMERATION_N:
        raise ResourceLimitError(
            f"enumeration is capped at n={MAX_ENUMERATION_N} "
            f"(Bell({MAX_ENUMERATION_N}) ~ 4.2e6); got n={n}"
        )
    out = []
    a = [0] * n
    # b[i] = 1 + max(a[:i]): the largest label item i may take.
    b = [1] * n
    while True:
        k = max(a) + 1
        sizes = [0] * k
        for lab in a:
            sizes[lab] += 1
        out.append(Partition(tuple(a), tuple(sizes)))
        i = n - 1
        while i > 0 and a[i] >= b[i]:
            i -= 1
        if i == 0:
            return out
        a[i] += 1
        nb = b[i] if a[i] < b[i] else a[i] + 1
        for j in range(i + 1, n):
            a[j] = 0
            b[j] = nb


def enumerated_partition_pmf(n: int, h: MarkedHyper, q_mode: str = "exact"):
    """Exact normalized partition law by brute force.

    Returns ``(partitions, probs, log_z)`` where probs sums to 1 and log_z is
    the log normalizing constant of the unnormalized mass.
    """
    parts = enumerate_set_partitions(n)
    logs = [log_partition_mass(p, h, q_mode) for p in parts]
    m = max(logs)
    weights = [math.exp(v - m) for v in logs]
    z = sum(weights)
    probs = [w / z for w in weights]
    return parts, probs, m + math.log(z)


def ordered_size_prob_by_enumeration(sizes, h: MarkedHyper, q_mode: str = "exact") -> float:
    """Unnormalized probability that the uniformly-ordered size vector equals ``sizes``.

    Computed from the definition: sum mass(M)/K! over all enumerated
    partitions whose size multiset matches, times the number of block
    orderings consistent with the requested vector.
    """
    svec = _check_size_vector(sizes)
    n = sum(svec)
    if n > MAX_ENUMERATION_N:
        raise ResourceLimitError(
            f"enumeration is capped at total size {MAX_ENUMERATION_N}, got {n}"
        )
    target = sorted(svec)
    k = len(svec)
    mult = {}
    for s in svec:
        mult[s] = mult.get(s, 0) + 1
    orderings = 1.0
    for m in mult.values():
        orderings *= math.factorial(m)
    total = 0.0
    for p in enumerate_set_partitions(n):
        if p.num_blocks == k and sorted(p.block_sizes) == target:
            total += math.exp(log_partition_mass(p, h, q_mode))
    return total * orderings / math.factorial(k)


def log_cond_size_weight(sizes, a0: float) -> float:
    """Log of the unnormalized conditional size weight prod_k m^-1 G(a0+m)/(G(a0)G(m)).

    Normalization over all size vectors with the same number of blocks is the
    caller's responsibility (enumerate for small n).
    """
    svec = _check_size_vector(sizes)
    _check_positive("a0", a0)
    out = 0.0
    for m in svec:
        out += gammaln(a0 + m) - gammaln(a0) - gammaln(m) - math.log(m)
    return out


def size_law_compare(sizes, a0: float, gamma_mfm: float):
    """Unnormalized asymptotic size-law values (P_DS, P_FM, P_DP).

    P_DS = prod m^(a0-2) for the doubly stochastic model, P_FM = prod
    m^(gamma-1) for a mixture of finite mixtures, P_DP = prod m^-1 for the
    plain DP.  P_DS == P_FM when a0 = gamma+1 and P_DS == P_DP when a0 = 1.
    """
    svec = _check_size_vector(sizes)
    _check_positive("a0", a0)
    _check_positive("gamma_mfm", gamma_mfm)
    log_ds = sum((a0 - 2.0) * math.log(m) for m in svec)
    log_fm = sum((gamma_mfm - 1.0) * math.log(m) for m in svec)
    log_dp = sum(-math.log(m) for m in svec)
    return math.exp(log_ds), math.exp(log_fm), math.exp(log_dp)
