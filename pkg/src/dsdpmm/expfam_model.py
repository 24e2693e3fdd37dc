"""Conjugate exponential-family likelihood machinery.

One concrete family ships: independent Gaussians with known per-dimension
variance and a conjugate Gaussian prior on the mean.  The prior is carried in
natural form as a pseudo-statistic vector eta1 and a pseudo-count eta2, so the
posterior natural parameter for a block A is simply eta2 + |A| and the block
evidence has a closed form.  That closed form doubles as an exact oracle for
the Laplace-approximated normalizer, which is exact for quadratic exponents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import NumericalError, ValidationError
from .partition_laws import MarkedHyper

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ExpFamSpec:
    """Gaussian-known-variance family with conjugate natural-form prior.

    Attributes
    ----------
    dimension : int
        Number of independent feature dimensions.
    base_eta1 : tuple of float
        Prior pseudo-statistic (eta2 times the prior mean, per dimension).
    base_eta2 : float
        Prior pseudo-count; the prior variance per dimension is
        known_variance / base_eta2.
    known_variance : tuple of float
        Fixed observation variance per dimension.
    """

    dimension: int
    base_eta1: tuple
    base_eta2: float
    known_variance: tuple
    family_id: str = "gaussian_known_variance"

    def __post_init__(self):
        if self.family_id != "gaussian_known_variance":
            raise ValidationError(f"unsupported family_id {self.family_id!r}")
        if not (isinstance(self.dimension, int) and self.dimension >= 1):
            raise ValidationError(f"dimension must be a positive int, got {self.dimension!r}")
        if len(self.base_eta1) != self.dimension or len(self.known_variance) != self.dimension:
            raise ValidationError("base_eta1 and known_variance must have length == dimension")
        if not (math.isfinite(self.base_eta2) and self.base_eta2 > 0):
            raise ValidationError(f"base_eta2 must be positive, got {self.base_eta2!r}")
        if any(not (math.isfinite(v) and v > 0) for v in self.known_variance):
            raise ValidationError("known_variance entries must be positive and finite")
        if any(not math.isfinite(v) for v in self.base_eta1):
            raise ValidationError("base_eta1 entries must be finite")

    @property
    def prior_mean(self):
        return tuple(e / self.base_eta2 for e in self.base_eta1)

    @property
    def prior_variance(self):
        return tuple(v / self.base_eta2 for v in self.known_variance)

    @classmethod
    def gaussian(cls, dimension=1, known_variance=1.0, prior_mean=0.0, pseudo_count=1.0):
        """Convenience constructor from the usual mean/variance parameterization."""
        kv = np.broadcast_to(np.asarray(known_variance, dtype=float), (dimension,))
        pm = np.broadcast_to(np.asarray(prior_mean, dtype=float), (dimension,))
        return cls(
            dimension=dimension,
            base_eta1=tuple(pseudo_count * m for m in pm),
            base_eta2=float(pseudo_count),
            known_variance=tuple(kv),
        )


@dataclass(frozen=True)
class SuffStats:
    """Accumulated per-block statistics: count, sum of T1(x), and sum of x*x.

    The squared sum funds the data-only base-measure factor of the evidence;
    the identity statistic alone fixes only the posterior over the mean.
    """

    count: int
    stat_sum: tuple
    sq_sum: tuple

    def __post_init__(self):
        if self.count < 0:
            raise ValidationError("count must be nonnegative")
        if self.count == 0 and (any(self.stat_sum) or any(self.sq_sum)):
            raise ValidationError("empty stats must have zero sums")

    @classmethod
    def empty(cls, dimension: int) -> "SuffStats":
        return cls(0, (0.0,) * dimension, (0.0,) * dimension)


def accumulate(stats: SuffStats, x) -> SuffStats:
    """Fold one observation into the running statistics (identity T1)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != len(stats.stat_sum):
        raise ValidationError(
            f"observation has dimension {x.shape[0]}, stats expect {len(stats.stat_sum)}"
        )
    return SuffStats(
        stats.count + 1,
        tuple(s + v for s, v in zip(stats.stat_sum, x)),
        tuple(s + v * v for s, v in zip(stats.sq_sum, x)),
    )


def stats_from_data(data) -> SuffStats:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    out = SuffStats.empty(data.shape[1])
    for row in data:
        out = accumulate(out, row)
    return out


def merge_stats(a: SuffStats, b: SuffStats) -> SuffStats:
    return SuffStats(
        a.count + b.count,
        tuple(x + y for x, y in zip(a.stat_sum, b.stat_sum)),
        tuple(x + y for x, y in zip(a.sq_sum, b.sq_sum)),
    )


@dataclass(frozen=True)
class SplitTriple:
    """A parent block together with a two-way split of it."""

    parent: SuffStats
    left: SuffStats
    right: SuffStats

    def __post_init__(self):
        if self.parent.count != self.left.count + self.right.count:
            raise ValidationError("parent count must equal left + right")
        for ps, ls, rs in zip(self.parent.stat_sum, self.left.stat_sum, self.right.stat_sum):
            if abs(ps - (ls + rs)) > 1e-9 * max(1.0, abs(ps)):
                raise ValidationError("parent stat_sum must equal left + right")


def _require_nonempty(stats: SuffStats):
    if stats.count < 1:
        raise ValidationError("operation requires at least one observation")


def log_marginal_mq(stats: SuffStats, spec: ExpFamSpec, sgp_correction=None) -> float:
    """Closed-form log evidence of a block under the conjugate Gaussian model.

    This is the sigmoid-free integral of prior times likelihood; an optional
    positive ``sgp_correction`` folds the finite Cox-thinning ratio back in as
    an additive log term.
    """
    _require_nonempty(stats)
    m = stats.count
    eta = spec.base_eta2 + m
    out = 0.0
    for d in range(spec.dimension):
        v = spec.known_variance[d]
        s = spec.base_eta1[d] + stats.stat_sum[d]
        out += (
            -0.5 * m * (_LOG_2PI + math.log(v))
            + 0.5 * (math.log(spec.base_eta2) - math.log(eta))
            + 0.5 * (s * s / eta - stats.sq_sum[d] - spec.base_eta1[d] ** 2 / spec.base_eta2) / v
        )
    if sgp_correction is not None:
        if not (math.isfinite(sgp_correction) and sgp_correction > 0):
            raise ValidationError(f"sgp_correction must be positive, got {sgp_correction!r}")
        out += math.log(sgp_correction)
    return out


def log_base_measure_term(stats: SuffStats, spec: ExpFamSpec) -> float:
    """The data-only factor of the evidence (product of base densities).

    log_marginal_mq == log_base_measure_term + laplace_log_integral, exactly,
    for the Gaussian family.
    """
    _require_nonempty(stats)
    m = stats.count
    out = 0.0
    for d in range(spec.dimension):
        v = spec.known_variance[d]
        out += (
            -0.5 * m * (_LOG_2PI + math.log(v))
            - 0.5 * (_LOG_2PI + math.log(v) - math.log(spec.base_eta2))
            - 0.5 * (stats.sq_sum[d] + spec.base_eta1[d] ** 2 / spec.base_eta2) / v
        )
    return out


def map_topic(stats: SuffStats, spec: ExpFamSpec):
    """Recover the block topic as the inverse mean map of the empirical statistic.

    For the Gaussian family the log-normalizer derivative is the identity, so
    this is the per-dimension sample mean.
    """
    _require_nonempty(stats)
    return np.array([s / stats.count for s in stats.stat_sum])


def laplace_log_integral(stats: SuffStats, spec: ExpFamSpec) -> float:
    """Laplace approximation of log int exp(eta_A f_A(theta)) dtheta.

    Expands at the maximizer of the posterior exponent (the regularized block
    mean) and uses the standard formula
    eta f(theta*) + 0.5 log(2 pi / (eta |f''(theta*)|)) per dimension.
    Exact for this family because the exponent is quadratic.
    """
    _require_nonempty(stats)
    eta = spec.base_eta2 + stats.count
    out = 0.0
    for d in range(spec.dimension):
        v = spec.known_variance[d]
        s = spec.base_eta1[d] + stats.stat_sum[d]
        theta_star = s / eta
        # f(theta) = (mu theta - theta^2/2)/v with mu = s/eta, so f'' = -1/v.
        f_star = (s / eta * theta_star - 0.5 * theta_star * theta_star) / v
        f_curv = -1.0 / v
        if f_curv >= 0:
            raise NumericalError("nonnegative curvature at the expansion point")
        out += eta * f_star + 0.5 * (_LOG_2PI - math.log(eta * abs(f_curv)))
    return out


def log_ratio_mass_marked(t: SplitTriple, n: int, h: MarkedHyper) -> float:
    """Log of the combined mass/marked ratio between a split and its parent.

    ratio = |L|^1.5 |R|^1.5 / (|P|^1.5 (n+b0)^-a0)
            * G(a0) G(a0+|P|) / (G(a0+|L|) G(a0+|R|)).
    Symmetric in (left, right).
    """
    _require_nonempty(t.left)
    _require_nonempty(t.right)
    nl, nr, np_ = t.left.count, t.right.count, t.parent.count
    return (
        1.5 * (math.log(nl) + math.log(nr) - math.log(np_))
        + h.a0 * math.log(n + h.b0)
        + gammaln(h.a0)
        + gammaln(h.a0 + np_)
        - gammaln(h.a0 + nl)
        - gammaln(h.a0 + nr)
    )


def log_ratio_c_phi(t: SplitTriple, spec: ExpFamSpec) -> float:
    """Log evidence ratio of a split against its parent block.

    log m(left) + log m(right) - log m(parent); the Cox-thinning corrections
    cancel into a finite constant and are not materialized here.
    """
    return (
        log_marginal_mq(t.left, spec)
        + log_marginal_mq(t.right, spec)
        - log_marginal_mq(t.parent, spec)
    )
