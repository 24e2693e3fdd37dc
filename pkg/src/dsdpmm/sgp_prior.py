"""Sigmoidal Gaussian Cox-process prior over topic locations.

The process keeps K accepted topic locations (one per cluster) and M latent
thinned locations, each carrying a latent function value Y.  Values are tied
to locations through a stationarity fixed point; birth/death Metropolis moves
resample the thinned set against the intensity bound alpha*.  The thinning
probability at any location is sigmoid of the GP conditional mean given the
stored knots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConvergenceError, NumericalError, ValidationError

#: |Y| above this would round sigmoid(Y) to exactly 0 or 1 in float64.
_MAX_ABS_Y = 700.0


def sigmoid(y: float) -> float:
    if y >= 0:
        return 1.0 / (1.0 + math.exp(-y))
    e = math.exp(y)
    return e / (1.0 + e)


def log_sigmoid(y: float) -> float:
    # log sigma(y) = -log(1 + exp(-y)), computed without overflow
    if y >= 0:
        return -math.log1p(math.exp(-y))
    return y - math.log1p(math.exp(y))


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel: variance * exp(-0.5 sum_d (dx_d / l_d)^2)."""

    variance: float
    lengthscale: tuple
    jitter: float = 1e-8

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ValidationError(f"variance must be positive, got {self.variance!r}")
        if any(not (math.isfinite(l) and l > 0) for l in self.lengthscale):
            raise ValidationError("lengthscale entries must be positive")
        if not (0 < self.jitter <= 1e-4 * self.variance):
            raise ValidationError(
                f"jitter must be in (0, 1e-4*variance], got {self.jitter!r}"
            )

    @classmethod
    def isotropic(cls, variance=1.0, lengthscale=1.0, dimension=1, jitter=1e-8):
        return cls(variance, (float(lengthscale),) * dimension, jitter)


@dataclass
class SgpState:
    """Mutable Cox-process state: K accepted and M thinned knots with values.

    ``locations`` holds all K+M knot locations (accepted first), ``values``
    the matching latent function values.  ``domain`` is the (lo, hi) box over
    which thinned locations are proposed.
    """

    locations: list
    values: list
    accepted_count: int
    thinned_count: int
    alpha_star: float
    proposal_b: float = 0.5
    domain: tuple = None

    def __post_init__(self):
        self.check()

    @property
    def total(self):
        return self.accepted_count + self.thinned_count

    def domain_volume(self) -> float:
        if self.domain is None:
            raise ValidationError("state has no proposal domain configured")
        lo, hi = self.domain
        return float(np.prod(np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)))

    def check(self):
        if self.accepted_count < 0 or self.thinned_count < 0:
            raise ValidationError("knot counts must be nonnegative")
        if len(self.locations) != self.total or len(self.values) != self.total:
            raise ValidationError("locations/values length must equal K + M")
        if not (math.isfinite(self.alpha_star) and self.alpha_star > 0):
            raise ValidationError(f"alpha_star must be positive, got {self.alpha_star!r}")
        if not 0 < self.proposal_b < 1:
            raise ValidationError(f"proposal_b must be in (0,1), got {self.proposal_b!r}")
        for y in self.values:
            if not (math.isfinite(y) and abs(y) < _MAX_ABS_Y):
                raise ValidationError(f"latent value {y!r} would saturate the sigmoid")
        if self.domain is not None:
            lo, hi = (np.asarray(v, dtype=float) for v in self.domain)
            if lo.shape != hi.shape or np.any(hi <= lo):
                raise ValidationError("domain must be a box with hi > lo in every dimension")


@dataclass(frozen=True)
class MoveRecord:
    """Outcome of one birth/death proposal."""

    move: str
    accepted: bool
    a_value: float
    thinned_after: int


def kernel_matrix(locs, kp: KernelParams) -> np.ndarray:
    """Jittered kernel Gram matrix over a list of locations."""
    locs = np.atleast_2d(np.asarray(locs, dtype=float))
    if locs.shape[0] < 1:
        raise ValidationError("need at least one location")
    if not np.all(np.isfinite(locs)):
        raise ValidationError("locations must be finite")
    ell = np.asarray(kp.lengthscale, dtype=float)
    scaled = locs / ell
    sq = np.sum(scaled**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * scaled @ scaled.T
    np.maximum(d2, 0.0, out=d2)
    mat = kp.variance * np.exp(-0.5 * d2)
    mat[np.diag_indices_from(mat)] += kp.jitter
    return mat


def cross_kernel(a, b, kp: KernelParams) -> np.ndarray:
    """Kernel values between two location sets (no jitter)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    ell = np.asarray(kp.lengthscale, dtype=float)
    sa, sb = a / ell, b / ell
    d2 = (
        np.sum(sa**2, axis=1)[:, None]
        + np.sum(sb**2, axis=1)[None, :]
        - 2.0 * sa @ sb.T
    )
    np.maximum(d2, 0.0, out=d2)
    return kp.variance * np.exp(-0.5 * d2)


class KnotPredictor:
    """Cached Cholesky machinery for GP conditionals given a fixed knot set."""

    def __init__(self, locations, values, kp: KernelParams):
        self.kp = kp
        self.locs = np.atleast_2d(np.asarray(locations, dtype=float))
        self.vals = np.asarray(values, dtype=float)
        try:
            self._chol = cho_factor(kernel_matrix(self.locs, kp), lower=True)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - jitter guards this
            raise NumericalError(f"kernel matrix not positive definite: {exc}") from exc
        self._alpha = cho_solve(self._chol, self.vals)

    def mean(self, theta) -> np.ndarray:
        ks = cross_kernel(np.atleast_2d(theta), self.locs, self.kp)
        return ks @ self._alpha

    def mean_and_var(self, theta):
        theta = np.atleast_2d(theta)
        ks = cross_kernel(theta, self.locs, self.kp)
        mean = ks @ self._alpha
        w = cho_solve(self._chol, ks.T)
        var = self.kp.variance + self.kp.jitter - np.sum(ks * w.T, axis=1)
        return mean, np.maximum(var, 1e-300)


def gp_conditional(theta, state: SgpState, kp: KernelParams):
    """Conditional (mean, variance) of the latent function at ``theta``.

    With no knots stored this falls back to the prior: mean 0, variance from
    the kernel diagonal.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if state.total == 0:
        return np.zeros(theta.shape[0]), np.full(theta.shape[0], kp.variance + kp.jitter)
    pred = KnotPredictor(state.locations, state.values, kp)
    return pred.mean_and_var(theta)


def thinning_value(theta, state: SgpState, kp: KernelParams) -> float:
    """Thinning probability sigmoid(Y(theta)) from the GP conditional mean."""
    if state.total == 0:
        raise ValidationError("thinning_value needs a nonempty state")
    mean, _ = gp_conditional(theta, state, kp)
    return sigmoid(float(mean[0]))


def _fixed_point_map(y, kmat, accepted_count):
    """One application of the stationarity map Y -> K @ w(Y).

    w_i = sigmoid(-Y_i) for accepted knots and -sigmoid(Y_i) for thinned ones.
    """
    w = np.empty_like(y)
    k = accepted_count
    w[:k] = 1.0 / (1.0 + np.exp(y[:k]))
    w[k:] = -1.0 / (1.0 + np.exp(-y[k:]))
    return kmat @ w


def solve_intensity_values(
    state: SgpState,
    kp: KernelParams,
    tol: float = 1e-8,
    max_iter: int = 10000,
    y0=None,
) -> np.ndarray:
    """Solve the latent-value fixed point for the current knot locations.

    Newton iteration on the residual R(Y) = Y - F(Y), started from zero (or
    ``y0``), with step halving whenever a full step fails to shrink the
    max-norm residual, until ||R|| < tol.  The Jacobian I + K diag(s(Y)s(-Y))
    is always invertible (K is positive definite and the diagonal is
    nonnegative), so the iteration is well posed for any knot set; plain
    damped fixed-point sweeps stop contracting once a few dozen overlapping
    knots accumulate.  Deterministic given its inputs.
    """
    if state.total < 1:
        raise ValidationError("need at least one knot to solve for values")
    if tol <= 0 or max_iter < 1:
        raise ValidationError("tol must be > 0 and max_iter >= 1")
    kmat = kernel_matrix(state.locations, kp)
    y = np.zeros(state.total) if y0 is None else np.array(y0, dtype=float)
    resid_vec = y - _fixed_point_map(y, kmat, state.accepted_count)
    resid = float(np.max(np.abs(resid_vec)))
    for _ in range(max_iter):
        if resid < tol:
            return y
        sig = 1.0 / (1.0 + np.exp(-y))
        jac = np.eye(state.total) + kmat * (sig * (1.0 - sig))[None, :]
        step = np.linalg.solve(jac, resid_vec)
        scale = 1.0
        while scale > 1e-8:
            cand = y - scale * step
            cand_vec = cand - _fixed_point_map(cand, kmat, state.accepted_count)
            cand_resid = float(np.max(np.abs(cand_vec)))
            if cand_resid < resid:
                y, resid_vec, resid = cand, cand_vec, cand_resid
                break
            scale *= 0.5
        else:
            break
    if resid < tol:
        return y
    raise ConvergenceError(
        f"latent-value solve did not reach tol={tol} in {max_iter} steps",
        residual=resid,
    )


def latent_birth_death_step(state: SgpState, kp: KernelParams, rng):
    """One birth/death Metropolis move on the thinned knot set.

    With probability ``proposal_b`` a new thinned location is proposed
    uniformly over the domain with its value drawn from the GP conditional;
    otherwise a uniformly chosen thinned knot is proposed for deletion.
    alpha* is the total intensity budget of the process (the latent count
    stays below it), so the uniform-proposal volume cancels and the
    acceptance values are a_ins = alpha* sigmoid(-Y_new) / (M+1) and
    a_del = M / (alpha* sigmoid(-Y_old)).
    Mutates ``state`` in place and returns ``(state, MoveRecord)``.
    """
    if state.domain is None:
        raise ValidationError("birth/death moves need a proposal domain on the state")
    lo, hi = (np.asarray(v, dtype=float) for v in state.domain)
    if rng.random() < state.proposal_b:
        theta = lo + rng.random(lo.shape[0]) * (hi - lo)
        mean, var = gp_conditional(theta, state, kp)
        y_new = float(mean[0] + math.sqrt(float(var[0])) * rng.standard_normal())
        y_new = max(-_MAX_ABS_Y + 1, min(_MAX_ABS_Y - 1, y_new))
        a_ins = state.alpha_star * sigmoid(-y_new) / (state.thinned_count + 1)
        accepted = rng.random() < a_ins
        if accepted:
            state.locations.append(np.asarray(theta, dtype=float))
            state.values.append(y_new)
            state.thinned_count += 1
        state.check()
        return state, MoveRecord("insert", accepted, min(1.0, a_ins), state.thinned_count)
    if state.thinned_count == 0:
        # nothing to delete: an automatic rejection, not an error
        return state, MoveRecord("delete", False, 0.0, 0)
    j = state.accepted_count + int(rng.integers(state.thinned_count))
    y_old = state.values[j]
    a_del = state.thinned_count / (state.alpha_star * sigmoid(-y_old))
    accepted = rng.random() < a_del
    if accepted:
        del state.locations[j]
        del state.values[j]
        state.thinned_count -= 1
    state.check()
    return state, MoveRecord("delete", accepted, min(1.0, a_del), state.thinned_count)


def data_domain(data, expand: float = 0.1):
    """Axis-aligned bounding box of the data, expanded by a relative margin."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    lo = data.min(axis=0)
    hi = data.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    return lo - expand * span, hi + expand * span
