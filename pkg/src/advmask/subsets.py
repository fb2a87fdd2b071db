"""Fixed-size weighted subset distributions.

Given per-position selection probabilities ``pi`` and a cardinality ``K`` the
distribution over all ``K``-element index sets ``S`` is

    q(S) = prod_{i in S} pi_i * prod_{i not in S} (1 - pi_i) / Z

(conditional Poisson sampling).  ``Z`` is computed by a right-to-left dynamic
program over suffixes kept in log space, which also drives exact sequential
sampling and a Gumbel-softmax relaxation of the sampling path.

Positions are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

CLAMP_EPS = 1e-6
ENUMERATION_CAP = 2**20


class SubsetError(ValueError):
    """Base class for errors raised by the subset machinery."""


class EmptyInputError(SubsetError):
    pass


class InvalidCardinalityError(SubsetError):
    pass


class CardinalityMismatchError(SubsetError):
    pass


class InvalidStateError(SubsetError):
    pass


class InvalidTemperatureError(SubsetError):
    pass


class SupportTooLargeError(SubsetError):
    pass


def clamp_probs(probs, eps=CLAMP_EPS):
    """Clip selection probabilities into ``[eps, 1 - eps]``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise EmptyInputError("selection probabilities must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(probs)):
        raise SubsetError("selection probabilities must be finite")
    return np.clip(probs, eps, 1.0 - eps)


def _log_table(log_p, log_q, K):
    n = log_p.shape[0]
    log_z = np.full((n + 1, K + 1), -np.inf)
    log_z[n, 0] = 0.0
    for j in range(n - 1, -1, -1):
        nxt = log_z[j + 1]
        log_z[j, 0] = log_q[j] + nxt[0]
        if K:
            log_z[j, 1:] = np.logaddexp(log_q[j] + nxt[1:], log_p[j] + nxt[:-1])
    return log_z


@dataclass(frozen=True)
class SubsetDistribution:
    """The law q(S) over size-``cardinality`` subsets.

    ``log_z[j, k]`` is the log partition function of size-``k`` subsets of the
    suffix ``j .. n-1``; row ``n`` is the empty suffix.  Instances are
    immutable and may be shared between threads.
    """

    probs: np.ndarray
    cardinality: int
    log_z: np.ndarray
    clamp_mask: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def log_partition(self) -> float:
        return float(self.log_z[0, self.cardinality])

    @property
    def log_p(self) -> np.ndarray:
        return np.log(self.probs)

    @property
    def log_q(self) -> np.ndarray:
        return np.log1p(-self.probs)


def build_distribution(probs, cardinality: int) -> SubsetDistribution:
    """Clamp ``probs`` and fill the log-space partition table, O(K n)."""
    raw = np.asarray(probs, dtype=np.float64)
    clamped = clamp_probs(raw)
    n = clamped.shape[0]
    K = int(cardinality)
    if K < 0 or K > n:
        raise InvalidCardinalityError(f"cardinality {K} outside [0, {n}]")
    log_z = _log_table(np.log(clamped), np.log1p(-clamped), K)
    mask = (raw >= CLAMP_EPS) & (raw <= 1.0 - CLAMP_EPS)
    for arr in (clamped, log_z, mask):
        arr.setflags(write=False)
    return SubsetDistribution(clamped, K, log_z, mask)


def _as_subset(dist, subset):
    idx = np.asarray(sorted(int(i) for i in subset), dtype=np.int64)
    if idx.size != dist.cardinality:
        raise CardinalityMismatchError(
            f"subset has {idx.size} elements, distribution expects {dist.cardinality}"
        )
    if idx.size and (idx[0] < 0 or idx[-1] >= dist.n or np.any(np.diff(idx) == 0)):
        raise CardinalityMismatchError(f"invalid or repeated indices in {idx.tolist()}")
    return idx


def log_prob(dist: SubsetDistribution, subset) -> float:
    """Exact ``log q(S)`` by direct evaluation of the product form."""
    idx = _as_subset(dist, subset)
    member = np.zeros(dist.n, dtype=bool)
    member[idx] = True
    return float(dist.log_p[member].sum() + dist.log_q[~member].sum() - dist.log_partition)


def _log_step(dist, j, need):
    """Log-probabilities of (yes, no) at position ``j`` with ``need`` still to pick."""
    L = dist.log_z
    if need == 0:
        return -np.inf, 0.0
    log_yes = dist.log_p[j] + L[j + 1, need - 1] - L[j, need]
    log_no = dist.log_q[j] + L[j + 1, need] - L[j, need]
    # forced moves are exact: logaddexp(-inf, x) == x
    return log_yes, log_no


def step_probability(dist: SubsetDistribution, next_index: int, already_chosen: int) -> float:
    """Probability of including ``next_index`` given ``already_chosen`` picks so far."""
    j, c, K, n = int(next_index), int(already_chosen), dist.cardinality, dist.n
    if not 0 <= j < n:
        raise InvalidStateError(f"index {j} outside [0, {n})")
    if c < 0 or c > K:
        raise InvalidStateError(f"chosen count {c} outside [0, {K}]")
    if n - j < K - c:
        raise InvalidStateError(f"cannot pick {K - c} more from {n - j} remaining positions")
    if c == K:
        return 0.0
    if n - j == K - c:
        return 1.0
    return float(np.exp(_log_step(dist, j, K - c)[0]))


@dataclass(frozen=True)
class SampledSubset:
    """A drawn subset together with its exact and relaxed path log-probabilities.

    ``noise`` holds the Gumbel pairs (one row per position, columns yes/no)
    used for the draw; passing it back to :func:`sample_relaxed` replays the
    draw exactly.  ``relaxed_grad`` is d(relaxed_log_prob)/d(probs) with the
    noise held fixed.  Hard samples carry ``noise=None`` and no relaxed terms.
    ``path_log_prob`` is filled by callers that lift ``relaxed_log_prob``
    into an autodiff graph.
    """

    indices: tuple
    hard_log_prob: float
    relaxed_log_prob: float | None = None
    noise: np.ndarray | None = field(default=None, repr=False)
    temperature: float | None = None
    relaxed_grad: np.ndarray | None = field(default=None, repr=False)
    path_log_prob: object = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.indices)


def sample_hard_batch(dist: SubsetDistribution, size: int, rng: np.random.Generator):
    """Draw ``size`` exact samples with one uniform per decision.

    Returns ``(indices, log_probs)`` with ``indices`` of shape ``(size, K)``.
    The telescoped product of step probabilities gives ``log_probs``.
    """
    n, K = dist.n, dist.cardinality
    u = rng.random((size, n))
    chosen = np.zeros((size, n), dtype=bool)
    count = np.zeros(size, dtype=np.int64)
    logp = np.zeros(size)
    L, lp, lq = dist.log_z, dist.log_p, dist.log_q
    for j in range(n):
        need = K - count
        active = need > 0
        if not active.any():
            break
        m = need[active]
        log_yes = lp[j] + L[j + 1, m - 1] - L[j, m]
        log_no = lq[j] + L[j + 1, m] - L[j, m]
        take = u[active, j] < np.exp(log_yes)
        rows = np.flatnonzero(active)
        chosen[rows[take], j] = True
        count[rows[take]] += 1
        logp[rows] += np.where(take, log_yes, log_no)
    indices = np.nonzero(chosen)[1].reshape(size, K)
    return indices, logp


def sample_hard(dist: SubsetDistribution, rng: np.random.Generator) -> SampledSubset:
    """Draw one subset exactly from ``dist`` by sequential yes/no decisions."""
    indices, logp = sample_hard_batch(dist, 1, rng)
    return SampledSubset(tuple(int(i) for i in indices[0]), float(logp[0]))


def _check_temperature(temperature):
    if not temperature > 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {temperature}")


def sample_relaxed_batch(dist, size, temperature, rng=None, noise=None):
    """Vectorised Gumbel-argmax path sampling.

    Returns ``(indices, hard_log_probs, relaxed_log_probs, noise)``; ``noise``
    has shape ``(size, n, 2)`` and is drawn from ``rng`` unless supplied.
    """
    _check_temperature(temperature)
    n, K = dist.n, dist.cardinality
    if noise is None:
        noise = rng.gumbel(size=(size, n, 2))
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (size, n, 2):
        raise InvalidStateError(f"noise record shape {noise.shape} != {(size, n, 2)}")
    chosen = np.zeros((size, n), dtype=bool)
    count = np.zeros(size, dtype=np.int64)
    hard = np.zeros(size)
    relaxed = np.zeros(size)
    L, lp, lq = dist.log_z, dist.log_p, dist.log_q
    for j in range(n):
        need = K - count
        rows = np.flatnonzero(need > 0)
        if rows.size == 0:
            break
        m = need[rows]
        log_yes = lp[j] + L[j + 1, m - 1] - L[j, m]
        log_no = lq[j] + L[j + 1, m] - L[j, m]
        s_yes = log_yes + noise[rows, j, 0]
        s_no = log_no + noise[rows, j, 1]
        take = s_yes >= s_no  # ties resolve to "yes"
        s_sel = np.where(take, s_yes, s_no) / temperature
        relaxed[rows] += s_sel - np.logaddexp(s_yes / temperature, s_no / temperature)
        hard[rows] += np.where(take, log_yes, log_no)
        chosen[rows[take], j] = True
        count[rows[take]] += 1
    indices = np.nonzero(chosen)[1].reshape(size, K)
    return indices, hard, relaxed, noise


def sample_relaxed(dist: SubsetDistribution, temperature: float = 1.0, rng=None, noise=None) -> SampledSubset:
    """Draw one subset by noisy argmax and record the relaxed path log-probability.

    The hard decisions are exact samples from ``dist`` for any temperature;
    only ``relaxed_log_prob`` (and its gradient) depends on ``temperature``.
    """
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)[None]
    indices, hard, relaxed, noise = sample_relaxed_batch(dist, 1, temperature, rng, noise)
    idx = tuple(int(i) for i in indices[0])
    grad = relaxed_path_grad(dist, idx, noise[0], temperature)
    return SampledSubset(idx, float(hard[0]), float(relaxed[0]), noise[0], float(temperature), grad)


def _backprop_table(dist, g_log_z, g_a, g_b):
    """Push adjoints of the log partition table back onto log pi / log(1 - pi)."""
    L, lp, lq = dist.log_z, dist.log_p, dist.log_q
    n, K = dist.n, dist.cardinality
    g_log_z = g_log_z.copy()
    for j in range(n):
        g = g_log_z[j]
        nz = np.flatnonzero((g != 0) & np.isfinite(L[j]))
        if nz.size == 0:
            continue
        gk = g[nz]
        w_no = np.exp(lq[j] + L[j + 1, nz] - L[j, nz])
        g_b[j] += np.dot(gk, w_no)
        g_log_z[j + 1, nz] += gk * w_no
        pos = nz[nz > 0]
        if pos.size:
            gp = g[pos]
            w_yes = np.exp(lp[j] + L[j + 1, pos - 1] - L[j, pos])
            g_a[j] += np.dot(gp, w_yes)
            g_log_z[j + 1, pos - 1] += gp * w_yes
    grad = g_a / dist.probs - g_b / (1.0 - dist.probs)
    return np.where(dist.clamp_mask, grad, 0.0)


def relaxed_path_grad(dist, indices, noise, temperature=1.0):
    """Gradient of the relaxed path log-probability w.r.t. the raw probabilities.

    The decision path is held fixed (it is piecewise constant in ``probs``
    for fixed noise), so this is the exact derivative wherever it exists.
    """
    _check_temperature(temperature)
    n, K = dist.n, dist.cardinality
    L, lp, lq = dist.log_z, dist.log_p, dist.log_q
    member = np.zeros(n, dtype=bool)
    member[list(indices)] = True
    g_a, g_b = np.zeros(n), np.zeros(n)
    g_L = np.zeros_like(L)
    need = K
    for j in range(n):
        if need == 0:
            break
        log_yes, log_no = _log_step(dist, j, need)
        s = np.array([log_yes + noise[j, 0], log_no + noise[j, 1]]) / temperature
        soft = np.exp(s - np.logaddexp(s[0], s[1]))
        pick = 0 if member[j] else 1
        g_s = -soft
        g_s[pick] += 1.0
        g_yes, g_no = g_s / temperature
        if np.isfinite(log_yes) and g_yes:
            g_a[j] += g_yes
            g_L[j + 1, need - 1] += g_yes
            g_L[j, need] -= g_yes
        if np.isfinite(log_no) and g_no:
            g_b[j] += g_no
            g_L[j + 1, need] += g_no
            g_L[j, need] -= g_no
        need -= pick == 0
    return _backprop_table(dist, g_L, g_a, g_b)


def log_prob_grad(dist: SubsetDistribution, subset) -> np.ndarray:
    """Score function: d log q(S) / d probs."""
    idx = _as_subset(dist, subset)
    member = np.zeros(dist.n, dtype=bool)
    member[idx] = True
    g_L = np.zeros_like(dist.log_z)
    g_L[0, dist.cardinality] = -1.0
    return _backprop_table(dist, g_L, member.astype(float), (~member).astype(float))


def _prefix_table(log_p, log_q, K):
    n = log_p.shape[0]
    pre = np.full((n + 1, K + 1), -np.inf)
    pre[0, 0] = 0.0
    for j in range(n):
        pre[j + 1, 0] = pre[j, 0] + log_q[j]
        if K:
            pre[j + 1, 1:] = np.logaddexp(pre[j, 1:] + log_q[j], pre[j, :-1] + log_p[j])
    return pre


def inclusion_probabilities(dist: SubsetDistribution) -> np.ndarray:
    """Marginal ``Pr[i in S]`` for every position via a forward-backward split."""
    n, K = dist.n, dist.cardinality
    if K == 0:
        return np.zeros(n)
    pre = _prefix_table(dist.log_p, dist.log_q, K)
    L = dist.log_z
    out = np.empty(n)
    ks = np.arange(K)
    for i in range(n):
        terms = pre[i, ks] + L[i + 1, K - 1 - ks]
        out[i] = np.exp(dist.log_p[i] + np.logaddexp.reduce(terms) - dist.log_partition)
    return out


def enumerate_support(probs, cardinality: int, cap: int = ENUMERATION_CAP):
    """Brute-force list of ``(subset, probability)`` over all size-K subsets.

    Used as an independent oracle; no dynamic programming is involved.
    """
    p = clamp_probs(probs)
    n, K = p.shape[0], int(cardinality)
    if K < 0 or K > n:
        raise InvalidCardinalityError(f"cardinality {K} outside [0, {n}]")
    if math.comb(n, K) > cap:
        raise SupportTooLargeError(f"C({n}, {K}) = {math.comb(n, K)} exceeds cap {cap}")
    subsets = list(itertools.combinations(range(n), K))
    weights = np.empty(len(subsets))
    for s, subset in enumerate(subsets):
        member = np.zeros(n, dtype=bool)
        member[list(subset)] = True
        weights[s] = np.prod(np.where(member, p, 1.0 - p))
    return [(subset, w) for subset, w in zip(subsets, weights / weights.sum())]


def partition_by_enumeration(probs, cardinality: int, cap: int = ENUMERATION_CAP) -> float:
    """Unnormalised sum over all size-K subsets; the oracle for ``exp(log_partition)``."""
    p = clamp_probs(probs)
    n, K = p.shape[0], int(cardinality)
    if math.comb(n, K) > cap:
        raise SupportTooLargeError(f"C({n}, {K}) exceeds cap {cap}")
    total = 0.0
    for subset in itertools.combinations(range(n), K):
        member = np.zeros(n, dtype=bool)
        member[list(subset)] = True
        total += float(np.prod(np.where(member, p, 1.0 - p)))
    return total
