r"""Rank-2 developments of prediction-process paths and the high rank
path characteristic function distance.

The prediction process of :math:`X` under a rank-1 map :math:`M` is the
matrix-valued path :math:`t \mapsto \Phi_{\hat X_t}(M) =
\mathbb{E}[\mathcal{U}_M(X) \mid \mathcal{F}_t]`.  A rank-2 map
:math:`\mathcal{M}` is a *real*-linear map
:math:`\mathbb{C}^{n\times n} \to \mathfrak{u}(m)`; viewing
:math:`\mathbb{C}^{n\times n}` as :math:`\mathbb{R}^{2n^2}` it is stored
as :math:`2n^2` anti-Hermitian generators (plus one more for the
optional time channel).  The rank-2 development of a prediction path is
then the ordinary chain product of exponentials of the mapped
increments, and everything from :mod:`adev.paths` applies verbatim to
the realified increments.

Distances:

* ``ehrpcfd`` — the empirical high rank distance: the square root of the
  mean over an ensemble of admissible pairs of squared HS distances of
  the two empirical high rank characteristic functions.  Always bounded
  by :math:`2\sqrt{m}`.
* ``truncated_hrpcfd`` — a partial sum of the metrizing series
  ``sum_j min(1, d_j) / 2^j`` over pairs with growing dimensions.
* ``hrpcf_kernel`` — the Monte Carlo kernel whose MMD expansion equals
  the squared distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ArgumentError, ShapeError
from .paths import _check_times, time_channel
from .seeding import derive_seed
from .unitary import check_anti_hermitian, hs_distance, random_anti_hermitian


@dataclass
class CondPaths:
    """Per-sample prediction-process paths.

    ``values[i, t]`` estimates the conditional characteristic function of
    sample ``i`` at grid time ``t`` — a complex ``n x n`` matrix.  Steps
    of exact conditional expectations have HS norm at most ``sqrt(n)``
    (convex combinations of unitaries); regression estimates may exceed
    it slightly, so this is not enforced here.
    """

    times: np.ndarray  # (T+1,)
    values: np.ndarray  # (N, T+1, n, n) complex

    def __post_init__(self):
        self.times = _check_times(self.times)
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim == 3:
            v = v[None]
        if v.ndim != 4 or v.shape[2] != v.shape[3] or v.shape[1] != self.times.shape[0]:
            raise ShapeError(
                f"cond path values must be (N, {self.times.shape[0]}, n, n), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ArgumentError("cond path values must be finite")
        self.values = v

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[2]

    def subset(self, idx) -> "CondPaths":
        return CondPaths(self.times, self.values[np.asarray(idx)])

    def max_step_norm(self):
        return float(np.max(np.sqrt(np.sum(np.abs(self.values) ** 2, axis=(2, 3)))))


def n_channels(n, time_augmented):
    return 2 * n * n + (1 if time_augmented else 0)


@dataclass
class DevMap2:
    """Real-linear map C^{n x n} -> u(m) with an optional time channel.

    Channel order of the realified input: time (if enabled), then the
    n^2 real parts, then the n^2 imaginary parts, both row-major.
    """

    n: int
    generators: np.ndarray  # (n_channels, m, m)
    time_augmented: bool = True
    normalize_time: bool = True

    def __post_init__(self):
        G = np.ascontiguousarray(np.asarray(self.generators, dtype=np.complex128))
        expected = n_channels(self.n, self.time_augmented)
        if G.ndim != 3 or G.shape[1] != G.shape[2]:
            raise ShapeError(f"generators must be (channels, m, m), got {G.shape}")
        if G.shape[0] != expected:
            raise ShapeError(
                f"expected {expected} generators for n={self.n} "
                f"(time_augmented={self.time_augmented}), got {G.shape[0]}"
            )
        check_anti_hermitian(G, "generator")
        self.generators = G

    @property
    def lie_dim(self):
        return self.generators.shape[1]


@dataclass
class Map2Ensemble:
    """K independent rank-2 maps sharing (n, m) and channel conventions."""

    n: int
    generators: np.ndarray  # (K, n_channels, m, m)
    time_augmented: bool = True
    normalize_time: bool = True

    def __post_init__(self):
        G = np.ascontiguousarray(np.asarray(self.generators, dtype=np.complex128))
        expected = n_channels(self.n, self.time_augmented)
        if G.ndim != 4 or G.shape[2] != G.shape[3] or G.shape[1] != expected:
            raise ShapeError(
                f"ensemble generators must be (K, {expected}, m, m), got {G.shape}"
            )
        check_anti_hermitian(G, "generator")
        self.generators = G

    def __len__(self):
        return self.generators.shape[0]

    def __getitem__(self, i) -> DevMap2:
        return DevMap2(self.n, self.generators[i], self.time_augmented, self.normalize_time)

    @property
    def lie_dim(self):
        return self.generators.shape[2]

    def copy(self):
        return Map2Ensemble(self.n, self.generators.copy(), self.time_augmented, self.normalize_time)


def sample_map2_ensemble(
    n, lie_dim, K, init_std=0.2, seed=0, time_augmented=True, normalize_time=True
):
    """Sample K random rank-2 maps (Gaussian entries projected to the
    anti-Hermitian subspace), deterministic in ``seed``."""
    if K < 1:
        raise ArgumentError(f"K must be >= 1, got {K}")
    if init_std < 0:
        raise ArgumentError(f"init_std must be >= 0, got {init_std}")
    rng = np.random.default_rng(seed)
    G = random_anti_hermitian((K, n_channels(n, time_augmented)), lie_dim, init_std, rng)
    return Map2Ensemble(n, G, time_augmented, normalize_time)


def realified_increments(m2, cond: CondPaths):
    """Increments of the prediction path in the map's channel convention:
    shape ``(N, T, channels)`` real."""
    if cond.n != m2.n:
        raise ShapeError(f"map expects n={m2.n}, cond paths have n={cond.n}")
    dP = np.diff(cond.values, axis=1)  # (N, T, n, n) complex
    N, T = dP.shape[:2]
    flat = dP.reshape(N, T, -1)
    parts = [np.real(flat), np.imag(flat)]
    if m2.time_augmented:
        dt = np.diff(time_channel(cond.times, m2.normalize_time))
        chan = np.broadcast_to(dt[None, :, None], (N, T, 1))
        parts.insert(0, chan)
    return np.ascontiguousarray(np.concatenate(parts, axis=2))


def develop_rank2(m2: DevMap2, cond: CondPaths):
    """Rank-2 developments of prediction paths: ``(N, m, m)`` unitaries.

    A constant path develops to the identity (all increments vanish,
    up to the time channel if enabled).
    """
    K = backend.kernels()
    incs = realified_increments(m2, cond)
    A = K.build_step_matrices(incs, m2.generators)
    U = K.expm_taylor(A)
    return K.chain_product(U)


def hrpcf(m2: DevMap2, cond: CondPaths):
    """Empirical high rank characteristic function: the sample mean of
    rank-2 developments.  HS norm at most ``sqrt(m)``."""
    if cond.n_samples < 1:
        raise ArgumentError("need at least one sample")
    return develop_rank2(m2, cond).mean(axis=0)


def hrpcf_features(m2_ens: Map2Ensemble, cond: CondPaths):
    """Per-sample rank-2 developments under every map: ``(N, K2, m, m)``."""
    return np.stack([develop_rank2(m2_ens[j], cond) for j in range(len(m2_ens))], axis=1)


def _check_alignment(m2_ens, cond_list, what):
    if len(cond_list) == 0:
        raise ArgumentError(f"{what}: need cond paths for at least one rank-1 map")
    for c in cond_list:
        if c.n != m2_ens.n:
            raise ShapeError(
                f"{what}: cond paths have n={c.n} but rank-2 maps expect n={m2_ens.n}"
            )


def ehrpcfd_sq(m2_ens: Map2Ensemble, cond_x, cond_y):
    """Empirical squared high rank distance.

    ``cond_x[i]`` and ``cond_y[i]`` must be the prediction paths produced
    with the same rank-1 map ``M_i``; the mean runs over all
    ``K1 x K2`` admissible pairs.
    """
    _check_alignment(m2_ens, cond_x, "cond_x")
    _check_alignment(m2_ens, cond_y, "cond_y")
    if len(cond_x) != len(cond_y):
        raise ShapeError(
            f"cond path lists misaligned: {len(cond_x)} vs {len(cond_y)} rank-1 maps"
        )
    K2 = len(m2_ens)
    total = 0.0
    for cx, cy in zip(cond_x, cond_y):
        for j in range(K2):
            m2 = m2_ens[j]
            total += hs_distance(hrpcf(m2, cx), hrpcf(m2, cy)) ** 2
    return total / (len(cond_x) * K2)


def ehrpcfd(m2_ens: Map2Ensemble, cond_x, cond_y):
    """Square root of :func:`ehrpcfd_sq`; symmetric and at most 2 sqrt(m)."""
    return float(np.sqrt(ehrpcfd_sq(m2_ens, cond_x, cond_y)))


def hrpcf_kernel(m2_ens: Map2Ensemble, p: CondPaths, q: CondPaths):
    """Monte Carlo kernel between two single prediction paths.

    The average over the ensemble of ``Re <U(p), U(q)>_HS``; for ``p == q``
    every draw contributes exactly ``m`` (the HS norm of a unitary
    squared), and the induced MMD expansion reproduces the squared
    distance.
    """
    if p.n_samples != 1 or q.n_samples != 1:
        raise ArgumentError("kernel arguments are single prediction paths")
    total = 0.0
    for j in range(len(m2_ens)):
        m2 = m2_ens[j]
        Up = develop_rank2(m2, p)[0]
        Uq = develop_rank2(m2, q)[0]
        total += float(np.real(np.sum(Up * Uq.conj())))
    return total / len(m2_ens)


def truncation_schedule(j):
    """Dimensions of the j-th admissible pair (1-based): n = 2 + ceil(j/2),
    m = 3 + j — small, but every (n, m) window is eventually covered."""
    return 2 + math.ceil(j / 2), 3 + j


def truncated_hrpcfd(
    cond_x,
    cond_y,
    d_in,
    J,
    seed=0,
    init_std=0.2,
    time_augmented=True,
    normalize_time=True,
):
    """Partial sum ``sum_{j<=J} min(1, d_j) / 2^j`` of the metrizing series.

    ``cond_x`` / ``cond_y`` are callables mapping a rank-1
    :class:`~adev.unitary.DevMap` to the :class:`CondPaths` of the two
    processes (exact enumeration for finite-support processes, trained
    regressions otherwise); ``d_in`` is the input dimension those maps
    must accept.  Pair ``j`` is sampled deterministically from ``seed``.
    """
    if J < 1:
        raise ArgumentError(f"J must be >= 1, got {J}")
    from .unitary import sample_map_ensemble  # local import to avoid cycle noise

    total = 0.0
    for j in range(1, J + 1):
        n_j, m_j = truncation_schedule(j)
        M = sample_map_ensemble(d_in, n_j, 1, init_std, derive_seed(seed, 2 * j))[0]
        m2_ens = sample_map2_ensemble(
            n_j,
            m_j,
            1,
            init_std,
            derive_seed(seed, 2 * j + 1),
            time_augmented,
            normalize_time,
        )
        d_j = ehrpcfd(m2_ens, [cond_x(M)], [cond_y(M)])
        total += min(1.0, d_j) / 2.0**j
    return total


__all__ = [
    "CondPaths",
    "DevMap2",
    "Map2Ensemble",
    "develop_rank2",
    "ehrpcfd",
    "ehrpcfd_sq",
    "hrpcf",
    "hrpcf_features",
    "hrpcf_kernel",
    "n_channels",
    "realified_increments",
    "sample_map2_ensemble",
    "truncated_hrpcfd",
    "truncation_schedule",
]
