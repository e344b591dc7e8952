r"""Piecewise-linear paths, time augmentation, unitary developments, and
the empirical path characteristic function distance.

The development of a path :math:`x` under a linear map
:math:`M : \mathbb{R}^d \to \mathfrak{u}(n)` is the solution at the final
time of :math:`dy = y \cdot M(dx)`, :math:`y_0 = I_n`.  For a piecewise
linear path sampled at times :math:`t_0 < \dots < t_{L-1}` this is the
time-ordered product

.. math:: \mathcal{U}_M(x) = \exp(M(\Delta x_1)) \exp(M(\Delta x_2))
          \cdots \exp(M(\Delta x_{L-1})),

multiplying left to right in time.  The (empirical) path characteristic
function of a dataset is the sample mean of developments, and the
empirical distance ``epcfd`` averages squared Hilbert–Schmidt distances
of those means over an ensemble of random maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ArgumentError, ShapeError
from .unitary import DevMap, MapEnsemble, hs_distance


def _check_times(times):
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.shape[0] < 2:
        raise ArgumentError(f"need at least 2 time stamps, got shape {times.shape}")
    if not np.all(np.isfinite(times)):
        raise ArgumentError("time stamps must be finite")
    if not np.all(np.diff(times) > 0):
        raise ArgumentError("time stamps must be strictly increasing")
    return times


@dataclass
class PiecewisePath:
    """A discretely sampled R^d path, interpreted as piecewise linear."""

    times: np.ndarray  # (L,)
    values: np.ndarray  # (L, d)

    def __post_init__(self):
        self.times = _check_times(self.times)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.times.shape[0]:
            raise ShapeError(
                f"values must be (L, d) with L = {self.times.shape[0]}, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ArgumentError("path values must be finite")
        self.values = v

    @property
    def length(self):
        return self.times.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def increments(self):
        return np.diff(self.values, axis=0)


@dataclass
class Dataset:
    """N sample paths sharing one time grid: values of shape (N, L, d)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = _check_times(self.times)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:  # (N, L) -> (N, L, 1)
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[1] != self.times.shape[0]:
            raise ShapeError(
                f"values must be (N, L, d) with L = {self.times.shape[0]}, got {v.shape}"
            )
        if v.shape[0] < 1:
            raise ArgumentError("dataset needs at least one sample")
        if not np.all(np.isfinite(v)):
            raise ArgumentError("dataset values must be finite")
        self.values = v

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.times.shape[0]

    @property
    def dim(self):
        return self.values.shape[2]

    def path(self, i) -> PiecewisePath:
        return PiecewisePath(self.times, self.values[i])

    def increments(self):
        return np.diff(self.values, axis=1)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.times, self.values[np.asarray(idx)])

    def concat(self, other) -> "Dataset":
        if not np.array_equal(self.times, other.times) or self.dim != other.dim:
            raise ShapeError("datasets must share times and dimension to concatenate")
        return Dataset(self.times, np.concatenate([self.values, other.values]))

    @staticmethod
    def from_paths(paths) -> "Dataset":
        paths = list(paths)
        if not paths:
            raise ArgumentError("dataset needs at least one sample")
        times = paths[0].times
        for p in paths[1:]:
            if p.values.shape != paths[0].values.shape or not np.array_equal(p.times, times):
                raise ShapeError("all paths must share times and dimension")
        return Dataset(times, np.stack([p.values for p in paths]))


def time_channel(times, normalize=True):
    """The extra coordinate added by time augmentation, starting at 0.

    Normalized (default), it runs 0 -> 1 over the grid; unnormalized it
    keeps the raw clock, which is what hand computations on integer grids
    use.
    """
    t = np.asarray(times, dtype=np.float64)
    c = t - t[0]
    if normalize:
        c = c / (t[-1] - t[0])
    return c


def time_augment(obj, normalize=True):
    """Prepend a time coordinate (channel 0) to a path or dataset."""
    c = time_channel(obj.times, normalize)
    if isinstance(obj, Dataset):
        N = obj.n_samples
        chan = np.broadcast_to(c[None, :, None], (N, obj.length, 1))
        return Dataset(obj.times, np.concatenate([chan, obj.values], axis=2))
    if isinstance(obj, PiecewisePath):
        return PiecewisePath(obj.times, np.concatenate([c[:, None], obj.values], axis=1))
    raise ArgumentError(f"cannot time-augment {type(obj).__name__}")


# ---------------------------------------------------------------------------
# developments
# ---------------------------------------------------------------------------


def develop_increments(incs, generators):
    """Chain-product developments of raw increments ``(B, T, d)`` under
    generators ``(d, n, n)``; returns ``(B, n, n)``."""
    K = backend.kernels()
    incs = np.ascontiguousarray(incs, dtype=np.float64)
    A = K.build_step_matrices(incs, generators)
    U = K.expm_taylor(A)
    return K.chain_product(U)


def develop(M: DevMap, path: PiecewisePath):
    """Unitary feature of one path; the caller augments time beforehand
    if the map expects it."""
    if M.d_in != path.dim:
        raise ShapeError(f"map expects dimension {M.d_in}, path has {path.dim}")
    return develop_increments(path.increments()[None], M.generators)[0]


def develop_all(M: DevMap, data: Dataset):
    """Developments of every sample, shape ``(N, n, n)``."""
    if M.d_in != data.dim:
        raise ShapeError(f"map expects dimension {M.d_in}, dataset has {data.dim}")
    return develop_increments(data.increments(), M.generators)


def pcf(M: DevMap, data: Dataset):
    """Empirical path characteristic function: the sample mean of
    developments (index order fixed, so results are bit-reproducible)."""
    return develop_all(M, data).mean(axis=0)


def unitary_features(ensemble: MapEnsemble, data: Dataset):
    """Per-sample, per-map developments, shape ``(N, K, n, n)``.

    Computing these once makes permutation re-splits cheap: any group
    mean of features is that group's empirical characteristic function.
    """
    feats = [develop_all(ensemble[k], data) for k in range(len(ensemble))]
    return np.stack(feats, axis=1)


def epcfd_sq(ensemble: MapEnsemble, X: Dataset, Y: Dataset):
    """Mean over the ensemble of squared HS distances between the two
    empirical characteristic functions."""
    if X.dim != Y.dim:
        raise ShapeError(f"datasets have different dimensions: {X.dim} vs {Y.dim}")
    total = 0.0
    for k in range(len(ensemble)):
        M = ensemble[k]
        total += hs_distance(pcf(M, X), pcf(M, Y)) ** 2
    return total / len(ensemble)


def epcfd(ensemble: MapEnsemble, X: Dataset, Y: Dataset):
    """Square root of :func:`epcfd_sq`; symmetric, zero on equal multisets."""
    return float(np.sqrt(epcfd_sq(ensemble, X, Y)))
