"""Differentiation through developments and discriminator training.

Everything here is exact calculus, no autodiff: the matrix exponential is
differentiated by the exact adjoint of its Taylor/squaring evaluation
(the spectral Daleckii–Krein route in the kernels is the cross-check and
backs :func:`expm_differential`), and the derivative of a chain product
is the usual left/right-partial-product sandwich.  The gradients drive
plain (optionally backtracking) gradient ascent on the squared distances,
which is the three-stage discriminator optimization:

    stage 1: maximize epcfd^2 over the rank-1 map ensemble
    stage 2: fit conditional-development regressions per optimized map,
             separately under each measure
    stage 3: maximize ehrpcfd^2 over the rank-2 map ensemble, with the
             rank-1 maps and regressions frozen

Parameters stay anti-Hermitian bit-exactly under updates because the
matrix-form gradient returned everywhere is itself anti-Hermitian and
``G + lr * dG`` is closed under that symmetry (entrywise IEEE addition of
mirrored conjugate entries).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import backend
from .errors import ArgumentError, ShapeError, TrainingError
from .highrank import Map2Ensemble, realified_increments, sample_map2_ensemble
from .paths import time_augment
from .regression import RegressionConfig, predict_cond_dev, train_regression
from .seeding import derive_seed
from .unitary import (
    MapEnsemble,
    check_anti_hermitian,
    param_gradient_matrix,
    sample_map_ensemble,
)
from ._kernels_numpy import _divided_difference
from ._kernels_numpy import build_step_matrices as _build_np
from ._kernels_numpy import cumulative_products as _cumprod_np


def expm_differential(A, E):
    """Directional derivative of the matrix exponential at A along E.

    Both arguments anti-Hermitian.  Computed on the eigenbasis of -iA:

        D exp(A)[E] = V (F o (V* E V)) V*

    with F the divided-difference table of e^{i lam}; eigenvalue pairs
    closer than the degeneracy tolerance use the limit value instead of
    the quotient.
    """
    A = np.asarray(A, dtype=np.complex128)
    E = np.asarray(E, dtype=np.complex128)
    if A.shape != E.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected matching square matrices, got {A.shape} and {E.shape}")
    check_anti_hermitian(A)
    check_anti_hermitian(E)
    lam, V = np.linalg.eigh(-1j * A)
    F = _divided_difference(lam, np.exp(1j * lam))
    return V @ (F * (V.conj().T @ E @ V)) @ V.conj().T


# ---------------------------------------------------------------------------
# gradients of the squared distances
# ---------------------------------------------------------------------------


def _dev_forward(K, incs, gens):
    # step assembly and the chain cumulants are batched BLAS either way;
    # the backend choice only matters for the exponential pair
    A = _build_np(incs, gens)
    U, *cache = K.expm_taylor_cached(A)
    prefix, suffix = _cumprod_np(U)
    return tuple(cache), prefix, suffix


def _project_step_cotangents(incs, gens, Z, want_inc_grad):
    """Step-matrix cotangents -> generator cotangents and increment grads.

    ``gen_cot[j] = sum_{b,t} incs[b,t,j] Z[b,t]`` and (optionally)
    ``inc_grad[b,t,j] = 2 Re <gens[j], Z[b,t]>``.  Both are plain real
    GEMMs on the realified flattening of Z.
    """
    B, T, d = incs.shape
    m = gens.shape[1]
    Zr = Z.reshape(B * T, m * m).view(np.float64)  # (BT, 2 m^2), Re/Im interleaved
    flat = incs.reshape(B * T, d)
    gen_cot = np.ascontiguousarray(flat.T @ Zr).view(np.complex128).reshape(d, m, m)
    inc_grad = None
    if want_inc_grad:
        Gr = gens.reshape(d, m * m).view(np.float64)
        inc_grad = 2.0 * (Zr @ Gr.T).reshape(B, T, d)
    return gen_cot, inc_grad


def _mean_dev_backward(K, incs, gens, cache, prefix, suffix, cot, want_inc_grad):
    """Backward through a batch of developments.

    ``cot``, shape (B, 1, m, m), is the halved HS cotangent of each
    sample's chain product (constant across a sample's steps, hence the
    broadcast axis).  Routes it through the product sandwich and the
    exponential's Taylor adjoint, then projects.
    """
    Lh = np.swapaxes(prefix[:, :-1].conj(), -1, -2)
    Rh = np.swapaxes(suffix[:, 1:].conj(), -1, -2)
    W = (Lh @ cot) @ Rh
    Z = K.expm_taylor_pullback(*cache, W)
    return _project_step_cotangents(incs, gens, Z, want_inc_grad)


def _two_sided_cotangent(D, Nx, Ny, norm):
    """Per-sample cotangents for a mean-difference objective.

    The first ``Nx`` samples carry ``D / (norm * Nx)``, the remaining
    ``Ny`` carry the negated y-side weight, matching the derivative of
    ``|mean_x - mean_y|^2 / norm`` on the stacked batch.
    """
    cot = np.empty((Nx + Ny, 1) + D.shape, dtype=D.dtype)
    cot[:Nx, 0] = D / (norm * Nx)
    cot[Nx:, 0] = D / (-norm * Ny)
    return cot


def grad_epcfd(ensemble, X, Y, want_inc_grad=False):
    """Value and gradient of epcfd^2 between two datasets.

    Returns ``(value, gen_grads, inc_grad_x, inc_grad_y)``:

    * ``value`` — epcfd^2 averaged over the K maps,
    * ``gen_grads`` — (K, d, n, n) anti-Hermitian matrices; adding
      ``lr * gen_grads[k]`` to generator k ascends the objective (these
      are the raw-parameter gradients in matrix form),
    * increment gradients of the objective for each dataset (or None),
      shape (N, T, d) — the fake-data path for generator training.
    """
    K = backend.kernels()
    gens_all = ensemble.generators
    K1 = gens_all.shape[0]
    incs_x = X.increments()
    incs_y = Y.increments()
    Nx, Ny = incs_x.shape[0], incs_y.shape[0]
    incs = np.ascontiguousarray(np.concatenate([incs_x, incs_y], axis=0))
    value = 0.0
    gen_grads = np.empty_like(gens_all)
    ig_x = np.zeros(incs_x.shape) if want_inc_grad else None
    ig_y = np.zeros(incs_y.shape) if want_inc_grad else None
    for k in range(K1):
        gens = np.ascontiguousarray(gens_all[k])
        cache, pre, suf = _dev_forward(K, incs, gens)
        D = pre[:Nx, -1].mean(axis=0) - pre[Nx:, -1].mean(axis=0)
        value += float(np.sum(D.real**2 + D.imag**2)) / K1
        gc, ig = _mean_dev_backward(
            K, incs, gens, cache, pre, suf,
            _two_sided_cotangent(D, Nx, Ny, K1), want_inc_grad,
        )
        gen_grads[k] = param_gradient_matrix(gc)
        if want_inc_grad:
            ig_x += ig[:Nx]
            ig_y += ig[Nx:]
    return value, gen_grads, ig_x, ig_y


def grad_ehrpcfd(m2_ens, cond_x, cond_y, want_inc_grad=False):
    """Value and gradient of ehrpcfd^2 between conditional path families.

    ``cond_x`` and ``cond_y`` are lists of CondPaths, one per rank-1 map
    (length K1); the rank-2 ensemble contributes K2 maps and the value is
    the double average over (i, j).  ``gen_grads`` has the ensemble's
    generator shape (K2, channels, m, m), anti-Hermitian, ascent-ready.

    With ``want_inc_grad`` the gradients w.r.t. the realified increment
    channels of every conditional path are returned as two lists of
    (N, T, channels) arrays (index = rank-1 map), for backprop into a
    generator that produced the conditional paths.
    """
    K = backend.kernels()
    gens_all = m2_ens.generators
    K2 = gens_all.shape[0]
    K1 = len(cond_x)
    if len(cond_y) != K1:
        raise ShapeError(
            f"conditional families disagree on K1: {K1} vs {len(cond_y)}"
        )
    raw_x = [realified_increments(m2_ens, c) for c in cond_x]
    raw_y = [realified_increments(m2_ens, c) for c in cond_y]
    sizes = [(x.shape[0], y.shape[0]) for x, y in zip(raw_x, raw_y)]
    incs = [
        np.ascontiguousarray(np.concatenate([x, y], axis=0))
        for x, y in zip(raw_x, raw_y)
    ]
    norm = K1 * K2
    value = 0.0
    gen_grads = np.zeros_like(gens_all)
    ig_x = [np.zeros(a.shape) for a in raw_x] if want_inc_grad else None
    ig_y = [np.zeros(a.shape) for a in raw_y] if want_inc_grad else None
    for j in range(K2):
        gens = np.ascontiguousarray(gens_all[j])
        for i in range(K1):
            Nx, Ny = sizes[i]
            cache, pre, suf = _dev_forward(K, incs[i], gens)
            D = pre[:Nx, -1].mean(axis=0) - pre[Nx:, -1].mean(axis=0)
            value += float(np.sum(D.real**2 + D.imag**2)) / norm
            gc, ig = _mean_dev_backward(
                K, incs[i], gens, cache, pre, suf,
                _two_sided_cotangent(D, Nx, Ny, norm), want_inc_grad,
            )
            gen_grads[j] += param_gradient_matrix(gc)
            if want_inc_grad:
                ig_x[i] += ig[:Nx]
                ig_y[i] += ig[Nx:]
    return value, gen_grads, ig_x, ig_y


# ---------------------------------------------------------------------------
# ascent loop
# ---------------------------------------------------------------------------


def gradient_ascent(params, value_grad, lr, iters, backtracking=False):
    """Maximize a differentiable objective over an ndarray of parameters.

    ``value_grad(params) -> (value, grad)`` with grad shaped like params.
    With ``backtracking`` the step is halved (down to lr * 2^-20) until the
    objective does not decrease, so every accepted step is nondecreasing.
    Returns (params, curve) where curve[i] is the objective after step i.
    """
    val, g = value_grad(params)
    if not np.isfinite(val):
        raise TrainingError(f"objective non-finite at initialization: {val!r}")
    curve = []
    for _ in range(iters):
        step = lr
        while True:
            cand = params + step * g
            new_val, new_g = value_grad(cand)
            if not np.isfinite(new_val):
                raise TrainingError(f"objective became non-finite: {new_val!r}")
            if not backtracking or new_val >= val or step <= lr * 2.0**-20:
                break
            step *= 0.5
        params, val, g = cand, new_val, new_g
        curve.append(val)
    return params, curve


# ---------------------------------------------------------------------------
# three-stage discriminator training
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class DiscConfig:
    """Hyperparameters of the three-stage discriminator.

    Defaults are the hypothesis-test settings: K1 = 1 rank-1 maps of
    degree n = 3, K2 = 10 rank-2 maps of degree m = 13, learning rate
    0.02 for both distance stages and 0.001 inside the regressions.
    """

    n: int = 3
    m: int = 13
    k1: int = 1
    k2: int = 10
    lr_rank1: float = 0.02
    lr_rank2: float = 0.02
    iter_1: int = 300
    iter_2: int = 300
    batch_size: int = 256
    init_std: float = 0.2
    time_augmented: bool = True
    normalize_time: bool = True
    backtracking: bool = False
    regression: RegressionConfig = dataclasses.field(default_factory=RegressionConfig)
    seed: int = 0


@dataclasses.dataclass
class DiscriminatorResult:
    m_ens: MapEnsemble
    regs_x: list
    regs_y: list
    m2_ens: Map2Ensemble
    curve_rank1: list
    curve_rank2: list
    config: DiscConfig
    time_augmented: bool
    normalize_time: bool


def _batched(value_grad_full, sampler):
    def inner(params):
        return value_grad_full(params, sampler())

    return inner


def optimize_rank1(X, Y, cfg, seed):
    """Stage 1 alone: ascend epcfd^2 over a fresh rank-1 ensemble.

    ``X`` and ``Y`` are taken as-is (already augmented if desired).
    Returns (MapEnsemble, objective curve).
    """
    rng = np.random.default_rng(derive_seed(seed, 3))
    m_ens = sample_map_ensemble(
        X.dim, cfg.n, cfg.k1, init_std=cfg.init_std, seed=derive_seed(seed, 1)
    )

    def stage1_vg(gens):
        ens = MapEnsemble(gens)
        bx = X.subset(rng.choice(X.n_samples, cfg.batch_size, replace=False)) \
            if X.n_samples > cfg.batch_size else X
        by = Y.subset(rng.choice(Y.n_samples, cfg.batch_size, replace=False)) \
            if Y.n_samples > cfg.batch_size else Y
        value, grads, _, _ = grad_epcfd(ens, bx, by)
        return value, grads

    gens1, curve1 = gradient_ascent(
        m_ens.generators, stage1_vg, cfg.lr_rank1, cfg.iter_1,
        backtracking=cfg.backtracking,
    )
    return MapEnsemble(gens1), curve1


def train_discriminator(X, Y, config=None):
    """Run the three optimization stages and return all trained pieces.

    The datasets are time-augmented here (when configured), so callers
    pass raw value paths.  Stage failures propagate: a regression that
    diverges aborts before stage 3 ever starts.
    """
    cfg = config or DiscConfig()
    if X.n_samples == 0 or Y.n_samples == 0:
        raise ArgumentError("discriminator training needs nonempty datasets")
    if X.dim != Y.dim or X.length != Y.length:
        raise ShapeError(
            f"datasets disagree on shape: {X.values.shape} vs {Y.values.shape}"
        )
    if cfg.time_augmented:
        X = time_augment(X, normalize=cfg.normalize_time)
        Y = time_augment(Y, normalize=cfg.normalize_time)
    rng = np.random.default_rng(derive_seed(cfg.seed, 0))

    # stage 1: rank-1 ascent
    m_ens, curve1 = optimize_rank1(X, Y, cfg, cfg.seed)

    # stage 2: regressions per optimized map, per measure
    regs_x, regs_y = [], []
    for i in range(cfg.k1):
        M = m_ens[i]
        rc = dataclasses.replace(cfg.regression, seed=derive_seed(cfg.seed, 100 + i))
        regs_x.append(train_regression(X, M, rc))
        rc = dataclasses.replace(cfg.regression, seed=derive_seed(cfg.seed, 200 + i))
        regs_y.append(train_regression(Y, M, rc))

    # stage 3: rank-2 ascent on frozen conditional paths
    cond_x = [predict_cond_dev(regs_x[i], X, m_ens[i]) for i in range(cfg.k1)]
    cond_y = [predict_cond_dev(regs_y[i], Y, m_ens[i]) for i in range(cfg.k1)]
    m2_ens = sample_map2_ensemble(
        cfg.n, cfg.m, cfg.k2, init_std=cfg.init_std,
        seed=derive_seed(cfg.seed, 2), time_augmented=True,
        normalize_time=cfg.normalize_time,
    )

    def stage3_vg(gens):
        ens = Map2Ensemble(cfg.n, gens, time_augmented=True,
                           normalize_time=cfg.normalize_time)
        if X.n_samples > cfg.batch_size:
            idx = rng.choice(X.n_samples, cfg.batch_size, replace=False)
            cx = [c.subset(idx) for c in cond_x]
        else:
            cx = cond_x
        if Y.n_samples > cfg.batch_size:
            idy = rng.choice(Y.n_samples, cfg.batch_size, replace=False)
            cy = [c.subset(idy) for c in cond_y]
        else:
            cy = cond_y
        value, grads, _, _ = grad_ehrpcfd(ens, cx, cy)
        return value, grads

    gens2, curve2 = gradient_ascent(
        m2_ens.generators, stage3_vg, cfg.lr_rank2, cfg.iter_2,
        backtracking=cfg.backtracking,
    )
    m2_ens = Map2Ensemble(cfg.n, gens2, time_augmented=True,
                          normalize_time=cfg.normalize_time)

    return DiscriminatorResult(
        m_ens=m_ens, regs_x=regs_x, regs_y=regs_y, m2_ens=m2_ens,
        curve_rank1=curve1, curve_rank2=curve2, config=cfg,
        time_augmented=cfg.time_augmented, normalize_time=cfg.normalize_time,
    )
