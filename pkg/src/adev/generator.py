"""Conditional path generator and its adversarial training loop.

The generator is autoregressive: an embedding recurrence compresses the
most recent ``p`` values into a latent state, a small feed-forward head
mixes that latent with a fresh Gaussian noise vector, and the output is
the next value.  Rolling the one-step map forward produces a future of
length T - p whose joint path shares the conditioning past bit-exactly.

Training has three phases:

    A. vanilla min-max on epcfd^2 between real joint paths and
       (real past, generated future) joint paths,
    B. conditional-development regressions fitted on real data per
       optimized rank-1 map, copied as the fake-measure initialization,
    C. alternating max over the rank-2 ensemble / min over the generator
       of ehrpcfd^2 between real and fake conditional paths, with the
       fake regressions fine-tuned on fresh generated batches every
       ``iter_r`` generator steps.

All gradients are exact chain rules through the development products
(prefix-chain cotangents plus the exact adjoint of the exponential) and
the hand-rolled recurrent backprop shared with the regression module.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import backend
from .errors import ArgumentError, ShapeError, TrainingError
from .highrank import Map2Ensemble, sample_map2_ensemble
from .paths import Dataset, time_augment
from .regression import (
    RegressionConfig,
    _GRUStack,
    future_dev_targets,
    predict_cond_dev,
    train_regression,
)
from .seeding import derive_seed
from .training import _project_step_cotangents, grad_ehrpcfd, grad_epcfd
from ._kernels_numpy import build_step_matrices as _build_np
from ._kernels_numpy import cumulative_products as _cumprod_np
from .unitary import MapEnsemble, sample_map_ensemble


# ---------------------------------------------------------------------------
# the generator network
# ---------------------------------------------------------------------------


class GeneratorModel:
    """One-step conditional generator g(window, z) -> next value.

    ``p`` is the window length (the p most recent values feed the
    embedding), ``noise_dim`` the per-step noise size.  ``rollout``
    applies the map autoregressively.
    """

    def __init__(self, d, p, noise_dim=3, embed_hidden=32, embed_layers=2,
                 head_hidden=32, seed=0):
        if p < 1:
            raise ArgumentError(f"window length must be >= 1, got {p}")
        rng = np.random.default_rng(seed)
        self.d = d
        self.p = p
        self.noise_dim = noise_dim
        self.embed_hidden = embed_hidden
        self.head_hidden = head_hidden
        self.embed = _GRUStack(d, embed_hidden, embed_layers, rng)
        s = 1.0 / np.sqrt(head_hidden)
        self.w1 = rng.uniform(-s, s, size=(head_hidden, embed_hidden + noise_dim))
        self.b1 = np.zeros(head_hidden)
        self.w2 = rng.uniform(-s, s, size=(d, head_hidden))
        self.b2 = np.zeros(d)

    # -- parameters -----------------------------------------------------------

    def parameters(self):
        out = {f"embed.{k}": v for k, v in self.embed.params.items()}
        out.update(w1=self.w1, b1=self.b1, w2=self.w2, b2=self.b2)
        return out

    def set_parameters(self, params):
        for k in self.embed.params:
            self.embed.params[k] = params[f"embed.{k}"]
        self.w1, self.b1 = params["w1"], params["b1"]
        self.w2, self.b2 = params["w2"], params["b2"]

    def snapshot(self):
        return {k: v.copy() for k, v in self.parameters().items()}

    # -- one step -------------------------------------------------------------

    def generate_step(self, window, z, _cache=None):
        """window (B, p, d), z (B, noise_dim) -> next value (B, d)."""
        window = np.asarray(window, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if window.ndim != 3 or window.shape[1] != self.p or window.shape[2] != self.d:
            raise ShapeError(
                f"expected window (B, {self.p}, {self.d}), got {window.shape}"
            )
        if z.shape != (window.shape[0], self.noise_dim):
            raise ShapeError(
                f"expected noise ({window.shape[0]}, {self.noise_dim}), got {z.shape}"
            )
        top, cache = self.embed.forward(window)
        h = top[:, -1]
        u = np.concatenate([h, z], axis=1)
        a_pre = u @ self.w1.T + self.b1
        a = np.tanh(a_pre)
        out = a @ self.w2.T + self.b2
        if _cache is not None:
            _cache.append({"embed": cache, "u": u, "a": a})
        return out

    def _step_backward(self, cache, dout, grads):
        """Backprop one step; returns d(window)."""
        da = dout @ self.w2
        grads["w2"] += dout.T @ cache["a"]
        grads["b2"] += dout.sum(axis=0)
        da_pre = da * (1.0 - cache["a"] ** 2)
        grads["w1"] += da_pre.T @ cache["u"]
        grads["b1"] += da_pre.sum(axis=0)
        du = da_pre @ self.w1
        dh = du[:, : self.embed_hidden]
        B = dh.shape[0]
        dtop = np.zeros((B, self.p, self.embed_hidden))
        dtop[:, -1] = dh
        egrads, dwindow = self.embed.backward(cache["embed"], dtop)
        for k, g in egrads.items():
            grads[f"embed.{k}"] += g
        return dwindow

    # -- rollout ----------------------------------------------------------------

    def rollout(self, past, noise, _caches=None):
        """Generate the future of a past path.

        past (B, p+1, d) or (p+1, d); noise (B, steps, noise_dim).
        Returns the future values (B, steps, d); the joint path is
        ``np.concatenate([past, future], axis=1)`` and its first p+1
        values are the conditioning path, untouched.
        """
        past = np.asarray(past, dtype=np.float64)
        single = past.ndim == 2
        if single:
            past = past[None]
        if past.shape[1] < self.p:
            raise ShapeError(
                f"past must provide at least {self.p} values, got {past.shape[1]}"
            )
        noise = np.asarray(noise, dtype=np.float64)
        if single and noise.ndim == 2:
            noise = noise[None]
        B, steps = noise.shape[:2]
        if noise.shape != (B, steps, self.noise_dim) or B != past.shape[0]:
            raise ShapeError(
                f"noise {noise.shape} does not match past batch {past.shape[0]}"
            )
        vals = [past[:, t] for t in range(past.shape[1])]
        for t in range(steps):
            window = np.stack(vals[-self.p :], axis=1)
            vals.append(self.generate_step(window, noise[:, t], _cache=_caches))
        future = np.stack(vals[past.shape[1] :], axis=1)
        return future[0] if single else future

    def rollout_backward(self, caches, n_past, dfuture):
        """Backprop through a cached rollout.

        ``dfuture`` (B, steps, d) is the objective gradient w.r.t. the
        generated values.  Returns accumulated parameter gradients;
        gradients reaching the conditioning past are discarded (the past
        is data, not parameters).
        """
        steps = len(caches)
        B = dfuture.shape[0]
        grads = {k: np.zeros_like(v) for k, v in self.parameters().items()}
        # dval[k] collects gradient w.r.t. value slot k (0..n_past+steps-1)
        dval = np.zeros((n_past + steps, B, self.d))
        for t in range(steps):
            dval[n_past + t] = dfuture[:, t]
        for t in range(steps - 1, -1, -1):
            dwindow = self._step_backward(caches[t], dval[n_past + t], grads)
            lo = n_past + t - self.p
            for w in range(self.p):
                dval[lo + w] += dwindow[:, w]
        return grads


# ---------------------------------------------------------------------------
# optimizer helpers
# ---------------------------------------------------------------------------


def clip_gradients(grads, max_norm):
    """Scale a gradient dict down to the given global l2 norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.abs(g) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


class _Momentum:
    """Plain momentum steps over a dict of arrays (sign +1 ascends)."""

    def __init__(self, shapes, momentum):
        self.v = {k: np.zeros_like(a) for k, a in shapes.items()}
        self.momentum = momentum

    def step(self, params, grads, lr, sign):
        out = {}
        for k, p in params.items():
            self.v[k] = self.momentum * self.v[k] + grads[k]
            out[k] = p + sign * lr * self.v[k]
        return out


# ---------------------------------------------------------------------------
# phase-C plumbing: cotangents through conditional paths
# ---------------------------------------------------------------------------


def _cond_grad_to_path_grad(K, m2_ens, M, reg, data_aug, inc_grad):
    """Turn ehrpcfd^2 increment gradients into path-value gradients.

    ``inc_grad`` (B, T, channels) is d(objective)/d(realified increments)
    of the conditional paths predicted for ``data_aug`` by ``reg`` under
    rank-1 map ``M``.  Returns d(objective)/d(augmented path values),
    shape (B, T+1, d_in), combining the two dependence routes: the
    regression outputs and the past-development prefix factors.
    """
    n = M.lie_dim
    B, T = inc_grad.shape[:2]
    off = 1 if m2_ens.time_augmented else 0
    g_re = inc_grad[:, :, off : off + n * n].reshape(B, T, n, n)
    g_im = inc_grad[:, :, off + n * n :].reshape(B, T, n, n)
    g_cond = g_re + 1j * g_im  # gradient w.r.t. increments, complex form
    # increments dP_t = cond[t+1] - cond[t]: scatter onto path positions
    G = np.zeros((B, T + 1, n, n), dtype=np.complex128)
    G[:, 1:] += g_cond
    G[:, :-1] -= g_cond

    # forward pieces of the conditional path assembly (assembly and chain
    # cumulants are batched BLAS; the backend handles the exponentials)
    incs = np.ascontiguousarray(np.diff(data_aug.values, axis=1))
    A = _build_np(incs, M.generators)
    U, *exp_cache = K.expm_taylor_cached(A)
    prefix, _ = _cumprod_np(U)
    F, cache = reg.forward(data_aug.values)
    F = F.copy()
    F[:, -1] = np.eye(n)

    # route 1: through the regression outputs (dL/dF = P^H G; F_T is pinned)
    dF = np.einsum("btqp,btqr->btpr", prefix.conj(), G)
    dF[:, -1] = 0.0
    _, dx_reg = reg.backward(cache, dF)

    # route 2: through the prefix factors (carry recursion along the chain)
    #   W_t = (1/2) G_t F_t^H is the halved HS cotangent of prefix[:, t]
    W = 0.5 * np.einsum("btpq,btrq->btpr", G, F.conj())
    cots = np.empty((B, T, n, n), dtype=np.complex128)
    carry = W[:, T]
    for t in range(T, 0, -1):
        cots[:, t - 1] = np.einsum("bqp,bqr->bpr", prefix[:, t - 1].conj(), carry)
        if t > 1:
            carry = W[:, t - 1] + np.einsum(
                "bpq,brq->bpr", carry, U[:, t - 1].conj()
            )
    Z = K.expm_taylor_pullback(*exp_cache, cots)
    _, inc_grad_path = _project_step_cotangents(incs, M.generators, Z, True)
    dx_dev = np.zeros_like(data_aug.values)
    dx_dev[:, 1:] += inc_grad_path
    dx_dev[:, :-1] -= inc_grad_path
    return dx_reg + dx_dev


def _finetune_regression(model, data, M, iters, lr):
    """A few full-batch descent steps of rloss on a fixed dataset.

    Returns the monitored loss curve (one entry per step, then the final
    loss), nonincreasing up to line-search-free tolerance.
    """
    targets = future_dev_targets(data, M)
    L = data.length
    B = data.n_samples
    curve = []
    for _ in range(iters):
        F, cache = model.forward(data.values)
        diff = F - targets
        loss = float(np.sum(diff.real**2 + diff.imag**2) / (B * L))
        if not np.isfinite(loss):
            raise TrainingError("fine-tune loss became non-finite")
        curve.append(loss)
        grads, _ = model.backward(cache, (2.0 / (B * L)) * diff)
        params = model.parameters()
        model.set_parameters({k: params[k] - lr * grads[k] for k in params})
    F = model.predict(data.values)
    diff = F - targets
    curve.append(float(np.sum(diff.real**2 + diff.imag**2) / (B * L)))
    return curve


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class GanConfig:
    p: int = 5
    noise_dim: int = 3
    embed_hidden: int = 32
    embed_layers: int = 2
    head_hidden: int = 32
    k1: int = 5
    n: int = 5
    k2: int = 10
    m: int = 13
    lr_gen: float = 0.0001
    lr_disc: float = 0.002
    momentum: float = 0.9
    clip_norm: float = 10.0
    lr_decay: float = 0.97
    decay_every: int = 500
    iters_a: int = 2000
    iters_c: int = 1000
    iter_r: int = 500
    finetune_iters: int = 50
    batch_size: int = 64
    init_std: float = 0.2
    normalize_time: bool = True
    regression: RegressionConfig = dataclasses.field(default_factory=RegressionConfig)
    seed: int = 0


@dataclasses.dataclass
class GanResult:
    model: GeneratorModel
    m_ens: MapEnsemble
    m2_ens: Map2Ensemble
    regs_real: list
    regs_fake: list
    curve_a: list
    curve_c: list
    finetune_curves: list
    config: GanConfig


def train_hrpcf_gan(data, config=None, phase_a_only=False):
    """Run the adversarial phases and return the trained generator.

    ``data`` holds real joint paths (N, T+1, d).  ``phase_a_only`` stops
    after the vanilla min-max phase (the comparison baseline).  On
    divergence a TrainingError is raised carrying the last finite
    parameter snapshot in its ``last_good_state`` attribute.
    """
    cfg = config or GanConfig()
    if data.n_samples == 0:
        raise ArgumentError("generator training needs a nonempty dataset")
    T = data.length - 1
    if cfg.p >= T:
        raise ArgumentError(f"past length {cfg.p} must be < T={T}")
    d = data.dim
    steps = T - cfg.p
    rng = np.random.default_rng(derive_seed(cfg.seed, 0))
    K = backend.kernels()

    model = GeneratorModel(
        d, cfg.p, noise_dim=cfg.noise_dim, embed_hidden=cfg.embed_hidden,
        embed_layers=cfg.embed_layers, head_hidden=cfg.head_hidden,
        seed=derive_seed(cfg.seed, 1),
    )
    m_ens = sample_map_ensemble(
        d + 1, cfg.n, cfg.k1, init_std=cfg.init_std, seed=derive_seed(cfg.seed, 2)
    )

    gen_opt = _Momentum(model.parameters(), cfg.momentum)
    disc_opt = _Momentum({"g": m_ens.generators}, cfg.momentum)
    lr_scale = 1.0
    gen_steps = 0
    curve_a = []
    last_good = model.snapshot()

    def batch():
        idx = rng.choice(data.n_samples, min(cfg.batch_size, data.n_samples),
                         replace=False)
        return data.values[idx]

    def fake_from(real_vals, caches=None):
        pasts = real_vals[:, : cfg.p + 1]
        noise = rng.standard_normal((real_vals.shape[0], steps, cfg.noise_dim))
        future = model.rollout(pasts, noise, _caches=caches)
        return np.concatenate([pasts, future], axis=1)

    def aug(vals):
        return time_augment(Dataset(data.times, vals), normalize=cfg.normalize_time)

    # ---- phase A: vanilla min-max on epcfd^2 ----
    for it in range(cfg.iters_a):
        real = batch()
        # discriminator ascent
        fake = fake_from(real)
        val, g_m, _, _ = grad_epcfd(m_ens, aug(real), aug(fake))
        if not np.isfinite(val):
            err = TrainingError(f"phase A objective non-finite at iter {it}")
            err.last_good_state = last_good
            raise err
        g_m, _ = clip_gradients({"g": g_m}, cfg.clip_norm)
        new_gens = disc_opt.step(
            {"g": m_ens.generators}, g_m, cfg.lr_disc * lr_scale, +1.0
        )["g"]
        m_ens = MapEnsemble(new_gens)
        # generator descent on a fresh fake batch
        caches = []
        fake = fake_from(real, caches=caches)
        val, _, _, ig_fake = grad_epcfd(m_ens, aug(real), aug(fake),
                                        want_inc_grad=True)
        curve_a.append(val)
        dvals = np.zeros_like(fake)
        dvals[:, 1:] += ig_fake[:, :, 1:]   # drop the time channel
        dvals[:, :-1] -= ig_fake[:, :, 1:]
        g_gen = model.rollout_backward(caches, cfg.p + 1, dvals[:, cfg.p + 1 :])
        g_gen, _ = clip_gradients(g_gen, cfg.clip_norm)
        params = gen_opt.step(model.parameters(), g_gen,
                              cfg.lr_gen * lr_scale, -1.0)
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            err = TrainingError(f"generator parameters non-finite at iter {it}")
            err.last_good_state = last_good
            raise err
        model.set_parameters(params)
        last_good = model.snapshot()
        gen_steps += 1
        if gen_steps % cfg.decay_every == 0:
            lr_scale *= cfg.lr_decay

    regs_real, regs_fake, finetune_curves = [], [], []
    m2_ens = sample_map2_ensemble(
        cfg.n, cfg.m, cfg.k2, init_std=cfg.init_std,
        seed=derive_seed(cfg.seed, 3), time_augmented=True,
        normalize_time=cfg.normalize_time,
    )
    curve_c = []

    if not phase_a_only:
        # ---- phase B: regressions on the real measure, copied for the fake ----
        data_aug = time_augment(data, normalize=cfg.normalize_time)
        for i in range(cfg.k1):
            rc = dataclasses.replace(
                cfg.regression, seed=derive_seed(cfg.seed, 100 + i)
            )
            regs_real.append(train_regression(data_aug, m_ens[i], rc))
            regs_fake.append(regs_real[i].copy())

        # ---- phase C: rank-2 min-max ----
        disc2_opt = _Momentum({"g": m2_ens.generators}, cfg.momentum)
        for it in range(cfg.iters_c):
            real = batch()
            caches = []
            fake = fake_from(real, caches=caches)
            real_aug, fake_aug = aug(real), aug(fake)
            cond_real = [predict_cond_dev(regs_real[i], real_aug, m_ens[i])
                         for i in range(cfg.k1)]
            cond_fake = [predict_cond_dev(regs_fake[i], fake_aug, m_ens[i])
                         for i in range(cfg.k1)]
            # discriminator ascent over the rank-2 ensemble
            val, g_m2, _, _ = grad_ehrpcfd(m2_ens, cond_real, cond_fake)
            if not np.isfinite(val):
                err = TrainingError(f"phase C objective non-finite at iter {it}")
                err.last_good_state = last_good
                raise err
            g_m2, _ = clip_gradients({"g": g_m2}, cfg.clip_norm)
            new_gens = disc2_opt.step(
                {"g": m2_ens.generators}, g_m2, cfg.lr_disc * lr_scale, +1.0
            )["g"]
            m2_ens = Map2Ensemble(cfg.n, new_gens, time_augmented=True,
                                  normalize_time=cfg.normalize_time)
            # generator descent (fresh evaluation under the updated ensemble)
            val, _, _, ig_fake = grad_ehrpcfd(
                m2_ens, cond_real, cond_fake, want_inc_grad=True
            )
            curve_c.append(val)
            dvals_aug = np.zeros_like(fake_aug.values)
            for i in range(cfg.k1):
                dvals_aug += _cond_grad_to_path_grad(
                    K, m2_ens, m_ens[i], regs_fake[i], fake_aug, ig_fake[i]
                )
            dvals = dvals_aug[:, :, 1:]  # strip the time channel
            g_gen = model.rollout_backward(caches, cfg.p + 1,
                                           dvals[:, cfg.p + 1 :])
            g_gen, _ = clip_gradients(g_gen, cfg.clip_norm)
            params = gen_opt.step(model.parameters(), g_gen,
                                  cfg.lr_gen * lr_scale, -1.0)
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                err = TrainingError(f"generator parameters non-finite at iter {it}")
                err.last_good_state = last_good
                raise err
            model.set_parameters(params)
            last_good = model.snapshot()
            gen_steps += 1
            if gen_steps % cfg.decay_every == 0:
                lr_scale *= cfg.lr_decay
            # periodic fake-regression fine-tune on fresh generations
            if (it + 1) % cfg.iter_r == 0:
                fresh = fake_from(batch())
                fresh_aug = aug(fresh)
                phase = []
                for i in range(cfg.k1):
                    phase.append(_finetune_regression(
                        regs_fake[i], fresh_aug, m_ens[i],
                        cfg.finetune_iters, cfg.regression.lr,
                    ))
                finetune_curves.append(phase)

    return GanResult(
        model=model, m_ens=m_ens, m2_ens=m2_ens, regs_real=regs_real,
        regs_fake=regs_fake, curve_a=curve_a, curve_c=curve_c,
        finetune_curves=finetune_curves, config=cfg,
    )


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def conditional_mean_futures(model, pasts, steps, n_draws=100, seed=0):
    """Monte Carlo conditional means of generated futures, (N, steps, d)."""
    pasts = np.asarray(pasts, dtype=np.float64)
    rng = np.random.default_rng(seed)
    N = pasts.shape[0]
    acc = np.zeros((N, steps, pasts.shape[2]))
    for _ in range(n_draws):
        noise = rng.standard_normal((N, steps, model.noise_dim))
        acc += model.rollout(pasts, noise)
    return acc / n_draws


def generate_joint(model, pasts, steps, seed=0):
    """One generated joint path per past, (N, past+steps, d)."""
    pasts = np.asarray(pasts, dtype=np.float64)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((pasts.shape[0], steps, model.noise_dim))
    future = model.rollout(pasts, noise)
    return np.concatenate([pasts, future], axis=1)


def save_generator(path, model, times):
    """Checkpoint a generator together with its target time grid."""
    from .checkpoint import save_checkpoint

    header = {
        "kind": "generator",
        "d": model.d,
        "p": model.p,
        "noise_dim": model.noise_dim,
        "embed_hidden": model.embed_hidden,
        "embed_layers": model.embed.n_layers,
        "head_hidden": model.head_hidden,
        "times": [float(t) for t in np.asarray(times)],
    }
    save_checkpoint(path, header, model.parameters())


def load_generator(path):
    """Load a generator checkpoint; returns (model, times)."""
    from .checkpoint import load_checkpoint
    from .errors import ParseError

    header, arrays = load_checkpoint(path)
    if header.get("kind") != "generator":
        raise ParseError(f"{path}: not a generator checkpoint")
    model = GeneratorModel(
        header["d"], header["p"], noise_dim=header["noise_dim"],
        embed_hidden=header["embed_hidden"], embed_layers=header["embed_layers"],
        head_hidden=header["head_hidden"],
    )
    model.set_parameters(arrays)
    return model, np.asarray(header["times"], dtype=np.float64)
