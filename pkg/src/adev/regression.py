"""Conditional development regression.

Estimates the conditional expected development path

    t  ->  E[ U_M(X) | F_t ]

two ways: exactly, by enumerating the atoms of a finite-support process,
and approximately, by a causal recurrent network trained to predict the
future development U_M(x_[t,T]) at every cut time t.  The predicted
conditional path is assembled multiplicatively as

    p_t = U_M(x_[0,t]) . F(x)_t

so the past factor is exact by construction and only the future factor is
learned.

The recurrent network is a two-layer gated unit with a linear complex
read-out.  Gradients are hand-derived (plain backpropagation through the
recurrence); there is no autodiff framework anywhere in the package.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import backend
from .errors import (
    ArgumentError,
    ShapeError,
    TrainingError,
    UndefinedConditionalError,
)
from .highrank import CondPaths
from .paths import Dataset, time_channel
from .unitary import DevMap, hs_distance


# ---------------------------------------------------------------------------
# finite-support processes and the enumeration oracle
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class FiniteProcessSpec:
    """A process supported on finitely many paths.

    ``values`` has shape (A, L, d): A atom paths on the common grid
    ``times``; ``probs`` are their probabilities (summing to one).  The
    filtration is the natural filtration of the coordinate process, so
    conditioning on F_t means conditioning on the path values up to and
    including time index t.
    """

    times: np.ndarray
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3:
            raise ShapeError(f"atom values must be (A, L, d), got {values.shape}")
        if times.shape != (values.shape[1],):
            raise ShapeError(
                f"times {times.shape} do not match atom length {values.shape[1]}"
            )
        if probs.shape != (values.shape[0],):
            raise ShapeError(
                f"probs {probs.shape} do not match atom count {values.shape[0]}"
            )
        if np.any(probs < 0):
            raise ArgumentError("atom probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ArgumentError(
                f"atom probabilities must sum to 1, got {probs.sum()!r}"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @property
    def n_atoms(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[2]

    def sample(self, n_samples, seed=0):
        """Draw a Dataset of ``n_samples`` i.i.d. atom paths."""
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.n_atoms, size=n_samples, p=self.probs)
        return Dataset(self.times, self.values[idx])

    def augmented(self, normalize=True):
        """Return the spec with a time channel prepended to every atom."""
        chan = time_channel(self.times, normalize=normalize)
        aug = np.concatenate(
            [np.broadcast_to(chan[None, :, None], self.values.shape[:2] + (1,)),
             self.values],
            axis=2,
        )
        return FiniteProcessSpec(self.times, aug, self.probs)


def oracle_cond_dev(spec, M):
    """Exact conditional development paths of a finite-support process.

    For each atom a and each cut time t, enumerate the atoms agreeing with
    a up to index t, average their future developments with conditional
    weights, and multiply by the realized past development:

        E[U_M(X) | F_t](a) = U_M(a_[0,t]) . sum_b w_b U_M(b_[t,T])

    Returns a CondPaths holding one conditional path per atom, in atom
    order.  A zero-probability conditioning atom is undefined and raises.
    """
    K = backend.kernels()
    vals = spec.values
    A, L, d = vals.shape
    if d != M.d_in:
        raise ShapeError(f"atom dim {d} does not match map input dim {M.d_in}")
    incs = np.diff(vals, axis=1)
    U = K.expm_taylor(K.build_step_matrices(incs, M.generators))
    prefix, suffix = K.cumulative_products(U)

    out = np.empty((A, L, M.lie_dim, M.lie_dim), dtype=np.complex128)
    for a in range(A):
        for t in range(L):
            agree = np.all(vals[:, : t + 1] == vals[a, None, : t + 1], axis=(1, 2))
            mass = float(spec.probs[agree].sum())
            if mass <= 0.0:
                raise UndefinedConditionalError(
                    f"conditioning atom at t={t} has zero probability"
                )
            w = spec.probs[agree] / mass
            future = np.tensordot(w, suffix[agree, t], axes=1)
            out[a, t] = prefix[a, t] @ future
    return CondPaths(spec.times, out)


# ---------------------------------------------------------------------------
# gated recurrent stack with hand-rolled backprop
# ---------------------------------------------------------------------------


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class _GRUStack:
    """Stacked gated recurrent layers, time-major, batch-first arrays.

    Update rule per layer (x is the layer input at step t):

        z = sigmoid(Wz x + Uz h + bz)
        r = sigmoid(Wr x + Ur h + br)
        g = tanh(Wg x + Ug (r*h) + bg)
        h' = (1-z)*h + z*g

    ``forward`` returns the top-layer hidden sequence plus a cache;
    ``backward`` consumes d(hidden sequence) and returns parameter
    gradients along with the gradient w.r.t. the input sequence (needed
    when a generator sits underneath the model).
    """

    GATES = ("z", "r", "g")

    def __init__(self, in_dim, hidden, n_layers, rng):
        self.in_dim = in_dim
        self.hidden = hidden
        self.n_layers = n_layers
        self.params = {}
        for l in range(n_layers):
            d_in = in_dim if l == 0 else hidden
            s = 1.0 / np.sqrt(hidden)
            for gate in self.GATES:
                self.params[f"w_{gate}{l}"] = rng.uniform(-s, s, size=(hidden, d_in))
                self.params[f"u_{gate}{l}"] = rng.uniform(-s, s, size=(hidden, hidden))
                self.params[f"b_{gate}{l}"] = np.zeros(hidden)

    def forward(self, x):
        B, L, _ = x.shape
        H = self.hidden
        cache = {"x0": x, "L": L, "B": B}
        layer_in = x
        for l in range(self.n_layers):
            p = self.params
            wz, uz, bz = p[f"w_z{l}"], p[f"u_z{l}"], p[f"b_z{l}"]
            wr, ur, br = p[f"w_r{l}"], p[f"u_r{l}"], p[f"b_r{l}"]
            wg, ug, bg = p[f"w_g{l}"], p[f"u_g{l}"], p[f"b_g{l}"]
            h = np.zeros((B, H))
            hs = np.empty((B, L, H))
            zs = np.empty((B, L, H))
            rs = np.empty((B, L, H))
            gs = np.empty((B, L, H))
            hprev = np.empty((B, L, H))
            for t in range(L):
                xt = layer_in[:, t]
                z = _sigmoid(xt @ wz.T + h @ uz.T + bz)
                r = _sigmoid(xt @ wr.T + h @ ur.T + br)
                g = np.tanh(xt @ wg.T + (r * h) @ ug.T + bg)
                hprev[:, t] = h
                h = (1.0 - z) * h + z * g
                hs[:, t], zs[:, t], rs[:, t], gs[:, t] = h, z, r, g
            cache[l] = {"in": layer_in, "h": hs, "z": zs, "r": rs, "g": gs,
                        "hprev": hprev}
            layer_in = hs
        return layer_in, cache

    def backward(self, cache, dtop):
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        L = cache["L"]
        dlayer = dtop
        for l in range(self.n_layers - 1, -1, -1):
            p, c = self.params, cache[l]
            wz, uz = p[f"w_z{l}"], p[f"u_z{l}"]
            wr, ur = p[f"w_r{l}"], p[f"u_r{l}"]
            wg, ug = p[f"w_g{l}"], p[f"u_g{l}"]
            x_in = c["in"]
            dx = np.zeros_like(x_in)
            dh_next = np.zeros((cache["B"], self.hidden))
            for t in range(L - 1, -1, -1):
                dh = dlayer[:, t] + dh_next
                z, r, g, hp = c["z"][:, t], c["r"][:, t], c["g"][:, t], c["hprev"][:, t]
                dz = dh * (g - hp)
                dg = dh * z
                dhp = dh * (1.0 - z)
                da_g = dg * (1.0 - g * g)
                da_z = dz * z * (1.0 - z)
                dr_h = da_g @ ug
                dr = dr_h * hp
                dhp = dhp + dr_h * r
                da_r = dr * r * (1.0 - r)
                xt = x_in[:, t]
                grads[f"w_z{l}"] += da_z.T @ xt
                grads[f"w_r{l}"] += da_r.T @ xt
                grads[f"w_g{l}"] += da_g.T @ xt
                grads[f"u_z{l}"] += da_z.T @ hp
                grads[f"u_r{l}"] += da_r.T @ hp
                grads[f"u_g{l}"] += da_g.T @ (r * hp)
                grads[f"b_z{l}"] += da_z.sum(axis=0)
                grads[f"b_r{l}"] += da_r.sum(axis=0)
                grads[f"b_g{l}"] += da_g.sum(axis=0)
                dx[:, t] = da_z @ wz + da_r @ wr + da_g @ wg
                dh_next = dhp + da_z @ uz + da_r @ ur
            dlayer = dx
        return grads, dlayer


# ---------------------------------------------------------------------------
# regression model
# ---------------------------------------------------------------------------


class RegressionModel:
    """Causal sequence model x -> (F(x)_t)_t with complex n x n outputs.

    Output at step t depends only on inputs 0..t (the recurrence never
    sees the future), which is what makes the Algorithm-style assembly of
    conditional paths legitimate.
    """

    def __init__(self, in_dim, n, hidden=32, n_layers=2, seed=0):
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.n = n
        self.hidden = hidden
        self.n_layers = n_layers
        self.stack = _GRUStack(in_dim, hidden, n_layers, rng)
        s = 1.0 / np.sqrt(hidden)
        self.w_out = rng.uniform(-s, s, size=(2 * n * n, hidden))
        self.b_out = np.zeros(2 * n * n)
        self.train_curve = []

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        out = dict(self.stack.params)
        out["w_out"] = self.w_out
        out["b_out"] = self.b_out
        return out

    def set_parameters(self, params):
        for k in self.stack.params:
            self.stack.params[k] = params[k]
        self.w_out = params["w_out"]
        self.b_out = params["b_out"]

    def copy(self):
        dup = RegressionModel.__new__(RegressionModel)
        dup.in_dim, dup.n = self.in_dim, self.n
        dup.hidden, dup.n_layers = self.hidden, self.n_layers
        dup.stack = _GRUStack.__new__(_GRUStack)
        dup.stack.in_dim, dup.stack.hidden = self.in_dim, self.hidden
        dup.stack.n_layers = self.n_layers
        dup.stack.params = {k: v.copy() for k, v in self.stack.params.items()}
        dup.w_out = self.w_out.copy()
        dup.b_out = self.b_out.copy()
        dup.train_curve = list(self.train_curve)
        return dup

    # -- forward / backward -------------------------------------------------

    def forward(self, values):
        """values (B, L, in_dim) -> (F (B, L, n, n) complex, cache)."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != self.in_dim:
            raise ShapeError(
                f"expected input (B, L, {self.in_dim}), got {values.shape}"
            )
        top, cache = self.stack.forward(values)
        y = top @ self.w_out.T + self.b_out
        n = self.n
        F = (y[..., : n * n] + 1j * y[..., n * n :]).reshape(
            values.shape[0], values.shape[1], n, n
        )
        cache["top"] = top
        return F, cache

    def predict(self, values):
        return self.forward(values)[0]

    def backward(self, cache, dF):
        """Backprop a complex output gradient.

        ``dF`` holds dL/dRe(F) + i dL/dIm(F), shape (B, L, n, n).  Returns
        (parameter gradients, gradient w.r.t. the input sequence).
        """
        B, L = dF.shape[:2]
        dy = np.concatenate(
            [dF.real.reshape(B, L, -1), dF.imag.reshape(B, L, -1)], axis=2
        )
        top = cache["top"]
        dw_out = np.einsum("blo,blh->oh", dy, top)
        db_out = dy.sum(axis=(0, 1))
        dtop = dy @ self.w_out
        grads, dx = self.stack.backward(cache, dtop)
        grads["w_out"] = dw_out
        grads["b_out"] = db_out
        return grads, dx


# ---------------------------------------------------------------------------
# loss, training, assembly
# ---------------------------------------------------------------------------


def future_dev_targets(data, M):
    """Suffix developments U_M(x_[t,T]) for every sample and cut time.

    Shape (N, L, n, n); the entry at t = T is the identity.
    """
    K = backend.kernels()
    incs = np.ascontiguousarray(data.increments())
    U = K.expm_taylor(K.build_step_matrices(incs, M.generators))
    _, suffix = K.cumulative_products(U)
    return suffix


def rloss(model, batch, M, _targets=None):
    """Mean squared HS error against the future developments.

        (1 / (B (T+1))) sum_b sum_t || F(x_b)_t - U_M(x_b,[t,T]) ||_HS^2

    The t = T term is included; its target is exactly the identity.
    """
    targets = future_dev_targets(batch, M) if _targets is None else _targets
    F = model.predict(batch.values)
    if F.shape != targets.shape:
        raise ShapeError(f"output {F.shape} does not match targets {targets.shape}")
    diff = F - targets
    B, L = diff.shape[:2]
    return float(np.sum(diff.real**2 + diff.imag**2) / (B * L))


@dataclasses.dataclass
class RegressionConfig:
    hidden: int = 32
    n_layers: int = 2
    lr: float = 0.001
    momentum: float = 0.0
    iters: int = 500
    batch_size: int = 256
    val_frac: float = 0.1
    patience: int = 50
    seed: int = 0


def train_regression(data, M, config=None):
    """Fit a RegressionModel to the future developments under M.

    Plain (momentum optional) gradient descent on rloss; 10% of the data
    is held out for validation and the parameters with the best validation
    loss are returned.  Training stops early after ``patience`` stale
    validation checks.  Non-finite losses abort with a training error.
    """
    cfg = config or RegressionConfig()
    if data.n_samples == 0:
        raise ArgumentError("cannot train a regression on an empty dataset")
    if data.dim != M.d_in:
        raise ShapeError(f"data dim {data.dim} does not match map dim {M.d_in}")
    rng = np.random.default_rng(cfg.seed)
    model = RegressionModel(
        data.dim, M.lie_dim, hidden=cfg.hidden, n_layers=cfg.n_layers,
        seed=int(rng.integers(2**63)),
    )
    targets = future_dev_targets(data, M)

    N = data.n_samples
    n_val = min(max(int(round(cfg.val_frac * N)), 1), N - 1) if N > 1 else 0
    perm = rng.permutation(N)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    vals = data.values
    B_full = len(tr_idx)
    L = data.length

    velocity = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    best = {k: v.copy() for k, v in model.parameters().items()}
    best_val = np.inf
    stale = 0
    curve = []

    for it in range(cfg.iters):
        if cfg.batch_size < B_full:
            batch_idx = tr_idx[rng.choice(B_full, size=cfg.batch_size, replace=False)]
        else:
            batch_idx = tr_idx
        xb, tb = vals[batch_idx], targets[batch_idx]
        F, cache = model.forward(xb)
        diff = F - tb
        B = xb.shape[0]
        loss = float(np.sum(diff.real**2 + diff.imag**2) / (B * L))
        if not np.isfinite(loss):
            raise TrainingError(f"regression loss became non-finite at iter {it}")
        dF = (2.0 / (B * L)) * diff
        grads, _ = model.backward(cache, dF)
        params = model.parameters()
        for k, g in grads.items():
            velocity[k] = cfg.momentum * velocity[k] - cfg.lr * g
            params[k] = params[k] + velocity[k]
        model.set_parameters(params)

        if n_val:
            Fv = model.predict(vals[val_idx])
            dv = Fv - targets[val_idx]
            val_loss = float(
                np.sum(dv.real**2 + dv.imag**2) / (len(val_idx) * L)
            )
        else:
            val_loss = loss
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss became non-finite at iter {it}")
        curve.append((it, loss, val_loss))
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best = {k: v.copy() for k, v in model.parameters().items()}
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break

    model.set_parameters(best)
    model.train_curve = curve
    return model


def predict_cond_dev(model, data, M):
    """Assemble predicted conditional development paths.

        p_t = U_M(x_[0,t]) . F(x)_t

    with the prediction at t = T forced to the identity (the future over
    [T, T] is a point, so its development is I exactly).
    """
    K = backend.kernels()
    if data.dim != M.d_in:
        raise ShapeError(f"data dim {data.dim} does not match map dim {M.d_in}")
    F = model.predict(data.values)
    if F.shape[2:] != (M.lie_dim, M.lie_dim):
        raise ShapeError(
            f"model outputs {F.shape[2:]} do not match map dim {M.lie_dim}"
        )
    F = F.copy()
    F[:, -1] = np.eye(M.lie_dim)
    incs = np.ascontiguousarray(data.increments())
    U = K.expm_taylor(K.build_step_matrices(incs, M.generators))
    prefix, _ = K.cumulative_products(U)
    return CondPaths(data.times, np.einsum("btpq,btqr->btpr", prefix, F))


def mean_oracle_error(cond_pred, cond_oracle, sample_atoms):
    """Mean HS error of predicted conditional paths against the oracle.

    ``sample_atoms`` maps each predicted sample to its oracle atom index.
    """
    err = 0.0
    N, L = cond_pred.values.shape[:2]
    for i, a in enumerate(sample_atoms):
        for t in range(L):
            err += hs_distance(cond_pred.values[i, t], cond_oracle.values[a, t])
    return err / (N * L)
