"""Two-sample permutation testing with trained development distances.

A test statistic is fitted once on training samples (the three-stage
discriminator, or its rank-1 stage alone as a baseline) and then
evaluated on held-out data; the permutation distribution re-splits the
pooled held-out samples with the statistic's per-sample features
precomputed, so each permutation costs one group-averaging pass instead
of a retraining run.

The evaluated statistic is symmetrized over the two fitted regression
sets:

    T(A, B)^2 = mean_{i,j} ( ||mean_A f^x - mean_B f^x||^2
                           + ||mean_A f^y - mean_B f^y||^2 ) / 2

where f^x / f^y are the rank-2 developments of conditional paths
predicted by the X-fitted / Y-fitted regressions.  Either term alone is
an MMD between the group laws; averaging keeps the statistic exactly
zero on identical multisets and exchangeable under the null, while a
role-asymmetric evaluation would carry a spurious offset equal to the
regression-fit mismatch.  The rank-1 baseline statistic has a single
feature set and needs no symmetrization.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ArgumentError
from .highrank import develop_rank2
from .paths import time_augment, unitary_features
from .regression import predict_cond_dev
from .seeding import derive_seed
from .training import DiscConfig, optimize_rank1, train_discriminator


class TestStatistic:
    """A fitted two-sample statistic with precomputable features.

    ``kind`` is ``"hrpcfd"`` (three-stage discriminator) or ``"pcfd"``
    (rank-1 ensemble only).  Evaluating identical multisets gives 0.
    """

    def __init__(self, kind, m_ens, regs_x=None, regs_y=None, m2_ens=None,
                 time_augmented=True, normalize_time=True, curves=None):
        if kind not in ("hrpcfd", "pcfd"):
            raise ArgumentError(f"unknown statistic kind {kind!r}")
        if kind == "hrpcfd" and (regs_x is None or regs_y is None or m2_ens is None):
            raise ArgumentError("hrpcfd statistic needs regressions and a rank-2 ensemble")
        self.kind = kind
        self.m_ens = m_ens
        self.regs_x = regs_x
        self.regs_y = regs_y
        self.m2_ens = m2_ens
        self.time_augmented = time_augmented
        self.normalize_time = normalize_time
        self.curves = curves or {}

    # -- features -----------------------------------------------------------

    def features(self, data):
        """Per-sample unitary features of a dataset.

        Rank-1: one array (N, K1, n, n).  Rank-2: a pair of arrays
        (N, K1, K2, m, m) — developments of the conditional paths under
        the X-fitted and Y-fitted regressions.
        """
        if self.time_augmented:
            data = time_augment(data, normalize=self.normalize_time)
        if self.kind == "pcfd":
            return unitary_features(self.m_ens, data)
        k1 = len(self.m_ens)
        k2 = len(self.m2_ens)
        m = self.m2_ens.lie_dim
        out = []
        for regs in (self.regs_x, self.regs_y):
            feat = np.empty((data.n_samples, k1, k2, m, m), dtype=np.complex128)
            for i in range(k1):
                cond = predict_cond_dev(regs[i], data, self.m_ens[i])
                for j in range(k2):
                    feat[:, i, j] = develop_rank2(self.m2_ens[j], cond)
            out.append(feat)
        return tuple(out)

    @staticmethod
    def _sq_from_features(feat, idx_a, idx_b):
        if isinstance(feat, tuple):
            total = 0.0
            for f in feat:
                diff = f[idx_a].mean(axis=0) - f[idx_b].mean(axis=0)
                total += 0.5 * float(np.mean(
                    np.sum(diff.real**2 + diff.imag**2, axis=(-2, -1))
                ))
            return total
        diff = feat[idx_a].mean(axis=0) - feat[idx_b].mean(axis=0)
        return float(np.mean(np.sum(diff.real**2 + diff.imag**2, axis=(-2, -1))))

    def evaluate(self, X, Y):
        """The fitted distance between two datasets (zero iff identical
        empirical feature means)."""
        fx = self.features(X)
        fy = self.features(Y)
        if isinstance(fx, tuple):
            total = 0.0
            for a, b in zip(fx, fy):
                diff = a.mean(axis=0) - b.mean(axis=0)
                total += 0.5 * float(np.mean(
                    np.sum(diff.real**2 + diff.imag**2, axis=(-2, -1))
                ))
            return math.sqrt(total)
        diff = fx.mean(axis=0) - fy.mean(axis=0)
        return math.sqrt(float(np.mean(
            np.sum(diff.real**2 + diff.imag**2, axis=(-2, -1))
        )))


def fit_test_statistic(X_train, Y_train, config=None, kind="hrpcfd"):
    """Fit a TestStatistic on training samples (kept apart from test data
    by the caller)."""
    cfg = config or DiscConfig()
    if kind == "hrpcfd":
        disc = train_discriminator(X_train, Y_train, cfg)
        return TestStatistic(
            "hrpcfd", disc.m_ens, regs_x=disc.regs_x, regs_y=disc.regs_y,
            m2_ens=disc.m2_ens, time_augmented=cfg.time_augmented,
            normalize_time=cfg.normalize_time,
            curves={"rank1": disc.curve_rank1, "rank2": disc.curve_rank2},
        )
    if kind == "pcfd":
        Xa = time_augment(X_train, normalize=cfg.normalize_time) \
            if cfg.time_augmented else X_train
        Ya = time_augment(Y_train, normalize=cfg.normalize_time) \
            if cfg.time_augmented else Y_train
        m_ens, curve = optimize_rank1(Xa, Ya, cfg, cfg.seed)
        return TestStatistic(
            "pcfd", m_ens, time_augmented=cfg.time_augmented,
            normalize_time=cfg.normalize_time, curves={"rank1": curve},
        )
    raise ArgumentError(f"unknown statistic kind {kind!r}")


@dataclasses.dataclass
class TestReport:
    """Outcome of a permutation test or a power study."""

    kind: str                      # "two_sample" | "power" | "type_i"
    alpha: float
    m_perms: int
    seed: int
    observed: float | None = None
    threshold: float | None = None
    reject: bool | None = None
    perm_values: list | None = None
    n_runs: int | None = None
    rejection_rate: float | None = None
    runs: list | None = None

    def __post_init__(self):
        if self.rejection_rate is not None and not 0.0 <= self.rejection_rate <= 1.0:
            raise ArgumentError(
                f"rejection rate must lie in [0,1], got {self.rejection_rate}"
            )

    def to_dict(self):
        out = {"kind": self.kind, "alpha": self.alpha,
               "m_perms": self.m_perms, "seed": self.seed}
        for key in ("observed", "threshold", "reject", "perm_values",
                    "n_runs", "rejection_rate", "runs"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


def _perm_quantile(values, alpha):
    """Empirical (1-alpha) quantile: the ceil((1-alpha) M)-th order statistic."""
    s = np.sort(values)
    k = math.ceil((1.0 - alpha) * len(s))
    k = min(max(k, 1), len(s))
    return float(s[k - 1])


def permutation_test(stat, X, Y, m_perms=200, alpha=0.05, seed=0):
    """Compare the observed statistic to its pooled-resplit distribution.

    Rejects when the observed value strictly exceeds the empirical
    (1-alpha) quantile of the m_perms re-splits.  Deterministic in
    ``seed``.
    """
    if m_perms < 20:
        raise ArgumentError(f"need at least 20 permutations, got {m_perms}")
    if not 0.0 < alpha < 1.0:
        raise ArgumentError(f"alpha must lie in (0,1), got {alpha}")
    nx, ny = X.n_samples, Y.n_samples
    if nx + ny < 10:
        raise ArgumentError(
            f"too few samples for a meaningful quantile: {nx}+{ny} < 10"
        )
    pooled = X.concat(Y)
    feat = stat.features(pooled)
    idx = np.arange(nx + ny)
    observed = math.sqrt(stat._sq_from_features(feat, idx[:nx], idx[nx:]))
    rng = np.random.default_rng(seed)
    perm_values = np.empty(m_perms)
    for p in range(m_perms):
        perm = rng.permutation(nx + ny)
        perm_values[p] = math.sqrt(
            stat._sq_from_features(feat, perm[:nx], perm[nx:])
        )
    threshold = _perm_quantile(perm_values, alpha)
    return TestReport(
        kind="two_sample", alpha=alpha, m_perms=m_perms, seed=seed,
        observed=observed, threshold=threshold,
        reject=bool(observed > threshold),
        perm_values=[float(v) for v in perm_values],
    )


def power_study(spec_a, spec_b, n_runs=5, m_perms=200, alpha=0.05,
                config=None, n_samples=200, seed=0, kind="hrpcfd"):
    """Estimate rejection rates by repeated sample-train-test runs.

    Each run draws fresh, independent train and test sets from both
    process specs, fits the statistic on the training pair, and runs the
    permutation test on the held-out pair.  With ``spec_a == spec_b`` the
    rate estimates the Type-I error, otherwise the power.
    """
    if n_runs < 1:
        raise ArgumentError(f"need n_runs >= 1, got {n_runs}")
    cfg = config or DiscConfig()
    is_null = spec_a == spec_b
    runs = []
    rejections = 0
    for r in range(n_runs):
        train_x = spec_a.sample(n_samples, seed=derive_seed(seed, 4 * r))
        train_y = spec_b.sample(n_samples, seed=derive_seed(seed, 4 * r + 1))
        test_x = spec_a.sample(n_samples, seed=derive_seed(seed, 4 * r + 2))
        test_y = spec_b.sample(n_samples, seed=derive_seed(seed, 4 * r + 3))
        run_cfg = dataclasses.replace(cfg, seed=derive_seed(seed, 1000 + r))
        stat = fit_test_statistic(train_x, train_y, run_cfg, kind=kind)
        rep = permutation_test(
            stat, test_x, test_y, m_perms=m_perms, alpha=alpha,
            seed=derive_seed(seed, 2000 + r),
        )
        rejections += int(rep.reject)
        runs.append({
            "run": r,
            "observed": rep.observed,
            "threshold": rep.threshold,
            "reject": rep.reject,
        })
    return TestReport(
        kind="type_i" if is_null else "power", alpha=alpha, m_perms=m_perms,
        seed=seed, n_runs=n_runs, rejection_rate=rejections / n_runs, runs=runs,
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_statistic(path, stat):
    """Checkpoint a fitted statistic (ensembles plus regression weights)."""
    from .checkpoint import save_checkpoint

    header = {
        "kind": "statistic",
        "stat_kind": stat.kind,
        "time_augmented": stat.time_augmented,
        "normalize_time": stat.normalize_time,
    }
    arrays = {"m1": stat.m_ens.generators}
    if stat.kind == "hrpcfd":
        header["n"] = stat.m2_ens.n
        header["reg"] = {
            "in_dim": stat.regs_x[0].in_dim,
            "hidden": stat.regs_x[0].hidden,
            "n_layers": stat.regs_x[0].n_layers,
        }
        arrays["m2"] = stat.m2_ens.generators
        for tag, regs in (("rx", stat.regs_x), ("ry", stat.regs_y)):
            for i, reg in enumerate(regs):
                for name, arr in reg.parameters().items():
                    arrays[f"{tag}{i}.{name}"] = arr
    save_checkpoint(path, header, arrays)


def load_statistic(path):
    """Load a statistic checkpoint written by :func:`save_statistic`."""
    from .checkpoint import load_checkpoint
    from .errors import ParseError
    from .highrank import Map2Ensemble
    from .regression import RegressionModel
    from .unitary import MapEnsemble

    header, arrays = load_checkpoint(path)
    if header.get("kind") != "statistic":
        raise ParseError(f"{path}: not a statistic checkpoint")
    m_ens = MapEnsemble(arrays["m1"])
    if header["stat_kind"] == "pcfd":
        return TestStatistic(
            "pcfd", m_ens, time_augmented=header["time_augmented"],
            normalize_time=header["normalize_time"],
        )
    m2_ens = Map2Ensemble(
        header["n"], arrays["m2"], time_augmented=header["time_augmented"],
        normalize_time=header["normalize_time"],
    )
    rd = header["reg"]
    regs = {"rx": [], "ry": []}
    for tag in ("rx", "ry"):
        for i in range(len(m_ens)):
            reg = RegressionModel(rd["in_dim"], header["n"], hidden=rd["hidden"],
                                  n_layers=rd["n_layers"])
            reg.set_parameters({
                name.split(".", 1)[1]: arr for name, arr in arrays.items()
                if name.startswith(f"{tag}{i}.")
            })
            regs[tag].append(reg)
    return TestStatistic(
        "hrpcfd", m_ens, regs_x=regs["rx"], regs_y=regs["ry"], m2_ens=m2_ens,
        time_augmented=header["time_augmented"],
        normalize_time=header["normalize_time"],
    )
