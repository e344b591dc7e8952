"""Synthetic processes, CSV ingestion, and generative-model metrics.

Fractional Brownian motion is simulated through the Hosking recursion on
its increment process (fractional Gaussian noise), which is exact for any
horizon and trivially seedable; a Cholesky factorization of the full
increment covariance is kept as a fallback for short horizons in case the
recursion's innovation variance ever degenerates numerically.

CSV is the one dataset exchange format: header
``sample_id,time_index,dim_0..dim_{d-1}`` (or ``time_index,dim_*`` for a
single long series), UTF-8, decimal dot.  Floats are written with
``repr`` so a round-trip through text is bit-exact.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ArgumentError, GenerationError, ParseError, ShapeError
from .paths import Dataset
from .regression import FiniteProcessSpec


# ---------------------------------------------------------------------------
# fractional Brownian motion
# ---------------------------------------------------------------------------


def fgn_autocovariance(H, max_lag):
    """gamma(k) = (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) / 2 for k = 0..max_lag."""
    k = np.arange(max_lag + 1, dtype=np.float64)
    two_h = 2.0 * H
    return 0.5 * (
        np.abs(k + 1) ** two_h - 2.0 * np.abs(k) ** two_h + np.abs(k - 1) ** two_h
    )


def _fgn_hosking(H, T, draws):
    """Fractional Gaussian noise from standard-normal ``draws`` (..., T).

    Durbin–Levinson recursion on the autocovariance: at step n the
    conditional law of X_n given the past is Gaussian with mean
    ``phi . past`` and innovation variance v_n.  Returns an array shaped
    like ``draws``.  Raises GenerationError if an innovation variance
    degenerates (caller may fall back to Cholesky).
    """
    gamma = fgn_autocovariance(H, T)
    out = np.empty_like(draws)
    out[..., 0] = draws[..., 0]
    phi = np.zeros(T)
    v = gamma[0]
    for n in range(1, T):
        # reflection coefficient for lag n
        num = gamma[n] - np.dot(phi[: n - 1], gamma[n - 1 : 0 : -1])
        k = num / v
        phi_new = phi.copy()
        phi_new[n - 1] = k
        phi_new[: n - 1] = phi[: n - 1] - k * phi[: n - 1][::-1]
        phi = phi_new
        v = v * (1.0 - k * k)
        if not np.isfinite(v) or v <= 0.0:
            raise GenerationError(
                f"innovation variance degenerated at step {n} (H={H})"
            )
        mean = np.einsum("...t,t->...", out[..., n - 1 :: -1][..., :n], phi[:n])
        out[..., n] = mean + np.sqrt(v) * draws[..., n]
    return out


def _fgn_cholesky(H, T, draws):
    gamma = fgn_autocovariance(H, T)
    cov = gamma[np.abs(np.arange(T)[:, None] - np.arange(T)[None, :])]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise GenerationError(
            f"fGn covariance is not positive definite for H={H}, T={T}"
        ) from exc
    return draws @ chol.T


def simulate_fbm(H, d, T, N, seed=0):
    """N sample paths of d independent fractional Brownian motions.

    Paths live on the integer grid 0..T, start at 0, and have
    unit-variance increments; shape (N, T+1, d).  Fixed seeds reproduce
    bit-identical datasets.
    """
    if not 0.0 < H < 1.0:
        raise ArgumentError(f"Hurst parameter must lie in (0,1), got {H}")
    if T < 1 or N < 1 or d < 1:
        raise ArgumentError(f"need positive T, N, d; got T={T}, N={N}, d={d}")
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((N, d, T))
    if H == 0.5:
        fgn = draws
    else:
        try:
            fgn = _fgn_hosking(H, T, draws)
        except GenerationError:
            if T > 64:
                raise
            fgn = _fgn_cholesky(H, T, draws)
    values = np.zeros((N, d, T + 1))
    np.cumsum(fgn, axis=-1, out=values[..., 1:])
    return Dataset(np.arange(T + 1, dtype=np.float64), values.transpose(0, 2, 1))


# ---------------------------------------------------------------------------
# the two-branch family and other toy processes
# ---------------------------------------------------------------------------


def aldous_family(n_param=None, N=0, seed=0):
    """The two-path processes on the grid {0, 1, 2}.

    ``n_param=None`` gives the limit process with paths (1, 1, 2) and
    (1, 1, 0), probability 1/2 each; an integer n gives the perturbed
    middle value 1 +- 1/n.  Returns ``(Dataset, FiniteProcessSpec)`` — the
    dataset holds N samples (empty allowed), the spec is exact for
    enumeration oracles.
    """
    if n_param is not None and n_param < 1:
        raise ArgumentError(f"n_param must be >= 1, got {n_param}")
    bump = 0.0 if n_param is None else 1.0 / n_param
    atoms = np.array(
        [
            [[1.0], [1.0 + bump], [2.0]],
            [[1.0], [1.0 - bump], [0.0]],
        ]
    )
    spec = FiniteProcessSpec(
        np.array([0.0, 1.0, 2.0]), atoms, np.array([0.5, 0.5])
    )
    if N:
        return spec.sample(N, seed=seed), spec
    return Dataset(spec.times, np.empty((0, 3, 1))), spec


def simulate_ar1(phi, sigma, d, T, N, seed=0):
    """AR(1) values X_{t+1} = phi X_t + sigma xi, started at 0."""
    if T < 1 or N < 1 or d < 1:
        raise ArgumentError(f"need positive T, N, d; got T={T}, N={N}, d={d}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((N, T, d)) * sigma
    values = np.zeros((N, T + 1, d))
    for t in range(T):
        values[:, t + 1] = phi * values[:, t] + noise[:, t]
    return Dataset(np.arange(T + 1, dtype=np.float64), values)


@dataclasses.dataclass(frozen=True)
class ProcessSpec:
    """A named synthetic process: kind + parameters + shape.

    kinds: ``bm``, ``fbm`` (uses ``hurst``), ``aldous`` (uses ``n_param``,
    None = limit), ``ar1`` (uses ``phi``, ``sigma``), ``finite`` (uses
    ``finite_spec``).
    """

    kind: str
    d: int = 1
    T: int = 10
    hurst: float = 0.5
    n_param: int | None = None
    phi: float = 0.8
    sigma: float = 1.0
    finite_spec: FiniteProcessSpec | None = None

    def __post_init__(self):
        kinds = ("bm", "fbm", "aldous", "ar1", "finite")
        if self.kind not in kinds:
            raise ArgumentError(f"unknown process kind {self.kind!r}; expected {kinds}")
        if self.kind == "finite" and self.finite_spec is None:
            raise ArgumentError("kind='finite' needs finite_spec")

    def sample(self, N, seed=0):
        if self.kind == "bm":
            return simulate_fbm(0.5, self.d, self.T, N, seed=seed)
        if self.kind == "fbm":
            return simulate_fbm(self.hurst, self.d, self.T, N, seed=seed)
        if self.kind == "aldous":
            return aldous_family(self.n_param, N, seed=seed)[0]
        if self.kind == "ar1":
            return simulate_ar1(self.phi, self.sigma, self.d, self.T, N, seed=seed)
        return self.finite_spec.sample(N, seed=seed)

    def describe(self):
        out = {"kind": self.kind, "d": self.d, "T": self.T}
        if self.kind == "fbm":
            out["hurst"] = self.hurst
        if self.kind == "aldous":
            out["n_param"] = self.n_param
        if self.kind == "ar1":
            out["phi"], out["sigma"] = self.phi, self.sigma
        return out


# ---------------------------------------------------------------------------
# CSV exchange
# ---------------------------------------------------------------------------


def export_csv(data, path):
    """Write a Dataset in the exchange schema (repr floats, bit-exact)."""
    d = data.dim
    header = "sample_id,time_index," + ",".join(f"dim_{j}" for j in range(d))
    lines = [header]
    times = data.times
    for i in range(data.n_samples):
        for t in range(data.length):
            row = [str(i), repr(float(times[t]))]
            row += [repr(float(v)) for v in data.values[i, t]]
            lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_csv_rows(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    rows = [r for r in raw if r.strip()]
    if not rows:
        raise ParseError(f"{path}: empty CSV", row=0)
    header = [c.strip() for c in rows[0].split(",")]
    dim_cols = [c for c in header if c.startswith("dim_")]
    if not dim_cols:
        raise ParseError(f"{path}: missing dim_* columns", row=0)
    if "time_index" not in header:
        raise ParseError(f"{path}: missing column time_index", row=0)
    has_sid = "sample_id" in header
    idx = {c: header.index(c) for c in header}
    want = len(header)
    parsed = []
    for rno, line in enumerate(rows[1:], start=1):
        cells = line.split(",")
        if len(cells) != want:
            raise ParseError(
                f"{path}: row has {len(cells)} cells, expected {want}", row=rno
            )
        try:
            sid = int(cells[idx["sample_id"]]) if has_sid else 0
            t = float(cells[idx["time_index"]])
            vals = [float(cells[idx[c]]) for c in dim_cols]
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric cell ({exc})", row=rno) from exc
        parsed.append((sid, t, vals))
    return parsed, len(dim_cols)


def read_csv_dataset(path):
    """Read the exchange schema back into a Dataset (inverse of export_csv)."""
    parsed, d = _parse_csv_rows(path)
    by_sid = {}
    order = []
    for rno, (sid, t, vals) in enumerate(parsed, start=1):
        if sid not in by_sid:
            by_sid[sid] = []
            order.append(sid)
        series = by_sid[sid]
        if series and t <= series[-1][0]:
            raise ParseError(
                f"{path}: time_index not strictly increasing within sample {sid}",
                row=rno,
            )
        series.append((t, vals))
    lengths = {len(v) for v in by_sid.values()}
    if len(lengths) != 1:
        raise ParseError(f"{path}: samples have unequal lengths {sorted(lengths)}")
    first = order[0]
    times = np.array([t for t, _ in by_sid[first]])
    for sid in order:
        if not np.array_equal(np.array([t for t, _ in by_sid[sid]]), times):
            raise ParseError(f"{path}: sample {sid} is on a different time grid")
    values = np.array([[v for _, v in by_sid[sid]] for sid in order])
    return Dataset(times, values.reshape(len(order), len(times), d))


def ingest_csv(path, window_len, stride, split=0.8):
    """Cut rolling windows out of the series in a CSV.

    Windows of ``window_len`` consecutive rows advance by ``stride``
    within each sample's series; windows are then split into train/test
    by window order at ratio ``split``.  Returns (train, test) Datasets
    whose time grid is 0..window_len-1.
    """
    if window_len < 2 or stride < 1:
        raise ArgumentError(
            f"need window_len >= 2 and stride >= 1, got {window_len}, {stride}"
        )
    parsed, d = _parse_csv_rows(path)
    by_sid = {}
    order = []
    last = {}
    for rno, (sid, t, vals) in enumerate(parsed, start=1):
        if sid in last and t <= last[sid]:
            raise ParseError(
                f"{path}: time_index not strictly increasing within sample {sid}",
                row=rno,
            )
        last[sid] = t
        if sid not in by_sid:
            by_sid[sid] = []
            order.append(sid)
        by_sid[sid].append(vals)
    windows = []
    for sid in order:
        series = np.asarray(by_sid[sid])
        L = len(series)
        for start in range(0, L - window_len + 1, stride):
            windows.append(series[start : start + window_len])
    if not windows:
        raise ParseError(
            f"{path}: no series is long enough for windows of {window_len}"
        )
    values = np.stack(windows)
    times = np.arange(window_len, dtype=np.float64)
    n_train = int(len(windows) * split)
    n_train = min(max(n_train, 1), len(windows) - 1) if len(windows) > 1 else 1
    return (
        Dataset(times, values[:n_train]),
        Dataset(times, values[n_train:]),
    )


# ---------------------------------------------------------------------------
# evaluation metrics
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class MetricReport:
    acf_score: float
    cross_corr_score: float
    onnd: float
    cond_exp_score: float | None = None

    def to_dict(self):
        out = {
            "acf_score": self.acf_score,
            "cross_corr_score": self.cross_corr_score,
            "onnd": self.onnd,
        }
        if self.cond_exp_score is not None:
            out["cond_exp_score"] = self.cond_exp_score
        return out


def _acf_profile(values, max_lag):
    """Per-channel autocorrelation over pooled (sample, time) pairs.

    values (N, L, d) -> (max_lag, d); constant channels contribute 0.
    """
    N, L, d = values.shape
    out = np.zeros((max_lag, d))
    for tau in range(1, max_lag + 1):
        a = values[:, :-tau].reshape(-1, d)
        b = values[:, tau:].reshape(-1, d)
        am = a - a.mean(axis=0)
        bm = b - b.mean(axis=0)
        denom = np.sqrt((am**2).sum(axis=0) * (bm**2).sum(axis=0))
        ok = denom > 0
        out[tau - 1, ok] = (am * bm).sum(axis=0)[ok] / denom[ok]
    return out


def _corr_matrix(values):
    """Correlation of the flattened (time>=1, channel) coordinates across samples."""
    N, L, d = values.shape
    flat = values[:, 1:].reshape(N, -1)
    sd = flat.std(axis=0)
    centered = flat - flat.mean(axis=0)
    denom = np.outer(sd, sd) * N
    corr = np.zeros((flat.shape[1], flat.shape[1]))
    ok = denom > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        raw = centered.T @ centered
    corr[ok] = raw[ok] / denom[ok]
    return corr


def eval_metrics(real, fake, cond_pairs=None):
    """Distribution-comparison scores between a real and a generated set.

    * ``acf_score``: sum over lags and channels of |ACF difference|.
    * ``cross_corr_score``: sum of |correlation-matrix difference| over
      all (time, channel) coordinate pairs (initial point excluded — it
      is constant by convention and has no correlation).
    * ``onnd``: mean over real samples of the distance to the nearest
      fake sample.
    * ``cond_exp_score`` (only when ``cond_pairs`` is given as
      ``(predicted_futures, real_futures)``): mean l2 distance between
      Monte Carlo conditional means and realized futures.  Absent from
      the report otherwise — never silently zero.
    """
    if real.dim != fake.dim or real.length != fake.length:
        raise ShapeError(
            f"datasets disagree on shape: {real.values.shape} vs {fake.values.shape}"
        )
    T = real.length - 1
    acf = float(
        np.abs(_acf_profile(real.values, T) - _acf_profile(fake.values, T)).sum()
    )
    cross = float(np.abs(_corr_matrix(real.values) - _corr_matrix(fake.values)).sum())

    rf = real.values.reshape(real.n_samples, -1)
    ff = fake.values.reshape(fake.n_samples, -1)
    d2 = ((rf[:, None, :] - ff[None, :, :]) ** 2).sum(axis=2)
    onnd = float(np.sqrt(d2.min(axis=1)).mean())

    cond = None
    if cond_pairs is not None:
        pred, true = cond_pairs
        pred = np.asarray(pred, dtype=np.float64)
        true = np.asarray(true, dtype=np.float64)
        if pred.shape != true.shape:
            raise ShapeError(
                f"conditional pair shapes disagree: {pred.shape} vs {true.shape}"
            )
        diff = (pred - true).reshape(pred.shape[0], -1)
        cond = float(np.sqrt((diff**2).sum(axis=1)).mean())
    return MetricReport(
        acf_score=acf, cross_corr_score=cross, onnd=onnd, cond_exp_score=cond
    )
