r"""Complex matrix primitives: anti-Hermitian generators, the exact
matrix exponential on the skew-Hermitian subspace, Hilbert–Schmidt
geometry, and random generator sampling.

A matrix :math:`A` is anti-Hermitian (skew-Hermitian) when
:math:`A + A^* = 0`.  Then :math:`-iA` is Hermitian with real spectrum
:math:`\lambda`, and

.. math:: \exp(A) = V \,\mathrm{diag}(e^{i\lambda_k})\, V^*

with :math:`V` the (unitary) eigenbasis of :math:`-iA`.  This is exact —
no Padé approximation, no scaling-and-squaring — and it hands the
spectral data straight to the Daleckii–Krein differential used by
:mod:`adev.training`.

Optimization never works on raw complex entries.  A generator is
parametrized by ``m`` real numbers for the (purely imaginary) diagonal
plus ``m(m-1)/2`` complex numbers for the strict upper triangle; the
lower triangle is determined.  :func:`generator_to_params` /
:func:`params_to_generator` convert between the two views, and updating
parameters (rather than entries) keeps every iterate exactly
anti-Hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError, UnitarityError

#: A matrix U passes the unitarity check when ||U U* - I||_HS <= this.
UNITARITY_TOL = 1e-10

#: Construction-time tolerance for "is anti-Hermitian".
ANTI_HERMITIAN_TOL = 1e-12


def is_anti_hermitian(A, tol=ANTI_HERMITIAN_TOL):
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        return False
    return float(np.max(np.abs(A + np.conj(np.swapaxes(A, -1, -2))))) <= tol


def check_anti_hermitian(A, what="matrix"):
    if not np.all(np.isfinite(A)):
        raise NumericError(f"{what} has non-finite entries")
    if not is_anti_hermitian(A):
        raise ArgumentError(f"{what} is not anti-Hermitian")


def anti_hermitian_projection(G):
    """Project an arbitrary square matrix onto the anti-Hermitian subspace."""
    return 0.5 * (G - np.conj(np.swapaxes(np.asarray(G), -1, -2)))


def expm_anti_hermitian(A):
    """Exponentiate one anti-Hermitian matrix; the result is unitary.

    Raises :class:`NumericError` on non-finite input and
    :class:`UnitarityError` if the result fails the unitarity invariant
    (which indicates an internal problem, not a caller mistake).
    """
    A = np.asarray(A, dtype=np.complex128)
    check_anti_hermitian(A, "exponent")
    lam, V = np.linalg.eigh(-1j * A)
    U = (V * np.exp(1j * lam)) @ V.conj().T
    assert_unitary(U)
    return U


def assert_unitary(U, tol=UNITARITY_TOL):
    """Raise :class:`UnitarityError` unless ``U U* = I`` within ``tol``."""
    U = np.asarray(U)
    m = U.shape[-1]
    G = U @ np.conj(np.swapaxes(U, -1, -2))
    err = float(np.sqrt(np.max(np.sum(np.abs(G - np.eye(m)) ** 2, axis=(-2, -1)))))
    if not np.isfinite(err) or err > tol:
        raise UnitarityError(f"unitarity violated: ||UU* - I||_HS = {err:.3e} > {tol:g}")


def hs_inner(A, B):
    """Hilbert–Schmidt inner product ``<A, B> = tr(A B*)`` (complex)."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ShapeError(f"shape mismatch: {A.shape} vs {B.shape}")
    return complex(np.sum(A * B.conj()))


def hs_norm(A):
    """Hilbert–Schmidt (Frobenius) norm."""
    return float(np.sqrt(np.sum(np.abs(np.asarray(A)) ** 2)))


def hs_distance(A, B):
    """``sqrt(tr((A-B)(A-B)*))``; symmetric, zero iff ``A == B``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ShapeError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.sqrt(np.sum(np.abs(A - B) ** 2)))


# ---------------------------------------------------------------------------
# linear maps into the Lie algebra, and ensembles of them
# ---------------------------------------------------------------------------


@dataclass
class DevMap:
    """A linear map R^{d_in} -> u(n), stored as ``d_in`` generators.

    ``apply(v)`` returns ``sum_j v_j generators[j]``.
    """

    generators: np.ndarray  # (d_in, n, n) complex128

    def __post_init__(self):
        G = np.ascontiguousarray(np.asarray(self.generators, dtype=np.complex128))
        if G.ndim != 3 or G.shape[1] != G.shape[2]:
            raise ShapeError(f"generators must be (d_in, n, n), got {G.shape}")
        check_anti_hermitian(G, "generator")
        self.generators = G

    @property
    def d_in(self):
        return self.generators.shape[0]

    @property
    def lie_dim(self):
        return self.generators.shape[1]

    def apply(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.d_in,):
            raise ShapeError(f"expected vector of length {self.d_in}, got {v.shape}")
        return np.einsum("j,jpq->pq", v, self.generators)


@dataclass
class MapEnsemble:
    """K independent :class:`DevMap`s sharing (d_in, lie_dim), stacked."""

    generators: np.ndarray  # (K, d_in, n, n) complex128

    def __post_init__(self):
        G = np.ascontiguousarray(np.asarray(self.generators, dtype=np.complex128))
        if G.ndim != 4 or G.shape[2] != G.shape[3]:
            raise ShapeError(f"ensemble generators must be (K, d_in, n, n), got {G.shape}")
        check_anti_hermitian(G, "generator")
        self.generators = G

    def __len__(self):
        return self.generators.shape[0]

    def __getitem__(self, i) -> DevMap:
        return DevMap(self.generators[i])

    @property
    def d_in(self):
        return self.generators.shape[1]

    @property
    def lie_dim(self):
        return self.generators.shape[2]

    def copy(self):
        return MapEnsemble(self.generators.copy())


def random_anti_hermitian(shape, lie_dim, init_std, rng):
    """i.i.d. complex Gaussian entries projected via ``(G - G*)/2``."""
    full = tuple(shape) + (lie_dim, lie_dim)
    G = rng.normal(scale=init_std, size=full) + 1j * rng.normal(scale=init_std, size=full)
    return anti_hermitian_projection(G)


def sample_map_ensemble(d_in, lie_dim, K, init_std=0.2, seed=0):
    """Sample K random maps R^{d_in} -> u(lie_dim), deterministically in ``seed``.

    Each generator has i.i.d. complex Gaussian entries (std ``init_std``)
    projected to the anti-Hermitian subspace, which gives the sampling
    law full support on the whole algebra.
    """
    if K < 1:
        raise ArgumentError(f"K must be >= 1, got {K}")
    if init_std < 0:
        raise ArgumentError(f"init_std must be >= 0, got {init_std}")
    if d_in < 1 or lie_dim < 1:
        raise ArgumentError("d_in and lie_dim must be positive")
    rng = np.random.default_rng(seed)
    return MapEnsemble(random_anti_hermitian((K, d_in), lie_dim, init_std, rng))


# ---------------------------------------------------------------------------
# real parametrization of the anti-Hermitian subspace
# ---------------------------------------------------------------------------


def n_params(lie_dim):
    """Real parameter count of u(lie_dim): m (diagonal) + m(m-1) (upper triangle)."""
    return lie_dim * lie_dim


def generator_to_params(A):
    """Flatten one anti-Hermitian matrix to its canonical real parameters.

    Layout: diagonal imaginary parts (m), then upper-triangle real parts
    (m(m-1)/2, row-major), then upper-triangle imaginary parts.
    """
    A = np.asarray(A)
    m = A.shape[0]
    iu = np.triu_indices(m, k=1)
    return np.concatenate([np.imag(np.diag(A)), np.real(A[iu]), np.imag(A[iu])])


def params_to_generator(params, lie_dim):
    """Inverse of :func:`generator_to_params` (exactly anti-Hermitian output)."""
    params = np.asarray(params, dtype=np.float64)
    m = lie_dim
    if params.shape != (n_params(m),):
        raise ShapeError(f"expected {n_params(m)} parameters, got {params.shape}")
    k = m * (m - 1) // 2
    diag = params[:m]
    upper = params[m : m + k] + 1j * params[m + k :]
    A = np.zeros((m, m), dtype=np.complex128)
    iu = np.triu_indices(m, k=1)
    A[iu] = upper
    A = A - A.conj().T
    A[np.diag_indices(m)] = 1j * diag
    return A


def param_gradient_matrix(gen_cot):
    """Convert a raw generator cotangent into the raw-parameter gradient.

    Given ``Z`` with ``df = 2 Re <dG, Z>_HS``, the gradient with respect
    to the canonical real parameters is, in matrix form,
    ``(Z - Z*) * s`` with ``s = 1`` on the diagonal and ``2`` off it
    (each off-diagonal parameter appears twice in the matrix).  The
    result is exactly anti-Hermitian, so parameter ascent
    ``G += lr * grad`` stays on the subspace bit-for-bit.
    """
    Z = np.asarray(gen_cot)
    W = Z - np.conj(np.swapaxes(Z, -1, -2))
    m = Z.shape[-1]
    scale = np.full((m, m), 2.0)
    np.fill_diagonal(scale, 1.0)
    return W * scale
