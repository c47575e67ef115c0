"""Measurement operator backends: dense Gaussian, random rank-one, Fourier blind deconvolution.

Every backend implements the same contract: ``apply`` maps an ``M x N``
matrix (dense or factored) to a length-``m`` measurement vector, ``adjoint``
maps a measurement vector back to a dense ``M x N`` matrix, and
``projected_adjoint`` combines the adjoint with the tangent space projection
at a factored base point.  The structured backends compute ``apply`` and
``projected_adjoint`` directly from the factors and never materialize an
``M x N`` intermediate.

Operators are immutable after construction; ``(backend kind, dims, seed)``
reproduces an operator exactly.
"""

from __future__ import annotations

import abc

import numpy as np

from .core import FactoredMatrix, ProblemDims, TangentVector, tangent_project
from .errors import NumericalError, ParameterError

# Imaginary residue (relative) above which the Fourier backend refuses to
# truncate a gradient to its real part.
IMAG_RESIDUE_TOL = 1e-8


class MeasurementOperator(abc.ABC):
    """Linear map from ``M x N`` matrices to ``m`` measurements, with adjoint."""

    kind = "abstract"

    def __init__(self, dims, seed=None):
        if not isinstance(dims, ProblemDims):
            raise ParameterError("dims must be a ProblemDims instance")
        self.dims = dims
        self.seed = seed

    @abc.abstractmethod
    def apply(self, X):
        """Measurement vector of a dense array or a FactoredMatrix."""

    @abc.abstractmethod
    def adjoint(self, z):
        """Dense ``M x N`` adjoint image of a measurement vector."""

    def projected_adjoint(self, base, z):
        """Tangent projection at ``base`` of ``adjoint(z)``.

        Backends with rank-one structure override this with a direct
        factored computation; the default composes the two dense steps.
        """
        return tangent_project(base, self.adjoint(z))

    def compact_apply_cache(self, Uhat, Vhat):
        """Measurement map for matrices ``(Uhat @ Wl) @ (Vhat @ Wr).T``.

        Returns a closure over precomputed products with the fixed bases so a
        line search can evaluate many candidates cheaply.  The generic
        fallback densifies; structured backends override it.
        """

        def apply_factors(Wl, Wr):
            return self.apply((Uhat @ Wl) @ (Vhat @ Wr).T)

        return apply_factors

    def description(self):
        d = self.dims
        return {
            "backend": self.kind,
            "M": d.M,
            "N": d.N,
            "k": d.k,
            "s": d.s,
            "m": d.m,
            "seed": self.seed,
        }

    # -- shared argument checking ------------------------------------------

    def _check_matrix(self, X):
        if isinstance(X, FactoredMatrix):
            if X.shape != self.dims.shape:
                raise ParameterError(f"matrix shape {X.shape} != operator shape {self.dims.shape}")
            return X
        X = np.asarray(X, dtype=np.float64)
        if X.shape != self.dims.shape:
            raise ParameterError(f"matrix shape {X.shape} != operator shape {self.dims.shape}")
        return X

    def _check_measurements(self, z):
        z = np.asarray(z)
        if z.shape != (self.dims.m,):
            raise ParameterError(f"measurement vector shape {z.shape} != ({self.dims.m},)")
        return z


class DenseOperator(MeasurementOperator):
    """``m`` explicit dense measurement matrices, stored row-major as ``(m, M*N)``."""

    kind = "gaussian"

    def __init__(self, dims, matrices, seed=None):
        super().__init__(dims, seed)
        A = np.asarray(matrices, dtype=np.float64)
        if A.ndim == 3:
            if A.shape != (dims.m, dims.M, dims.N):
                raise ParameterError(f"expected {dims.m} matrices of shape {dims.shape}")
            A = A.reshape(dims.m, dims.M * dims.N)
        elif A.shape != (dims.m, dims.M * dims.N):
            raise ParameterError("matrices must have shape (m, M, N) or (m, M*N)")
        if not np.all(np.isfinite(A)):
            raise NumericalError("measurement matrices contain non-finite entries")
        self.flat = A

    @property
    def matrices(self):
        return self.flat.reshape(self.dims.m, self.dims.M, self.dims.N)

    def apply(self, X):
        X = self._check_matrix(X)
        if isinstance(X, FactoredMatrix):
            X = X.densify()
        return self.flat @ X.ravel()

    def adjoint(self, z):
        z = self._check_measurements(z).astype(np.float64)
        return (self.flat.T @ z).reshape(self.dims.shape)


class RankOneOperator(MeasurementOperator):
    """Measurements ``y_p = a_p^T X b_p`` from stored vectors ``a_p`` and ``b_p``."""

    kind = "rankone"

    def __init__(self, dims, avecs, bvecs, seed=None):
        super().__init__(dims, seed)
        avecs = np.asarray(avecs, dtype=np.float64)
        bvecs = np.asarray(bvecs, dtype=np.float64)
        if avecs.shape != (dims.m, dims.M) or bvecs.shape != (dims.m, dims.N):
            raise ParameterError(
                f"expected avecs ({dims.m},{dims.M}) and bvecs ({dims.m},{dims.N}), "
                f"got {avecs.shape} and {bvecs.shape}"
            )
        if not (np.all(np.isfinite(avecs)) and np.all(np.isfinite(bvecs))):
            raise NumericalError("measurement vectors contain non-finite entries")
        self.avecs = avecs
        self.bvecs = bvecs

    def apply(self, X):
        X = self._check_matrix(X)
        if isinstance(X, FactoredMatrix):
            # contract a_p^T U and V^T b_p; only the supported rows of U matter
            sup = X.support
            left = self.avecs[:, sup] @ (X.U[sup] * X.sigma)
            right = self.bvecs @ X.V
            return np.sum(left * right, axis=1)
        return np.sum((self.avecs @ X) * self.bvecs, axis=1)

    def adjoint(self, z):
        z = self._check_measurements(z).astype(np.float64)
        return self.avecs.T @ (z[:, None] * self.bvecs)

    def projected_adjoint(self, base, z):
        """Tangent projection of ``sum_p z_p a_p b_p^T`` from three small sums.

        Only ``M x r`` / ``N x r`` / ``r x r`` blocks are formed, at cost
        ``O(m r (M + N))``.
        """
        z = self._check_measurements(z).astype(np.float64)
        U, V = base.U, base.V
        ZV = self.avecs.T @ (z[:, None] * (self.bvecs @ V))   # = A*(z) V
        ZtU = self.bvecs.T @ (z[:, None] * (self.avecs @ U))  # = A*(z)^T U
        core = U.T @ ZV
        return TangentVector(base, core, ZV - U @ core, ZtU - V @ core.T)

    def compact_apply_cache(self, Uhat, Vhat):
        AU = self.avecs @ Uhat
        BV = self.bvecs @ Vhat

        def apply_factors(Wl, Wr):
            return np.sum((AU @ Wl) * (BV @ Wr), axis=1)

        return apply_factors


class FourierBlindDeconvOperator(MeasurementOperator):
    """Blind deconvolution measurements diagonalized by the unitary DFT.

    Built from real subspace matrices ``B`` (``m x M``) and ``C`` (``m x N``);
    the stored products ``FB = F B`` and ``FC = F C`` (``F`` the unitary DFT)
    define ``apply(X)_p = sqrt(m) * (FB X FC^T)_{pp}``, so that for
    ``X = u v^T`` the measurements equal the DFT of the circular convolution
    ``(B u) * (C v)``.  Measurement vectors are complex, but the normal
    operator maps real matrices to real matrices; ``adjoint`` asserts that the
    imaginary residue is rounding noise before truncating it.
    """

    kind = "fourier"

    def __init__(self, dims, B, C, FB, FC, seed=None):
        super().__init__(dims, seed)
        B = np.asarray(B, dtype=np.float64)
        C = np.asarray(C, dtype=np.float64)
        FB = np.asarray(FB, dtype=np.complex128)
        FC = np.asarray(FC, dtype=np.complex128)
        m = dims.m
        if B.shape != (m, dims.M) or C.shape != (m, dims.N):
            raise ParameterError("B must be (m, M) and C must be (m, N)")
        if FB.shape != B.shape or FC.shape != C.shape:
            raise ParameterError("FB and FC must match the shapes of B and C")
        F = unitary_dft(m)
        for name, product, raw in (("FB", FB, B), ("FC", FC, C)):
            ref = F @ raw
            err = np.linalg.norm(product - ref)
            if err > 1e-10 * max(1.0, np.linalg.norm(ref)):
                raise ParameterError(f"{name} does not equal the unitary DFT of its factor")
        self.B = B
        self.C = C
        self.FB = FB
        self.FC = FC
        self._scale = np.sqrt(m)

    def apply(self, X):
        X = self._check_matrix(X)
        if isinstance(X, FactoredMatrix):
            sup = X.support
            left = self.FB[:, sup] @ (X.U[sup] * X.sigma)
            right = self.FC @ X.V
            return self._scale * np.sum(left * right, axis=1)
        return self._scale * np.sum((self.FB @ X) * self.FC, axis=1)

    def adjoint_complex(self, z):
        """Complex adjoint image before the realness truncation (diagnostic)."""
        z = self._check_measurements(z).astype(np.complex128)
        return self._scale * (self.FB.T @ (np.conj(z)[:, None] * self.FC))

    def adjoint(self, z):
        return _real_part(self.adjoint_complex(z), "adjoint image")

    def projected_adjoint(self, base, z):
        z = self._check_measurements(z).astype(np.complex128)
        U, V = base.U, base.V
        zc = np.conj(z)[:, None]
        ZV = _real_part(self._scale * (self.FB.T @ (zc * (self.FC @ V))), "tangent row block")
        ZtU = _real_part(self._scale * (self.FC.T @ (zc * (self.FB @ U))), "tangent column block")
        core = U.T @ ZV
        return TangentVector(base, core, ZV - U @ core, ZtU - V @ core.T)

    def compact_apply_cache(self, Uhat, Vhat):
        FBU = self.FB @ Uhat
        FCV = self.FC @ Vhat
        scale = self._scale

        def apply_factors(Wl, Wr):
            return scale * np.sum((FBU @ Wl) * (FCV @ Wr), axis=1)

        return apply_factors


def _real_part(Z, what):
    norm = np.linalg.norm(Z)
    residue = np.linalg.norm(Z.imag)
    if residue > IMAG_RESIDUE_TOL * max(norm, 1e-300):
        raise NumericalError(
            f"{what} has imaginary residue {residue:.3e} (norm {norm:.3e}); "
            "measurements do not come from a real matrix"
        )
    return np.ascontiguousarray(Z.real)


def unitary_dft(m):
    """The unitary ``m x m`` DFT matrix ``exp(-2 pi i j k / m) / sqrt(m)``."""
    j = np.arange(m)
    return np.exp(-2j * np.pi * np.outer(j, j) / m) / np.sqrt(m)


# ---------------------------------------------------------------------------
# seeded factories


def make_gaussian(dims, seed):
    """Dense operator with i.i.d. normal entries of standard deviation ``1/sqrt(m)``.

    Under this scaling ``E ||A(X)||^2 = ||X||_F^2``, which is the
    normalization the constant-stepsize theory assumes.
    """
    rng = np.random.default_rng(seed)
    flat = rng.standard_normal((dims.m, dims.M * dims.N)) / np.sqrt(dims.m)
    return DenseOperator(dims, flat, seed=seed)


def make_rank_one(dims, seed):
    """Rank-one operator with ``a_p ~ N(0, 1)`` and ``b_p ~ N(0, 1/m)`` entries."""
    rng = np.random.default_rng(seed)
    avecs = rng.standard_normal((dims.m, dims.M))
    bvecs = rng.standard_normal((dims.m, dims.N)) / np.sqrt(dims.m)
    return RankOneOperator(dims, avecs, bvecs, seed=seed)


def make_fourier_blind_deconv(dims, seed):
    """Fourier blind deconvolution operator with generic real subspaces.

    ``B`` and ``C`` get i.i.d. ``N(0, 1/m)`` entries; their DFT products are
    precomputed and validated against the explicit unitary DFT matrix.
    ``m >= max(M, N)`` is advisable for the subspace model but not enforced.
    """
    rng = np.random.default_rng(seed)
    m = dims.m
    B = rng.standard_normal((m, dims.M)) / np.sqrt(m)
    C = rng.standard_normal((m, dims.N)) / np.sqrt(m)
    # FFT route here, explicit-DFT route in the constructor check: the two
    # must agree to 1e-10 or construction fails.
    FB = np.fft.fft(B, axis=0) / np.sqrt(m)
    FC = np.fft.fft(C, axis=0) / np.sqrt(m)
    return FourierBlindDeconvOperator(dims, B, C, FB, FC, seed=seed)


_FACTORIES = {
    "gaussian": make_gaussian,
    "rankone": make_rank_one,
    "fourier": make_fourier_blind_deconv,
}

BACKENDS = tuple(sorted(_FACTORIES))


def make_operator(backend, dims, seed):
    """Construct a backend by name; ``(backend, dims, seed)`` replays exactly."""
    try:
        factory = _FACTORIES[backend]
    except KeyError:
        raise ParameterError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    return factory(dims, seed)
