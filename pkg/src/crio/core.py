"""Dense state/operator algebra, measurement branching and a Lindblad integrator.

Subsystems are ordered big-endian: the leftmost factor is the most
significant digit of the amplitude index, so ``|abc>`` with qubits ``a, b, c``
sits at index ``4a + 2b + c``. Everything here is dense; the largest objects
in this package are 9x9 Hamiltonians and 10-qubit protocol registers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.integrate import ode
from scipy.linalg import expm

from .errors import (
    BasisError,
    DimensionError,
    IntegrationError,
    NonHermitianError,
)

HERMITIAN_TOL = 1e-10
NORM_TOL = 1e-10
PRUNE_TOL = 1e-12

ArrayLike = Union[np.ndarray, Sequence[complex]]


def _dims_tuple(dims: Iterable[int]) -> tuple[int, ...]:
    out = tuple(int(d) for d in dims)
    if not out or any(d < 1 for d in out):
        raise DimensionError(f"invalid subsystem dimensions {out!r}")
    return out


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateVector:
    """Pure state (ket) over an ordered list of subsystems.

    ``normalized=False`` is allowed for lossy pipelines whose norm carries
    physical meaning (photon loss in the cavity link); the norm check is then
    skipped.
    """

    dims: tuple[int, ...]
    amps: np.ndarray
    normalized: bool = True

    def __post_init__(self) -> None:
        dims = _dims_tuple(self.dims)
        amps = np.array(self.amps, dtype=complex).reshape(-1)
        if amps.size != math.prod(dims):
            raise DimensionError(
                f"{amps.size} amplitudes do not match dims {dims} (product {math.prod(dims)})"
            )
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        if self.normalized:
            nrm = float(np.vdot(amps, amps).real)
            if abs(nrm - 1.0) > NORM_TOL:
                raise ValueError(f"state flagged normalized but sum |amp|^2 = {nrm:.3e}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "amps", _frozen(amps))

    @classmethod
    def basis(cls, digits: Sequence[int], dims: Sequence[int] | None = None) -> "StateVector":
        """Computational basis ket, e.g. ``basis([0, 1])`` is ``|01>``."""
        dims = _dims_tuple(dims if dims is not None else [2] * len(digits))
        if len(digits) != len(dims):
            raise DimensionError("one digit per subsystem required")
        idx = int(np.ravel_multi_index(tuple(int(d) for d in digits), dims))
        amps = np.zeros(math.prod(dims), dtype=complex)
        amps[idx] = 1.0
        return cls(dims, amps)

    @classmethod
    def product(cls, *factors: ArrayLike, normalize: bool = False) -> "StateVector":
        """Tensor product of single-subsystem amplitude vectors.

        The result is flagged normalized only if its norm is 1.
        """
        vecs = [np.asarray(f, dtype=complex).reshape(-1) for f in factors]
        if normalize:
            vecs = [v / np.linalg.norm(v) for v in vecs]
        amps = vecs[0]
        for v in vecs[1:]:
            amps = np.kron(amps, v)
        unit = abs(float(np.vdot(amps, amps).real) - 1.0) <= NORM_TOL
        return cls(tuple(v.size for v in vecs), amps, normalized=unit)

    @property
    def dim(self) -> int:
        return self.amps.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def normalize(self) -> "StateVector":
        nrm = self.norm()
        if nrm == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.dims, self.amps / nrm)

    def inner(self, other: "StateVector") -> complex:
        """Return ``<self|other>``."""
        if self.dims != other.dims:
            raise DimensionError(f"dims {self.dims} and {other.dims} differ")
        return complex(np.vdot(self.amps, other.amps))

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(self.dims, np.outer(self.amps, self.amps.conj()))

    def tensor(self) -> np.ndarray:
        return self.amps.reshape(self.dims)

    def __repr__(self) -> str:
        return f"StateVector(dims={self.dims}, normalized={self.normalized})"


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Mixed state over an ordered list of subsystems; hermitian by construction."""

    dims: tuple[int, ...]
    mat: np.ndarray

    def __post_init__(self) -> None:
        dims = _dims_tuple(self.dims)
        mat = np.array(self.mat, dtype=complex)
        n = math.prod(dims)
        if mat.shape != (n, n):
            raise DimensionError(f"matrix shape {mat.shape} does not match dims {dims}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("density matrix entries must be finite")
        dev = float(np.max(np.abs(mat - mat.conj().T))) if n else 0.0
        if dev > HERMITIAN_TOL:
            raise NonHermitianError(f"density matrix deviates from hermitian by {dev:.3e}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mat", _frozen(mat))

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.mat).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.mat)

    def is_physical(self, tol: float = 1e-8) -> bool:
        """Unit trace and non-negative spectrum, both within ``tol``."""
        return abs(self.trace() - 1.0) <= tol and float(self.eigenvalues().min()) >= -tol

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.mat)).copy()

    def __repr__(self) -> str:
        return f"DensityMatrix(dims={self.dims}, trace={self.trace():.12f})"


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense square operator with optional verified ``unitary``/``hermitian`` tags."""

    mat: np.ndarray
    dims: tuple[int, ...] | None = None
    tags: frozenset[str] = field(default_factory=frozenset)
    tol: float = 1e-10

    def __post_init__(self) -> None:
        mat = np.array(self.mat, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionError(f"operator must be square, got shape {mat.shape}")
        dims = _dims_tuple(self.dims) if self.dims is not None else (mat.shape[0],)
        if math.prod(dims) != mat.shape[0]:
            raise DimensionError(f"dims {dims} do not match operator size {mat.shape[0]}")
        tags = frozenset(self.tags)
        unknown = tags - {"unitary", "hermitian"}
        if unknown:
            raise ValueError(f"unknown operator tags {sorted(unknown)}")
        if "unitary" in tags and not _is_unitary(mat, self.tol):
            raise ValueError("operator tagged unitary fails U^dag U = I")
        if "hermitian" in tags and not _is_hermitian(mat, self.tol):
            raise NonHermitianError("operator tagged hermitian fails H = H^dag")
        object.__setattr__(self, "mat", _frozen(mat))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "tags", tags)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def is_unitary(self, tol: float = 1e-10) -> bool:
        return _is_unitary(self.mat, tol)

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return _is_hermitian(self.mat, tol)

    def dag(self) -> "Operator":
        return Operator(self.mat.conj().T, self.dims, self.tags)

    def __matmul__(self, other: "Operator") -> "Operator":
        if not isinstance(other, Operator):
            return NotImplemented
        if self.dims != other.dims:
            raise DimensionError(f"dims {self.dims} and {other.dims} differ")
        tags = frozenset({"unitary"}) if {"unitary"} <= self.tags & other.tags else frozenset()
        return Operator(self.mat @ other.mat, self.dims, tags)

    def __repr__(self) -> str:
        return f"Operator(dims={self.dims}, tags={sorted(self.tags)})"


def _is_unitary(mat: np.ndarray, tol: float) -> bool:
    eye = np.eye(mat.shape[0])
    return float(np.max(np.abs(mat.conj().T @ mat - eye))) < tol


def _is_hermitian(mat: np.ndarray, tol: float) -> bool:
    return float(np.max(np.abs(mat - mat.conj().T))) < tol


@dataclass(frozen=True)
class BlochAxis:
    """Unit vector ``n = (sin t cos p, sin t sin p, cos t)`` with t in [0, pi], p in [0, 2pi)."""

    theta: float
    phi: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError(f"theta={self.theta} outside [0, pi]")
        if not (0.0 <= self.phi < 2.0 * math.pi):
            raise ValueError(f"phi={self.phi} outside [0, 2pi)")

    @classmethod
    def random(cls, rng: np.random.Generator) -> "BlochAxis":
        """Axis drawn uniformly from the sphere."""
        theta = float(np.arccos(rng.uniform(-1.0, 1.0)))
        phi = float(rng.uniform(0.0, 2.0 * math.pi))
        return cls(theta, phi)

    @property
    def vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])

    def operator(self) -> Operator:
        return bloch_operator(self)


I2 = Operator(np.eye(2), tags={"unitary", "hermitian"})
SX = Operator([[0, 1], [1, 0]], tags={"unitary", "hermitian"})
SY = Operator([[0, -1j], [1j, 0]], tags={"unitary", "hermitian"})
SZ = Operator([[1, 0], [0, -1]], tags={"unitary", "hermitian"})
HADAMARD = Operator(np.array([[1, 1], [1, -1]]) / math.sqrt(2), tags={"unitary", "hermitian"})
CZ = Operator(np.diag([1, 1, 1, -1]), dims=(2, 2), tags={"unitary", "hermitian"})

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)
KET_PLUS = np.array([1, 1], dtype=complex) / math.sqrt(2)
KET_MINUS = np.array([1, -1], dtype=complex) / math.sqrt(2)

#: Measurement bases as (label, vector) pairs.
Z_BASIS: tuple[tuple[str, np.ndarray], ...] = (("0", KET0), ("1", KET1))
X_BASIS: tuple[tuple[str, np.ndarray], ...] = (("+", KET_PLUS), ("-", KET_MINUS))


def bloch_operator(axis: BlochAxis) -> Operator:
    """Pauli operator along ``axis``; hermitian, unitary and involutive."""
    nx, ny, nz = axis.vector
    mat = nx * SX.mat + ny * SY.mat + nz * SZ.mat
    return Operator(mat, tags={"unitary", "hermitian"})


def exp_i(op: Operator, alpha: float) -> Operator:
    """``exp(i alpha op)`` for hermitian ``op``; closed form when ``op`` squares to I."""
    mat = op.mat
    eye = np.eye(op.dim)
    if np.allclose(mat @ mat, eye, atol=1e-12):
        out = math.cos(alpha) * eye + 1j * math.sin(alpha) * mat
    else:
        out = expm(1j * alpha * mat)
    return Operator(out, op.dims, tags={"unitary"})


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


def kron(a, b):
    """Kronecker product of two operators or two kets, left factor most significant."""
    if isinstance(a, Operator) and isinstance(b, Operator):
        tags = a.tags & b.tags
        return Operator(np.kron(a.mat, b.mat), a.dims + b.dims, tags)
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(
            a.dims + b.dims, np.kron(a.amps, b.amps), normalized=a.normalized and b.normalized
        )
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(a.dims + b.dims, np.kron(a.mat, b.mat))
    raise TypeError(f"cannot kron {type(a).__name__} with {type(b).__name__}")


def _check_targets(targets: Sequence[int], dims: tuple[int, ...]) -> tuple[int, ...]:
    targets = tuple(int(t) for t in targets)
    if len(set(targets)) != len(targets):
        raise DimensionError(f"repeated target subsystem in {targets}")
    for t in targets:
        if not 0 <= t < len(dims):
            raise DimensionError(f"target {t} out of range for {len(dims)} subsystems")
    return targets


def _apply_to_axes(mat: np.ndarray, tensor: np.ndarray, axes: tuple[int, ...], sub_dims) -> np.ndarray:
    k = len(axes)
    op_t = mat.reshape(tuple(sub_dims) * 2)
    out = np.tensordot(op_t, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def embed(op: Operator | np.ndarray, targets: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Full matrix of ``op`` acting on ``targets`` with identities elsewhere."""
    dims = _dims_tuple(dims)
    targets = _check_targets(targets, dims)
    mat = op.mat if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    sub = [dims[t] for t in targets]
    if mat.shape != (math.prod(sub),) * 2:
        raise DimensionError(f"operator of size {mat.shape[0]} cannot act on subsystems {sub}")
    n = math.prod(dims)
    eye = np.eye(n, dtype=complex).reshape(dims + (n,))
    out = _apply_to_axes(mat, eye, targets, sub)
    return out.reshape(n, n)


def apply(op: Operator, targets: Sequence[int], state):
    """Apply ``op`` to the listed subsystems of a ket (``U psi``) or density matrix (``U rho U^dag``)."""
    targets = _check_targets(targets, state.dims)
    sub = [state.dims[t] for t in targets]
    if op.dim != math.prod(sub):
        raise DimensionError(
            f"operator of size {op.dim} cannot act on subsystems {targets} with dims {sub}"
        )
    if isinstance(state, StateVector):
        out = _apply_to_axes(op.mat, state.tensor(), targets, sub)
        normalized = state.normalized and "unitary" in op.tags
        return StateVector(state.dims, out.reshape(-1), normalized=normalized)
    if isinstance(state, DensityMatrix):
        nsub = len(state.dims)
        t = state.mat.reshape(state.dims * 2)
        t = _apply_to_axes(op.mat, t, targets, sub)
        t = _apply_to_axes(op.mat.conj(), t, tuple(nsub + i for i in targets), sub)
        return DensityMatrix(state.dims, t.reshape(state.mat.shape))
    raise TypeError(f"cannot apply an operator to {type(state).__name__}")


def partial_trace(rho: DensityMatrix | StateVector, keep: Sequence[int]) -> DensityMatrix:
    """Reduced density matrix on ``keep`` (returned in the order given)."""
    if isinstance(rho, StateVector):
        # contract the ket directly; avoids building the full projector
        keep = _check_targets(keep, rho.dims)
        if not keep:
            raise DimensionError("keep at least one subsystem")
        kd = tuple(rho.dims[i] for i in keep)
        rest = [i for i in range(len(rho.dims)) if i not in keep]
        m = np.transpose(rho.tensor(), list(keep) + rest).reshape(math.prod(kd), -1)
        return DensityMatrix(kd, m @ m.conj().T)
    keep = _check_targets(keep, rho.dims)
    if not keep:
        raise DimensionError("keep at least one subsystem")
    n = len(rho.dims)
    letters = [chr(ord("a") + i) for i in range(2 * n)]
    row = letters[:n]
    col = [letters[n + i] if i in keep else letters[i] for i in range(n)]
    out = [row[i] for i in keep] + [col[i] for i in keep]
    spec = "".join(row + col) + "->" + "".join(out)
    red = np.einsum(spec, rho.mat.reshape(rho.dims * 2))
    kd = tuple(rho.dims[i] for i in keep)
    m = math.prod(kd)
    return DensityMatrix(kd, red.reshape(m, m))


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Branch:
    """One measurement outcome.

    ``state`` keeps the full register with the measured subsystem collapsed
    onto the basis vector; ``remaining`` is the normalized state of all other
    subsystems (``None`` when nothing else is left).
    """

    label: str
    probability: float
    state: StateVector
    remaining: StateVector | None


def _normalize_basis(basis, dim: int) -> list[tuple[str, np.ndarray]]:
    items = []
    for k, entry in enumerate(basis):
        if isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[0], str):
            label, vec = entry
        else:
            label, vec = str(k), entry
        items.append((label, np.asarray(vec, dtype=complex).reshape(-1)))
    if len(items) != dim or any(v.size != dim for _, v in items):
        raise BasisError(f"basis must contain {dim} vectors of length {dim}")
    gram = np.array([[np.vdot(u, v) for _, v in items] for _, u in items])
    if float(np.max(np.abs(gram - np.eye(dim)))) > NORM_TOL:
        raise BasisError("measurement basis is not orthonormal")
    return items


def _project(state: StateVector, subsystem: int, vec: np.ndarray):
    t = np.moveaxis(state.tensor(), subsystem, 0)
    rest = np.tensordot(vec.conj(), t, axes=(0, 0))
    return rest


def measure_branches(
    state: StateVector,
    subsystem: int,
    basis,
    prune: float = PRUNE_TOL,
) -> list[Branch]:
    """Enumerate every outcome of a projective measurement on one subsystem.

    ``basis`` is a sequence of vectors or ``(label, vector)`` pairs.
    Branches with probability below ``prune`` are dropped.
    """
    if not state.normalized:
        raise ValueError("measurement requires a normalized state")
    (subsystem,) = _check_targets([subsystem], state.dims)
    items = _normalize_basis(basis, state.dims[subsystem])
    other = tuple(d for i, d in enumerate(state.dims) if i != subsystem)
    branches = []
    for label, vec in items:
        rest = _project(state, subsystem, vec)
        prob = float(np.vdot(rest, rest).real)
        if prob < prune:
            continue
        rest = rest / math.sqrt(prob)
        full = np.moveaxis(np.multiply.outer(vec, rest), 0, subsystem).reshape(-1)
        remaining = StateVector(other, rest.reshape(-1)) if other else None
        branches.append(Branch(label, prob, StateVector(state.dims, full), remaining))
    return branches


def sample_measurement(
    state: StateVector, subsystem: int, basis, rng: np.random.Generator
) -> Branch:
    """Draw a single outcome with Born-rule probabilities (Monte Carlo mode)."""
    branches = measure_branches(state, subsystem, basis)
    probs = np.array([b.probability for b in branches])
    k = int(rng.choice(len(branches), p=probs / probs.sum()))
    return branches[k]


def state_fidelity(rho: DensityMatrix | StateVector, psi: StateVector) -> float:
    """``<psi|rho|psi>`` for a normalized target ket."""
    if isinstance(rho, StateVector):
        rho = rho.to_density()
    if rho.dims != psi.dims:
        raise DimensionError(f"dims {rho.dims} and {psi.dims} differ")
    if not psi.normalized:
        raise ValueError("target state must be normalized")
    val = complex(np.vdot(psi.amps, rho.mat @ psi.amps))
    if abs(val.imag) > 1e-8:
        raise ValueError(f"fidelity has imaginary part {val.imag:.3e}")
    return min(1.0, max(0.0, val.real))


# ---------------------------------------------------------------------------
# master equation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HarmonicHamiltonian:
    """``H(t) = H0 + sum_k (exp(i w_k t) A_k + h.c.)``.

    All drives in this package are square pulses in an interaction picture,
    so this form covers them exactly and lets the integrator precompute the
    superoperator pieces once.
    """

    static: np.ndarray
    drives: tuple[tuple[float, np.ndarray], ...] = ()

    def __post_init__(self) -> None:
        static = np.array(self.static, dtype=complex)
        if not _is_hermitian(static, HERMITIAN_TOL):
            raise NonHermitianError("static part of the Hamiltonian is not hermitian")
        drives = []
        for freq, mat in self.drives:
            mat = np.array(mat, dtype=complex)
            if mat.shape != static.shape:
                raise DimensionError("drive term shape differs from the static part")
            drives.append((float(freq), _frozen(mat)))
        object.__setattr__(self, "static", _frozen(static))
        object.__setattr__(self, "drives", tuple(drives))

    @property
    def dim(self) -> int:
        return self.static.shape[0]

    def __call__(self, t: float) -> np.ndarray:
        h = self.static.copy()
        for freq, mat in self.drives:
            term = np.exp(1j * freq * t) * mat
            h += term + term.conj().T
        return h


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Density matrices sampled at strictly increasing times (microseconds)."""

    times: np.ndarray
    states: tuple[DensityMatrix, ...]
    observables: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) != len(self.states):
            raise DimensionError("one state per time point required")
        if np.any(np.diff(times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", _frozen(times.copy()))
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]

    def population(self, index: int) -> np.ndarray:
        return np.array([s.mat[index, index].real for s in self.states])


HamiltonianSpec = Union[Operator, np.ndarray, HarmonicHamiltonian, Callable[[float], np.ndarray]]

_DOP853_CODES = {
    -1: "input is not consistent",
    -2: "larger nsteps is needed",
    -3: "step size becomes too small (the problem may be stiff)",
    -4: "problem is probably stiff",
}


def _commutator_super(h: np.ndarray) -> np.ndarray:
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def _dissipator_super(ops: Sequence[np.ndarray], n: int) -> np.ndarray:
    eye = np.eye(n)
    out = np.zeros((n * n, n * n), dtype=complex)
    for L in ops:
        LdL = L.conj().T @ L
        out += np.kron(L, L.conj()) - 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T))
    return out


def liouvillian(h: np.ndarray, lindblads: Sequence[np.ndarray] = ()) -> np.ndarray:
    """Generator acting on the row-major vectorization ``rho.reshape(-1)``."""
    h = np.asarray(h, dtype=complex)
    ops = [L.mat if isinstance(L, Operator) else np.asarray(L, dtype=complex) for L in lindblads]
    return _commutator_super(h) + _dissipator_super(ops, h.shape[0])


def harmonic_propagator(
    hamiltonian: HarmonicHamiltonian,
    lindblads: Sequence[Operator | np.ndarray],
    t: float,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_steps: int = 50_000_000,
) -> np.ndarray:
    """Superoperator ``P(t)`` with ``vec rho(t) = P(t) vec rho(0)``.

    Integrates ``dP/dt = L(t) P`` from ``P(0) = I`` with the same ``dop853``
    scheme as :func:`integrate_master_equation`. For a Hamiltonian whose
    drive frequencies share a period ``tp``, ``P(k tp + r) = P(r) P(tp)^k``.
    """
    n = hamiltonian.dim
    ops = [L.mat if isinstance(L, Operator) else np.asarray(L, dtype=complex) for L in lindblads]
    base = _commutator_super(hamiltonian.static) + _dissipator_super(ops, n)
    parts = [(f, _commutator_super(a), _commutator_super(a.conj().T)) for f, a in hamiltonian.drives]
    m = n**4
    eye = np.eye(n * n, dtype=complex)
    if t == 0:
        return eye

    def real_rhs(tt, y):
        P = (y[:m] + 1j * y[m:]).reshape(n * n, n * n)
        gen = base.copy()
        for f, up, down in parts:
            ph = np.exp(1j * f * tt)
            gen += ph * up + ph.conjugate() * down
        z = (gen @ P).reshape(-1)
        return np.concatenate([z.real, z.imag])

    solver = ode(real_rhs).set_integrator("dop853", rtol=rtol, atol=atol, nsteps=max_steps)
    solver.set_initial_value(np.concatenate([eye.real.reshape(-1), eye.imag.reshape(-1)]), 0.0)
    y = solver.integrate(float(t))
    if not solver.successful():
        code = solver.get_return_code()
        raise IntegrationError(f"propagator integration failed: {_DOP853_CODES.get(code, code)}")
    return (y[:m] + 1j * y[m:]).reshape(n * n, n * n)


def _check_callable_hermitian(h: Callable[[float], np.ndarray], t0: float, t1: float) -> None:
    for t in np.linspace(t0, t1, 7):
        mat = np.asarray(h(float(t)), dtype=complex)
        if not _is_hermitian(mat, 1e-9 * max(1.0, float(np.max(np.abs(mat))))):
            raise NonHermitianError(f"H(t) is not hermitian at t={t:.6g}")


def _build_rhs(hamiltonian: HamiltonianSpec, lindblads: Sequence[np.ndarray], n: int, t_span):
    diss = _dissipator_super(lindblads, n)
    if isinstance(hamiltonian, HarmonicHamiltonian):
        base = _commutator_super(hamiltonian.static) + diss
        parts = [
            (freq, _commutator_super(mat), _commutator_super(mat.conj().T))
            for freq, mat in hamiltonian.drives
        ]
        freqs = np.array([p[0] for p in parts])

        def rhs(t, y):
            out = base @ y
            if parts:
                ph = np.exp(1j * freqs * t)
                for k, (_, up, down) in enumerate(parts):
                    out += ph[k] * (up @ y) + ph[k].conjugate() * (down @ y)
            return out

        return rhs
    if isinstance(hamiltonian, (Operator, np.ndarray)):
        mat = hamiltonian.mat if isinstance(hamiltonian, Operator) else np.asarray(hamiltonian, complex)
        if not _is_hermitian(mat, HERMITIAN_TOL * max(1.0, float(np.max(np.abs(mat))))):
            raise NonHermitianError("Hamiltonian is not hermitian")
        gen = _commutator_super(mat) + diss
        return lambda t, y: gen @ y
    if callable(hamiltonian):
        _check_callable_hermitian(hamiltonian, *t_span)

        def rhs(t, y):
            rho = y.reshape(n, n)
            h = np.asarray(hamiltonian(t), dtype=complex)
            return (-1j * (h @ rho - rho @ h)).reshape(-1) + diss @ y

        return rhs
    raise TypeError(f"unsupported Hamiltonian type {type(hamiltonian).__name__}")


def integrate_master_equation(
    hamiltonian: HamiltonianSpec,
    lindblads: Sequence[Operator | np.ndarray],
    rho0: DensityMatrix | StateVector,
    t_span: tuple[float, float],
    *,
    t_eval: Sequence[float] | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    observables: Mapping[str, Operator | np.ndarray] | None = None,
    max_steps: int = 50_000_000,
) -> Trajectory:
    """Integrate ``d rho/dt = -i[H, rho] + sum_k (L rho L^dag - {L^dag L, rho}/2)``.

    Uses the adaptive Dormand-Prince 8(5,3) scheme (Fortran ``dop853``) on the
    vectorized density matrix, split into real and imaginary parts.

    Parameters
    ----------
    hamiltonian
        A constant ``Operator``/array, a :class:`HarmonicHamiltonian`, or any
        callable ``t -> ndarray``. Time is in microseconds and energies in
        rad/us.
    lindblads
        Jump operators, already scaled by the square roots of their rates.
    rho0
        Initial state; a ket is converted to a projector.
    t_span
        ``(t0, t1)``.
    t_eval
        Output times inside ``t_span``; defaults to 101 evenly spaced points.
    rtol, atol
        Local error tolerances of the integrator.
    observables
        Named operators whose expectation values are recorded per time point.

    Raises
    ------
    NonHermitianError
        If the Hamiltonian is not hermitian at the sampled times.
    IntegrationError
        If the step size underflows, the step budget runs out, or the trace
        drifts by more than 1e-7.
    """
    if isinstance(rho0, StateVector):
        rho0 = rho0.to_density()
    n = rho0.dim
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    times = np.linspace(t0, t1, 101) if t_eval is None else np.asarray(t_eval, dtype=float)
    if times[0] < t0 or times[-1] > t1 + 1e-12 * max(1.0, abs(t1)):
        raise ValueError("t_eval must lie inside t_span")
    if np.any(np.diff(times) <= 0):
        raise ValueError("t_eval must be strictly increasing")

    jumps = [L.mat if isinstance(L, Operator) else np.asarray(L, dtype=complex) for L in lindblads]
    for L in jumps:
        if L.shape != (n, n):
            raise DimensionError("Lindblad operator shape does not match the state")
    rhs = _build_rhs(hamiltonian, jumps, n, (t0, t1))
    m = n * n

    def real_rhs(t, y):
        z = rhs(t, y[:m] + 1j * y[m:])
        return np.concatenate([z.real, z.imag])

    solver = ode(real_rhs).set_integrator("dop853", rtol=rtol, atol=atol, nsteps=max_steps)
    y0 = rho0.mat.reshape(-1)
    solver.set_initial_value(np.concatenate([y0.real, y0.imag]), t0)

    states = []
    for t in times:
        if t > solver.t:
            y = solver.integrate(float(t))
            if not solver.successful():
                code = solver.get_return_code()
                raise IntegrationError(
                    f"integration failed at t={solver.t:.6g}: {_DOP853_CODES.get(code, code)}"
                )
        else:
            y = solver.y
        mat = (y[:m] + 1j * y[m:]).reshape(n, n)
        drift = abs(np.trace(mat).real - 1.0)
        if drift > 1e-7:
            raise IntegrationError(f"trace drifted by {drift:.3e} at t={t:.6g}")
        # hermitian part only; the integrator preserves it up to rounding
        states.append(DensityMatrix(rho0.dims, 0.5 * (mat + mat.conj().T)))

    obs = {}
    for name, op in (observables or {}).items():
        mat = op.mat if isinstance(op, Operator) else np.asarray(op, dtype=complex)
        obs[name] = np.array([np.trace(s.mat @ mat).real for s in states])
    return Trajectory(times, tuple(states), obs)
