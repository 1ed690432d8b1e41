"""Ideal circuit-level CRIO protocol.

Alice holds the control qubit of a graph state. A sender rotates its qubit
by ``exp(i alpha sigma_x)`` and the rotation reappears as
``exp(i alpha sigma_n)`` on a receiver's qubit ``C``, but only once Alice's
measurement outcome has been announced.

Every measurement is enumerated over all outcomes; each leaf of the branch
tree carries its own :class:`ProtocolTranscript`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import (
    HADAMARD,
    I2,
    SX,
    SZ,
    X_BASIS,
    Z_BASIS,
    BlochAxis,
    Operator,
    StateVector,
    apply,
    bloch_operator,
    exp_i,
    kron,
    measure_branches,
    partial_trace,
    state_fidelity,
)
from .errors import ConfigError, DimensionError, ProtocolOrderError

__all__ = [
    "PartyQubit",
    "Event",
    "ProtocolTranscript",
    "StatorCheck",
    "StatorBranch",
    "StatorReduction",
    "ReceiverBranch",
    "TransmitResult",
    "RunBranch",
    "CrioRun",
    "prepare_graph_state",
    "graph_state",
    "resource_edges",
    "controlled_rotation",
    "attach_control",
    "reduce_to_stator",
    "stator_state",
    "bob_rotation",
    "bob_transmit",
    "run_crio",
]

ROLES = ("control", "carrier", "target")
_NAMED = {1: (("Bob",), ("Charlie",)), 2: (("Bob", "Charlie"), ("David", "Eve"))}


@dataclass(frozen=True)
class PartyQubit:
    party: str
    qubit: int
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")


# ---------------------------------------------------------------------------
# transcript
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    """One transcript entry. ``depends_on`` points at an earlier event index."""

    index: int
    actor: str
    action: str
    info: tuple[tuple[str, Any], ...] = ()
    depends_on: int | None = None

    def as_dict(self) -> dict:
        out = {"index": self.index, "actor": self.actor, "action": self.action}
        out.update(dict(self.info))
        if self.depends_on is not None:
            out["depends_on"] = self.depends_on
        return out


@dataclass(frozen=True)
class ProtocolTranscript:
    """Append-only classical event log of one branch.

    Methods return a new transcript; the receiver is never mutated, so
    sibling branches can share a common prefix.
    """

    branch: str = ""
    events: tuple[Event, ...] = ()

    def _append(self, actor, action, depends_on=None, branch=None, **info):
        ev = Event(len(self.events), actor, action, tuple(sorted(info.items())), depends_on)
        return ProtocolTranscript(self.branch if branch is None else branch, self.events + (ev,)), ev.index

    def note(self, actor: str, action: str, **info) -> "ProtocolTranscript":
        """Record an unconditional local action (preparation, rotation)."""
        return self._append(actor, action, **info)[0]

    def measure(self, actor: str, qubit: int, basis: str, outcome: str) -> tuple["ProtocolTranscript", int]:
        tag = f"{actor}:{basis}{outcome}"
        branch = tag if not self.branch else f"{self.branch}/{tag}"
        return self._append(actor, "measure", branch=branch, qubit=qubit, basis=basis, outcome=outcome)

    def message(self, sender: str, receivers: Sequence[str], about: int) -> tuple["ProtocolTranscript", int]:
        """Announce the outcome of measurement event ``about``."""
        ev = self._event(about)
        if ev.action != "measure" or ev.actor != sender:
            raise ProtocolOrderError(f"{sender} can only announce its own measurement, not event {about}")
        outcome = dict(ev.info)["outcome"]
        return self._append(sender, "message", depends_on=about, to=",".join(receivers), outcome=outcome)

    def correct(self, actor: str, qubit: int, operator: str, message: int) -> "ProtocolTranscript":
        """Record a correction that is conditioned on an earlier message."""
        ev = self._event(message)
        if ev.action != "message":
            raise ProtocolOrderError(f"event {message} is a {ev.action}, not a message")
        if actor not in dict(ev.info)["to"].split(","):
            raise ProtocolOrderError(f"{actor} did not receive message {message}")
        return self._append(actor, "correct", depends_on=message, qubit=qubit, operator=operator)[0]

    def _event(self, index: int) -> Event:
        if not 0 <= index < len(self.events):
            raise ProtocolOrderError(f"no event {index} precedes this action")
        return self.events[index]

    def count(self, action: str) -> int:
        return sum(ev.action == action for ev in self.events)

    def to_jsonl(self) -> str:
        lines = []
        for ev in self.events:
            row = ev.as_dict()
            row["branch"] = self.branch
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# resources
# ---------------------------------------------------------------------------


def graph_state(n_qubits: int, edges: Sequence[tuple[int, int]]) -> StateVector:
    """``prod_{(i,j) in edges} CZ_ij |+>^n``."""
    idx = np.arange(2**n_qubits)
    bits = (idx[:, None] >> (n_qubits - 1 - np.arange(n_qubits))) & 1
    parity = np.zeros(idx.size, dtype=int)
    for i, j in edges:
        if i == j or not (0 <= i < n_qubits and 0 <= j < n_qubits):
            raise DimensionError(f"invalid edge ({i}, {j})")
        parity ^= bits[:, i] & bits[:, j]
    amps = (1.0 - 2.0 * parity) / math.sqrt(2**n_qubits)
    return StateVector((2,) * n_qubits, amps)


def _check_parties(n_parties: int) -> int:
    if isinstance(n_parties, bool) or int(n_parties) != n_parties:
        raise ConfigError(f"party count must be an integer, got {n_parties!r}")
    n = int(n_parties)
    if n < 3 or n % 2 == 0:
        raise ConfigError(f"party count must be odd and >= 3, got {n}")
    return (n - 1) // 2


def prepare_graph_state(n_parties: int) -> StateVector:
    """Star graph state with Alice (qubit 0) joined by CZ to every other qubit."""
    _check_parties(n_parties)
    return graph_state(n_parties, [(0, k) for k in range(1, n_parties)])


def resource_edges(n_channels: int) -> list[tuple[int, int]]:
    """Edges of the resource used by :func:`run_crio` for ``N`` channels.

    Qubit 0 is Alice, ``1..N`` the senders and ``N+1..2N`` the receivers.
    For ``N = 1`` this is the three-vertex star. For ``N >= 2`` a star cannot
    carry independent channels (the sender/receiver cut has Schmidt rank 2),
    so the first sender and receiver are linked through Alice and every other
    pair hangs off them; after Alice's X measurement and a Hadamard on the
    extra senders the pairs ``(s_j, r_j)`` are Bell pairs.
    """
    n = int(n_channels)
    s = list(range(1, n + 1))
    r = list(range(n + 1, 2 * n + 1))
    edges = [(0, s[0]), (0, r[0])]
    for j in range(1, n):
        edges += [(s[0], s[j]), (r[0], s[j]), (s[j], r[j])]
    return edges


def controlled_rotation(axis: BlochAxis) -> Operator:
    """``|0><0| (x) I + |1><1| (x) sigma_n`` on (control, target)."""
    p0 = np.diag([1.0, 0.0])
    p1 = np.diag([0.0, 1.0])
    mat = np.kron(p0, I2.mat) + np.kron(p1, bloch_operator(axis).mat)
    return Operator(mat, (2, 2), tags={"unitary", "hermitian"})


def _check_qubit(psi: StateVector, what: str) -> StateVector:
    if psi.dims != (2,) or not psi.normalized:
        raise DimensionError(f"{what} must be a normalized single-qubit state")
    return psi


def attach_control(
    state: StateVector, control: int, target: StateVector, axis: BlochAxis
) -> StateVector:
    """Append the receiver's qubit ``C`` and apply ``U_cC`` from ``control``.

    ``C`` becomes the last subsystem of the returned register.
    """
    _check_qubit(target, "target state")
    full = kron(state, target)
    return apply(controlled_rotation(axis), [control, len(full.dims) - 1], full)


# ---------------------------------------------------------------------------
# three-party protocol
# ---------------------------------------------------------------------------


def stator_state(axis: BlochAxis, target: StateVector) -> StateVector:
    """``(|0>_b (x) I + |1>_b (x) sigma_n)(|+>_b (x) psi_C)``, normalized."""
    _check_qubit(target, "target state")
    amps = np.concatenate([target.amps, bloch_operator(axis).mat @ target.amps]) / math.sqrt(2)
    return StateVector((2, 2), amps)


@dataclass(frozen=True, eq=False)
class StatorCheck:
    """Comparison of a reduced (b, C) state with the stator form.

    ``branch_states[k]`` is ``sqrt(2) <k|_b`` of the state, i.e. the vector
    the stator assigns to C given ``b = k``. ``residuals`` holds
    ``(I, sigma_n)`` when those vectors equal ``psi_C`` and ``sigma_n psi_C``
    up to one common phase, and is ``None`` otherwise.
    """

    branch_states: tuple[np.ndarray, np.ndarray]
    fidelity: float
    residuals: tuple[Operator, Operator] | None

    @property
    def holds(self) -> bool:
        return self.residuals is not None


def _stator_check(state: StateVector, axis: BlochAxis, target: StateVector, tol: float) -> StatorCheck:
    expected = stator_state(axis, target)
    fid = abs(expected.inner(state)) ** 2
    vecs = state.amps.reshape(2, 2) * math.sqrt(2)
    residuals = (I2, bloch_operator(axis)) if fid >= 1.0 - tol else None
    return StatorCheck((vecs[0].copy(), vecs[1].copy()), fid, residuals)


@dataclass(frozen=True, eq=False)
class StatorBranch:
    probability: float
    state: StateVector
    transcript: ProtocolTranscript
    check: StatorCheck | None


@dataclass(frozen=True, eq=False)
class StatorReduction:
    branches: tuple[StatorBranch, ...]

    @property
    def state(self) -> StateVector:
        """The (b, C) state; identical on every branch when the protocol is correct."""
        return self.branches[0].state


def _measure_and_fix(
    state: StateVector,
    transcript: ProtocolTranscript,
    actor: str,
    qubit: int,
    basis,
    basis_name: str,
    corrections: dict[str, list[tuple[str, int, Operator, str]]],
):
    """Measure, announce the outcome, and apply the outcome-dependent corrections.

    ``corrections[outcome]`` lists ``(receiver, qubit, operator, name)``.
    Yields ``(probability, state, transcript)`` per outcome.
    """
    for br in measure_branches(state, qubit, basis):
        t, m_idx = transcript.measure(actor, qubit, basis_name, br.label)
        todo = corrections.get(br.label, [])
        receivers = sorted({c[0] for c in todo}) or ["all"]
        t, msg = t.message(actor, receivers, m_idx)
        st = br.state
        for who, q, op, name in todo:
            st = apply(op, [q], st)
            t = t.correct(who, q, name, msg)
        yield br.probability, st, t


def reduce_to_stator(
    state: StateVector,
    axis: BlochAxis | None = None,
    target: StateVector | None = None,
    transcript: ProtocolTranscript | None = None,
    *,
    tol: float = 1e-10,
) -> StatorReduction:
    """Turn ``U_cC |h3> psi_C`` on (a, b, c, C) into the (b, C) stator state.

    Alice measures X on ``a``; on ``-`` Bob applies sigma_x to ``b``.
    Charlie measures X on ``c``; on ``-`` Bob applies sigma_z to ``b``.
    All four branches are returned. When ``axis`` and ``target`` are given
    each branch also carries a :class:`StatorCheck`.
    """
    if state.dims != (2, 2, 2, 2):
        raise DimensionError(f"expected the (a, b, c, C) register, got dims {state.dims}")
    transcript = transcript or ProtocolTranscript()
    out = []
    alice = _measure_and_fix(
        state, transcript, "Alice", 0, X_BASIS, "X", {"-": [("Bob", 1, SX, "X")]}
    )
    for p_a, st_a, t_a in alice:
        charlie = _measure_and_fix(
            st_a, t_a, "Charlie", 2, X_BASIS, "X", {"-": [("Bob", 1, SZ, "Z")]}
        )
        for p_c, st_c, t_c in charlie:
            bc = _bc_state(st_c)
            check = None
            if axis is not None and target is not None:
                check = _stator_check(bc, axis, target, tol)
            out.append(StatorBranch(p_a * p_c, bc, t_c, check))
    return StatorReduction(tuple(out))


def _bc_state(state: StateVector) -> StateVector:
    # a and c are in known X eigenstates; read off the (b, C) factor
    t = state.tensor()
    best = max(((i, k) for i in range(2) for k in range(2)), key=lambda ik: np.linalg.norm(t[ik[0], :, ik[1], :]))
    vec = t[best[0], :, best[1], :].reshape(-1)
    return StateVector((2, 2), vec / np.linalg.norm(vec))


def bob_rotation(state: StateVector, alpha: float, qubit: int = 0) -> StateVector:
    """Sender's local ``exp(i alpha sigma_x)`` on ``qubit``."""
    return apply(exp_i(SX, alpha), [qubit], state)


@dataclass(frozen=True, eq=False)
class ReceiverBranch:
    probability: float
    psi: StateVector
    transcript: ProtocolTranscript
    fidelity: float | None


@dataclass(frozen=True, eq=False)
class TransmitResult:
    branches: tuple[ReceiverBranch, ...]


def bob_transmit(
    stator: StateVector,
    alpha: float,
    axis: BlochAxis,
    target: StateVector | None = None,
    transcript: ProtocolTranscript | None = None,
) -> TransmitResult:
    """Bob rotates ``b``, measures it in Z and tells Charlie; Charlie corrects on ``1``.

    ``stator`` is the (b, C) state. When ``target`` (the initial ``psi_C``)
    is given, each branch reports its fidelity to ``exp(i alpha sigma_n) psi_C``.
    """
    if stator.dims != (2, 2):
        raise DimensionError(f"expected the (b, C) register, got dims {stator.dims}")
    transcript = (transcript or ProtocolTranscript()).note("Bob", "rotate", qubit=0, alpha=float(alpha))
    rotated = bob_rotation(stator, alpha, 0)
    fix = exp_i(bloch_operator(axis), math.pi / 2)
    want = None
    if target is not None:
        want = StateVector((2,), exp_i(bloch_operator(axis), alpha).mat @ target.amps)
    out = []
    for p, st, t in _measure_and_fix(
        rotated, transcript, "Bob", 0, Z_BASIS, "Z", {"1": [("Charlie", 1, fix, "exp(i pi sigma_n / 2)")]}
    ):
        psi = _qubit_factor(st, 1)
        fid = abs(want.inner(psi)) ** 2 if want is not None else None
        out.append(ReceiverBranch(p, psi, t, fid))
    return TransmitResult(tuple(out))


def _qubit_factor(state: StateVector, qubit: int) -> StateVector:
    """Pure single-qubit factor of a product state (via its reduced matrix)."""
    rho = partial_trace(state, [qubit])
    w, v = np.linalg.eigh(rho.mat)
    return StateVector((2,), v[:, -1])


# ---------------------------------------------------------------------------
# multiparty runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunBranch:
    probability: float
    receivers: tuple[StateVector, ...]
    fidelities: tuple[float, ...]
    transcript: ProtocolTranscript


@dataclass(frozen=True, eq=False)
class CrioRun:
    n_parties: int
    qubits: tuple[PartyQubit, ...]
    branches: tuple[RunBranch, ...]

    @property
    def min_fidelity(self) -> float:
        return min(min(b.fidelities) for b in self.branches)

    def to_jsonl(self) -> str:
        return "".join(b.transcript.to_jsonl() for b in self.branches)


def _party_names(n: int) -> tuple[list[str], list[str]]:
    if n in _NAMED:
        s, r = _NAMED[n]
        return list(s), list(r)
    return [f"A{j}" for j in range(1, n + 1)], [f"A{n + j}" for j in range(1, n + 1)]


def run_crio(
    n_parties: int,
    alphas: Sequence[float],
    axes: Sequence[BlochAxis],
    targets: Sequence[StateVector],
    *,
    alice_measures: bool = True,
) -> CrioRun:
    """Run the full protocol for ``N = (n_parties - 1) / 2`` channels.

    Sender ``j`` transmits ``alphas[j]``; receiver ``j`` holds ``targets[j]``
    and the secret axis ``axes[j]``. Returns every measurement branch with the
    receivers' final states and their fidelities to
    ``exp(i alpha_j sigma_{n_j}) psi_j``.

    With ``alice_measures=False`` Alice withholds her measurement; nobody can
    correct, the cascade stops after the preparation, and the fidelities
    describe the receivers' untouched reduced states.
    """
    n = _check_parties(n_parties)
    if not (len(alphas) == len(axes) == len(targets) == n):
        raise ConfigError(
            f"{n_parties} parties need {n} (alpha, axis, target) triples, "
            f"got {len(alphas)}, {len(axes)}, {len(targets)}"
        )
    for psi in targets:
        _check_qubit(psi, "target state")
    senders, receivers = _party_names(n)
    s_q = list(range(1, n + 1))
    r_q = list(range(n + 1, 2 * n + 1))
    c_q = list(range(2 * n + 1, 3 * n + 1))
    qubits = (
        [PartyQubit("Alice", 0, "control")]
        + [PartyQubit(senders[j], s_q[j], "carrier") for j in range(n)]
        + [PartyQubit(receivers[j], r_q[j], "carrier") for j in range(n)]
        + [PartyQubit(receivers[j], c_q[j], "target") for j in range(n)]
    )

    state = graph_state(2 * n + 1, resource_edges(n))
    t = ProtocolTranscript().note("Alice", "prepare", qubits=2 * n + 1, edges=len(resource_edges(n)))
    for j in range(n):
        state = attach_control(state, r_q[j], targets[j], axes[j])
        t = t.note(receivers[j], "attach", control=r_q[j], target=c_q[j])
    wanted = [
        StateVector((2,), exp_i(bloch_operator(axes[j]), alphas[j]).mat @ targets[j].amps) for j in range(n)
    ]

    def finish(p, st, tr):
        psis, fids = [], []
        for j in range(n):
            rho = partial_trace(st, [c_q[j]])
            fids.append(state_fidelity(rho, wanted[j]))
            w, v = np.linalg.eigh(rho.mat)
            psis.append(StateVector((2,), v[:, -1]))
        return RunBranch(p, tuple(psis), tuple(fids), tr)

    if not alice_measures:
        return CrioRun(int(n_parties), tuple(qubits), (finish(1.0, state, t),))

    leaves: list[RunBranch] = []
    fix_a = [(senders[0], s_q[0], SX, "X")] + [(senders[j], s_q[j], SZ, "Z") for j in range(1, n)]
    for p_a, st, tr in _measure_and_fix(state, t, "Alice", 0, X_BASIS, "X", {"-": fix_a}):
        for j in range(1, n):
            st = apply(HADAMARD, [s_q[j]], st)
            tr = tr.note(senders[j], "local", qubit=s_q[j], operator="H")
        _receiver_stage(0, n, p_a, st, tr, senders, receivers, s_q, r_q, c_q, alphas, axes, finish, leaves)
    return CrioRun(int(n_parties), tuple(qubits), tuple(leaves))


def _receiver_stage(j, n, p, st, tr, senders, receivers, s_q, r_q, c_q, alphas, axes, finish, leaves):
    if j == n:
        _sender_stage(0, n, p, st, tr, senders, receivers, s_q, c_q, alphas, axes, finish, leaves)
        return
    fix = {"-": [(senders[j], s_q[j], SZ, "Z")]}
    for p_r, st_r, tr_r in _measure_and_fix(st, tr, receivers[j], r_q[j], X_BASIS, "X", fix):
        _receiver_stage(j + 1, n, p * p_r, st_r, tr_r, senders, receivers, s_q, r_q, c_q, alphas, axes, finish, leaves)


def _sender_stage(j, n, p, st, tr, senders, receivers, s_q, c_q, alphas, axes, finish, leaves):
    if j == n:
        leaves.append(finish(p, st, tr))
        return
    st = bob_rotation(st, alphas[j], s_q[j])
    tr = tr.note(senders[j], "rotate", qubit=s_q[j], alpha=float(alphas[j]))
    fix = {"1": [(receivers[j], c_q[j], exp_i(bloch_operator(axes[j]), math.pi / 2), "exp(i pi sigma_n / 2)")]}
    for p_s, st_s, tr_s in _measure_and_fix(st, tr, senders[j], s_q[j], Z_BASIS, "Z", fix):
        _sender_stage(j + 1, n, p * p_s, st_s, tr_s, senders, receivers, s_q, c_q, alphas, axes, finish, leaves)
