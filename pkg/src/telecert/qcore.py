"""Dense linear algebra for two-qubit certification primitives.

States, dichotomic observables, two-setting measurement models with
untrusted projectors, Born-rule sampling, the ancilla-swap extraction
channel, and the standard teleportation circuit.  Everything is complex
float64; Hermiticity is restored by explicit symmetrization after
constructive operations, with a deviation check before symmetrizing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Observable",
    "TwoQubitState",
    "MeasurementModel",
    "Assemblage",
    "OBS_X",
    "OBS_Z",
    "bell_state",
    "bell_vector",
    "rotated_bell_vector",
    "werner_state",
    "rotated_werner_state",
    "fidelity_to_pure",
    "correlation",
    "steering_value",
    "chsh_value",
    "chsh_optimal_settings",
    "sample_round",
    "sample_rounds",
    "swap_isometry_extract",
    "teleport_average_fidelity",
    "haar_random_vector",
    "random_projective_model",
    "ideal_model",
    "purify_with_bob_ancilla",
    "state_to_json",
    "state_from_json",
    "model_to_json",
    "model_from_json",
]

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

# Pre-symmetrization deviation cap for constructive operations.
HERMITICITY_TOL = 1e-10


def _hermitize(matrix: np.ndarray, tol: float = HERMITICITY_TOL) -> np.ndarray:
    """Symmetrize (M + M†)/2, rejecting inputs that deviate beyond ``tol``."""
    matrix = np.asarray(matrix, dtype=complex)
    deviation = np.max(np.abs(matrix - matrix.conj().T))
    if deviation > tol:
        raise ValueError(f"matrix deviates from Hermitian by {deviation:.3e}")
    return 0.5 * (matrix + matrix.conj().T)


@dataclass
class Observable:
    """A binary-outcome observable: 2x2 Hermitian with M^2 = identity."""

    matrix: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        self.matrix = _hermitize(self.matrix, tol=1e-12)
        if self.matrix.shape != (2, 2):
            raise ValueError("observable must be 2x2")
        if np.max(np.abs(self.matrix @ self.matrix - ID2)) > 1e-12:
            raise ValueError("observable must square to the identity")

    def projector(self, outcome: int) -> np.ndarray:
        """Eigenprojector onto outcome +1 (outcome=0) or -1 (outcome=1)."""
        sign = 1.0 if outcome == 0 else -1.0
        return 0.5 * (ID2 + sign * self.matrix)


OBS_X = Observable(SIGMA_X, "X")
OBS_Z = Observable(SIGMA_Z, "Z")


@dataclass
class TwoQubitState:
    """A 4x4 density matrix: Hermitian, unit trace, positive semidefinite."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = _hermitize(self.matrix)
        if self.matrix.shape != (4, 4):
            raise ValueError("two-qubit state must be 4x4")
        trace = np.trace(self.matrix).real
        if abs(trace - 1.0) > 1e-12:
            raise ValueError(f"trace {trace!r} is not 1")
        eigs = np.linalg.eigvalsh(self.matrix)
        if eigs.min() < -1e-10:
            raise ValueError(f"negative eigenvalue {eigs.min():.3e}")

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def bell_vector() -> np.ndarray:
    """The maximally entangled vector (|00> + |11>)/sqrt(2)."""
    v = np.zeros(4, dtype=complex)
    v[0] = v[3] = 1.0 / np.sqrt(2.0)
    return v


def bell_state() -> TwoQubitState:
    v = bell_vector()
    return TwoQubitState(np.outer(v, v.conj()))


def rotated_bell_vector() -> np.ndarray:
    """Bell state rotated by local unitaries so that it maximally violates
    CHSH when both parties measure sigma_Z / sigma_X."""
    c, s = np.cos(np.pi / 8.0), np.sin(np.pi / 8.0)
    return np.array([c, s, s, -c], dtype=complex) / np.sqrt(2.0)


def werner_state(v: float) -> TwoQubitState:
    """Mixture v |bell><bell| + (1 - v) I/4 with visibility v in [0, 1]."""
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"visibility {v!r} outside [0, 1]")
    b = bell_vector()
    return TwoQubitState(v * np.outer(b, b.conj()) + (1.0 - v) * np.eye(4) / 4.0)


def rotated_werner_state(v: float) -> TwoQubitState:
    """Werner-type mixture around the rotated Bell state (CHSH-adapted)."""
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"visibility {v!r} outside [0, 1]")
    b = rotated_bell_vector()
    return TwoQubitState(v * np.outer(b, b.conj()) + (1.0 - v) * np.eye(4) / 4.0)


def fidelity_to_pure(state: TwoQubitState, phi: np.ndarray) -> float:
    """<phi| rho |phi>, clamped to [0, 1] after an imaginary-part check."""
    phi = np.asarray(phi, dtype=complex).reshape(-1)
    value = np.vdot(phi, state.matrix @ phi)
    if abs(value.imag) > 1e-12:
        raise ValueError(f"fidelity has imaginary part {value.imag:.3e}")
    return float(min(1.0, max(0.0, value.real)))


def correlation(state: TwoQubitState, a: Observable, b: Observable) -> float:
    """tr((a x b) rho); the imaginary part must vanish to 1e-12."""
    value = np.trace(np.kron(a.matrix, b.matrix) @ state.matrix)
    if abs(value.imag) > 1e-12:
        raise ValueError(f"correlation has imaginary part {value.imag:.3e}")
    return float(value.real)


def steering_value(state: TwoQubitState) -> float:
    """<X x X> + <Z x Z>, the two-setting steering functional (max 2)."""
    return correlation(state, OBS_X, OBS_X) + correlation(state, OBS_Z, OBS_Z)


def chsh_value(state: TwoQubitState, settings) -> float:
    """<A0 B0> + <A1 B0> + <A0 B1> - <A1 B1> for settings (A0, A1, B0, B1)."""
    a0, a1, b0, b1 = settings
    return (
        correlation(state, a0, b0)
        + correlation(state, a1, b0)
        + correlation(state, a0, b1)
        - correlation(state, a1, b1)
    )


def chsh_optimal_settings() -> tuple:
    """Settings reaching 2*sqrt(2) on the standard Bell state."""
    a0, a1 = OBS_Z, OBS_X
    b0 = Observable((SIGMA_Z + SIGMA_X) / np.sqrt(2.0), "custom")
    b1 = Observable((SIGMA_Z - SIGMA_X) / np.sqrt(2.0), "custom")
    return a0, a1, b0, b1


# ---------------------------------------------------------------------------
# Sampling


def _joint_probabilities(state: TwoQubitState, a: Observable, b: Observable) -> np.ndarray:
    """Born-rule probabilities for outcome pairs (+,+), (+,-), (-,+), (-,-)."""
    probs = np.empty(4)
    for i, sa in enumerate((0, 1)):
        for j, sb in enumerate((0, 1)):
            op = np.kron(a.projector(sa), b.projector(sb))
            probs[2 * i + j] = np.trace(op @ state.matrix).real
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def sample_rounds(state, a, b, n, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw n independent outcome pairs (+-1, +-1) from the joint Born rule."""
    probs = _joint_probabilities(state, a, b)
    cells = rng.choice(4, size=n, p=probs)
    a_out = 1 - 2 * (cells // 2)
    b_out = 1 - 2 * (cells % 2)
    return a_out.astype(np.int64), b_out.astype(np.int64)


def sample_round(state, a, b, rng) -> tuple[int, int]:
    a_out, b_out = sample_rounds(state, a, b, 1, rng)
    return int(a_out[0]), int(b_out[0])


# ---------------------------------------------------------------------------
# Measurement models and assemblages


@dataclass
class MeasurementModel:
    """Two-setting, two-outcome projective model for the untrusted side(s).

    ``bob_projectors[y][b]`` is the projector for Bob's setting y and
    outcome b; setting 0 plays the role of the Z-type measurement and
    setting 1 the X-type one (observable = 2 E_{0|y} - identity).  In the
    fully untrusted configuration Alice gets her own family
    ``alice_projectors[x][a]``.
    """

    bob_dim: int
    bob_projectors: np.ndarray
    alice_dim: int | None = None
    alice_projectors: np.ndarray | None = None

    def __post_init__(self):
        self.bob_projectors = np.asarray(self.bob_projectors, dtype=complex)
        _check_projector_family(self.bob_projectors, self.bob_dim)
        if (self.alice_projectors is None) != (self.alice_dim is None):
            raise ValueError("alice_dim and alice_projectors must come together")
        if self.alice_projectors is not None:
            self.alice_projectors = np.asarray(self.alice_projectors, dtype=complex)
            _check_projector_family(self.alice_projectors, self.alice_dim)

    @property
    def device_independent(self) -> bool:
        return self.alice_projectors is not None

    def bob_observable(self, setting: int) -> np.ndarray:
        return 2.0 * self.bob_projectors[setting][0] - np.eye(self.bob_dim)

    def alice_observable(self, setting: int) -> np.ndarray:
        if self.alice_projectors is None:
            raise ValueError("model has no untrusted Alice side")
        return 2.0 * self.alice_projectors[setting][0] - np.eye(self.alice_dim)

    def extended(self, aux_dim: int) -> "MeasurementModel":
        """Act trivially on an extra ancilla of dimension ``aux_dim`` on Bob."""
        eye = np.eye(aux_dim)
        proj = np.array(
            [[np.kron(self.bob_projectors[y][b], eye) for b in (0, 1)] for y in (0, 1)]
        )
        return MeasurementModel(
            self.bob_dim * aux_dim, proj, self.alice_dim, self.alice_projectors
        )


def _check_projector_family(projectors: np.ndarray, dim: int) -> None:
    if projectors.shape != (2, 2, dim, dim):
        raise ValueError(f"projector family must have shape (2, 2, {dim}, {dim})")
    eye = np.eye(dim)
    for y in (0, 1):
        total = np.zeros((dim, dim), dtype=complex)
        for b in (0, 1):
            e = projectors[y][b]
            if np.max(np.abs(e - e.conj().T)) > 1e-10:
                raise ValueError("projector is not Hermitian")
            if np.max(np.abs(e @ e - e)) > 1e-10:
                raise ValueError("projector is not idempotent")
            total += e
        if np.max(np.abs(total - eye)) > 1e-10:
            raise ValueError("projectors do not sum to identity")


def ideal_model(bob_dim: int = 2, device_independent: bool = False) -> MeasurementModel:
    """Exact Pauli model: setting 0 measures sigma_Z, setting 1 sigma_X."""
    if bob_dim != 2:
        raise ValueError("ideal model is defined on a qubit; extend afterwards")
    plus = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)
    minus = np.array([1.0, -1.0], dtype=complex) / np.sqrt(2.0)
    proj = np.array(
        [
            [np.diag([1.0, 0.0]).astype(complex), np.diag([0.0, 1.0]).astype(complex)],
            [np.outer(plus, plus.conj()), np.outer(minus, minus.conj())],
        ]
    )
    if device_independent:
        return MeasurementModel(2, proj, 2, proj.copy())
    return MeasurementModel(2, proj)


def random_projective_model(bob_dim, rng, alice_dim=None) -> MeasurementModel:
    """Haar-random rank-r two-outcome projective model on each setting."""

    def family(dim):
        proj = np.empty((2, 2, dim, dim), dtype=complex)
        for y in (0, 1):
            u = _haar_unitary(dim, rng)
            rank = int(rng.integers(1, dim))
            d = np.zeros(dim)
            d[:rank] = 1.0
            e = u @ np.diag(d) @ u.conj().T
            proj[y][0] = _hermitize(e)
            proj[y][1] = _hermitize(np.eye(dim) - e)
        return proj

    if alice_dim is None:
        return MeasurementModel(bob_dim, family(bob_dim))
    return MeasurementModel(bob_dim, family(bob_dim), alice_dim, family(alice_dim))


def _haar_unitary(dim: int, rng) -> np.ndarray:
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def haar_random_vector(dim: int, rng) -> np.ndarray:
    """Haar-random pure state via Gaussian normalization."""
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return z / np.linalg.norm(z)


@dataclass
class Assemblage:
    """Sub-normalized conditional states tau_{b|y} on the trusted side."""

    elements: dict = field(default_factory=dict)

    @classmethod
    def from_state_and_model(cls, state, model: MeasurementModel) -> "Assemblage":
        rho = _as_density(state)
        d_a = rho.shape[0] // model.bob_dim
        elements = {}
        for y in (0, 1):
            for b in (0, 1):
                elements[(b, y)] = partial_trace_bob(
                    rho, d_a, model.bob_dim, model.bob_projectors[y][b]
                )
        return cls(elements)

    def reduced_state(self, y: int = 0) -> np.ndarray:
        return self.elements[(0, y)] + self.elements[(1, y)]

    def check(self, tol: float = 1e-10) -> None:
        """No-signalling across settings and unit total trace."""
        r0, r1 = self.reduced_state(0), self.reduced_state(1)
        if np.max(np.abs(r0 - r1)) > tol:
            raise ValueError("assemblage signals between settings")
        if abs(np.trace(r0).real - 1.0) > tol:
            raise ValueError("assemblage total trace is not 1")


def partial_trace_bob(rho: np.ndarray, d_a: int, d_b: int, op_b: np.ndarray) -> np.ndarray:
    """tr_B[(1 x op_b) rho] as a d_a x d_a matrix."""
    r4 = rho.reshape(d_a, d_b, d_a, d_b)
    return np.einsum("bc,acdb->ad", op_b, r4)


def _as_density(state) -> np.ndarray:
    if isinstance(state, TwoQubitState):
        return state.matrix
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return np.outer(arr, arr.conj())
    return arr


# ---------------------------------------------------------------------------
# Ancilla-swap extraction


def _extraction_kraus(observable_z: np.ndarray, observable_x: np.ndarray) -> list[np.ndarray]:
    """Kraus pair of the swap extraction channel built from the device's
    setting-0 (Z-type) and setting-1 (X-type) observables.

    The ancilla circuit (controlled-Z, Hadamard, controlled-X on the
    device operators) reduces to K0 = E, K1 = X (1 - E) with
    E = (1 + Z)/2; for ideal Paulis it is a literal swap.
    """
    dim = observable_z.shape[0]
    e = 0.5 * (np.eye(dim) + observable_z)
    return [e, observable_x @ (np.eye(dim) - e)]


def swap_isometry_extract(state, model: MeasurementModel, side: str = "bob") -> TwoQubitState:
    """Apply the swap extraction to the untrusted side(s) and return the
    two-qubit marginal on the ancilla register(s).

    side="bob" extracts Bob only (trusted Alice remains the first qubit);
    side="both" extracts both parties onto fresh ancillas.
    """
    rho = _as_density(state)
    if side == "bob":
        d_b = model.bob_dim
        d_a = rho.shape[0] // d_b
        if d_a * d_b != rho.shape[0] or d_a != 2:
            raise ValueError("one-sided extraction expects a qubit on the trusted side")
        kraus = _extraction_kraus(model.bob_observable(0), model.bob_observable(1))
        out = np.zeros((4, 4), dtype=complex)
        for i in (0, 1):
            for j in (0, 1):
                # Output index is 2a + ancilla, so Alice stays the leading qubit.
                block = partial_trace_bob(rho, d_a, d_b, kraus[j].conj().T @ kraus[i])
                out[np.ix_((i, 2 + i), (j, 2 + j))] = block
        return TwoQubitState(out)
    if side == "both":
        if not model.device_independent:
            raise ValueError("two-sided extraction needs an untrusted Alice model")
        d_a, d_b = model.alice_dim, model.bob_dim
        if d_a * d_b != rho.shape[0]:
            raise ValueError("state dimension does not match the model")
        ka = _extraction_kraus(model.alice_observable(0), model.alice_observable(1))
        kb = _extraction_kraus(model.bob_observable(0), model.bob_observable(1))
        out = np.empty((4, 4), dtype=complex)
        r4 = rho.reshape(d_a, d_b, d_a, d_b)
        for i in (0, 1):
            for j in (0, 1):
                for k in (0, 1):
                    for l in (0, 1):
                        op_a = ka[k].conj().T @ ka[i]
                        op_b = kb[l].conj().T @ kb[j]
                        out[2 * i + j, 2 * k + l] = np.einsum(
                            "ac,bd,abcd->", op_a.T, op_b.T, r4
                        )
        return TwoQubitState(out)
    raise ValueError(f"unknown side {side!r}")


def purify_with_bob_ancilla(state: TwoQubitState) -> tuple[np.ndarray, int]:
    """Purify a two-qubit state by enlarging Bob with a 4-dim ancilla.

    Returns the pure vector on A x (B x ancilla) together with the new
    Bob dimension (8); pair it with ``ideal_model().extended(4)``.
    """
    eigs, vecs = np.linalg.eigh(state.matrix)
    eigs = np.clip(eigs, 0.0, None)
    amp = np.zeros((2, 2, 4), dtype=complex)
    for k in range(4):
        amp[:, :, k] = np.sqrt(eigs[k]) * vecs[:, k].reshape(2, 2)
    vec = amp.reshape(2, 8).reshape(-1)
    return vec / np.linalg.norm(vec), 8


# ---------------------------------------------------------------------------
# Teleportation

_BELL_BASIS = None


def _bell_basis() -> np.ndarray:
    """Columns: Phi+, Psi+, Phi-, Psi- with Pauli corrections I, X, Z, XZ."""
    global _BELL_BASIS
    if _BELL_BASIS is None:
        s = 1.0 / np.sqrt(2.0)
        basis = np.zeros((4, 4), dtype=complex)
        basis[:, 0] = [s, 0, 0, s]
        basis[:, 1] = [0, s, s, 0]
        basis[:, 2] = [s, 0, 0, -s]
        basis[:, 3] = [0, s, -s, 0]
        _BELL_BASIS = basis
    return _BELL_BASIS


_CORRECTIONS = None


def _corrections() -> list[np.ndarray]:
    global _CORRECTIONS
    if _CORRECTIONS is None:
        _CORRECTIONS = [ID2, SIGMA_X, SIGMA_Z, SIGMA_X @ SIGMA_Z]
    return _CORRECTIONS


def teleport_average_fidelity(resource: TwoQubitState, n_inputs: int, rng) -> float:
    """Mean teleportation fidelity over Haar-random pure input qubits."""
    if n_inputs < 1:
        raise ValueError("n_inputs must be at least 1")
    basis = _bell_basis()
    corrections = _corrections()
    rho = resource.matrix.reshape(2, 2, 2, 2)  # indices (a, b, a', b')
    total = 0.0
    for _ in range(n_inputs):
        phi = haar_random_vector(2, rng)
        fid = 0.0
        for k in range(4):
            beta = basis[:, k].reshape(2, 2)  # (input, alice-half)
            # Unnormalized Bob state after projecting (input x alice) on beta_k.
            amp_in = np.einsum("c,ca->a", phi, beta.conj())  # contract input leg
            bob = np.einsum("a,e,abed->bd", amp_in, amp_in.conj(), rho)
            corrected = corrections[k] @ bob @ corrections[k].conj().T
            fid += np.real(np.vdot(phi, corrected @ phi))
        total += fid
    return float(total / n_inputs)


# ---------------------------------------------------------------------------
# Serialization ("qcore/1")


def _matrix_to_json(matrix: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(matrix, dtype=complex)]


def _matrix_from_json(data) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in data])


def state_to_json(state: TwoQubitState) -> dict:
    return {"schema": "qcore/1", "kind": "two_qubit_state", "matrix": _matrix_to_json(state.matrix)}


def state_from_json(doc: dict) -> TwoQubitState:
    if doc.get("schema") != "qcore/1":
        raise ValueError(f"unexpected schema {doc.get('schema')!r}")
    return TwoQubitState(_matrix_from_json(doc["matrix"]))


def model_to_json(model: MeasurementModel) -> dict:
    doc = {
        "schema": "qcore/1",
        "kind": "measurement_model",
        "bob_dim": model.bob_dim,
        "bob_projectors": [[_matrix_to_json(model.bob_projectors[y][b]) for b in (0, 1)] for y in (0, 1)],
    }
    if model.device_independent:
        doc["alice_dim"] = model.alice_dim
        doc["alice_projectors"] = [
            [_matrix_to_json(model.alice_projectors[x][a]) for a in (0, 1)] for x in (0, 1)
        ]
    return doc


def model_from_json(doc: dict) -> MeasurementModel:
    if doc.get("schema") != "qcore/1":
        raise ValueError(f"unexpected schema {doc.get('schema')!r}")
    bob = np.array([[_matrix_from_json(doc["bob_projectors"][y][b]) for b in (0, 1)] for y in (0, 1)])
    if "alice_projectors" in doc:
        alice = np.array(
            [[_matrix_from_json(doc["alice_projectors"][x][a]) for a in (0, 1)] for x in (0, 1)]
        )
        return MeasurementModel(doc["bob_dim"], bob, doc["alice_dim"], alice)
    return MeasurementModel(doc["bob_dim"], bob)


def dump_json(doc: dict, path) -> None:
    with open(path, "w") as handle:
        json.dump(doc, handle, sort_keys=True, indent=1)
        handle.write("\n")


def load_json(path) -> dict:
    with open(path) as handle:
        return json.load(handle)
