"""Operator-word algebra and moment-matrix construction.

Rows of the moment matrix are canonical products of the untrusted
operators: Bob's outcome-0 projectors in the one-sided setting, and
dichotomic Z/X observables per party in the fully untrusted setting.
The fidelity functionals of the swap extraction and the inequality
functionals are derived symbolically from the same circuit algebra used
by :mod:`telecert.qcore`, so the two routes can be cross-checked
numerically entry by entry.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import qcore

SETTING_1SDI = "1sdi"
SETTING_DI = "di"

OBJECTIVES = {
    SETTING_1SDI: ("state", "ZB", "XB"),
    SETTING_DI: ("state", "ZAZB", "XAXB", "ZAXB"),
}

INEQUALITIES = ("steering", "chsh")

# Symbol table: projector alphabet for the one-sided setting (outcome-0
# projectors of Bob's two settings), observable alphabet for both parties
# in the fully untrusted setting.
_PROJ_SYMBOLS = {"E00": 0, "E01": 1}
_OBS_SYMBOLS = {"Z": 0, "X": 1}


class MissingWordError(ValueError):
    """A functional references a moment absent from the word set."""


def _reduce_projector(seq) -> tuple:
    out = []
    for s in seq:
        if out and out[-1] == s:
            continue  # idempotence: EE = E
        out.append(s)
    return tuple(out)


def _reduce_observable(seq) -> tuple:
    out = []
    for s in seq:
        if out and out[-1] == s:
            out.pop()  # involution: ZZ = XX = identity
        else:
            out.append(s)
    return tuple(out)


@dataclass(frozen=True)
class OperatorWord:
    """Canonical-form product of untrusted operators, tagged by party."""

    setting: str
    alice: tuple = ()
    bob: tuple = ()

    def __post_init__(self):
        if self.setting == SETTING_1SDI:
            if self.alice:
                raise ValueError("one-sided words carry Bob symbols only")
            object.__setattr__(self, "bob", _reduce_projector(self.bob))
        elif self.setting == SETTING_DI:
            object.__setattr__(self, "alice", _reduce_observable(self.alice))
            object.__setattr__(self, "bob", _reduce_observable(self.bob))
        else:
            raise ValueError(f"unknown setting {self.setting!r}")

    @classmethod
    def from_symbols(cls, setting: str, symbols) -> "OperatorWord":
        """Build a word from party-tagged symbols such as ("B", "E00") or
        ("A", "Z"); cross-party commutation puts Alice before Bob."""
        alice, bob = [], []
        for party, name in symbols:
            if setting == SETTING_1SDI:
                if party != "B" or name not in _PROJ_SYMBOLS:
                    raise ValueError(f"symbol ({party}, {name}) not in the projector alphabet")
                bob.append(_PROJ_SYMBOLS[name])
            else:
                if name not in _OBS_SYMBOLS:
                    raise ValueError(f"symbol ({party}, {name}) not in the observable alphabet")
                (alice if party == "A" else bob).append(_OBS_SYMBOLS[name])
        return cls(setting, tuple(alice), tuple(bob))

    @property
    def key(self) -> tuple:
        return (self.alice, self.bob)

    @property
    def length(self) -> int:
        return len(self.alice) + len(self.bob)

    def adjoint(self) -> "OperatorWord":
        return OperatorWord(self.setting, self.alice[::-1], self.bob[::-1])

    def symbols(self) -> list:
        names_p = {v: k for k, v in _PROJ_SYMBOLS.items()}
        names_o = {v: k for k, v in _OBS_SYMBOLS.items()}
        if self.setting == SETTING_1SDI:
            return [("B", names_p[s]) for s in self.bob]
        return [("A", names_o[s]) for s in self.alice] + [("B", names_o[s]) for s in self.bob]


def canonicalize(word: OperatorWord) -> OperatorWord:
    """Return the canonical form (idempotent: the constructor already
    reduces, so this is a fixpoint check by construction)."""
    return OperatorWord(word.setting, word.alice, word.bob)


def _alternating(max_length: int) -> list[tuple]:
    words = [()]
    for length in range(1, max_length + 1):
        for start in (0, 1):
            words.append(tuple((start + k) % 2 for k in range(length)))
    return words


def generate_words(setting: str, max_local_length: int) -> list[OperatorWord]:
    """All distinct canonical words up to the local length cap, in graded
    lexicographic order."""
    if max_local_length < 1:
        raise ValueError("max_local_length must be at least 1")
    locals_ = _alternating(max_local_length)
    if setting == SETTING_1SDI:
        words = [OperatorWord(setting, (), b) for b in locals_]
    elif setting == SETTING_DI:
        words = [OperatorWord(setting, a, b) for a in locals_ for b in locals_]
    else:
        raise ValueError(f"unknown setting {setting!r}")
    return sorted(words, key=lambda w: (w.length, w.alice, w.bob))


# ---------------------------------------------------------------------------
# Word polynomials: sparse real-linear combinations of canonical words.


def _poly_mul(p: dict, q: dict, reduce) -> dict:
    out: dict = {}
    for wp, cp in p.items():
        for wq, cq in q.items():
            w = reduce(wp + wq)
            out[w] = out.get(w, 0.0) + cp * cq
    return {w: c for w, c in out.items() if abs(c) > 1e-15}


def _poly_adjoint(p: dict) -> dict:
    return {w[::-1]: c for w, c in p.items()}


def _kraus_polys_projector() -> list[dict]:
    # K0 = E, K1 = X (1 - E) with E the setting-0 projector and
    # X = 2 E' - 1 the setting-1 observable.
    e0 = {(0,): 1.0}
    x = {(1,): 2.0, (): -1.0}
    k1 = _poly_mul(x, {(): 1.0, (0,): -1.0}, _reduce_projector)
    return [e0, k1]


def _kraus_polys_observable() -> list[dict]:
    # Same channel written over Z/X observable words: E = (1 + Z)/2.
    k0 = {(): 0.5, (0,): 0.5}
    k1 = _poly_mul({(1,): 1.0}, {(): 0.5, (0,): -0.5}, _reduce_observable)
    return [k0, k1]


_OBS_MATRICES = {0: qcore.SIGMA_Z, 1: qcore.SIGMA_X}


def steering_fidelity_functional(objective: str) -> dict:
    """Extraction-fidelity functional for the one-sided setting.

    Returns {bob_word: 2x2 coefficient matrix C}; the value on an
    assemblage is sum_w sum_ij C_w[i, j] tau_w[i, j].
    """
    if objective not in OBJECTIVES[SETTING_1SDI]:
        raise ValueError(f"unknown one-sided objective {objective!r}")
    kraus = _kraus_polys_projector()
    sandwich = None
    if objective == "ZB":
        sandwich = {(0,): 2.0, (): -1.0}
    elif objective == "XB":
        sandwich = {(1,): 2.0, (): -1.0}
    coeffs: dict = {}
    for i in (0, 1):
        for j in (0, 1):
            poly = _poly_mul(_poly_adjoint(kraus[j]), kraus[i], _reduce_projector)
            if sandwich is not None:
                poly = _poly_mul(_poly_mul(sandwich, poly, _reduce_projector), sandwich, _reduce_projector)
            for word, coef in poly.items():
                cw = coeffs.setdefault(word, np.zeros((2, 2)))
                if objective == "XB":
                    # Trusted conjugation by sigma_X permutes basis labels.
                    cw[1 - i, 1 - j] += 0.5 * coef
                elif objective == "ZB":
                    # Trusted conjugation by sigma_Z flips off-diagonal signs.
                    cw[i, j] += 0.5 * coef * (-1.0) ** (i + j)
                else:
                    cw[i, j] += 0.5 * coef
    return {w: c for w, c in coeffs.items() if np.max(np.abs(c)) > 1e-15}


def di_fidelity_functional(objective: str) -> dict:
    """Extraction-fidelity functional for the fully untrusted setting.

    Returns {(alice_word, bob_word): coefficient}; the value on a model
    is sum coef * <A_word x B_word>.
    """
    if objective not in OBJECTIVES[SETTING_DI]:
        raise ValueError(f"unknown device-independent objective {objective!r}")
    kraus = _kraus_polys_observable()
    target = qcore.rotated_bell_vector().real
    sand_a = sand_b = None
    if objective != "state":
        sand_a = {(0,) if objective[0] == "Z" else (1,): 1.0}
        sand_b = {(0,) if objective[2] == "Z" else (1,): 1.0}
        pauli_a = _OBS_MATRICES[0 if objective[0] == "Z" else 1]
        pauli_b = _OBS_MATRICES[0 if objective[2] == "Z" else 1]
        target = (np.kron(pauli_a, pauli_b) @ target).real
    coeffs: dict = {}
    for i, j, k, l in itertools.product((0, 1), repeat=4):
        poly_a = _poly_mul(_poly_adjoint(kraus[k]), kraus[i], _reduce_observable)
        poly_b = _poly_mul(_poly_adjoint(kraus[l]), kraus[j], _reduce_observable)
        if sand_a is not None:
            poly_a = _poly_mul(_poly_mul(sand_a, poly_a, _reduce_observable), sand_a, _reduce_observable)
            poly_b = _poly_mul(_poly_mul(sand_b, poly_b, _reduce_observable), sand_b, _reduce_observable)
        weight = target[2 * i + j] * target[2 * k + l]
        if abs(weight) < 1e-15:
            continue
        for wa, ca in poly_a.items():
            for wb, cb in poly_b.items():
                key = (wa, wb)
                coeffs[key] = coeffs.get(key, 0.0) + weight * ca * cb
    return {k: c for k, c in coeffs.items() if abs(c) > 1e-15}


def steering_inequality_functional() -> dict:
    """<sigma_Z x Z_B> + <sigma_X x X_B> in assemblage coefficients."""
    return {
        (): np.array([[-1.0, -1.0], [-1.0, 1.0]]),
        (0,): np.array([[2.0, 0.0], [0.0, -2.0]]),
        (1,): np.array([[0.0, 2.0], [2.0, 0.0]]),
    }


def inequality_functional(setting: str, inequality: str) -> dict:
    if inequality not in INEQUALITIES:
        raise ValueError(f"unknown inequality {inequality!r}")
    if setting == SETTING_1SDI:
        base = steering_inequality_functional()
        if inequality == "steering":
            return base
        # CHSH as a steering witness: same correlators scaled by sqrt(2).
        return {w: np.sqrt(2.0) * c for w, c in base.items()}
    if inequality != "chsh":
        raise ValueError("the fully untrusted setting uses the CHSH inequality")
    return {
        ((0,), (0,)): 1.0,
        ((0,), (1,)): 1.0,
        ((1,), (0,)): 1.0,
        ((1,), (1,)): -1.0,
    }


def fidelity_functional(setting: str, objective: str) -> dict:
    if setting == SETTING_1SDI:
        return steering_fidelity_functional(objective)
    return di_fidelity_functional(objective)


def max_violation(setting: str, inequality: str) -> float:
    if inequality == "steering":
        if setting == SETTING_DI:
            raise ValueError("steering needs a trusted side")
        return 2.0
    return 2.0 * np.sqrt(2.0)


# ---------------------------------------------------------------------------
# Moment evaluation against explicit models (the substitution oracle).


def _local_operator(setting: str, party: str, word: tuple, model: qcore.MeasurementModel) -> np.ndarray:
    if setting == SETTING_1SDI:
        dim = model.bob_dim
        op = np.eye(dim, dtype=complex)
        for s in word:
            op = op @ model.bob_projectors[s][0]
        return op
    dim = model.alice_dim if party == "A" else model.bob_dim
    op = np.eye(dim, dtype=complex)
    for s in word:
        obs = model.alice_observable(s) if party == "A" else model.bob_observable(s)
        op = op @ obs
    return op


def evaluate_moments(setting: str, state, model: qcore.MeasurementModel, keys) -> dict:
    """Moments for the given canonical word keys on an explicit model.

    One-sided keys map to 2x2 trusted-side blocks, fully untrusted keys
    to complex scalars.
    """
    rho = qcore._as_density(state)
    out = {}
    if setting == SETTING_1SDI:
        d_b = model.bob_dim
        d_a, rem = divmod(rho.shape[0], d_b)
        if rem or d_a != 2:
            raise ValueError(
                f"state dimension {rho.shape[0]} does not match a qubit x {d_b} split"
            )
        cache: dict = {}
        for key in keys:
            _, bob = key
            if bob not in cache:
                cache[bob] = _local_operator(setting, "B", bob, model)
            out[key] = qcore.partial_trace_bob(rho, d_a, d_b, cache[bob])
        return out
    d_a, d_b = model.alice_dim, model.bob_dim
    r4 = rho.reshape(d_a, d_b, d_a, d_b)
    cache_a: dict = {}
    cache_b: dict = {}
    for key in keys:
        wa, wb = key
        if wa not in cache_a:
            cache_a[wa] = _local_operator(setting, "A", wa, model)
        if wb not in cache_b:
            cache_b[wb] = _local_operator(setting, "B", wb, model)
        out[key] = complex(np.einsum("ac,bd,abcd->", cache_a[wa].T, cache_b[wb].T, r4))
    return out


def evaluate_functional(setting: str, functional: dict, moments: dict) -> float:
    """Real value of a functional on a moment assignment; the imaginary
    part must cancel (it does for Hermitian-consistent moments)."""
    total = 0.0 + 0.0j
    if setting == SETTING_1SDI:
        for word, cw in functional.items():
            tau = moments[((), word)]
            total += np.sum(cw * tau)
    else:
        for key, coef in functional.items():
            total += coef * moments[key]
    if abs(total.imag) > 1e-9:
        raise ValueError(f"functional value has imaginary part {total.imag:.3e}")
    return float(total.real)


def functional_keys(setting: str, functional: dict) -> list:
    if setting == SETTING_1SDI:
        return [((), w) for w in functional]
    return list(functional)


# ---------------------------------------------------------------------------
# The moment problem.


def _entry_key(setting: str, row: OperatorWord, col: OperatorWord) -> tuple:
    """Canonical word key of the moment at (row, col): canon(col^dag row)."""
    if setting == SETTING_1SDI:
        return ((), _reduce_projector(col.bob[::-1] + row.bob))
    return (
        _reduce_observable(col.alice[::-1] + row.alice),
        _reduce_observable(col.bob[::-1] + row.bob),
    )


def _key_adjoint(key: tuple) -> tuple:
    return (key[0][::-1], key[1][::-1])


@dataclass
class MomentProblem:
    """Symbolic moment matrix plus objective/inequality data.

    ``entry_keys[k][l]`` is the canonical word key of cell block (k, l);
    one-sided problems have 2x2 trusted-side blocks (block=2), fully
    untrusted ones scalar entries (block=1).
    """

    setting: str
    words: list
    objective: str
    inequality: str
    violation: float
    block: int = field(init=False, compare=False)
    dim: int = field(init=False, compare=False)
    entry_keys: list = field(init=False, compare=False, repr=False)
    p_coeffs: dict = field(init=False, compare=False, repr=False)
    q_coeffs: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        m = len(self.words)
        self.block = 2 if self.setting == SETTING_1SDI else 1
        self.dim = self.block * m
        if not any(w.key == ((), ()) for w in self.words):
            raise ValueError("word list must contain the identity word")
        self.entry_keys = [
            [_entry_key(self.setting, self.words[k], self.words[l]) for l in range(m)]
            for k in range(m)
        ]
        self.p_coeffs = fidelity_functional(self.setting, self.objective)
        self.q_coeffs = inequality_functional(self.setting, self.inequality)
        available = {key for row in self.entry_keys for key in row}
        needed = set(functional_keys(self.setting, self.p_coeffs))
        needed |= set(functional_keys(self.setting, self.q_coeffs))
        missing = needed - available
        if missing:
            raise MissingWordError(f"moment matrix lacks required words: {sorted(missing)}")

    # --- cell-level views -------------------------------------------------

    def cell_key(self, r: int, c: int) -> tuple:
        """(word key, i, j) identifying the complex value at scalar cell (r, c)."""
        k, i = divmod(r, self.block)
        l, j = divmod(c, self.block)
        return (self.entry_keys[k][l], i, j)

    def complex_classes(self) -> dict:
        """Group all scalar cells by their complex moment identity."""
        classes: dict = {}
        for r in range(self.dim):
            for c in range(self.dim):
                classes.setdefault(self.cell_key(r, c), []).append((r, c))
        return classes

    def real_class_key(self, r: int, c: int) -> tuple:
        key, i, j = self.cell_key(r, c)
        alt = (_key_adjoint(key), j, i)
        return min((key, i, j), alt)

    def real_classes(self) -> dict:
        classes: dict = {}
        for r in range(self.dim):
            for c in range(self.dim):
                classes.setdefault(self.real_class_key(r, c), []).append((r, c))
        return classes

    # --- constraints -------------------------------------------------------

    def equality_chains(self) -> list:
        """Deduplicated equality constraints: each extra cell of a complex
        class is tied to the class representative."""
        pairs = []
        for cells in self.complex_classes().values():
            rep = cells[0]
            pairs.extend((rep, cell) for cell in cells[1:])
        return pairs

    def generated_equality_count(self) -> int:
        """Number of generated equality constraints.

        Convention: one constraint per unordered pair of distinct scalar
        cells of the full moment matrix that the automation identifies as
        carrying the same moment (idempotence/involution reductions plus
        cross-party commutation); conjugate-mirror duplicates are counted
        once because the matrix is Hermitian by construction.
        """
        return sum(len(c) * (len(c) - 1) // 2 for c in self.complex_classes().values())

    def representative_cells(self) -> dict:
        reps = {}
        for key, cells in self.complex_classes().items():
            reps[key] = cells[0]
        return reps

    def functional_items(self, functional: dict) -> list:
        """Flatten a functional to ((word key, i, j), coefficient) items."""
        if self.setting == SETTING_1SDI:
            return [
                ((((), w), i, j), c[i, j])
                for w, c in functional.items()
                for i in (0, 1)
                for j in (0, 1)
                if abs(c[i, j]) > 1e-15
            ]
        return [(((wa, wb), 0, 0), coef) for (wa, wb), coef in functional.items()]

    def cell_matrix(self, functional: dict) -> np.ndarray:
        """Symmetric real matrix S with sum_rc S[r,c] Re(Gamma[r,c]) equal
        to the functional value on any constraint-satisfying Gamma."""
        reps = self.representative_cells()
        mat = np.zeros((self.dim, self.dim))
        for (key, i, j), coef in self.functional_items(functional):
            r, c = reps[(key, i, j)]
            mat[r, c] += coef
        return 0.5 * (mat + mat.T)

    def normalization_cells(self) -> list:
        """Scalar cells whose sum is fixed to one (identity-word trace)."""
        reps = self.representative_cells()
        return [reps[(((), ()), i, i)] for i in range(self.block)]


def build_moment_problem(
    setting: str,
    words,
    objective: str,
    inequality: str,
    violation: float,
) -> MomentProblem:
    """Assemble the moment problem for one fidelity objective constrained
    to a given violation level."""
    if objective not in OBJECTIVES[setting]:
        raise ValueError(f"objective {objective!r} not available for {setting}")
    return MomentProblem(setting, list(words), objective, inequality, float(violation))


def instantiate_gamma(model: qcore.MeasurementModel, state, words) -> np.ndarray:
    """Numeric Hermitian moment matrix of an explicit (state, model) pair."""
    if not words:
        raise ValueError("need at least one word")
    setting = words[0].setting
    m = len(words)
    keys = {
        _entry_key(setting, words[k], words[l])
        for k in range(m)
        for l in range(m)
    }
    moments = evaluate_moments(setting, state, model, keys)
    block = 2 if setting == SETTING_1SDI else 1
    gamma = np.zeros((block * m, block * m), dtype=complex)
    for k in range(m):
        for l in range(m):
            value = moments[_entry_key(setting, words[k], words[l])]
            if block == 1:
                gamma[k, l] = value
            else:
                gamma[2 * k : 2 * k + 2, 2 * l : 2 * l + 2] = np.asarray(value)[
                    np.ix_((0, 1), (0, 1))
                ]
    return gamma


def check_gamma(problem: MomentProblem, gamma: np.ndarray, tol: float = 1e-10) -> dict:
    """Constraint residuals and eigenvalue floor of a numeric moment matrix."""
    worst = 0.0
    for (ra, ca), (rb, cb) in problem.equality_chains():
        worst = max(worst, abs(gamma[ra, ca] - gamma[rb, cb]))
    herm = float(np.max(np.abs(gamma - gamma.conj().T)))
    min_eig = float(np.linalg.eigvalsh(0.5 * (gamma + gamma.conj().T)).min())
    return {
        "max_equality_residual": float(worst),
        "hermiticity": herm,
        "min_eigenvalue": min_eig,
        "ok": worst <= tol and herm <= tol and min_eig >= -1e-9,
    }


# ---------------------------------------------------------------------------
# Real reduction: parametrize the Hermitian moment matrix by its free real
# moments.  Conjugating every operator in an explicit model conjugates the
# moment matrix without changing the (real-coefficient) objective and
# inequality values, so the optimization may be restricted to real
# symmetric moment matrices; adjoint word pairs then share one value.


@dataclass
class ReducedProblem:
    problem: MomentProblem
    keys: list
    index: dict
    cells: list          # per class: (rows array, cols array)
    p: np.ndarray
    q: np.ndarray
    norm: np.ndarray

    @property
    def dim(self) -> int:
        return self.problem.dim

    def basis_matrix(self, v: int) -> np.ndarray:
        mat = np.zeros((self.dim, self.dim))
        rows, cols = self.cells[v]
        mat[rows, cols] = 1.0
        return mat

    def moment_vector(self, gamma: np.ndarray) -> np.ndarray:
        """Project a numeric moment matrix onto the free real moments."""
        y = np.empty(len(self.keys))
        for v, (rows, cols) in enumerate(self.cells):
            y[v] = float(np.mean(gamma[rows, cols].real))
        return y

    def assemble(self, y: np.ndarray) -> np.ndarray:
        gamma = np.zeros((self.dim, self.dim))
        for v, (rows, cols) in enumerate(self.cells):
            gamma[rows, cols] = y[v]
        return gamma


def reduce_problem(problem: MomentProblem) -> ReducedProblem:
    classes = problem.real_classes()
    keys = sorted(classes.keys())
    index = {key: v for v, key in enumerate(keys)}
    cells = []
    for key in keys:
        members = classes[key]
        rows = np.array([r for r, _ in members], dtype=np.intp)
        cols = np.array([c for _, c in members], dtype=np.intp)
        cells.append((rows, cols))

    def vector_from(functional: dict) -> np.ndarray:
        vec = np.zeros(len(keys))
        for (key, i, j), coef in problem.functional_items(functional):
            real_key = min((key, i, j), (_key_adjoint(key), j, i))
            vec[index[real_key]] += coef
        return vec

    p = vector_from(problem.p_coeffs)
    q = vector_from(problem.q_coeffs)
    norm = np.zeros(len(keys))
    for i in range(problem.block):
        norm[index[(((), ()), i, i)]] += 1.0
    return ReducedProblem(problem, keys, index, cells, p, q, norm)


# ---------------------------------------------------------------------------
# Serialization: word lists ("npa/1") and sparse SDPA files.


def words_to_json(words) -> dict:
    return {
        "schema": "npa/1",
        "setting": words[0].setting if words else None,
        "words": [w.symbols() for w in words],
    }


def words_from_json(doc: dict) -> list:
    if doc.get("schema") != "npa/1":
        raise ValueError(f"unexpected schema {doc.get('schema')!r}")
    setting = doc["setting"]
    return [
        OperatorWord.from_symbols(setting, [tuple(sym) for sym in symbols])
        for symbols in doc["words"]
    ]


def _embedding_patterns(problem: MomentProblem):
    """Sparse patterns reading Re/Im of a complex cell from the 2x2 real
    embedding [[A, -B], [B, A]]; both diagonal copies are averaged so any
    feasible unstructured matrix maps back to a Hermitian moment matrix."""
    n = problem.dim

    def real_pattern(r, c):
        if r == c:
            return [(r, r, 0.5), (n + r, n + r, 0.5)]
        return [(r, c, 0.25), (c, r, 0.25), (n + r, n + c, 0.25), (n + c, n + r, 0.25)]

    def imag_pattern(r, c):
        if r == c:
            return []
        return [(n + r, c, 0.25), (c, n + r, 0.25), (n + c, r, -0.25), (r, n + c, -0.25)]

    return real_pattern, imag_pattern


def _pattern_diff(pat_a, pat_b):
    acc: dict = {}
    for i, j, v in pat_a:
        acc[(i, j)] = acc.get((i, j), 0.0) + v
    for i, j, v in pat_b:
        acc[(i, j)] = acc.get((i, j), 0.0) - v
    return {k: v for k, v in acc.items() if abs(v) > 1e-15}


def _upper_entries(entries: dict):
    out = []
    for (i, j), v in sorted(entries.items()):
        if i <= j:
            out.append((i, j, v))
    return out


def export_sdpa(problem: MomentProblem, path, constraints: str = "generated") -> dict:
    """Write the problem as a sparse SDPA file over the real embedding.

    SDPA-dual semantics: max tr(F0 Y) s.t. tr(Fi Y) = c_i, Y >= 0, with
    F0 = -(objective reader), so the file's dual optimum equals minus the
    certified minimum; the first comment line records the convention.
    ``constraints`` picks the generated pairwise equality list or the
    deduplicated chain form.  Returns a summary dict (counts).
    """
    if constraints not in ("generated", "deduplicated"):
        raise ValueError("constraints must be 'generated' or 'deduplicated'")
    real_pattern, imag_pattern = _embedding_patterns(problem)
    if constraints == "generated":
        pairs = []
        for cells in problem.complex_classes().values():
            for a in range(len(cells)):
                for b in range(a + 1, len(cells)):
                    pairs.append((cells[a], cells[b]))
    else:
        pairs = problem.equality_chains()

    p_cells = problem.cell_matrix(problem.p_coeffs)
    q_cells = problem.cell_matrix(problem.q_coeffs)
    norm_cells = problem.normalization_cells()

    def cellmat_pattern(mat):
        acc: dict = {}
        for r, c in zip(*np.nonzero(mat)):
            for i, j, v in real_pattern(int(r), int(c)):
                acc[(i, j)] = acc.get((i, j), 0.0) + mat[r, c] * v
        return {k: v for k, v in acc.items() if abs(v) > 1e-15}

    f0 = {k: -v for k, v in cellmat_pattern(p_cells).items()}
    body = []  # (c_value, entries dict)
    body.append((problem.violation, cellmat_pattern(q_cells)))
    norm_entries: dict = {}
    for r, c in norm_cells:
        for i, j, v in real_pattern(r, c):
            norm_entries[(i, j)] = norm_entries.get((i, j), 0.0) + v
    body.append((1.0, norm_entries))
    for (ra, ca), (rb, cb) in pairs:
        re_diff = _pattern_diff(real_pattern(ra, ca), real_pattern(rb, cb))
        if re_diff:
            body.append((0.0, re_diff))
        im_diff = _pattern_diff(imag_pattern(ra, ca), imag_pattern(rb, cb))
        if im_diff:
            body.append((0.0, im_diff))

    meta = {
        "schema": "npa-sdpa/1",
        "setting": problem.setting,
        "objective": problem.objective,
        "inequality": problem.inequality,
        "violation": repr(float(problem.violation)),
        "words": [w.symbols() for w in problem.words],
        "constraints": constraints,
    }
    lines = [
        '"telecert moment problem; dual optimum = -(minimum objective value); '
        'variable is the 2x2 real embedding of the moment matrix',
        '"meta ' + json.dumps(meta, separators=(",", ":"), sort_keys=True),
        f"{len(body)}",
        "1",
        f"{2 * problem.dim}",
        " ".join(repr(float(c)) for c, _ in body),
    ]
    for i, j, v in _upper_entries(f0):
        lines.append(f"0 1 {i + 1} {j + 1} {float(v)!r}")
    for matno, (_, entries) in enumerate(body, start=1):
        for i, j, v in _upper_entries(entries):
            lines.append(f"{matno} 1 {i + 1} {j + 1} {float(v)!r}")
    with open(path, "w") as handle:
        handle.write("\n".join(lines))
        handle.write("\n")
    return {
        "constraints_written": len(body),
        "equality_pairs": len(pairs),
        "embedded_dimension": 2 * problem.dim,
    }


def import_sdpa(path) -> MomentProblem:
    """Rebuild the moment problem from the metadata comment line."""
    meta = None
    with open(path) as handle:
        for line in handle:
            if line.startswith('"meta '):
                meta = json.loads(line[6:])
                break
            if not line.startswith(('"', "*")):
                break
    if meta is None or meta.get("schema") != "npa-sdpa/1":
        raise ValueError("file lacks the moment-problem metadata line")
    words = [
        OperatorWord.from_symbols(meta["setting"], [tuple(sym) for sym in symbols])
        for symbols in meta["words"]
    ]
    return build_moment_problem(
        meta["setting"],
        words,
        meta["objective"],
        meta["inequality"],
        float(meta["violation"]),
    )


def read_sdpa_numeric(path):
    """Parse the numeric body of a sparse SDPA file.

    Returns (objective C, constraint list [(A_i, b_i)]) posed so that
    min tr(C X) s.t. tr(A_i X) = b_i, X >= 0 is the file's dual; for
    files written by :func:`export_sdpa` that minimum is the certified
    minimum objective value directly.
    """
    rows = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith(('"', "*")):
                continue
            rows.append(line)
    m = int(rows[0].split()[0])
    nblocks = int(rows[1].split()[0])
    sizes = [abs(int(tok.strip("{},"))) for tok in rows[2].replace(",", " ").split()][:nblocks]
    c_values = [float(tok) for tok in rows[3].replace(",", " ").split()]
    if len(c_values) != m:
        raise ValueError("constraint value line does not match the header")
    dim = sum(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    mats = [np.zeros((dim, dim)) for _ in range(m + 1)]
    for line in rows[4:]:
        matno, blk, i, j, val = line.split()
        matno, blk, i, j = int(matno), int(blk), int(i), int(j)
        val = float(val)
        r = offsets[blk - 1] + i - 1
        c = offsets[blk - 1] + j - 1
        mats[matno][r, c] = val
        mats[matno][c, r] = val
    objective = -mats[0]
    constraints = [(mats[k], c_values[k - 1]) for k in range(1, m + 1)]
    return objective, constraints
