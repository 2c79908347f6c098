"""Pure-state sampling from SLOCC families, dephasing, and Born-rule features.

Qubit 0 is the most significant bit of a computational-basis index, so
``|q0 q1 ... q_{n-1}>`` has index ``sum(q_i * 2**(n-1-i))``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import haar_unitary

EXACT = -1
"""Shot-count sentinel meaning "use exact Born probabilities"."""

NEG_PROB_TOL = 1e-10


class RosterError(KeyError):
    pass


# ---------------------------------------------------------------------------
# states


def basis_state(bits: str) -> np.ndarray:
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[int(bits, 2)] = 1.0
    return psi


def _ket(n: int, terms: dict[str, complex]) -> np.ndarray:
    psi = np.zeros(2**n, dtype=complex)
    for bits, amp in terms.items():
        psi[int(bits, 2)] += amp
    return psi


def normalize(psi: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValueError("zero vector cannot be normalized")
    return psi / nrm


def apply_local_unitaries(psi: np.ndarray, unitaries: list[np.ndarray]) -> np.ndarray:
    """Apply ``unitaries[i]`` to qubit ``i`` of the state vector."""
    n = len(unitaries)
    t = psi.reshape((2,) * n)
    for q, u in enumerate(unitaries):
        t = np.moveaxis(np.tensordot(u, t, axes=([1], [q])), 0, q)
    return t.reshape(-1)


def ghz_state(theta: float = np.pi / 4, phi: float = 0.0) -> np.ndarray:
    return _ket(3, {"000": np.cos(theta), "111": np.exp(1j * phi) * np.sin(theta)})


def w_state(weights=(1 / 3, 1 / 3, 1 / 3)) -> np.ndarray:
    a, b, c = np.sqrt(np.asarray(weights, dtype=float))
    return _ket(3, {"001": a, "010": b, "100": c})


def _two_qubit_entangled(alpha: float) -> np.ndarray:
    return _ket(2, {"00": np.cos(alpha), "11": np.sin(alpha)})


# canonical-form generators: (rng, n_qubits) -> unnormalized state vector

_MIN_WEIGHT = 0.05
_GHZ_MARGIN = 0.2
_SCHMIDT_RANGE = (0.2, np.pi / 4)
_COMPLEX_MOD_RANGE = (0.25, 1.0)


def _canon_separable(rng, n):
    return basis_state("0" * n)


def _biseparable(single: int):
    # the lone qubit is in |0>, the other two share cos a|00> + sin a|11>;
    # the outer Haar layer randomizes every local frame
    def gen(rng, n):
        pair = _two_qubit_entangled(rng.uniform(*_SCHMIDT_RANGE))
        t = np.multiply.outer(basis_state("0"), pair).reshape(2, 2, 2)
        t = np.moveaxis(t, 0, single)
        return t.reshape(-1)

    return gen


def _canon_ghz3(rng, n):
    theta = rng.uniform(_GHZ_MARGIN, np.pi / 2 - _GHZ_MARGIN)
    phi = rng.uniform(0.0, 2 * np.pi)
    return ghz_state(theta, phi)


def _canon_w3(rng, n):
    while True:
        w = rng.dirichlet(np.ones(3))
        if w.min() >= _MIN_WEIGHT:
            return w_state(w)


def _cparams(rng, k):
    mod = rng.uniform(*_COMPLEX_MOD_RANGE, size=k)
    ph = rng.uniform(0.0, 2 * np.pi, size=k)
    return mod * np.exp(1j * ph)


def _g_abcd(rng, n):
    a, b, c, d = _cparams(rng, 4)
    return _ket(4, {
        "0000": (a + d) / 2, "1111": (a + d) / 2,
        "0011": (a - d) / 2, "1100": (a - d) / 2,
        "0101": (b + c) / 2, "1010": (b + c) / 2,
        "0110": (b - c) / 2, "1001": (b - c) / 2,
    })


def _l_abc2(rng, n):
    a, b, c = _cparams(rng, 3)
    return _ket(4, {
        "0000": (a + b) / 2, "1111": (a + b) / 2,
        "0011": (a - b) / 2, "1100": (a - b) / 2,
        "0101": c, "1010": c,
        "0110": 1.0,
    })


def _l_a2b2(rng, n):
    a, b = _cparams(rng, 2)
    return _ket(4, {
        "0000": a, "1111": a,
        "0101": b, "1010": b,
        "0110": 1.0, "0011": 1.0,
    })


def _l_ab3(rng, n):
    a, b = _cparams(rng, 2)
    s = 1j / np.sqrt(2)
    return _ket(4, {
        "0000": a, "1111": a,
        "0101": (a + b) / 2, "1010": (a + b) / 2,
        "0110": (a - b) / 2, "1001": (a - b) / 2,
        "0001": s, "0010": s, "0111": s, "1011": s,
    })


def _l_a4(rng, n):
    (a,) = _cparams(rng, 1)
    return _ket(4, {
        "0000": a, "0101": a, "1010": a, "1111": a,
        "0001": 1j, "0110": 1.0, "1011": -1j,
    })


def _l_a2_03(rng, n):
    (a,) = _cparams(rng, 1)
    return _ket(4, {"0000": a, "1111": a, "0011": 1.0, "0101": 1.0, "0110": 1.0})


def _l_05_3(rng, n):
    return _ket(4, {"0000": 1.0, "0101": 1.0, "1000": 1.0, "1110": 1.0})


def _l_07_1(rng, n):
    return _ket(4, {"0000": 1.0, "1011": 1.0, "1101": 1.0, "1110": 1.0})


def _l_03_03(rng, n):
    return _ket(4, {"0000": 1.0, "0111": 1.0})


_GENERATORS: dict[str, tuple[int, Callable]] = {
    "SEP": (3, _canon_separable),
    "BISEP_A_BC": (3, _biseparable(0)),
    "BISEP_B_AC": (3, _biseparable(1)),
    "BISEP_C_AB": (3, _biseparable(2)),
    "W": (3, _canon_w3),
    "GHZ": (3, _canon_ghz3),
    "G_abcd": (4, _g_abcd),
    "L_abc2": (4, _l_abc2),
    "L_a2b2": (4, _l_a2b2),
    "L_ab3": (4, _l_ab3),
    "L_a4": (4, _l_a4),
    "L_a2_03+1": (4, _l_a2_03),
    "L_05+3": (4, _l_05_3),
    "L_07+1": (4, _l_07_1),
    "L_03+1_03+1": (4, _l_03_03),
    "SEP4": (4, _canon_separable),
}

DEFAULT_ROSTERS = {
    3: ["SEP", "BISEP_A_BC", "BISEP_B_AC", "BISEP_C_AB", "W", "GHZ"],
    4: ["G_abcd", "L_abc2", "L_a2b2", "L_ab3", "L_a4",
        "L_a2_03+1", "L_05+3", "L_07+1", "L_03+1_03+1", "SEP4"],
}


@dataclass(frozen=True)
class SloccFamily:
    label_id: int
    name: str
    n_qubits: int


def make_roster(names: list[str]) -> list[SloccFamily]:
    """Build a roster from registered family names; label ids follow list order."""
    fams = []
    for i, name in enumerate(names):
        if name not in _GENERATORS:
            raise RosterError(f"unknown SLOCC family {name!r}")
        fams.append(SloccFamily(i, name, _GENERATORS[name][0]))
    if len({f.n_qubits for f in fams}) > 1:
        raise RosterError("roster mixes qubit counts")
    if len(set(names)) != len(names):
        raise RosterError("duplicate family in roster")
    return fams


def default_roster(n_qubits: int) -> list[SloccFamily]:
    if n_qubits not in DEFAULT_ROSTERS:
        raise RosterError(f"no default roster for {n_qubits} qubits (supported: 3, 4)")
    return make_roster(DEFAULT_ROSTERS[n_qubits])


def sample_state(family: SloccFamily, rng: np.random.Generator) -> np.ndarray:
    """Random member of ``family``: canonical form, then a Haar unitary per qubit."""
    try:
        n, gen = _GENERATORS[family.name]
    except KeyError:
        raise RosterError(f"unknown SLOCC family {family.name!r}") from None
    psi = normalize(gen(rng, n))
    locals_ = [haar_unitary(2, rng) for _ in range(n)]
    return normalize(apply_local_unitaries(psi, locals_))


# ---------------------------------------------------------------------------
# density matrices and noise


def to_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def apply_dephasing(rho: np.ndarray, epsilon: float) -> np.ndarray:
    """Scale every off-diagonal entry by ``1 - epsilon``; populations untouched."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"dephasing epsilon must lie in [0, 1], got {epsilon}")
    out = rho * (1.0 - epsilon)
    idx = np.diag_indices_from(rho)
    out[idx] = rho[idx]
    return out


@dataclass(frozen=True)
class NoiseConfig:
    dephasing_epsilon: float = 0.0
    shots: int = EXACT

    def __post_init__(self):
        if not 0.0 <= self.dephasing_epsilon <= 1.0:
            raise ValueError(f"dephasing epsilon must lie in [0, 1], got {self.dephasing_epsilon}")
        if self.shots != EXACT and self.shots < 1:
            raise ValueError(f"shots must be positive or EXACT, got {self.shots}")


# ---------------------------------------------------------------------------
# measurement bases

_SQ2 = 1 / np.sqrt(2)
# rows are the +1 and -1 eigenvectors
PAULI_EIGENBASES = {
    "X": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "Y": np.array([[_SQ2, 1j * _SQ2], [_SQ2, -1j * _SQ2]], dtype=complex),
    "Z": np.array([[1, 0], [0, 1]], dtype=complex),
}
_PAULI_ORDER = "XYZ"


@dataclass
class BasisSet:
    """Ordered measurement settings.

    ``vectors[s, k]`` is the k-th outcome vector of setting s; the feature
    layout is setting-major, so feature ``s * 2**n + k`` is p(k | s).
    """

    n_qubits: int
    scheme: str
    labels: list[str]
    vectors: np.ndarray = field(repr=False)

    @property
    def n_settings(self) -> int:
        return len(self.labels)

    @property
    def n_outcomes(self) -> int:
        return 2**self.n_qubits

    @property
    def M(self) -> int:
        return self.n_settings * self.n_outcomes

    def index(self, label: str) -> int:
        return self.labels.index(label)


def build_basis_set(n_qubits: int, scheme: str = "LOCAL_PAULI") -> BasisSet:
    """All 3**n local Pauli settings, setting index in base 3 (X=0, Y=1, Z=2).

    Qubit 0 is the most significant digit of both the setting and the outcome
    index; outcome bit 0 is the +1 eigenvalue.
    """
    if scheme != "LOCAL_PAULI":
        raise ValueError(f"unknown measurement scheme {scheme!r}")
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    labels, vecs = [], []
    for combo in itertools.product(_PAULI_ORDER, repeat=n_qubits):
        labels.append("".join(combo))
        mat = PAULI_EIGENBASES[combo[0]]
        for p in combo[1:]:
            # row (k1, k2) = kron of rows
            mat = np.einsum("ai,bj->abij", mat, PAULI_EIGENBASES[p]).reshape(
                mat.shape[0] * 2, mat.shape[1] * 2
            )
        vecs.append(mat)
    return BasisSet(n_qubits, scheme, labels, np.stack(vecs))


def _clamp(p: np.ndarray) -> np.ndarray:
    if p.min(initial=0.0) < -NEG_PROB_TOL:
        raise ValueError(f"negative probability {p.min():.3e} beyond round-off")
    return np.clip(p, 0.0, None)


def born_probabilities(rho: np.ndarray, setting: np.ndarray) -> np.ndarray:
    """p_k = <phi_k| rho |phi_k> for the rows ``phi_k`` of ``setting``."""
    setting = np.asarray(setting)
    if setting.shape[-1] != rho.shape[0] or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"dimension mismatch: setting {setting.shape}, rho {rho.shape}")
    p = np.einsum("ki,ij,kj->k", setting.conj(), rho, setting).real
    return _clamp(p)


def all_born_probabilities(rho: np.ndarray, bases: BasisSet) -> np.ndarray:
    """Born probabilities for every setting, shape ``(n_settings, 2**n)``."""
    if rho.shape != (bases.n_outcomes, bases.n_outcomes):
        raise ValueError(f"rho shape {rho.shape} does not match {bases.n_qubits}-qubit bases")
    v = bases.vectors
    p = np.einsum("ski,ij,skj->sk", v.conj(), rho, v, optimize=True).real
    return _clamp(p)


def sample_frequencies(probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Relative frequencies of ``shots`` multinomial trials (``EXACT`` -> probs)."""
    probs = np.asarray(probs, dtype=float)
    if shots == EXACT:
        return probs
    if shots < 1:
        raise ValueError(f"shots must be positive or EXACT, got {shots}")
    counts = rng.multinomial(shots, probs / probs.sum())
    return counts / shots


def encode_features(rho: np.ndarray, bases: BasisSet, noise: NoiseConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Feature vector of length ``bases.M``: dephase, measure, then shot-sample."""
    if noise.dephasing_epsilon:
        rho = apply_dephasing(rho, noise.dephasing_epsilon)
    probs = all_born_probabilities(rho, bases)
    if noise.shots != EXACT:
        probs = np.stack([sample_frequencies(p, noise.shots, rng) for p in probs])
    return probs.reshape(-1)
