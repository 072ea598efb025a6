"""Integral handling, determinant/CSF matrix elements, and the dense CI oracle.

Two-electron integrals are handled in chemists' notation (pq|rs) with the
8-fold permutational symmetry folded into a non-redundant triangular store.
Spatial orbitals are 0-based internally; FCIDUMP files are 1-based.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import CapacityError, DimensionError, ParseError
from .fock import CsfBasis, FockSubspace, annihilate, create

#: Default cap on the determinant dimension of the dense eigensolver.
DENSE_LIMIT = 20_000


def _tri(p: int, q: int) -> int:
    if p < q:
        p, q = q, p
    return p * (p + 1) // 2 + q


@dataclass
class IntegralSet:
    """One- and two-electron molecular-orbital integrals plus the core energy.

    ``g_flat`` stores one value per canonical quadruple: composite index
    ``_tri(_tri(p,q), _tri(r,s))`` with the larger pair index first, so all
    eight permutation partners share storage by construction.
    """

    m_orb: int
    h: np.ndarray
    g_flat: np.ndarray
    e_core: float = 0.0
    orb_irreps: tuple[int, ...] | None = None
    nat_occ: tuple[float, ...] | None = None
    n_electrons: int | None = None
    ms2: int | None = None
    _g_dense: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.g_flat = np.asarray(self.g_flat, dtype=float)
        if self.h.shape != (self.m_orb, self.m_orb):
            raise DimensionError(
                f"one-electron array has shape {self.h.shape}, "
                f"expected {(self.m_orb, self.m_orb)}"
            )
        if not np.allclose(self.h, self.h.T, atol=1e-8):
            raise DimensionError("one-electron integrals are not index-symmetric")
        npair = self.m_orb * (self.m_orb + 1) // 2
        if self.g_flat.shape != (npair * (npair + 1) // 2,):
            raise DimensionError("two-electron store has the wrong length")

    @classmethod
    def zeros(cls, m_orb: int, e_core: float = 0.0, **kw) -> "IntegralSet":
        npair = m_orb * (m_orb + 1) // 2
        return cls(
            m_orb=m_orb,
            h=np.zeros((m_orb, m_orb)),
            g_flat=np.zeros(npair * (npair + 1) // 2),
            e_core=e_core,
            **kw,
        )

    @classmethod
    def from_dense(
        cls, h: np.ndarray, g: np.ndarray, e_core: float = 0.0, **kw
    ) -> "IntegralSet":
        """Build from a full (m,m,m,m) chemists'-notation array."""
        m = h.shape[0]
        ints = cls.zeros(m, e_core=e_core, **kw)
        ints.h = np.asarray(h, dtype=float)
        ints.__post_init__()
        for p in range(m):
            for q in range(p + 1):
                for r in range(m):
                    for s in range(r + 1):
                        if _tri(p, q) >= _tri(r, s):
                            ints.set_g(p, q, r, s, float(g[p, q, r, s]))
        return ints

    def g(self, p: int, q: int, r: int, s: int) -> float:
        return self.g_flat[_tri(_tri(p, q), _tri(r, s))]

    def set_g(self, p: int, q: int, r: int, s: int, value: float) -> None:
        self.g_flat[_tri(_tri(p, q), _tri(r, s))] = value
        self._g_dense.clear()

    def g_dense(self) -> np.ndarray:
        """Full chemists' array with all eight permutation partners filled."""
        if not self._g_dense:
            m = self.m_orb
            g = np.empty((m, m, m, m))
            for p in range(m):
                for q in range(m):
                    for r in range(m):
                        for s in range(m):
                            g[p, q, r, s] = self.g(p, q, r, s)
            self._g_dense.append(g)
        return self._g_dense[0]


def parse_fcidump(path) -> IntegralSet:
    """Read an FCIDUMP-style text file into an IntegralSet.

    Indices (i j k l) classify each record: all zero is the core energy,
    k = l = 0 a one-electron integral h_ij, anything else a chemists'
    two-electron integral (ij|kl).  Fortran 'D' exponents are accepted.
    Symmetry-equivalent duplicates overwrite with last-wins and a warning;
    orbital-energy records (i > 0, j = k = l = 0) are ignored with a warning.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(str(exc), path=str(path)) from exc

    lines = text.splitlines()
    norb = nelec = ms2 = None
    orbsym: list[int] = []
    header_done = False
    data_start = 0

    header_text = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        header_text.append(stripped)
        if stripped.endswith("&END") or stripped.endswith("/") or stripped == "&END":
            data_start = lineno
            header_done = True
            break
    if not header_done:
        raise ParseError("missing &END// header terminator", path=str(path))

    blob = " ".join(header_text)
    if not blob.lstrip().upper().startswith("&FCI"):
        raise ParseError("header does not start with &FCI", path=str(path), line=1)

    def grab(key):
        upper = blob.upper()
        pos = upper.find(key + "=")
        if pos < 0:
            return None
        tail = blob[pos + len(key) + 1 :]
        out = []
        for tok in tail.replace(",", " ").split():
            if "=" in tok or tok.upper() in ("&END", "/"):
                break
            out.append(tok)
        return out

    try:
        vals = grab("NORB")
        norb = int(vals[0]) if vals else None
        vals = grab("NELEC")
        nelec = int(vals[0]) if vals else None
        vals = grab("MS2")
        ms2 = int(vals[0]) if vals else None
        vals = grab("ORBSYM")
        orbsym = [int(v) for v in vals] if vals else []
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed header field: {exc}", path=str(path)) from exc
    if norb is None or norb < 1:
        raise ParseError("header lacks a valid NORB", path=str(path))
    if orbsym and len(orbsym) != norb:
        raise ParseError(
            f"ORBSYM lists {len(orbsym)} labels for NORB={norb}", path=str(path)
        )

    ints = IntegralSet.zeros(
        norb,
        orb_irreps=tuple(orbsym) if orbsym else None,
        n_electrons=nelec,
        ms2=ms2,
    )
    npair = norb * (norb + 1) // 2
    seen_g = np.zeros(npair * (npair + 1) // 2, dtype=bool)
    seen_h = np.zeros((norb, norb), dtype=bool)
    seen_core = False

    for lineno in range(data_start, len(lines)):
        raw = lines[lineno].strip()
        if not raw:
            continue
        tokens = raw.split()
        if len(tokens) != 5:
            raise ParseError(
                f"expected 'value i j k l', got {len(tokens)} tokens",
                path=str(path),
                line=lineno + 1,
            )
        try:
            value = float(tokens[0].replace("D", "E").replace("d", "e"))
        except ValueError:
            raise ParseError(
                f"non-numeric integral value {tokens[0]!r}",
                path=str(path),
                line=lineno + 1,
            ) from None
        try:
            i, j, k, l = (int(t) for t in tokens[1:])
        except ValueError:
            raise ParseError(
                "non-integer orbital index", path=str(path), line=lineno + 1
            ) from None
        if min(i, j, k, l) < 0 or max(i, j, k, l) > norb:
            raise ParseError(
                f"orbital index out of range 1..{norb} in ({i} {j} {k} {l})",
                path=str(path),
                line=lineno + 1,
            )
        if i == j == k == l == 0:
            if seen_core:
                warnings.warn(f"{path}:{lineno + 1}: duplicate core energy, last wins")
            ints.e_core = value
            seen_core = True
        elif k == 0 and l == 0:
            if j == 0:
                warnings.warn(
                    f"{path}:{lineno + 1}: orbital-energy record ignored"
                )
                continue
            if i == 0:
                raise ParseError(
                    "one-electron record with zero row index",
                    path=str(path),
                    line=lineno + 1,
                )
            if seen_h[i - 1, j - 1]:
                warnings.warn(
                    f"{path}:{lineno + 1}: duplicate h({i},{j}), last wins"
                )
            ints.h[i - 1, j - 1] = value
            ints.h[j - 1, i - 1] = value
            seen_h[i - 1, j - 1] = seen_h[j - 1, i - 1] = True
        else:
            if min(i, j, k, l) == 0:
                raise ParseError(
                    f"two-electron record with a zero index ({i} {j} {k} {l})",
                    path=str(path),
                    line=lineno + 1,
                )
            flat = _tri(_tri(i - 1, j - 1), _tri(k - 1, l - 1))
            if seen_g[flat]:
                warnings.warn(
                    f"{path}:{lineno + 1}: duplicate ({i}{j}|{k}{l}), last wins"
                )
            ints.g_flat[flat] = value
            seen_g[flat] = True
    ints._g_dense.clear()
    return ints


# ---------------------------------------------------------------------------
# Slater-Condon matrix elements
# ---------------------------------------------------------------------------


def _excitation_phase(ket: int, holes: tuple[int, ...], parts: tuple[int, ...]):
    """Phase of a+_{p1} a+_{p2} .. a_{q2} a_{q1} |ket> (holes/parts ascending).

    Operators act right to left: annihilations in ascending hole order, then
    creations in descending part order, matching the pairing used for the
    direct two-electron term.
    """
    bits = ket
    sign = 1
    for q in holes:
        step = annihilate(bits, q)
        if step is None:
            return None
        bits, ph = step
        sign *= ph
    for p in reversed(parts):
        step = create(bits, p)
        if step is None:
            return None
        bits, ph = step
        sign *= ph
    return bits, sign


def slater_condon(bra: int, ket: int, ints: IntegralSet) -> float:
    """<bra|H|ket> between two determinants over the same integral set.

    Spin orbitals interleave alpha/beta; the diagonal includes the core
    energy; determinants differing in more than two spin orbitals give zero.
    """
    diff = bra ^ ket
    ndiff = diff.bit_count()
    if ndiff > 4 or ndiff & 1:
        return 0.0
    g = ints.g
    h = ints.h

    if ndiff == 0:
        occ = []
        bits = ket
        so = 0
        while bits:
            if bits & 1:
                occ.append(so)
            bits >>= 1
            so += 1
        val = ints.e_core
        for a, p in enumerate(occ):
            P, sp = p >> 1, p & 1
            val += h[P, P]
            for q in occ[:a]:
                Q, sq = q >> 1, q & 1
                val += g(P, P, Q, Q)
                if sp == sq:
                    val -= g(P, Q, Q, P)
        return val

    holes = tuple(so for so in range(ket.bit_length()) if (diff >> so) & 1 and (ket >> so) & 1)
    parts = tuple(so for so in range(bra.bit_length()) if (diff >> so) & 1 and (bra >> so) & 1)

    if ndiff == 2:
        (q,) = holes
        (p,) = parts
        if (p & 1) != (q & 1):
            return 0.0
        result = _excitation_phase(ket, holes, parts)
        assert result is not None and result[0] == bra
        phase = result[1]
        P, Q, sp = p >> 1, q >> 1, p & 1
        val = h[P, Q]
        common = ket & ~(1 << q)
        so = 0
        bits = common
        while bits:
            if bits & 1:
                R, sr = so >> 1, so & 1
                val += g(P, Q, R, R)
                if sr == sp:
                    val -= g(P, R, R, Q)
            bits >>= 1
            so += 1
        return phase * val

    # ndiff == 4: double excitation.
    q1, q2 = holes
    p1, p2 = parts
    result = _excitation_phase(ket, holes, parts)
    if result is None:
        return 0.0
    assert result[0] == bra
    phase = result[1]
    val = 0.0
    if (p1 & 1) == (q1 & 1) and (p2 & 1) == (q2 & 1):
        val += g(p1 >> 1, q1 >> 1, p2 >> 1, q2 >> 1)
    if (p1 & 1) == (q2 & 1) and (p2 & 1) == (q1 & 1):
        val -= g(p1 >> 1, q2 >> 1, p2 >> 1, q1 >> 1)
    return phase * val


@dataclass
class HamiltonianOperator:
    """Hamiltonian restricted to one determinant space, with a cached matrix."""

    integrals: IntegralSet
    space: FockSubspace
    _matrix: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if 2 * self.integrals.m_orb != self.space.m:
            raise DimensionError(
                f"integral set covers {self.integrals.m_orb} spatial orbitals, "
                f"space uses {self.space.m} spin orbitals"
            )

    @property
    def dim(self) -> int:
        return self.space.size

    def matrix(self) -> np.ndarray:
        """Dense symmetric determinant-basis matrix (assembled once)."""
        if not self._matrix:
            n = self.space.size
            mat = np.zeros((n, n))
            onvs = self.space.onvs
            for i in range(n):
                for j in range(i + 1):
                    el = slater_condon(onvs[i], onvs[j], self.integrals)
                    mat[i, j] = el
                    mat[j, i] = el
            self._matrix.append(mat)
        return self._matrix[0]

    def element(self, i: int, j: int) -> float:
        return slater_condon(self.space.onvs[i], self.space.onvs[j], self.integrals)


def csf_matrix_element(p: int, q: int, basis: CsfBasis, ham: HamiltonianOperator) -> float:
    """<CSF_p|H|CSF_q> = sum_{nl} K_pn H_nl K_ql.

    Uses the cached determinant matrix when it has already been assembled;
    otherwise streams the few needed elements instead of building the full
    matrix for one entry.
    """
    if not (0 <= p < basis.n_csfs and 0 <= q < basis.n_csfs):
        raise DimensionError(f"CSF indices ({p}, {q}) out of range")
    if basis.space is not ham.space and basis.space != ham.space:
        raise DimensionError("CSF basis and Hamiltonian use different spaces")
    row_p = basis.K.getrow(p)
    row_q = basis.K.getrow(q)
    if ham._matrix:
        H = ham._matrix[0]
        sub = H[np.ix_(row_p.indices, row_q.indices)]
        return float(row_p.data @ sub @ row_q.data)
    total = 0.0
    for n, kp in zip(row_p.indices, row_p.data):
        for l, kq in zip(row_q.indices, row_q.data):
            total += kp * kq * ham.element(int(n), int(l))
    return total


def csf_hamiltonian(basis: CsfBasis, ham: HamiltonianOperator) -> np.ndarray:
    """Dense CSF-basis matrix K H K^T."""
    K = basis.K
    return np.asarray((K @ ham.matrix()) @ K.T.toarray())


def orbital_occupations(
    ham: HamiltonianOperator, coeffs: np.ndarray
) -> tuple[float, ...]:
    """Spin-summed occupation of each spatial orbital in a determinant state.

    Diagonal of the one-body density in the current orbital basis, one value
    in [0, 2] per spatial orbital, aligned with the orbital ordering so it
    feeds the correlator selection window directly.  When the integrals are
    expressed in natural orbitals these are the natural occupation numbers.
    """
    space = ham.space
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.size,):
        raise DimensionError("coefficient vector does not match the space")
    m_orb = ham.integrals.m_orb
    occ = np.zeros(m_orb)
    weights = coeffs * coeffs
    for i, bits in enumerate(space.onvs):
        if weights[i] == 0.0:
            continue
        for p in range(m_orb):
            n_p = ((bits >> (2 * p)) & 1) + ((bits >> (2 * p + 1)) & 1)
            if n_p:
                occ[p] += n_p * weights[i]
    return tuple(float(v) for v in occ)


def exact_diagonalize(
    ham: HamiltonianOperator,
    basis: CsfBasis | None = None,
    dense_limit: int = DENSE_LIMIT,
) -> tuple[float, np.ndarray]:
    """Lowest eigenpair of H, in the determinant or a CSF basis.

    The CSF path solves the generalized problem with the generic overlap
    sum_n K_pn K_qn rather than assuming orthonormal rows.  The returned
    eigenvector is normalized, with a deterministic overall sign.
    """
    if ham.dim > dense_limit:
        raise CapacityError(
            f"{ham.dim} determinants exceed the dense-solver limit "
            f"{dense_limit}; shrink the space or raise the limit explicitly"
        )
    if basis is None:
        evals, evecs = linalg.eigh(ham.matrix())
    else:
        A = csf_hamiltonian(basis, ham)
        S = basis.overlap()
        evals, evecs = linalg.eigh(A, S)
    vec = evecs[:, 0]
    anchor = np.argmax(np.abs(vec))
    if vec[anchor] < 0:
        vec = -vec
    return float(evals[0]), vec
