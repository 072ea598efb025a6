"""Independent brute-force reference implementations used only by the tests.

Everything here is written from first principles against the same conventions
as the library (interleaved spin orbitals, ascending-index operator strings)
but shares no code with it, so agreement is meaningful.
"""

from __future__ import annotations

import numpy as np


def popcount_below(bits: int, pos: int) -> int:
    return (bits & ((1 << pos) - 1)).bit_count()


def op_annihilate(bits: int, so: int):
    if not (bits >> so) & 1:
        return None
    sign = -1.0 if popcount_below(bits, so) & 1 else 1.0
    return bits & ~(1 << so), sign


def op_create(bits: int, so: int):
    if (bits >> so) & 1:
        return None
    sign = -1.0 if popcount_below(bits, so) & 1 else 1.0
    return bits | (1 << so), sign


def all_onvs_brute(m: int, n: int, ms: float) -> list[int]:
    """Filter all 2**m bitstrings on electron count and spin projection."""
    out = []
    for bits in range(1 << m):
        if bits.bit_count() != n:
            continue
        n_alpha = sum((bits >> so) & 1 for so in range(0, m, 2))
        n_beta = n - n_alpha
        if (n_alpha - n_beta) / 2.0 == ms:
            out.append(bits)
    return out


def spin_ladder_matrix(onvs: list[int], m: int, raising: bool) -> np.ndarray:
    """Dense S+ (or S-) in the given determinant list, padded to a closed map.

    Entries landing outside the list are dropped, which is fine for products
    like S- S+ that return to the original projection sector.
    """
    index = {b: i for i, b in enumerate(onvs)}
    # S+ moves beta -> alpha; collect images in a dict keyed by bits.
    images: list[dict[int, float]] = []
    for bits in onvs:
        img: dict[int, float] = {}
        for p in range(m // 2):
            so_from = 2 * p + (1 if raising else 0)
            so_to = 2 * p + (0 if raising else 1)
            step = op_annihilate(bits, so_from)
            if step is None:
                continue
            t, s1 = step
            step = op_create(t, so_to)
            if step is None:
                continue
            t, s2 = step
            img[t] = img.get(t, 0.0) + s1 * s2
        images.append(img)
    # Build the rectangular matrix onto the *union* sector.
    targets = sorted({b for img in images for b in img})
    tindex = {b: i for i, b in enumerate(targets)}
    mat = np.zeros((len(targets), len(onvs)))
    for col, img in enumerate(images):
        for b, v in img.items():
            mat[tindex[b], col] = v
    return mat, targets


def s2_matrix_brute(onvs: list[int], m: int, ms: float) -> np.ndarray:
    """Dense S^2 = S- S+ + Sz(Sz+1) over an explicit determinant list."""
    plus, mid = spin_ladder_matrix(onvs, m, raising=True)
    if len(mid) == 0:
        lowered = np.zeros((len(onvs), len(onvs)))
    else:
        minus, back = spin_ladder_matrix(mid, m, raising=False)
        # Map `back` onto the original list; S- S+ must land inside it.
        perm = np.zeros((len(onvs), len(back)))
        index = {b: i for i, b in enumerate(onvs)}
        for j, b in enumerate(back):
            perm[index[b], j] = 1.0
        lowered = perm @ minus @ plus
    return lowered + ms * (ms + 1.0) * np.eye(len(onvs))


def hamiltonian_matrix_brute(
    onvs: list[int], m_orb: int, h: np.ndarray, g: np.ndarray, e_core: float
) -> np.ndarray:
    """Assemble <bra|H|ket> by direct operator application.

    H = E_core + sum_{PQ,sigma} h_PQ a+_{P sigma} a_{Q sigma}
      + 1/2 sum_{PQRS,sigma,tau} (PQ|RS) a+_{P sigma} a+_{R tau} a_{S tau} a_{Q sigma}

    with spatial indices and chemists' two-electron integrals.
    """
    index = {b: i for i, b in enumerate(onvs)}
    dim = len(onvs)
    mat = np.zeros((dim, dim))
    spins = (0, 1)
    for col, ket in enumerate(onvs):
        acc: dict[int, float] = {}

        def add(bits, val):
            acc[bits] = acc.get(bits, 0.0) + val

        for P in range(m_orb):
            for Q in range(m_orb):
                for sg in spins:
                    step = op_annihilate(ket, 2 * Q + sg)
                    if step is None:
                        continue
                    t1, s1 = step
                    step = op_create(t1, 2 * P + sg)
                    if step is None:
                        continue
                    t2, s2 = step
                    add(t2, h[P, Q] * s1 * s2)
        for P in range(m_orb):
            for Q in range(m_orb):
                for R in range(m_orb):
                    for S in range(m_orb):
                        val = g[P, Q, R, S]
                        if val == 0.0:
                            continue
                        for sg in spins:
                            for tau in spins:
                                step = op_annihilate(ket, 2 * Q + sg)
                                if step is None:
                                    continue
                                t1, s1 = step
                                step = op_annihilate(t1, 2 * S + tau)
                                if step is None:
                                    continue
                                t2, s2 = step
                                step = op_create(t2, 2 * R + tau)
                                if step is None:
                                    continue
                                t3, s3 = step
                                step = op_create(t3, 2 * P + sg)
                                if step is None:
                                    continue
                                t4, s4 = step
                                add(t4, 0.5 * val * s1 * s2 * s3 * s4)
        for bits, val in acc.items():
            row = index.get(bits)
            if row is not None:
                mat[row, col] += val
    mat += e_core * np.eye(dim)
    return mat


def fd_gradient(f, x, idx, h=3e-4):
    """Richardson-extrapolated central difference along one coordinate.

    Combining steps h and h/2 cancels the h**2 truncation term, leaving
    roundoff of order eps*|f|/h as the dominant oracle error.
    """

    def central(step):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += step
        xm[idx] -= step
        return (f(xp) - f(xm)) / (2 * step)

    return (4.0 * central(h / 2) - central(h)) / 3.0


def fd_noise_bound(f_scale, h=3e-4):
    """Conservative roundoff bound on the finite-difference oracle itself."""
    return 64.0 * np.finfo(float).eps * max(1.0, abs(f_scale)) / h


def dense_g_from_unique(m_orb: int, entries: dict) -> np.ndarray:
    """Expand {(p,q,r,s): value} (0-based, chemists') to a full 8-fold array."""
    g = np.zeros((m_orb,) * 4)
    for (p, q, r, s), v in entries.items():
        for a, b in ((p, q), (q, p)):
            for c, d in ((r, s), (s, r)):
                g[a, b, c, d] = v
                g[c, d, a, b] = v
    return g
