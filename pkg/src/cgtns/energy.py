"""Variational energy of a correlator state in a spin-adapted basis.

The energy is the deterministic Rayleigh quotient over all CSF weights (with
optional relative screening); per-CSF estimators reproduce it identically
when summed with squared-weight probabilities, which the tests enforce.
Gradients are exact, assembled from the multilinear amplitude derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlators import AmplitudeEngine, AnsatzSpec, CorrelatorSet
from .errors import (
    DegenerateStateError,
    DimensionError,
    EstimatorUndefinedError,
    FrozenTensorError,
)
from .fock import CsfBasis
from .hamiltonian import HamiltonianOperator, csf_hamiltonian

#: Below this squared norm the state is treated as numerically vanished.
NORM_FLOOR = 1e-300


@dataclass
class EnergyReport:
    """Energy, squared norm, and screening bookkeeping of one evaluation."""

    e: float
    norm: float
    screened_csfs: int = 0
    estimator_samples: np.ndarray | None = None


class EnergyEvaluator:
    """Caches the CSF-basis operators for repeated evaluations of one ansatz.

    Builds the amplitude engine, the dense CSF Hamiltonian K H K^T, and the
    generic overlap K K^T once; every energy/gradient call then costs a
    handful of small dense products.  All heavy state is immutable, so one
    evaluator may serve many parameter vectors.
    """

    def __init__(
        self,
        spec: AnsatzSpec,
        m: int,
        basis: CsfBasis,
        ham: HamiltonianOperator,
        screen: float = 0.0,
    ):
        if basis.space is not ham.space and basis.space != ham.space:
            raise DimensionError("CSF basis and Hamiltonian use different spaces")
        if screen < 0:
            raise DimensionError(f"screening threshold must be >= 0, got {screen}")
        self.spec = spec
        self.screen = float(screen)
        self.basis = basis
        self.ham = ham
        self.engine = AmplitudeEngine(spec, m, basis.space)
        self.K = basis.dense()
        self.overlap = basis.overlap()
        self.h_csf = csf_hamiltonian(basis, ham)

    # -- parameter plumbing --------------------------------------------------

    def flatten(self, params: CorrelatorSet) -> np.ndarray:
        return self.engine.flatten(params)

    def unflatten(self, x: np.ndarray) -> CorrelatorSet:
        return self.engine.unflatten(x)

    def active_entry_labels(self) -> list[tuple[tuple, tuple]]:
        """(tensor key, element index) per gradient component, in order."""
        labels = []
        for e in self.engine.active_indices:
            t = int(np.searchsorted(self.engine.offsets, e, side="right") - 1)
            key = self.engine.keys[t]
            local = int(e - self.engine.offsets[t])
            shape = (2, 2) if len(key) == 2 else (2, 2, 2)
            labels.append((key, tuple(int(v) for v in np.unravel_index(local, shape))))
        return labels

    # -- energy ---------------------------------------------------------------

    def weights(self, x: np.ndarray) -> np.ndarray:
        return self.K @ self.engine.amplitudes(x)

    def energy_from_weights(
        self, S: np.ndarray, with_estimators: bool = False
    ) -> EnergyReport:
        S = np.asarray(S, dtype=float)
        if S.shape != (self.basis.n_csfs,):
            raise DimensionError("weight vector does not match the CSF basis")
        peak = np.max(np.abs(S)) if S.size else 0.0
        if not np.isfinite(peak):
            raise DegenerateStateError(
                "CSF weights overflowed; the energy is numerically undefined"
            )
        if peak > 1e100 or 0.0 < peak < 1e-100:
            # The quotient is invariant under rescaling; normalizing extreme
            # weight scales keeps the quadratic forms inside float range.
            return self._energy_from_normalized(S / peak, peak, with_estimators)
        samples = None
        if self.screen > 0.0 and peak > 0.0:
            keep = np.abs(S) >= self.screen * peak
            dropped = int(S.size - np.count_nonzero(keep))
            Ss = S[keep]
            hs = self.h_csf[np.ix_(keep, keep)] @ Ss
            num = Ss @ hs
            den = Ss @ self.overlap[np.ix_(keep, keep)] @ Ss
            if with_estimators:
                samples = np.full(S.size, np.nan)
                samples[keep] = hs / Ss
        else:
            dropped = 0
            hs = self.h_csf @ S
            num = S @ hs
            den = S @ self.overlap @ S
            if with_estimators:
                with np.errstate(divide="ignore", invalid="ignore"):
                    samples = np.where(np.abs(S) > NORM_FLOOR, hs / S, np.nan)
        if not den > NORM_FLOOR:
            raise DegenerateStateError(
                "all CSF weights vanished; the energy is undefined"
            )
        if not (np.isfinite(num) and np.isfinite(den)):
            raise DegenerateStateError(
                "quadratic forms overflowed; the energy is numerically undefined"
            )
        return EnergyReport(
            e=float(num / den),
            norm=float(den),
            screened_csfs=dropped,
            estimator_samples=samples,
        )

    def _energy_from_normalized(self, Sn, peak, with_estimators):
        """Energy of rescaled weights; reported norm restores the true scale.

        The restored norm may saturate to inf for extreme scales while the
        energy itself stays finite and exact.
        """
        inner = self.energy_from_weights(Sn, with_estimators)
        norm = float(inner.norm * peak * peak)
        if norm == 0.0:  # underflowed scale restoration; the state is valid
            norm = float(np.finfo(float).tiny)
        return EnergyReport(
            e=inner.e,
            norm=norm,
            screened_csfs=inner.screened_csfs,
            estimator_samples=inner.estimator_samples,
        )

    def energy(self, x: np.ndarray, with_estimators: bool = False) -> EnergyReport:
        return self.energy_from_weights(self.weights(x), with_estimators)

    # -- estimators -------------------------------------------------------------

    def estimator(self, r: int, x: np.ndarray) -> float:
        """Per-CSF energy estimate E_r = sum_s (S_s/S_r) <CSF_s|H|CSF_r>."""
        S = self.weights(x)
        if not 0 <= r < S.size:
            raise DimensionError(f"CSF index {r} out of range")
        peak = np.max(np.abs(S))
        floor = self.screen * peak if self.screen > 0.0 else NORM_FLOOR
        if abs(S[r]) < floor or S[r] == 0.0:
            raise EstimatorUndefinedError(
                f"weight S_{r} = {S[r]:.3e} below the screening floor"
            )
        if self.screen > 0.0 and peak > 0.0:
            keep = np.abs(S) >= self.screen * peak
            return float(S[keep] @ self.h_csf[keep, r] / S[r])
        return float(S @ self.h_csf[:, r] / S[r])

    # -- gradients ---------------------------------------------------------------

    def gradient_from_weights(self, S, dS) -> np.ndarray:
        """2 [ <dPsi|H|Psi> - E <dPsi|Psi> ] / <Psi|Psi> for rows dS."""
        HS = self.h_csf @ S
        OS = self.overlap @ S
        den = float(S @ OS)
        if not den > NORM_FLOOR:
            raise DegenerateStateError("degenerate norm; gradient undefined")
        e = float(S @ HS) / den
        return 2.0 * (dS @ HS - e * (dS @ OS)) / den

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Exact dE/d(entry) for every active tensor entry, unscreened."""
        S = self.weights(x)
        jac = self.engine.jacobian(x)          # (n_active, n_det)
        dS = jac @ self.K.T                    # (n_active, n_csf)
        return self.gradient_from_weights(S, dS)


def _evaluator(params, spec, basis, ham, screen=0.0):
    return EnergyEvaluator(spec, params.m, basis, ham, screen=screen)


def variational_energy(
    params: CorrelatorSet,
    spec: AnsatzSpec,
    basis: CsfBasis,
    ham: HamiltonianOperator,
    screen: float = 0.0,
    with_estimators: bool = False,
) -> EnergyReport:
    """Rayleigh quotient of the correlator state over the CSF basis.

    CSFs whose |weight| falls below ``screen * max|weight|`` are dropped from
    numerator and denominator alike; ``screen=0`` keeps every CSF.
    ``with_estimators`` also fills the per-CSF energy estimates (NaN where a
    weight sits below the floor).
    """
    ev = _evaluator(params, spec, basis, ham, screen)
    return ev.energy(ev.flatten(params), with_estimators)


def csf_estimator(
    r: int,
    params: CorrelatorSet,
    spec: AnsatzSpec,
    basis: CsfBasis,
    ham: HamiltonianOperator,
    screen: float = 0.0,
) -> float:
    ev = _evaluator(params, spec, basis, ham, screen)
    return ev.estimator(r, ev.flatten(params))


def energy_gradient(
    params: CorrelatorSet,
    spec: AnsatzSpec,
    basis: CsfBasis,
    ham: HamiltonianOperator,
) -> np.ndarray:
    """Analytic energy gradient over all active tensor entries."""
    ev = _evaluator(params, spec, basis, ham)
    return ev.gradient(ev.flatten(params))


def site_pair_gradient(
    params: CorrelatorSet,
    spec: AnsatzSpec,
    basis: CsfBasis,
    ham: HamiltonianOperator,
    i: int,
    j: int,
) -> np.ndarray:
    """The four gradient components of pair tensor (i, j).

    Sliced from the full gradient so the values are bit-identical to the
    corresponding components of ``energy_gradient``.
    """
    key = (i, j) if i <= j else (j, i)
    if key not in params.pairs:
        raise DimensionError(f"no pair tensor {key} in this ansatz")
    if key in params.frozen:
        raise FrozenTensorError(f"pair tensor {key} is frozen")
    ev = _evaluator(params, spec, basis, ham)
    full = ev.gradient(ev.flatten(params))
    labels = ev.active_entry_labels()
    rows = [row for row, (k, _) in enumerate(labels) if k == key]
    return full[rows]


# -- oracle-eigenvector seam -------------------------------------------------


def energy_from_amplitudes(
    c: np.ndarray, basis: CsfBasis, ham: HamiltonianOperator, screen: float = 0.0
) -> EnergyReport:
    """Energy of an explicit determinant-amplitude vector (test seam).

    Projects the amplitudes through the CSF map exactly like a correlator
    state, so injecting an oracle eigenvector reproduces the oracle energy.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (basis.space.size,):
        raise DimensionError("amplitude vector does not match the space")
    ev = EnergyEvaluator(AnsatzSpec("2s"), basis.space.m, basis, ham, screen=screen)
    return ev.energy_from_weights(ev.K @ c)


def amplitude_space_gradient(
    c: np.ndarray, basis: CsfBasis, ham: HamiltonianOperator
) -> np.ndarray:
    """dE/dc_n for an explicit amplitude vector (test seam).

    Vanishes at any eigenvector of the projected problem, which pins the
    stationarity of the Rayleigh quotient independently of the tensor
    parameterization.
    """
    c = np.asarray(c, dtype=float)
    ev = EnergyEvaluator(AnsatzSpec("2s"), basis.space.m, basis, ham)
    S = ev.K @ c
    return ev.gradient_from_weights(S, ev.K.T)
