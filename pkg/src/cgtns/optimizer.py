"""Energy minimization over correlator space.

A parallel-tempering Metropolis walk does the global search; quasi-Newton,
per-pair reduced-gradient sweeps, and a local generalized-eigenvalue update
refine locally.  Every entry point is deterministic for a fixed seed and
keeps the best-so-far energy non-increasing.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from .correlators import AnsatzSpec, CorrelatorSet
from .energy import EnergyEvaluator
from .errors import (
    ConfigError,
    DegenerateStateError,
    DimensionError,
    FrozenTensorError,
)
from .fock import CsfBasis
from .hamiltonian import HamiltonianOperator

log = logging.getLogger(__name__)

#: Bounds on the adaptive Metropolis step width.
STEP_BOUNDS = (1e-9, 1e2)
#: Per-sweep cap on the multiplicative step update.
STEP_FACTOR_CAP = 2.0
#: Rows of trace kept inside a checkpoint document.
TRACE_TAIL = 200


@dataclass
class PtConfig:
    """Parallel-tempering run parameters.

    Temperatures are artificial, in Hartree.  ``target_acceptance`` drives
    the bounded multiplicative step adaptation; set it to None to freeze the
    proposal width.
    """

    t_first: float = 0.001
    t_last: float = 0.05
    n_replicas: int = 4
    sweeps: int = 200
    swap_interval: int = 5
    step_size: float = 0.1
    seed: int = 0
    target_acceptance: float | None = 0.4

    def __post_init__(self):
        if not 0 < self.t_first <= self.t_last:
            raise ConfigError(
                f"need 0 < t_first <= t_last, got ({self.t_first}, {self.t_last})"
            )
        if self.n_replicas < 1:
            raise ConfigError("n_replicas must be >= 1")
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.sweeps < 0:
            raise ConfigError("sweeps must be >= 0")
        if self.swap_interval < 1:
            raise ConfigError("swap_interval must be >= 1")
        if self.target_acceptance is not None and not 0 < self.target_acceptance < 1:
            raise ConfigError("target_acceptance must lie in (0, 1)")


def temperature_ladder(t_first: float, t_last: float, p: int) -> list[float]:
    """Log-spaced temperatures T_l = T_1 * exp((ln T_P - ln T_1)/(P-1))**(l-1)."""
    if p < 1:
        raise ConfigError("replica count must be >= 1")
    if p == 1:
        if t_first != t_last:
            raise ConfigError(
                "a single replica requires equal first and last temperatures"
            )
        return [t_first]
    if not 0 < t_first <= t_last:
        raise ConfigError("need 0 < t_first <= t_last")
    ratio = math.exp((math.log(t_last) - math.log(t_first)) / (p - 1))
    return [t_first * ratio ** (l - 1) for l in range(1, p + 1)]


def swap_probability(t_i: float, e_i: float, t_j: float, e_j: float) -> float:
    """min{1, exp(dE/dT)} with dE = E_j - E_i and dT = T_j T_i / (T_i - T_j)."""
    if t_i == t_j:
        raise ConfigError("swap probability undefined for equal temperatures")
    delta_e = e_j - e_i
    delta_t = t_j * t_i / (t_i - t_j)
    arg = delta_e / delta_t
    if arg >= 0:
        return 1.0
    return math.exp(arg)


@dataclass
class TraceRow:
    sweep: int
    replica: int
    temperature: float
    energy: float
    acceptance: float
    swapped: bool

    def as_list(self):
        return [
            self.sweep,
            self.replica,
            self.temperature,
            self.energy,
            self.acceptance,
            self.swapped,
        ]


@dataclass
class ReplicaState:
    x: np.ndarray
    energy: float
    step: float
    rng: np.random.Generator


@dataclass
class ReplicaEnsemble:
    """Full optimizer state: replicas, best-so-far, and the run trace."""

    config: PtConfig
    spec: AnsatzSpec
    m: int
    temperatures: list[float]
    replicas: list[ReplicaState]
    best_x: np.ndarray
    best_energy: float
    trace: list[TraceRow] = field(default_factory=list)
    sweeps_done: int = 0
    swap_attempts: int = 0
    swap_rng: np.random.Generator = None
    evaluator: EnergyEvaluator = field(default=None, repr=False)

    def best_params(self) -> CorrelatorSet:
        return self.evaluator.unflatten(self.best_x)


def _replica_rng(seed: int, index: int) -> np.random.Generator:
    """Stream split: the base seed spawns one child sequence per replica.

    Replica r draws from SeedSequence(seed).spawn key (r,); the swap decisions
    use the extra key (n_replicas,).  Serial and parallel execution therefore
    see identical streams.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _renormalize_product_scale(engine, x: np.ndarray) -> np.ndarray:
    """Pull product-form amplitudes back toward unit scale, bit-exactly.

    Product ansatze have a flat direction (rescaling active tensors rescales
    every amplitude without changing the energy), so a long walk can drift
    the amplitude scale toward float overflow or underflow.  Multiplying
    active tensors by powers of two shifts only exponents: amplitudes, and
    hence the energy quotient, are unchanged except for the removed scale.
    Sum hybrids are left alone (their addend scale is physical).
    """
    if getattr(engine, "sum_mode", False):
        return x
    amps = np.abs(engine.amplitudes(x))
    peak = float(np.max(amps))
    if not np.isfinite(peak) or peak == 0.0:
        return x
    if 2.0**-50 < peak < 2.0**50:
        return x
    k = -int(math.floor(math.log2(peak)))
    active_tensors = []
    for t, key in enumerate(engine.keys):
        sl = slice(engine.offsets[t], engine.offsets[t] + engine.sizes[t])
        if engine.active_mask[sl].any():
            active_tensors.append(sl)
    if not active_tensors:
        return x
    n = len(active_tensors)
    q, r = divmod(k, n)
    x = x.copy()
    for i, sl in enumerate(active_tensors):
        x[sl] *= 2.0 ** (q + 1 if i < r else q)
    return x


def metropolis_sweep(
    replica: ReplicaState,
    temperature: float,
    evaluator,
    target_acceptance: float | None = None,
) -> float:
    """One proposed move per active tensor entry, in fixed order.

    Proposals add a uniform perturbation from [-step, step] to one entry;
    acceptance follows min{1, exp(-(E_new - E_old)/T)}.  A failed energy
    evaluation aborts that move and leaves the state unchanged.  When a
    target acceptance is given, the step width is rescaled multiplicatively
    afterwards (bounded per sweep and globally).  Returns the acceptance
    ratio of the sweep.
    """
    active = evaluator.engine.active_indices
    if len(active) == 0:
        raise FrozenTensorError("no active parameters to optimize")
    rng = replica.rng
    accepted = 0
    for entry in active:
        delta = rng.uniform(-replica.step, replica.step)
        x_new = replica.x.copy()
        x_new[entry] += delta
        try:
            e_new = evaluator.energy(x_new).e
        except DegenerateStateError:
            log.warning("energy evaluation failed; move on entry %d aborted", entry)
            continue
        de = e_new - replica.energy
        if de <= 0.0 or rng.random() < math.exp(-de / temperature):
            replica.x = x_new
            replica.energy = e_new
            accepted += 1
    ratio = accepted / len(active)
    if target_acceptance is not None:
        factor = math.exp(ratio - target_acceptance)
        factor = min(max(factor, 1.0 / STEP_FACTOR_CAP), STEP_FACTOR_CAP)
        replica.step = min(max(replica.step * factor, STEP_BOUNDS[0]), STEP_BOUNDS[1])
    engine = getattr(evaluator, "engine", None)
    if engine is not None and hasattr(engine, "keys"):
        replica.x = _renormalize_product_scale(engine, replica.x)
    return ratio


def run_parallel_tempering(
    config: PtConfig,
    spec: AnsatzSpec,
    basis: CsfBasis,
    ham: HamiltonianOperator,
    init: CorrelatorSet,
    screen: float = 0.0,
) -> ReplicaEnsemble:
    """Minimize the variational energy with replica-exchange Metropolis.

    All replicas start from ``init``; frozen tensors never move.  Swap
    attempts run every ``swap_interval`` sweeps over adjacent temperature
    pairs with alternating even/odd pairing.
    """
    init.validate(spec)
    if config.n_replicas > 1 and config.t_first == config.t_last:
        raise ConfigError(
            "multiple replicas need strictly increasing temperatures; "
            "equal endpoints make the swap rule undefined"
        )
    evaluator = EnergyEvaluator(spec, init.m, basis, ham, screen=screen)
    temperatures = temperature_ladder(
        config.t_first, config.t_last, config.n_replicas
    )
    x0 = evaluator.flatten(init)
    e0 = evaluator.energy(x0).e
    replicas = [
        ReplicaState(
            x=x0.copy(),
            energy=e0,
            step=config.step_size,
            rng=_replica_rng(config.seed, r),
        )
        for r in range(config.n_replicas)
    ]
    ensemble = ReplicaEnsemble(
        config=config,
        spec=spec,
        m=init.m,
        temperatures=temperatures,
        replicas=replicas,
        best_x=x0.copy(),
        best_energy=e0,
        swap_rng=_replica_rng(config.seed, config.n_replicas),
        evaluator=evaluator,
    )
    continue_parallel_tempering(ensemble, config.sweeps)
    return ensemble


def continue_parallel_tempering(ensemble: ReplicaEnsemble, sweeps: int) -> None:
    """Advance an ensemble by ``sweeps`` further sweeps, in place."""
    config = ensemble.config
    evaluator = ensemble.evaluator
    if evaluator is None:
        raise DimensionError("ensemble has no evaluator; load it with basis and H")
    p = config.n_replicas
    for _ in range(sweeps):
        sweep = ensemble.sweeps_done + 1
        acceptances = []
        for r, replica in enumerate(ensemble.replicas):
            ratio = metropolis_sweep(
                replica,
                ensemble.temperatures[r],
                evaluator,
                config.target_acceptance,
            )
            acceptances.append(ratio)
            if replica.energy < ensemble.best_energy:
                ensemble.best_energy = replica.energy
                ensemble.best_x = replica.x.copy()
        swapped = [False] * p
        if p > 1 and sweep % config.swap_interval == 0:
            start = ensemble.swap_attempts % 2
            for i in range(start, p - 1, 2):
                prob = swap_probability(
                    ensemble.temperatures[i],
                    ensemble.replicas[i].energy,
                    ensemble.temperatures[i + 1],
                    ensemble.replicas[i + 1].energy,
                )
                if ensemble.swap_rng.random() < prob:
                    a, b = ensemble.replicas[i], ensemble.replicas[i + 1]
                    a.x, b.x = b.x, a.x
                    a.energy, b.energy = b.energy, a.energy
                    swapped[i] = swapped[i + 1] = True
            ensemble.swap_attempts += 1
        for r, replica in enumerate(ensemble.replicas):
            ensemble.trace.append(
                TraceRow(
                    sweep=sweep,
                    replica=r,
                    temperature=ensemble.temperatures[r],
                    energy=replica.energy,
                    acceptance=acceptances[r],
                    swapped=swapped[r],
                )
            )
        ensemble.sweeps_done = sweep


# ---------------------------------------------------------------------------
# Warm starts
# ---------------------------------------------------------------------------


def cold_start(spec: AnsatzSpec, m: int, rng: np.random.Generator) -> CorrelatorSet:
    """Identity-biased start: every entry 1 + uniform noise in [-0.1, 0.1]."""
    cset = CorrelatorSet.identity(spec, m)
    for key in sorted(cset.pairs):
        if key not in cset.frozen:
            cset.pairs[key] += rng.uniform(-0.1, 0.1, (2, 2))
    for key in sorted(cset.triples):
        cset.triples[key] += rng.uniform(-0.1, 0.1, (2, 2, 2))
    return cset


def sum_hybrid_start(
    spec: AnsatzSpec, pair_source: CorrelatorSet, rng: np.random.Generator
) -> CorrelatorSet:
    """Frozen pairs plus near-zero triples, so the added product term is tiny."""
    if spec.combine_mode != "sum":
        raise DimensionError(f"{spec.kind} is not an additive hybrid")
    cset = CorrelatorSet.hybrid_from_pairs(spec, pair_source)
    for key in sorted(cset.triples):
        cset.triples[key][:] = rng.uniform(-1e-3, 1e-3, (2, 2, 2))
    return cset


def _slot_pairs(key: tuple[int, int, int]):
    i, j, k = key
    return (
        ((i, j), (0, 1, None)),
        ((i, k), (0, None, 1)),
        ((j, k), (None, 0, 1)),
    )


def warm_start_triples_from_pairs(
    spec: AnsatzSpec, pair_source: CorrelatorSet
) -> CorrelatorSet:
    """Pure-triple parameters that reproduce the pair-product amplitudes.

    Every triple entry takes the geometric mean |C_ij C_ik C_jk|**(1/n) of its
    slot pair factors, with n the number of slot appearances of a pair across
    the triple set (m+2 with self-interaction triples, m-2 without), so that
    the full triple product recovers each pair factor to the first power.
    The sign of each pair factor is applied once, at its lexicographically
    first slot appearance.
    """
    if not spec.has_triples or spec.has_pairs:
        raise DimensionError(f"{spec.kind} is not a pure triple ansatz")
    m = pair_source.m
    triple_keys = spec.triple_keys(m)
    need_si_pairs = spec.triples_si
    expected_pairs = (
        tuple((i, j) for i in range(m) for j in range(i, m))
        if need_si_pairs
        else tuple((i, j) for i in range(m) for j in range(i + 1, m))
    )
    if tuple(sorted(pair_source.pairs)) != expected_pairs:
        raise DimensionError(
            "pair source must carry exactly the pair set matching the "
            "triple ansatz (self-interaction pairs only with si triples)"
        )
    exponent = 1.0 / (m + 2) if spec.triples_si else 1.0 / (m - 2)

    triples: dict[tuple, np.ndarray] = {}
    for key in triple_keys:
        tensor = np.ones((2, 2, 2))
        for pair, layout in _slot_pairs(key):
            source = pair_source.pairs[pair]
            for a in range(2):
                for b in range(2):
                    magnitude = abs(source[a, b]) ** exponent
                    idx = [slice(None)] * 3
                    idx[layout.index(0)] = a
                    idx[layout.index(1)] = b
                    tensor[tuple(idx)] *= magnitude
        triples[key] = tensor
    # Assign each pair-entry sign once, at the first slot appearance.
    assigned: set[tuple[int, int]] = set()
    for key in triple_keys:
        for pair, layout in _slot_pairs(key):
            if pair in assigned:
                continue
            source = pair_source.pairs[pair]
            tensor = triples[key]
            for a in range(2):
                for b in range(2):
                    if source[a, b] < 0:
                        idx = [slice(None)] * 3
                        idx[layout.index(0)] = a
                        idx[layout.index(1)] = b
                        tensor[tuple(idx)] *= -1.0
            assigned.add(pair)
    return CorrelatorSet(m=m, pairs={}, triples=triples, frozen=frozenset())


# ---------------------------------------------------------------------------
# Gradient refinements
# ---------------------------------------------------------------------------


@dataclass
class RefineResult:
    params: CorrelatorSet
    energy: float
    n_iterations: int
    converged: bool
    message: str = ""


def bfgs_refine(
    params: CorrelatorSet,
    spec: AnsatzSpec,
    basis: CsfBasis,
    ham: HamiltonianOperator,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> RefineResult:
    """Quasi-Newton descent on the exact energy with the analytic gradient.

    Never returns a point with higher energy than the input; a line-search
    failure surfaces as ``converged=False`` with the best point found.
    """
    params.validate(spec)
    evaluator = EnergyEvaluator(spec, params.m, basis, ham)
    active = evaluator.engine.active_indices
    if len(active) == 0:
        raise FrozenTensorError("no active parameters to refine")
    x_full = evaluator.flatten(params)
    best = {"y": x_full[active].copy(), "e": evaluator.energy(x_full).e}

    def assemble(y):
        x = x_full.copy()
        x[active] = y
        return x

    def fun(y):
        try:
            e = evaluator.energy(assemble(y)).e
        except DegenerateStateError:
            return np.inf
        if e < best["e"]:
            best["e"] = e
            best["y"] = np.asarray(y).copy()
        return e

    def jac(y):
        try:
            return evaluator.gradient(assemble(y))
        except DegenerateStateError:
            return np.zeros(len(active))

    start_grad = jac(best["y"])
    if float(np.max(np.abs(start_grad), initial=0.0)) < tol:
        return RefineResult(
            params=evaluator.unflatten(assemble(best["y"])),
            energy=best["e"],
            n_iterations=0,
            converged=True,
            message="gradient already below tolerance",
        )
    res = optimize.minimize(
        fun,
        best["y"].copy(),
        jac=jac,
        method="BFGS",
        options={"gtol": tol, "maxiter": max_iter},
    )
    return RefineResult(
        params=evaluator.unflatten(assemble(best["y"])),
        energy=best["e"],
        n_iterations=int(res.nit),
        converged=bool(res.success),
        message=str(res.message),
    )


def reduced_gradient_sweep(
    params: CorrelatorSet,
    spec: AnsatzSpec,
    basis: CsfBasis,
    ham: HamiltonianOperator,
    passes: int = 3,
    initial_step: float = 0.5,
    tol: float = 1e-10,
) -> RefineResult:
    """Cycle over pair tensors, line-searching along each local 4-gradient.

    Each accepted step strictly lowers the energy; the sweep stops after
    ``passes`` full cycles or as soon as a cycle brings no improvement.
    """
    params.validate(spec)
    active_pairs = [k for k in sorted(params.pairs) if k not in params.frozen]
    if not active_pairs:
        raise FrozenTensorError("reduced-gradient sweep needs active pair tensors")
    evaluator = EnergyEvaluator(spec, params.m, basis, ham)
    labels = evaluator.active_entry_labels()
    rows_of = {
        key: np.array([r for r, (k, _) in enumerate(labels) if k == key])
        for key in active_pairs
    }
    flat_of = {
        key: evaluator.engine.active_indices[rows_of[key]] for key in active_pairs
    }
    x = evaluator.flatten(params)
    energy = evaluator.energy(x).e
    done = 0
    for _ in range(passes):
        improved = False
        for key in active_pairs:
            grad = evaluator.gradient(x)[rows_of[key]]
            norm = float(np.max(np.abs(grad), initial=0.0))
            if norm < tol:
                continue
            step = initial_step
            for _ in range(40):
                x_trial = x.copy()
                x_trial[flat_of[key]] -= step * grad
                try:
                    e_trial = evaluator.energy(x_trial).e
                except DegenerateStateError:
                    e_trial = np.inf
                if e_trial < energy - 1e-14:
                    x, energy = x_trial, e_trial
                    improved = True
                    break
                step *= 0.5
        done += 1
        if not improved:
            break
    return RefineResult(
        params=evaluator.unflatten(x),
        energy=energy,
        n_iterations=done,
        converged=True,
    )


def gradient_subspace_solve(
    params: CorrelatorSet,
    spec: AnsatzSpec,
    basis: CsfBasis,
    ham: HamiltonianOperator,
    i: int,
    j: int,
) -> tuple[CorrelatorSet, float]:
    """Optimal pair tensor (i, j) from a 4-dimensional eigenvalue problem.

    The state is linear in the chosen tensor's entries, so the partial
    derivative states span a subspace containing it; the lowest eigenpair of
    the Hamiltonian/overlap pencil in that subspace gives the replacement
    entries and the new energy.  Near-singular overlaps are rank-reduced at
    a relative eigenvalue floor of 1e-10.
    """
    params.validate(spec)
    key = (i, j) if i <= j else (j, i)
    if key not in params.pairs:
        raise DimensionError(f"no pair tensor {key} in this ansatz")
    if key in params.frozen:
        raise FrozenTensorError(f"pair tensor {key} is frozen")
    if spec.combine_mode != "product":
        raise DimensionError(
            "subspace update requires the state to be linear in the tensor"
        )
    evaluator = EnergyEvaluator(spec, params.m, basis, ham)
    labels = evaluator.active_entry_labels()
    rows = np.array([r for r, (k, _) in enumerate(labels) if k == key])
    x = evaluator.flatten(params)
    jac = evaluator.engine.jacobian(x)
    V = np.asarray(jac[rows] @ evaluator.K.T)
    h_sub = V @ evaluator.h_csf @ V.T
    s_sub = V @ evaluator.overlap @ V.T
    h_sub = 0.5 * (h_sub + h_sub.T)
    s_sub = 0.5 * (s_sub + s_sub.T)
    w, U = linalg.eigh(s_sub)
    w_max = float(w[-1])
    if w_max <= 0.0:
        raise DegenerateStateError(
            "all subspace states vanish; cannot update this tensor"
        )
    keep = w > 1e-10 * w_max
    X = U[:, keep] / np.sqrt(w[keep])
    evals, Y = linalg.eigh(X.T @ h_sub @ X)
    coeff = X @ Y[:, 0]
    x_new = x.copy()
    x_new[evaluator.engine.active_indices[rows]] = coeff
    return evaluator.unflatten(x_new), float(evals[0])


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(ensemble: ReplicaEnsemble, path) -> None:
    """Write the full ensemble state (tensors, RNG streams, trace tail)."""
    doc = {
        "format": "cgtns-checkpoint",
        "version": 1,
        "config": asdict(ensemble.config),
        "ansatz": {
            "kind": ensemble.spec.kind,
            "selected_sites": (
                list(ensemble.spec.selected_sites)
                if ensemble.spec.selected_sites
                else None
            ),
            "si_selected_triples": ensemble.spec.si_selected_triples,
        },
        "m": ensemble.m,
        "temperatures": ensemble.temperatures,
        "sweeps_done": ensemble.sweeps_done,
        "swap_attempts": ensemble.swap_attempts,
        "best_energy": ensemble.best_energy,
        "best_x": ensemble.best_x.tolist(),
        "replicas": [
            {
                "x": r.x.tolist(),
                "energy": r.energy,
                "step": r.step,
                "rng_state": r.rng.bit_generator.state,
            }
            for r in ensemble.replicas
        ],
        "swap_rng_state": ensemble.swap_rng.bit_generator.state,
        "trace_tail": [row.as_list() for row in ensemble.trace[-TRACE_TAIL:]],
    }
    Path(path).write_text(json.dumps(doc))


def _restore_rng(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def load_checkpoint(
    path, basis: CsfBasis, ham: HamiltonianOperator
) -> ReplicaEnsemble:
    """Rebuild an ensemble; continuing it reproduces the uninterrupted run."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "cgtns-checkpoint" or doc.get("version") != 1:
        raise DimensionError(f"{path} is not a version-1 checkpoint")
    ansatz = doc["ansatz"]
    spec = AnsatzSpec(
        ansatz["kind"],
        selected_sites=(
            tuple(ansatz["selected_sites"]) if ansatz["selected_sites"] else None
        ),
        si_selected_triples=ansatz["si_selected_triples"],
    )
    config = PtConfig(**doc["config"])
    evaluator = EnergyEvaluator(spec, doc["m"], basis, ham)
    replicas = [
        ReplicaState(
            x=np.asarray(r["x"], dtype=float),
            energy=float(r["energy"]),
            step=float(r["step"]),
            rng=_restore_rng(r["rng_state"]),
        )
        for r in doc["replicas"]
    ]
    trace = [
        TraceRow(
            sweep=int(row[0]),
            replica=int(row[1]),
            temperature=float(row[2]),
            energy=float(row[3]),
            acceptance=float(row[4]),
            swapped=bool(row[5]),
        )
        for row in doc["trace_tail"]
    ]
    return ReplicaEnsemble(
        config=config,
        spec=spec,
        m=doc["m"],
        temperatures=[float(t) for t in doc["temperatures"]],
        replicas=replicas,
        best_x=np.asarray(doc["best_x"], dtype=float),
        best_energy=float(doc["best_energy"]),
        trace=trace,
        sweeps_done=int(doc["sweeps_done"]),
        swap_attempts=int(doc["swap_attempts"]),
        swap_rng=_restore_rng(doc["swap_rng_state"]),
        evaluator=evaluator,
    )
