"""Batch front end: configure, run, and report optimizations and oracles.

Exit codes are a stable contract: 0 success, 2 configuration or input error,
3 capacity (space too large for the dense oracle), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import analysis
from .correlators import ANSATZ_KINDS, AnsatzSpec, CorrelatorSet, select_sites
from .errors import (
    CapacityError,
    CgtnsError,
    ConfigError,
    ParseError,
)
from .fock import build_csf_basis, enumerate_onvs
from .hamiltonian import (
    HamiltonianOperator,
    exact_diagonalize,
    orbital_occupations,
    parse_fcidump,
)
from .optimizer import (
    PtConfig,
    bfgs_refine,
    cold_start,
    gradient_subspace_solve,
    reduced_gradient_sweep,
    run_parallel_tempering,
    save_checkpoint,
    sum_hybrid_start,
    warm_start_triples_from_pairs,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_NUMERICAL = 4

REFINE_STAGES = ("none", "bfgs", "reduced-gradient", "subspace")


@dataclass
class RunConfig:
    """Flat key-value run configuration; field order is the canonical order."""

    integrals: str = ""
    n_electrons: str = "auto"
    ms2: str = "auto"
    spin2: str = "auto"
    ansatz: str = "2s"
    window_lo: float = 0.02
    window_hi: float = 1.98
    nat_occ: str = "auto"
    t_first: float = 0.001
    t_last: float = 0.05
    replicas: int = 4
    sweeps: int = 200
    swap_interval: int = 5
    step_size: float = 0.1
    target_acceptance: float = 0.4
    init: str = "warm"
    refine: str = "none"
    screen: float = 0.0
    seed: int = 0
    out: str = "cgtns_run"
    dense_limit: int = 20000

    def validate(self) -> None:
        if self.ansatz not in ANSATZ_KINDS:
            raise ConfigError(
                f"unknown ansatz {self.ansatz!r}; choose from {ANSATZ_KINDS}"
            )
        if self.refine not in REFINE_STAGES:
            raise ConfigError(
                f"unknown refinement stage {self.refine!r}; choose from {REFINE_STAGES}"
            )
        if self.init not in ("warm", "cold"):
            raise ConfigError("init must be 'warm' or 'cold'")
        if not self.window_lo < self.window_hi:
            raise ConfigError("window_lo must be below window_hi")
        if self.screen < 0:
            raise ConfigError("screen must be >= 0")


def dump_config(cfg: RunConfig) -> str:
    """Canonical textual form; parsing it back and dumping again is identical."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    """Read 'key = value' lines; '#' starts a comment, blank lines ignored."""
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        target = known[key].type
        try:
            if target == "int" or target is int:
                values[key] = int(value)
            elif target == "float" or target is float:
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: cannot parse {value!r} for {key}"
            ) from None
    return RunConfig(**values)


def _resolve_spin_numbers(cfg: RunConfig, ints) -> tuple[int, int, int]:
    def pick(raw, fallback, name):
        if raw == "auto":
            if fallback is None:
                raise ConfigError(
                    f"{name} is 'auto' but the integral file does not provide it"
                )
            return int(fallback)
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"cannot parse {name} = {raw!r}") from None

    n_electrons = pick(cfg.n_electrons, ints.n_electrons, "n_electrons")
    ms2 = pick(cfg.ms2, ints.ms2, "ms2")
    spin2 = ms2 if cfg.spin2 == "auto" else int(cfg.spin2)
    return n_electrons, ms2, spin2


def _load_problem(cfg: RunConfig):
    if not cfg.integrals:
        raise ConfigError("no integral file configured (key 'integrals')")
    ints = parse_fcidump(cfg.integrals)
    n_electrons, ms2, spin2 = _resolve_spin_numbers(cfg, ints)
    space = enumerate_onvs(2 * ints.m_orb, n_electrons, ms2 / 2.0)
    basis = build_csf_basis(space, spin2 / 2.0)
    ham = HamiltonianOperator(ints, space)
    return ints, space, basis, ham


def _resolve_ansatz(cfg: RunConfig, ints, ham, dense_limit: int) -> AnsatzSpec:
    if not cfg.ansatz.endswith("sel"):
        return AnsatzSpec(cfg.ansatz)
    if cfg.nat_occ != "auto":
        occ = tuple(float(tok) for tok in cfg.nat_occ.split(","))
        if len(occ) != ints.m_orb:
            raise ConfigError(
                f"nat_occ lists {len(occ)} values for {ints.m_orb} orbitals"
            )
    elif ints.nat_occ is not None:
        occ = ints.nat_occ
    else:
        if ham.dim > dense_limit:
            raise ConfigError(
                "selected ansatz needs occupation numbers: provide nat_occ, "
                "the space is too large for the oracle density"
            )
        _, vec = exact_diagonalize(ham, dense_limit=dense_limit)
        occ = orbital_occupations(ham, vec)
    sites = select_sites(occ, (cfg.window_lo, cfg.window_hi))
    if not sites:
        raise ConfigError(
            f"occupation window [{cfg.window_lo}, {cfg.window_hi}] selected no sites"
        )
    return AnsatzSpec(cfg.ansatz, selected_sites=sites)


def _pt_config(cfg: RunConfig, seed: int, stage_sweeps: int | None = None) -> PtConfig:
    return PtConfig(
        t_first=cfg.t_first,
        t_last=cfg.t_last,
        n_replicas=cfg.replicas,
        sweeps=cfg.sweeps if stage_sweeps is None else stage_sweeps,
        swap_interval=cfg.swap_interval,
        step_size=cfg.step_size,
        seed=seed,
        target_acceptance=cfg.target_acceptance,
    )


def _pair_stage_kind(kind: str) -> str:
    """Pair ansatz whose converged tensors seed a triple-bearing run."""
    if kind in ("3s/si",):
        return "2s/si"
    return "2s"


def cmd_run(cfg: RunConfig) -> Path:
    """Full pipeline: optional pair stage, main stage, refinement, reports."""
    cfg.validate()
    ints, space, basis, ham = _load_problem(cfg)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)

    e_oracle = None
    if space.size <= cfg.dense_limit:
        e_oracle, _ = exact_diagonalize(ham, dense_limit=cfg.dense_limit)

    spec = _resolve_ansatz(cfg, ints, ham, cfg.dense_limit)
    m = space.m
    init_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(99,)))
    # Checkpoints land on disk as soon as each stage completes, so a failure
    # in a later stage never costs earlier results.
    (outdir / "config.txt").write_text(dump_config(cfg))

    if spec.kind in ("2s", "2s/si"):
        init = cold_start(spec, m, init_rng)
        ensemble = run_parallel_tempering(
            _pt_config(cfg, cfg.seed), spec, basis, ham, init, screen=cfg.screen
        )
    else:
        pair_spec = AnsatzSpec(_pair_stage_kind(spec.kind))
        pair_init = cold_start(pair_spec, m, init_rng)
        pair_ensemble = run_parallel_tempering(
            _pt_config(cfg, cfg.seed), pair_spec, basis, ham, pair_init,
            screen=cfg.screen,
        )
        analysis.export_trace(
            pair_ensemble.trace, outdir / "stage1_trace.csv", fmt="csv"
        )
        save_checkpoint(pair_ensemble, outdir / "stage1_checkpoint.json")
        pair_best = pair_ensemble.best_params()

        if spec.is_hybrid and spec.combine_mode == "sum":
            start = sum_hybrid_start(spec, pair_best, init_rng)
        elif spec.is_hybrid:
            start = CorrelatorSet.hybrid_from_pairs(spec, pair_best)
        elif cfg.init == "warm":
            start = warm_start_triples_from_pairs(spec, pair_best)
        else:
            start = cold_start(spec, m, init_rng)
        ensemble = run_parallel_tempering(
            _pt_config(cfg, cfg.seed + 1), spec, basis, ham, start,
            screen=cfg.screen,
        )
    analysis.export_trace(ensemble.trace, outdir / "trace.csv", fmt="csv")
    save_checkpoint(ensemble, outdir / "checkpoint.json")
    final_params = ensemble.best_params()
    final_energy = ensemble.best_energy

    if cfg.refine == "bfgs":
        result = bfgs_refine(final_params, spec, basis, ham)
        final_params, final_energy = result.params, result.energy
    elif cfg.refine == "reduced-gradient":
        result = reduced_gradient_sweep(final_params, spec, basis, ham)
        final_params, final_energy = result.params, result.energy
    elif cfg.refine == "subspace":
        active_pairs = [
            k for k in sorted(final_params.pairs) if k not in final_params.frozen
        ]
        if not active_pairs:
            raise ConfigError(
                "subspace refinement needs active pair tensors "
                f"(ansatz {spec.kind} has none)"
            )
        energy = final_energy
        for _ in range(50):
            improved = False
            for key in active_pairs:
                final_params, e_sub = gradient_subspace_solve(
                    final_params, spec, basis, ham, *key
                )
                if energy - e_sub > 1e-10:
                    improved = True
                energy = e_sub
            if not improved:
                break
        final_energy = energy

    (outdir / "correlators.json").write_text(final_params.dumps())

    n_active = final_params.n_active_parameters
    record = analysis.RunRecord(
        kind=spec.kind,
        n_active_parameters=n_active,
        n_frozen_parameters=final_params.n_parameters - n_active,
        reference_determinants=space.size,
        reference_csfs=basis.n_csfs,
        reduction_pct=analysis.reduction_percentage(n_active, space.size),
        final_energy=final_energy,
        trace_path="trace.csv",
        e_oracle=e_oracle,
        error_vs_oracle=None if e_oracle is None else final_energy - e_oracle,
        seed=cfg.seed,
    )
    (outdir / "record.json").write_text(record.to_json() + "\n")

    print(f"ansatz {spec.kind}: E = {final_energy:.10f} Ha")
    if e_oracle is not None:
        print(f"oracle E0 = {e_oracle:.10f} Ha, error = {final_energy - e_oracle:.3e}")
    print(f"outputs in {outdir}")
    return outdir


def cmd_oracle(cfg: RunConfig, out: str | None = None) -> dict:
    ints, space, basis, ham = _load_problem(cfg)
    e_det, _ = exact_diagonalize(ham, dense_limit=cfg.dense_limit)
    e_csf, _ = exact_diagonalize(ham, basis, dense_limit=cfg.dense_limit)
    doc = {
        "determinants": space.size,
        "csfs": basis.n_csfs,
        "spin2": basis.s2,
        "e0_determinant_basis": e_det,
        "e0_csf_basis": e_csf,
        "e_core": ints.e_core,
    }
    print(f"determinants: {space.size}")
    print(f"csfs (2S={basis.s2}): {basis.n_csfs}")
    print(f"E0 (determinant basis) = {e_det:.10f} Ha")
    print(f"E0 (CSF basis)         = {e_csf:.10f} Ha")
    if out:
        Path(out).write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def cmd_count(kind: str, m: int, reference_dim: int, n_selected: int | None) -> str:
    n, pct, shown = analysis.reduction_report(
        kind, m, reference_dim, n_selected=n_selected
    )
    line = f"{n}, {shown}%"
    print(line)
    return line


def cmd_compare(path_a: str, path_b: str) -> dict:
    rec_a = analysis.RunRecord.from_json(Path(path_a).read_text())
    rec_b = analysis.RunRecord.from_json(Path(path_b).read_text())
    hartree, kcal = analysis.spin_splitting(rec_a.final_energy, rec_b.final_energy)
    print(f"E(A) - E(B) = {hartree:.6f} Ha = {kcal:.2f} kcal/mol")
    print(
        f"reductions: A {rec_a.reduction_pct_display}% "
        f"({rec_a.kind}), B {rec_b.reduction_pct_display}% ({rec_b.kind})"
    )
    advisory = analysis.balanced_reduction_advisory(
        rec_a.reduction_pct, rec_b.reduction_pct
    )
    if advisory:
        print(f"advisory: {advisory}")
    return {
        "delta_hartree": hartree,
        "delta_kcal_per_mol": kcal,
        "advisory": advisory,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgtns",
        description="Correlator tensor network states over small active spaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--integrals", help="FCIDUMP integral file")
        p.add_argument("--seed", type=int, help="optimizer seed")
        p.add_argument("--ansatz", help="ansatz kind")
        p.add_argument("--window", help="occupation window LO,HI")
        p.add_argument("--screen", type=float, help="CSF screening threshold")
        p.add_argument("--out", help="output directory")
        p.add_argument(
            "--dump-config",
            action="store_true",
            help="print the effective configuration and exit",
        )

    run_p = sub.add_parser("run", help="optimize an ansatz")
    add_common(run_p)

    oracle_p = sub.add_parser("oracle", help="exact diagonalization summary")
    add_common(oracle_p)
    oracle_p.add_argument("--oracle-out", help="write the report as JSON")

    count_p = sub.add_parser("count", help="parameter count and reduction")
    count_p.add_argument("kind")
    count_p.add_argument("m", type=int)
    count_p.add_argument("reference_dim", type=int)
    count_p.add_argument("--selected", type=int, default=None)

    cmp_p = sub.add_parser("compare", help="splitting report for two runs")
    cmp_p.add_argument("record_a")
    cmp_p.add_argument("record_b")
    return parser


def _config_from_args(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse_config(text, path=str(path))
    else:
        cfg = RunConfig()
    if args.integrals:
        cfg.integrals = args.integrals
    if args.seed is not None:
        cfg.seed = args.seed
    if args.ansatz:
        cfg.ansatz = args.ansatz
    if args.window:
        try:
            lo, hi = (float(tok) for tok in args.window.split(","))
        except ValueError:
            raise ConfigError(f"cannot parse --window {args.window!r}") from None
        cfg.window_lo, cfg.window_hi = lo, hi
    if args.screen is not None:
        cfg.screen = args.screen
    if args.out:
        cfg.out = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run", "oracle"):
            cfg = _config_from_args(args)
            if args.dump_config:
                sys.stdout.write(dump_config(cfg))
                return EXIT_OK
            if args.command == "run":
                cmd_run(cfg)
            else:
                cmd_oracle(cfg, out=getattr(args, "oracle_out", None))
        elif args.command == "count":
            cmd_count(args.kind, args.m, args.reference_dim, args.selected)
        elif args.command == "compare":
            cmd_compare(args.record_a, args.record_b)
        return EXIT_OK
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CgtnsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
