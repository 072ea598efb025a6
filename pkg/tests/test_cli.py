"""Command-line front end: config round trips, commands, exit codes."""

import json
from pathlib import Path

import pytest

from cgtns.analysis import RunRecord, reduction_percentage
from cgtns.cli import (
    EXIT_CAPACITY,
    EXIT_CONFIG,
    EXIT_OK,
    RunConfig,
    cmd_run,
    dump_config,
    main,
    parse_config,
)
from cgtns.correlators import param_count

FIXTURES = Path(__file__).parent.parent / "src" / "cgtns" / "fixtures"
H2 = str(FIXTURES / "h2.fcidump")


def quick_cfg(**overrides):
    base = dict(
        integrals=H2,
        replicas=2,
        sweeps=10,
        t_first=0.001,
        t_last=0.02,
        swap_interval=3,
        seed=11,
    )
    base.update(overrides)
    return RunConfig(**base)


class TestConfigRoundTrip:
    def test_dump_parse_dump_is_byte_identical(self):
        cfg = quick_cfg(ansatz="3s[2s]", screen=0.001)
        text = dump_config(cfg)
        again = dump_config(parse_config(text))
        assert again == text

    def test_cli_dump_config_round_trip(self, capsys, tmp_path):
        assert main(["run", "--integrals", H2, "--dump-config"]) == EXIT_OK
        first = capsys.readouterr().out
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(first)
        assert main(["run", "--config", str(cfg_file), "--dump-config"]) == EXIT_OK
        assert capsys.readouterr().out == first

    def test_unknown_key_rejected(self):
        with pytest.raises(Exception):
            parse_config("no_such_key = 1\n")

    def test_comments_and_blanks(self):
        cfg = parse_config("# comment\n\nseed = 9\n")
        assert cfg.seed == 9

    def test_flag_overrides(self, capsys):
        assert (
            main(
                [
                    "run",
                    "--integrals",
                    H2,
                    "--seed",
                    "123",
                    "--ansatz",
                    "2s/si",
                    "--window",
                    "0.1,1.9",
                    "--screen",
                    "0.01",
                    "--out",
                    "somewhere",
                    "--dump-config",
                ]
            )
            == EXIT_OK
        )
        text = capsys.readouterr().out
        assert "seed = 123" in text
        assert "ansatz = 2s/si" in text
        assert "window_lo = 0.1" in text
        assert "screen = 0.01" in text
        assert "out = somewhere" in text


class TestCount:
    def test_pair_row(self, capsys):
        assert main(["count", "2s", "24", "13108"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "1200, 91%"

    def test_triple_row(self, capsys):
        assert main(["count", "3s", "24", "13108"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "20800, -59%"

    def test_selected_row(self, capsys):
        assert main(["count", "3s[2s]sel", "24", "13108", "--selected", "14"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "4480, 66%"

    def test_unknown_kind_is_config_error(self, capsys):
        assert main(["count", "9s", "24", "13108"]) == EXIT_NUMERICAL_OR_CONFIG()


def EXIT_NUMERICAL_OR_CONFIG():
    # Unknown ansatz kinds surface as DimensionError -> numerical exit.
    from cgtns.cli import EXIT_NUMERICAL

    return EXIT_NUMERICAL


class TestOracle:
    def test_h2_dimensions_and_energy(self, capsys):
        assert main(["oracle", "--integrals", H2]) == EXIT_OK
        out = capsys.readouterr().out
        assert "determinants: 4" in out
        assert "csfs (2S=0): 3" in out
        prov = json.loads((FIXTURES / "provenance.json").read_text())
        e_fci = prov["systems"]["h2"]["e_fci"]
        assert f"{e_fci:.10f}"[:10] in out

    def test_zero_integrals_gives_core_energy(self, capsys, tmp_path):
        f = tmp_path / "zero.fcidump"
        f.write_text("&FCI NORB=2,NELEC=2,MS2=0,\n&END\n-7.5 0 0 0 0\n")
        assert main(["oracle", "--integrals", str(f)]) == EXIT_OK
        assert "-7.5000000000" in capsys.readouterr().out

    def test_oversized_space_exits_3(self, capsys, tmp_path):
        cfg = tmp_path / "small.cfg"
        cfg.write_text(f"integrals = {H2}\ndense_limit = 2\n")
        assert main(["oracle", "--config", str(cfg)]) == EXIT_CAPACITY

    def test_missing_file_exits_2(self, capsys):
        assert main(["oracle", "--integrals", "/nonexistent.fcidump"]) == EXIT_CONFIG


class TestRun:
    def test_pair_run_writes_artifacts(self, tmp_path):
        cfg = quick_cfg(out=str(tmp_path / "run"))
        outdir = cmd_run(cfg)
        for name in ("config.txt", "trace.csv", "checkpoint.json",
                     "correlators.json", "record.json"):
            assert (outdir / name).exists()
        record = RunRecord.from_json((outdir / "record.json").read_text())
        assert record.kind == "2s"
        assert record.e_oracle is not None
        assert record.error_vs_oracle >= -1e-12

    def test_same_seed_identical_records(self, tmp_path):
        cfg_a = quick_cfg(out=str(tmp_path / "a"))
        cfg_b = quick_cfg(out=str(tmp_path / "b"))
        out_a = cmd_run(cfg_a)
        out_b = cmd_run(cfg_b)
        rec_a = (out_a / "record.json").read_text()
        rec_b = (out_b / "record.json").read_text()
        assert rec_a == rec_b
        assert (out_a / "trace.csv").read_text() == (out_b / "trace.csv").read_text()
        # Re-running into the same directory overwrites with identical bytes.
        cmd_run(quick_cfg(out=str(tmp_path / "a")))
        assert (out_a / "record.json").read_text() == rec_a

    def test_screened_run_completes(self, tmp_path):
        cfg = quick_cfg(screen=0.05, out=str(tmp_path / "scr"))
        outdir = cmd_run(cfg)
        record = RunRecord.from_json((outdir / "record.json").read_text())
        assert record.error_vs_oracle >= -1e-12

    def test_sum_hybrid_run(self, tmp_path):
        cfg = quick_cfg(ansatz="3s/si+[2s]", sweeps=6, out=str(tmp_path / "sum"))
        outdir = cmd_run(cfg)
        record = RunRecord.from_json((outdir / "record.json").read_text())
        assert record.kind == "3s/si+[2s]"
        assert record.n_active_parameters == param_count("3s/si", 4)
        assert record.error_vs_oracle >= -1e-12

    def test_pure_triple_warm_and_cold_inits(self, tmp_path):
        warm = quick_cfg(ansatz="3s/si", sweeps=6, out=str(tmp_path / "warm"))
        cold = quick_cfg(
            ansatz="3s/si", sweeps=6, init="cold", out=str(tmp_path / "cold")
        )
        rec_w = RunRecord.from_json((cmd_run(warm) / "record.json").read_text())
        rec_c = RunRecord.from_json((cmd_run(cold) / "record.json").read_text())
        for rec in (rec_w, rec_c):
            assert rec.kind == "3s/si"
            assert rec.error_vs_oracle >= -1e-12

    def test_full_window_selection_matches_unrestricted_hybrid(self, tmp_path):
        cfg = quick_cfg(
            ansatz="3s[2s]sel",
            window_lo=0.0,
            window_hi=2.0,
            sweeps=4,
            out=str(tmp_path / "sel"),
        )
        outdir = cmd_run(cfg)
        record = RunRecord.from_json((outdir / "record.json").read_text())
        assert record.n_active_parameters == param_count("3s[2s]", 4)

    def test_hybrid_run_freezes_pairs_and_keeps_stage_artifacts(self, tmp_path):
        from cgtns.correlators import CorrelatorSet

        cfg = quick_cfg(ansatz="3s[2s]", sweeps=5, out=str(tmp_path / "hyb"))
        outdir = cmd_run(cfg)
        cset = CorrelatorSet.loads((outdir / "correlators.json").read_text())
        assert cset.frozen == frozenset(cset.pairs)
        record = RunRecord.from_json((outdir / "record.json").read_text())
        assert record.n_frozen_parameters == 4 * len(cset.pairs)
        assert (outdir / "stage1_trace.csv").exists()
        assert (outdir / "stage1_checkpoint.json").exists()

    def test_refinement_stage_bfgs(self, tmp_path):
        cfg = quick_cfg(refine="bfgs", out=str(tmp_path / "ref"))
        outdir = cmd_run(cfg)
        record = RunRecord.from_json((outdir / "record.json").read_text())
        # Quasi-Newton refinement on the pair ansatz drives the small H2
        # problem essentially to the oracle.
        assert record.error_vs_oracle < 1e-5

    def test_run_without_integrals_exits_2(self):
        assert main(["run"]) == EXIT_CONFIG

    def test_h6_end_to_end(self, tmp_path):
        # Largest bundled fixture through the whole pipeline: 400
        # determinants, 175 singlet CSFs, 312 pair parameters.
        cfg = RunConfig(
            integrals=str(FIXTURES / "h6.fcidump"),
            replicas=2,
            sweeps=60,
            t_first=0.001,
            t_last=0.03,
            swap_interval=5,
            seed=6,
            out=str(tmp_path / "h6run"),
        )
        outdir = cmd_run(cfg)
        record = RunRecord.from_json((outdir / "record.json").read_text())
        assert record.reference_determinants == 400
        assert record.reference_csfs == 175
        assert record.n_active_parameters == param_count("2s", 12)
        assert record.error_vs_oracle >= -1e-12
        assert record.error_vs_oracle < 0.2  # seed 6 lands near 0.09 Ha


class TestCompare:
    def make_record(self, path, kind, energy, pct_params=(1200, 13108)):
        record = RunRecord(
            kind=kind,
            n_active_parameters=pct_params[0],
            n_frozen_parameters=0,
            reference_determinants=pct_params[1],
            reference_csfs=0,
            reduction_pct=reduction_percentage(*pct_params),
            final_energy=energy,
        )
        Path(path).write_text(record.to_json())

    def test_splitting_anchor(self, tmp_path, capsys):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        self.make_record(a, "2s", -1542.194072)
        self.make_record(b, "2s", -1542.104681)
        assert main(["compare", str(a), str(b)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "-0.089391 Ha" in out
        assert "-56.09 kcal/mol" in out

    def test_identical_runs(self, tmp_path, capsys):
        a = tmp_path / "a.json"
        self.make_record(a, "2s", -1.0)
        assert main(["compare", str(a), str(a)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "0.000000 Ha" in out
        assert "advisory" not in out

    def test_mismatched_reductions_advisory(self, tmp_path, capsys):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        self.make_record(a, "2s", -1542.194072, pct_params=(1200, 13108))
        self.make_record(b, "3s[2s]sel", -1542.194826, pct_params=(4480, 13108))
        assert main(["compare", str(a), str(b)]) == EXIT_OK
        assert "advisory" in capsys.readouterr().out

    def test_missing_record_exits_2(self, tmp_path):
        assert main(["compare", str(tmp_path / "no.json"), str(tmp_path / "no.json")]) == EXIT_CONFIG
