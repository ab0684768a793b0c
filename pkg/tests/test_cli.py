import json

import pytest

from cryo_spdc.cli import run
from cryo_spdc.fileio import GRID_MAGIC, TAG_MAGIC, read_sweep


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("CRYO_SPDC_DEBUG", "CRYO_SPDC_CONFIG", "CRYO_SPDC_THREADS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def invoke(capsys):
    """Run one command line; returns (exit status, parsed summary or None, stderr)"""

    def call(*args):
        code = run([str(a) for a in args])
        captured = capsys.readouterr()
        lines = [line for line in captured.out.splitlines() if line.strip()]
        summary = json.loads(lines[-1]) if code == 0 and lines else None
        return code, summary, captured.err

    return call


def artifacts(directory):
    return {
        p.relative_to(directory): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != "run.log"
    }


class TestCommands:
    """One invocation per subcommand"""

    @pytest.mark.integration
    def test_index(self, invoke, out_dir):
        """Effective and group index of the TE mode at 1550 nm"""
        code, summary, _ = invoke("--out", out_dir, "index", "--wavelength-nm", 1550)
        assert code == 0
        assert summary["status"] == "ok"
        assert 2.1 < summary["n"] < 2.3
        assert summary["group_index"] > summary["n"]
        assert len(summary["config_hash"]) == 16

    @pytest.mark.integration
    def test_pm_solve(self, invoke, out_dir):
        """The JSON artifact and the summary agree"""
        code, summary, _ = invoke("--out", out_dir, "pm", "solve", "-T", 295)
        assert code == 0
        artifact = json.loads((out_dir / "pm_solve.json").read_text())
        assert artifact["lambda_s_nm"] == summary["lambda_s_nm"]
        assert artifact["config_hash"] == summary["config_hash"]
        assert summary["lambda_s_nm"] > 2 * summary["lambda_p_nm"]

    @pytest.mark.integration
    def test_pm_sweep(self, invoke, out_dir):
        """4-300 K in 149 steps gives 149 rows, all solved"""
        code, summary, _ = invoke(
            "--out",
            out_dir,
            "pm",
            "sweep",
            "--tmin",
            4,
            "--tmax",
            300,
            "--steps",
            149,
            "--period",
            8.98e-6,
        )
        assert code == 0
        rows = read_sweep(out_dir / "sweep_8.9800um.csv")
        assert len(rows) == 149
        assert all(row["ok"] for row in rows)
        assert summary["curves"]["8.9800um"] == {"solved": 149, "gaps": 0}

    @pytest.mark.integration
    def test_pm_design(self, invoke, out_dir):
        """A degenerate design phase-matches its target"""
        code, summary, _ = invoke("--out", out_dir, "pm", "design", "--signal-nm", 1556)
        assert code == 0
        artifact = json.loads((out_dir / "pm_design.json").read_text())
        assert artifact["solution"]["lambda_s_nm"] == pytest.approx(1556.0, abs=1e-3)
        assert summary["poling_period_um"] == pytest.approx(artifact["poling_period_um"])

    @pytest.mark.integration
    def test_jsi_marginal(self, invoke, out_dir):
        """A marginal spectrum is written next to the grid"""
        assert invoke("--out", out_dir, "jsi", "simulate")[0] == 0
        code, summary, _ = invoke(
            "--out", out_dir, "jsi", "marginal", "--grid", out_dir / "jsi.csv", "--axis", "idler"
        )
        assert code == 0
        assert (out_dir / "marginal_idler.csv").exists()
        assert summary["axis"] == "idler"


class TestPipelines:
    """Commands chained through their artifacts"""

    @pytest.mark.integration
    def test_simulate_then_fit_length(self, invoke, out_dir):
        """A simulated 7.3 mm grid fits back to 7.3 mm"""
        code, summary, _ = invoke("--out", out_dir, "jsi", "simulate", "--length-mm", 7.3)
        assert code == 0
        assert summary["shape"][0] == 31
        code, summary, _ = invoke(
            "--out", out_dir, "fit", "length", "--measured", out_dir / "jsi.csv"
        )
        assert code == 0
        assert summary["effective_length_mm"] == pytest.approx(7.3, rel=1e-2)
        assert not summary["at_bound"]

    @pytest.mark.integration
    def test_ideal_source_metrics(self, invoke, out_dir):
        """One detected pair per pulse gives Klyshko efficiency 1"""
        code, summary, _ = invoke(
            "--out",
            out_dir,
            "counts",
            "simulate",
            "--statistics",
            "single",
            "--mean-pairs",
            1.0,
            "--efficiencies",
            "1,1",
            "--duration-s",
            1e-4,
        )
        assert code == 0
        assert summary["singles"] == {"0": 8000, "1": 8000}
        code, summary, _ = invoke(
            "--out", out_dir, "counts", "analyze", "--tags", out_dir / "tags.csv"
        )
        assert code == 0
        assert summary["metrics"]["klyshko"] == pytest.approx(1.0, rel=1e-12)
        assert summary["metrics"]["g2"] is None
        report = json.loads((out_dir / "metrics.json").read_text())
        assert "undefined" in report["metrics"]["brightness"]

    @pytest.mark.integration
    def test_binary_format(self, invoke, out_dir):
        """--format bin switches grids and tags to the binary layouts"""
        assert invoke("--out", out_dir, "--format", "bin", "jsi", "simulate")[0] == 0
        assert invoke("--out", out_dir, "--format", "bin", "counts", "simulate")[0] == 0
        assert (out_dir / "jsi.bin").read_bytes()[:8] == GRID_MAGIC
        assert (out_dir / "tags.bin").read_bytes()[:8] == TAG_MAGIC
        code, summary, _ = invoke(
            "--out",
            out_dir,
            "fit",
            "length",
            "--measured",
            out_dir / "jsi.bin",
            "--grid-points",
            60,
        )
        assert code == 0
        assert summary["effective_length_mm"] == pytest.approx(7.3, rel=2e-2)

    @pytest.mark.integration
    def test_plot(self, invoke, out_dir):
        """--plot adds a PNG"""
        code, summary, _ = invoke("--out", out_dir, "--plot", "jsi", "simulate")
        assert code == 0
        png = out_dir / "jsi.png"
        assert str(png) in summary["outputs"]
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    @pytest.mark.integration
    def test_reruns_are_byte_identical(self, invoke, tmp_path):
        """Same configuration and seed, same bytes (the log aside)"""
        first, second = tmp_path / "first", tmp_path / "second"
        commands = [
            ("--seed", 5, "pm", "solve"),
            ("--plot", "pm", "sweep", "--steps", 10),
            ("pm", "design", "--signal-nm", 1560),
            ("--plot", "jsi", "simulate"),
            ("jsi", "marginal", "--grid", "{out}/jsi.csv", "--instrument-response-nm", 0.909),
            ("fit", "length", "--measured", "{out}/jsi.csv", "--grid-points", 40),
            ("fit", "marginal", "--spectrum", "{out}/marginal_signal.csv"),
            ("--seed", 5, "counts", "simulate", "--splitter", 0.5, "--mean-pairs", 0.2),
            ("counts", "analyze", "--tags", "{out}/tags.csv"),
        ]
        for out in (first, second):
            for command in commands:
                args = [str(a).format(out=out) for a in command]
                assert invoke("--out", out, *args)[0] == 0, args
        assert (first / "run.log").exists()
        assert sorted(p.name for p in first.iterdir()) == sorted(p.name for p in second.iterdir())
        assert artifacts(first) == artifacts(second)


class TestErrors:
    """Exit statuses and messages"""

    @pytest.mark.integration
    def test_unknown_flag(self, invoke, out_dir):
        """Usage errors exit with status 2"""
        code, _, err = invoke("--out", out_dir, "pm", "solve", "--bogus")
        assert code == 2
        assert "--bogus" in err

    @pytest.mark.integration
    def test_unknown_crystal(self, invoke, out_dir):
        """Toolkit errors exit with status 1 and print the message"""
        code, _, err = invoke("--out", out_dir, "--crystal", "sapphire_chip", "pm", "solve")
        assert code == 1
        assert "No bundled configuration" in err

    @pytest.mark.integration
    def test_invalid_design_target(self, invoke, out_dir):
        """A signal shorter than the pump cannot be designed for"""
        code, _, err = invoke("--out", out_dir, "pm", "design", "--signal-nm", 700)
        assert code == 1
        assert "Error" in err

    @pytest.mark.integration
    def test_crystal_file_as_config(self, invoke, out_dir, tmp_path):
        """--config accepts a crystal document"""
        crystal = tmp_path / "chip.toml"
        crystal.write_text(
            'name = "chip"\nmaterial = "lithium_niobate"\nlength_mm = 24.4\n'
            "poling_period_um = 8.98\n"
        )
        code, summary, _ = invoke("--config", crystal, "--out", out_dir, "pm", "solve")
        assert code == 0
        assert 1540 < summary["lambda_s_nm"] < 1630

    @pytest.mark.integration
    def test_unexpected_failure(self, invoke, out_dir, mocker):
        """Failures outside the toolkit still exit 1, with the traceback in the log"""
        mocker.patch("cryo_spdc.cli.solve_phasematch", side_effect=ValueError("bad bracket"))
        code, _, err = invoke("--out", out_dir, "--debug", "pm", "solve")
        assert code == 1
        assert "ValueError: bad bracket" in err
        assert "Traceback" in (out_dir / "run.log").read_text()

    @pytest.mark.integration
    def test_bounds_up_to_chip_length(self, invoke, out_dir):
        """--bounds may end exactly at the 24.4 mm chip length"""
        assert invoke("--out", out_dir, "jsi", "simulate")[0] == 0
        code, summary, err = invoke(
            "--out",
            out_dir,
            "fit",
            "length",
            "--measured",
            out_dir / "jsi.csv",
            "--bounds",
            "1e-3,24.4e-3",
        )
        assert code == 0, err
        assert summary["effective_length_mm"] == pytest.approx(7.3, rel=1e-2)
