import csv
import json
import math
import os

import numpy as np
import pytest

from treespectra import cli
from treespectra.cli import ConfigError, Result, main, parse_config, parse_grid

FAST = ["--pool", "2000", "--sweeps", "10", "--warm_sweeps", "5"]


def run(tmp_path, *args):
    return main(list(args) + ["--out", str(tmp_path)])


def manifest(tmp_path):
    with open(tmp_path / "manifest.json") as fh:
        return json.load(fh)


def table(tmp_path, name):
    with open(tmp_path / f"{name}.csv", newline="") as fh:
        return list(csv.reader(fh))


class TestParsing:
    def test_empty_config_gives_defaults(self):
        cfg = parse_config("")
        for key, (default, kind) in cli.DEFAULTS.items():
            got = cfg.values[key]
            if kind == "grid":
                assert np.array_equal(got, parse_grid(default))
            elif isinstance(default, float) and math.isnan(default):
                assert math.isnan(got)
            else:
                assert got == default

    def test_grid_forms(self):
        assert np.allclose(parse_grid("0:1:5"), [0, 0.25, 0.5, 0.75, 1])
        assert np.allclose(parse_grid("1e-2, 1e-3"), [1e-2, 1e-3])

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# header\n\nK = 3  # branching\n")
        assert cfg.values["K"] == 3 and cfg.sources == {"K": "file"}

    def test_negative_eta_names_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config("eta = -1\n")
        assert err.value.key == "eta" and "line 1" in str(err.value)

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config("lamda = 0.3\n")
        assert err.value.key == "lamda"

    def test_syntax(self):
        with pytest.raises(ConfigError):
            parse_config("K 3\n")

    def test_bad_types(self):
        with pytest.raises(ConfigError):
            parse_config("K = two\n")
        with pytest.raises(ConfigError):
            parse_config("phi1 = maybe\n")

    @pytest.mark.parametrize("line", ["alpha = 1.5", "s = 0.5,1.0", "K = 1", "dist = laplace", "lambda = -0.1",
                                      "resonance.mode = other", "pool = 0"])
    def test_validation(self, line):
        with pytest.raises(ConfigError):
            parse_config(line + "\n")

    def test_ld_requires_fields(self):
        with pytest.raises(ConfigError) as err:
            parse_config("resonance.mode = ld\n")
        assert err.value.key.startswith(("ld.", "resonance."))

    def test_ld_kappa_window(self):
        base = "resonance.mode = ld\nld.phi1 = -0.5\nld.gamma = 0.4\nld.eps = 0.001\nld.b = 2\nresonance.ell = 1\n"
        parse_config(base + "ld.kappa = 0.01\n")
        with pytest.raises(ConfigError) as err:
            parse_config(base + "ld.kappa = 0.2\n")
        assert err.value.key == "ld.kappa"

    def test_flag_overrides_file(self):
        cfg = parse_config("lambda = 0.3\n", {"lambda": "0.5"})
        assert cfg.values["lambda"][0] == 0.5 and cfg.sources["lambda"] == "flag"

    def test_negative_flag_value(self):
        cfg = cli.config_from_argv(["spectrum", "--E", "-1"])
        assert cfg.values["E"][0] == -1.0
        cfg = cli.config_from_argv(["spectrum", "--E=-2.5"])
        assert cfg.values["E"][0] == -2.5

    def test_verify_needs_suite(self):
        with pytest.raises(ConfigError):
            parse_config("", subcommand="verify", suite="nope")


class TestCommands:
    def test_spectrum(self, tmp_path):
        assert run(tmp_path, "spectrum", "--dist", "uniform", "--lambda", "0.5", "--E", "0,3.5") == 0
        rows = table(tmp_path, "spectrum")
        assert rows[0][:5] == ["E", "lambda", "sigma_lo", "sigma_hi", "in_spectrum"]
        assert rows[1][4] == "true" and rows[2][4] == "false"
        assert float(rows[1][2]) == -2 * math.sqrt(2) - 0.5

    def test_lyapunov_free(self, tmp_path):
        assert run(tmp_path, "lyapunov", "--dist", "none", "--E", "0") == 0
        rows = table(tmp_path, "lyapunov")
        assert float(rows[1][2]) == pytest.approx(math.log(2) / 2, abs=1e-15)
        assert float(rows[1][3]) == 0.0

    def test_dos_header(self, tmp_path):
        assert run(tmp_path, "dos", "--dist", "none", "--E", "0") == 0
        assert table(tmp_path, "dos")[0] == ["E", "eta", "rooted_D", "full_D", "stderr", "converged"]

    def test_manifest_records_flag_source(self, tmp_path):
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text("lambda = 0.3\ndist = none\n")
        out = tmp_path / "o"
        assert main(["spectrum", "--config", str(cfgfile), "--lambda", "0.5", "--out", str(out)]) == 0
        m = manifest(out)
        assert m["config"]["lambda"] == "0.5" and m["sources"]["lambda"] == "flag"
        assert m["sources"]["dist"] == "file"
        assert m["outputs"] == ["spectrum.csv"] and m["bound_violation"] is False
        assert {"version", "wall_clock_s", "master_seed", "task_seeds", "flags"} <= set(m)

    def test_free_energy_and_rate(self, tmp_path):
        args = ["--lambda", "0.5", "--E", "0", "--n", "20", "--chains", "200"] + FAST
        assert run(tmp_path, "free-energy", *args) == 0
        rows = table(tmp_path, "free_energy")
        assert rows[0] == ["E", "lambda", "s", "phi", "stderr", "n", "eta", "flagged"] and len(rows) == 11
        assert run(tmp_path, "rate-function", *args) == 0
        assert table(tmp_path, "rate_function")[0] == ["E", "lambda", "gamma", "I", "s_star"]

    def test_greens_identities(self, tmp_path):
        assert run(tmp_path, "verify", "greens-identities") == 0
        rows = table(tmp_path, "greens_identities")
        assert rows[0] == list(cli.CHECK_HEADER)
        assert all(r[-1] == "true" for r in rows[1:])

    def test_ray_sum(self, tmp_path):
        assert run(tmp_path, "verify", "ray-sum", "--dist", "uniform", "--lambda", "1", "--R", "4",
                   "--trials", "2000") == 0

    def test_rerun_reproduces(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["lyapunov", "--lambda", "0.4", "--E", "0,1", "--seed", "5", "--out", str(a)] + FAST) == 0
        assert main(["rerun", "--manifest", str(a / "manifest.json"), "--out", str(b), "--workers", "2"]) == 0
        assert (a / "lyapunov.csv").read_text() == (b / "lyapunov.csv").read_text()


class TestExitCodes:
    def test_config_error(self, tmp_path, capsys):
        assert run(tmp_path, "lyapunov", "--eta", "-1") == 1
        assert "eta" in capsys.readouterr().err

    def test_unknown_subcommand(self, tmp_path):
        assert run(tmp_path, "bogus") == 1

    def test_missing_config_file(self, tmp_path):
        assert run(tmp_path, "lyapunov", "--config", str(tmp_path / "missing.cfg")) == 1

    def test_rerun_needs_manifest(self, tmp_path):
        assert run(tmp_path, "rerun") == 1

    def test_violation(self, tmp_path, monkeypatch):
        monkeypatch.setitem(cli.SUITE_RUNNERS, "ray-sum",
                            lambda v: Result({"ray_sum": (cli.CHECK_HEADER, [])}, violation=True))
        assert run(tmp_path, "verify", "ray-sum") == 2
        assert manifest(tmp_path)["bound_violation"] is True

    def test_hard_error(self, tmp_path, capsys):
        # ray-sum refuses unbounded disorder
        assert run(tmp_path, "verify", "ray-sum", "--dist", "cauchy") == 1
        assert "error" in capsys.readouterr().err


class TestWrites:
    def test_atomic_write_replaces(self, tmp_path):
        p = tmp_path / "x.csv"
        cli.atomic_write(str(p), "a\n")
        cli.atomic_write(str(p), "b\n")
        assert p.read_text() == "b\n"
        assert os.listdir(tmp_path) == ["x.csv"]

    def test_csv_format(self):
        text = cli.csv_text(("a", "b", "c"), [(0.1, True, "x")])
        assert text.splitlines() == ["a,b,c", "0.10000000000000001,true,x"]
