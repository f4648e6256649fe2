import numpy as np
import pytest
import yaml

from netsense import cli, verify
from netsense.errors import IoError
from netsense.harness import (
    COLUMNS,
    SweepSpec,
    apply_axis,
    base_config,
    run_scheme,
    sweep,
)
from netsense.scenario import DEFAULT_TARGETS, make_scenario, scenario_from_config


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump({"mc_samples": 3, "Mr": 8}))
    return path


def test_parser_has_subcommands():
    p = cli.build_parser()
    for cmd in ("pcrb", "optimize", "ebc", "sweep", "verify"):
        assert p.parse_args([cmd] + (["x.yaml"] if cmd == "sweep" else [])).command == cmd


def test_pcrb_command(tiny_yaml, tmp_path, capsys):
    assert cli.main(["pcrb", str(tiny_yaml), "--fim-csv", str(tmp_path / "f.csv")]) == 0
    out = capsys.readouterr().out
    assert "PCRB" in out and "APCRB" in out and "rate" in out
    assert (tmp_path / "f.csv").exists()


def test_optimize_then_evaluate(tiny_yaml, tmp_path, capsys):
    design, trace = tmp_path / "d.npz", tmp_path / "t.csv"
    args = ["optimize", str(tiny_yaml), "--max-outer", "1", "--max-inner", "2",
            "--trace", str(trace), "--design-out", str(design)]
    assert cli.main(args) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert trace.read_text().startswith("iter,phase,objective")
    assert cli.main(["pcrb", str(tiny_yaml), "--design", str(design)]) == 0
    again = capsys.readouterr().out.splitlines()[0]
    assert float(first.split()[1]) == pytest.approx(float(again.split()[1]), rel=1e-9)


def test_ebc_command(tiny_yaml, tmp_path, capsys):
    plan = tmp_path / "plan.json"
    assert cli.main(["ebc", str(tiny_yaml), "--max-outer", "1", "--max-inner", "2", "--plan-out", str(plan)]) == 0
    assert "Lr = 4" in capsys.readouterr().out
    assert plan.read_text().lstrip().startswith("{")


def test_errors_exit_nonzero(tmp_path, capsys):
    assert cli.main(["pcrb", str(tmp_path / "missing.yaml")]) == 2
    assert "netsense:" in capsys.readouterr().err


def test_run_scheme_rows():
    sc = make_scenario(mc_samples=3)
    row = run_scheme("bench3", sc)
    assert row.ok and row.pcrb > 0 and row.apcrb == pytest.approx(row.pcrb / 2)
    bad = run_scheme("ebc", sc)  # Mr = 4 is not larger than 2K
    assert bad.status.startswith("error:") and np.isnan(bad.pcrb)
    with pytest.raises(ValueError):
        run_scheme("bench8", sc)


def test_apply_axis():
    cfg = base_config()
    assert scenario_from_config(apply_axis(cfg, "num_targets", 4)).K == 4
    assert scenario_from_config(apply_axis(cfg, "num_bs", 7)).N == 7
    assert scenario_from_config(apply_axis(cfg, "Mr", 6)).Mr == 6
    assert scenario_from_config(apply_axis(cfg, "power_dbm", 25)).power_budget[0] == pytest.approx(10**-0.5)
    with pytest.raises(ValueError):
        apply_axis(cfg, "num_bs", 8)
    assert base_config(full=True)["Mr"] == 16


def test_sweep_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        SweepSpec("colour", [1], ["alg3"])
    with pytest.raises(ValueError):
        SweepSpec("Mr", [], ["alg3"])
    with pytest.raises(ValueError):
        SweepSpec("Mr", [4], ["bench9"])


def _spec(tmp_path, name="s.csv", **kw):
    cfg = dict(axis="power_dbm", values=[25, 37], schemes=["bench3", "bench1", "ebc"],
               output=str(tmp_path / name), timing=False, overrides={"mc_samples": 3})
    cfg.update(kw)
    return SweepSpec(**cfg)


def test_sweep_is_deterministic_and_records_failures(tmp_path):
    rows = sweep(_spec(tmp_path, "a.csv"))
    sweep(_spec(tmp_path, "b.csv"))
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    assert a == b
    lines = a.decode().splitlines()
    assert lines[0] == ",".join(COLUMNS)
    assert [l.split(",")[1] for l in lines[1:]] == ["25", "25", "25", "37", "37", "37"]
    assert [r.scheme for r in rows] == ["bench3", "bench1", "ebc"] * 2
    assert all(r.status.startswith("error:") for r in rows if r.scheme == "ebc")
    assert all(r.ok and r.pcrb > 0 for r in rows if r.scheme != "ebc")
    assert rows[3].pcrb <= rows[0].pcrb  # more power, lower bound


def test_sweep_worker_pool_matches_serial(tmp_path):
    sweep(_spec(tmp_path, "serial.csv", schemes=["bench3"]))
    sweep(_spec(tmp_path, "pool.csv", schemes=["bench3"], workers=2))
    assert (tmp_path / "serial.csv").read_bytes() == (tmp_path / "pool.csv").read_bytes()


def test_sweep_unwritable(tmp_path):
    with pytest.raises(IoError):
        sweep(_spec(tmp_path, "missing/dir/x.csv", schemes=["bench3"], values=[31]))


def test_sweep_command(tmp_path, capsys):
    spec = tmp_path / "spec.yaml"
    spec.write_text(yaml.safe_dump(dict(axis="fronthaul_bits", values=[4, 8], schemes=["bench2"],
                                        overrides={"mc_samples": 3}, output="out.csv")))
    out = tmp_path / "o.csv"
    assert cli.main(["sweep", str(spec), "-o", str(out), "--no-timing"]) == 0
    assert len(out.read_text().splitlines()) == 3
    assert "2 rows written" in capsys.readouterr().out


def test_verify_command(capsys):
    assert cli.main(["verify", "--suite", "surrogates", "--suite", "invariance"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2 and "2/2 suites passed" in out


def test_verify_catches_sign_error(monkeypatch, capsys):
    real = verify.zeta_blocks

    def corrupted(*a, **k):
        F1, F2, F3 = real(*a, **k)
        return F1, -F2, F3

    monkeypatch.setattr(verify, "zeta_blocks", corrupted)
    assert cli.main(["verify", "--suite", "oracle"]) == 1
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="with D as the total bit budget over all receive antennas, uniform "
                   "quantisation of a single target at 8 bits stays far above the unlimited bound; see ledger")
def test_single_target_near_unlimited_at_8_bits():
    sc = make_scenario(targets=DEFAULT_TARGETS[:1], Mt=16, Mr=16, power_dbm=21.0, fronthaul_bits=8.0)
    v = {s: run_scheme(s, sc).pcrb for s in ("bench3", "alg3", "bench1")}
    assert max(v["alg3"], v["bench1"]) <= v["bench3"] * 1.02


@pytest.mark.slow
def test_single_target_joint_design_reaches_unlimited():
    # 8 bits per receive antenna is enough for one target once compression is optimised
    sc = make_scenario(targets=DEFAULT_TARGETS[:1], fronthaul_bits=8.0 * 4)
    v = {s: run_scheme(s, sc).pcrb for s in ("bench3", "alg3")}
    assert v["alg3"] <= v["bench3"] * 1.02


@pytest.mark.slow
def test_beamformer_variants_order():
    sc = make_scenario(Mr=8, mc_samples=10)
    v = {s: run_scheme(s, sc).pcrb for s in ("ebc", "bench4", "bench5", "bench7")}
    assert v["bench4"] >= v["ebc"]
    assert v["bench5"] <= v["ebc"] + 1e-6
    assert v["bench7"] <= v["ebc"] + 1e-6
