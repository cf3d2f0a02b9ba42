import subprocess
import sys

import pytest

from wviab.cli import main
from wviab.measures import dirac, save_csv
from wviab.scenario import (Scenario, ScenarioError, canonical_text,
                            parse_scenario, parse_scenario_text)

from conftest import SCENARIOS

MINIMAL = """
dimension = 1
horizon = 1.0
seed = 3
measure.weights = 1.0
measure.points = 0.2
bounds.M.values = 0.5
generator.0.field.kind = constant
generator.0.field.offset = 0.3
tube.kind = moment_cap
tube.cap.values = 1.0
tube.modulus.values = 0.1
"""


def run_cli(args):
    return main([str(a) for a in args])


def test_parse_minimal_scenario():
    sc = parse_scenario_text(MINIMAL)
    assert sc.dimension == 1 and sc.horizon == 1.0 and sc.seed == 3
    assert sc.velocity_set.k == 1
    assert sc.tube.cap(0.5) == 1.0


def test_parse_rejects_bad_weights():
    bad = MINIMAL.replace("measure.weights = 1.0", "measure.weights = 0.9")
    with pytest.raises(ScenarioError) as err:
        parse_scenario_text(bad)
    assert "measure.weights" in str(err.value)


def test_parse_rejects_unknown_key():
    with pytest.raises(ScenarioError) as err:
        parse_scenario_text(MINIMAL + "tube.colour = blue\n")
    assert "tube.colour" in str(err.value)


def test_parse_rejects_missing_required():
    with pytest.raises(ScenarioError) as err:
        parse_scenario_text(MINIMAL.replace("bounds.M.values = 0.5\n", ""))
    assert "bounds.M" in str(err.value)


def test_parse_rejects_undeclared_m_bound():
    bad = MINIMAL.replace("bounds.M.values = 0.5", "bounds.M.values = 0.1")
    with pytest.raises(ScenarioError) as err:
        parse_scenario_text(bad)
    assert "bounds.M" in str(err.value)


def test_canonical_round_trip():
    sc = parse_scenario_text(MINIMAL)
    text = canonical_text(sc.raw)
    again = parse_scenario_text(text)
    assert again.raw == sc.raw
    assert canonical_text(again.raw) == text


def test_bundled_scenarios_parse():
    for name in ("tangency.cfg", "radius02.cfg", "usc_viable.cfg",
                 "adversarial.cfg", "counterexample.cfg"):
        sc = parse_scenario(SCENARIOS / name)
        assert isinstance(sc, Scenario)


def test_time_varying_generator_pieces():
    text = MINIMAL.replace(
        "generator.0.field.kind = constant\ngenerator.0.field.offset = 0.3\n",
        "generator.0.piece.0.until = 0.5\n"
        "generator.0.piece.0.field.kind = constant\n"
        "generator.0.piece.0.field.offset = 0.3\n"
        "generator.0.piece.1.field.kind = constant\n"
        "generator.0.piece.1.field.offset = -0.3\n")
    sc = parse_scenario_text(text)
    base = sc.velocity_set.generators[0].base
    assert len(base.fields) == 2
    assert base.breaks == (0.0, 0.5, 1.0)


def test_cli_w1_prints_cost(capsys):
    code = run_cli(["w1", SCENARIOS / "measures" / "cloud_a.csv",
                    SCENARIOS / "measures" / "cloud_b.csv"])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("W1 = ")
    assert len(out.split("=")[1].strip()) >= 10  # 12 significant digits


def test_cli_exit_2_on_bad_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(MINIMAL.replace("measure.weights = 1.0",
                                   "measure.weights = 0.9"))
    code = run_cli(["probe", bad, "-o", tmp_path / "out", "--no-plot"])
    assert code == 2
    assert "measure.weights" in capsys.readouterr().err


def test_cli_construct_lipschitz_tangency(tmp_path):
    out = tmp_path / "out"
    code = run_cli(["construct-lipschitz", SCENARIOS / "tangency.cfg",
                    "-o", out, "--no-plot"])
    assert code == 0
    rows = (out / "defects.csv").read_text().splitlines()
    assert rows[0] == "t_k,defect"
    defects = [float(r.split(",")[1]) for r in rows[1:]]
    assert max(defects) <= 1e-6
    assert (out / "trajectory.csv").exists()


def test_cli_construct_usc_adversarial_exit_3(tmp_path, capsys):
    out = tmp_path / "usc"
    code = run_cli(["construct-usc", SCENARIOS / "adversarial.cfg",
                    "-o", out, "--no-plot"])
    assert code == 3
    err = capsys.readouterr().err
    assert "blocked at t=" in err
    assert (out / "report.txt").exists()


def test_cli_gronwall_verdicts(tmp_path):
    ok = run_cli(["gronwall", SCENARIOS / "tangency.cfg",
                  "-o", tmp_path / "a", "--no-plot"])
    assert ok == 0
    bad = run_cli(["gronwall", SCENARIOS / "adversarial.cfg",
                   "-o", tmp_path / "b", "--no-plot"])
    assert bad == 3
    header = (tmp_path / "a" / "gronwall.csv").read_text().splitlines()[0]
    assert header == "t,g,bound"


def test_cli_counterexample(tmp_path, capsys):
    code = run_cli(["counterexample", SCENARIOS / "counterexample.cfg",
                    "-o", tmp_path / "ce", "--no-plot"])
    assert code == 0
    assert "measured rate" in capsys.readouterr().out
    header = (tmp_path / "ce" / "counterexample.csv").read_text().splitlines()[0]
    assert header == "h,lhs,rhs"


def test_cli_simulate_and_verify(tmp_path):
    assert run_cli(["simulate", SCENARIOS / "usc_viable.cfg",
                    "-o", tmp_path / "sim", "--no-plot"]) == 0
    tr = (tmp_path / "sim" / "trajectory.csv").read_text().splitlines()
    assert tr[0] == "t,node_index,w,x1,x2"
    dg = (tmp_path / "sim" / "diagnostics.csv").read_text().splitlines()
    assert dg[0] == "t,moment,w1_increment,budget"
    assert run_cli(["verify", SCENARIOS / "tangency.cfg",
                    "-o", tmp_path / "vf", "--no-plot"]) == 0
    vf = (tmp_path / "vf" / "verify.csv").read_text()
    assert "fault_injection_detected" in vf


def test_cli_determinism_byte_identical(tmp_path):
    for sub, scenario in [("gronwall", "tangency.cfg"),
                          ("construct-usc", "usc_viable.cfg")]:
        a, b = tmp_path / "a" / sub, tmp_path / "b" / sub
        assert run_cli([sub, SCENARIOS / scenario, "-o", a, "--no-plot"]) == 0
        assert run_cli([sub, SCENARIOS / scenario, "-o", b, "--no-plot"]) == 0
        for fa in sorted(a.glob("*.csv")):
            fb = b / fa.name
            assert fb.exists()
            assert fa.read_bytes() == fb.read_bytes()


def test_cli_plot_artifacts(tmp_path):
    out = tmp_path / "plots"
    assert run_cli(["gronwall", SCENARIOS / "tangency.cfg", "-o", out]) == 0
    assert (out / "gronwall.csv").exists()
    assert (out / "gronwall.png").exists()
    out2 = tmp_path / "plots2"
    assert run_cli(["construct-lipschitz", SCENARIOS / "tangency.cfg",
                    "-o", out2]) == 0
    assert (out2 / "defects.png").exists()
    assert (out2 / "trajectory.png").exists()


def test_cli_entry_point_subprocess(tmp_path):
    # the installed console script parses and runs end to end
    proc = subprocess.run(
        [sys.executable, "-m", "wviab.cli", "probe",
         str(SCENARIOS / "tangency.cfg"), "-o", str(tmp_path / "probe"),
         "--no-plot"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "rate*" in proc.stdout


def test_cli_w1_missing_file(tmp_path, capsys):
    assert run_cli(["w1", tmp_path / "nope.csv", tmp_path / "nope2.csv"]) == 2


def test_scenario_measure_file_reference(tmp_path):
    save_csv(dirac([0.2]), tmp_path / "m.csv")
    text = MINIMAL.replace("measure.weights = 1.0\nmeasure.points = 0.2\n",
                           "measure.file = m.csv\n")
    (tmp_path / "sc.cfg").write_text(text)
    sc = parse_scenario(tmp_path / "sc.cfg")
    assert sc.measure.n_atoms == 1
    missing = text.replace("m.csv", "missing.csv")
    (tmp_path / "sc2.cfg").write_text(missing)
    with pytest.raises(ScenarioError) as err:
        parse_scenario(tmp_path / "sc2.cfg")
    assert "measure.file" in str(err.value)
