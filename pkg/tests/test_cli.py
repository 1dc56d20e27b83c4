import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from morreylab.cli import main
from morreylab.config import SCHEMAS, ExperimentConfig, parse_flat


def run(tmp_path, *args):
    code = main([*args, "--out-dir", str(tmp_path)])
    summary = json.loads((tmp_path / "summary.json").read_text()) if code == 0 else None
    return code, summary


def test_empty_invocation_prints_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_and_unknown_config_key(tmp_path, capsys):
    assert main(["fem", "--bogus", "1"]) == 2
    cfg = tmp_path / "c.cfg"
    cfg.write_text("levels = 1\nfoo = 2\n")
    assert main(["fem", "--config", str(cfg)]) == 2
    assert "foo" in capsys.readouterr().err


def test_bad_value_is_a_config_error(tmp_path):
    assert main(["fem", "--levels", "two", "--out-dir", str(tmp_path)]) == 2


def test_numerical_failure_exits_one(tmp_path, capsys):
    assert main(["fem", "--energy", "no_such_energy", "--out-dir", str(tmp_path)]) == 1
    assert "fem" in capsys.readouterr().err


def test_scan_writes_report(tmp_path):
    code, s = run(tmp_path, "scan", "--energy", "w_magic_plus", "--a-max", "10", "--a-steps", "4",
                  "--dtheta", "5")
    assert code == 0
    assert s["result"]["min_lh"] >= -1e-6
    rows = list(csv.reader(open(tmp_path / "report.csv")))
    assert rows[0] == ["a", "theta_xi", "theta_eta", "lh_value"] and len(rows) == 5
    assert {"wall_time", "seed", "subcommand"} <= set(s)


def test_scan_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        d.mkdir()
        run(d, "scan", "--energy", "w_c:{c:1.3}", "--a-max", "4", "--a-steps", "3", "--dtheta", "6",
            "--full")
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()


def test_laminate_search_w_c_witness(tmp_path):
    code, s = run(tmp_path, "laminate-search", "--energy", "w_c:{c:1.5}", "--trials", "4000")
    assert code == 0
    res = s["result"]["w_c:{c:1.5}"]
    assert res["min_gap"] < 0
    best = json.loads((tmp_path / "best.json").read_text())
    witness = (tmp_path / "witness_0.txt").read_text()
    assert best["results"]["w_c:{c:1.5}"]["witness"] == witness
    from morreylab.energy import parse_energy
    from morreylab.laminates import LaminateSpec, jensen_gap, pushforward
    spec = LaminateSpec.from_text(witness)
    gap = jensen_gap(parse_energy("w_c:{c:1.5}"), pushforward(spec, method="exact"), reference=spec.F0)
    assert gap == pytest.approx(res["min_gap"], abs=1e-12)


def test_families_csv(tmp_path):
    code, s = run(tmp_path, "families", "--kind", "radial-contracting", "--profiles", "2", "--points", "30")
    assert code == 0 and all(p["el_residual"] <= 1e-6 for p in s["result"]["profiles"])
    rows = list(csv.reader(open(tmp_path / "families.csv")))
    assert rows[0] == ["profile", "r", "v", "derivative", "integrand", "residual"] and len(rows) == 61
    code, s = run(tmp_path, "families", "--profiles", "1", "--points", "16")
    assert s["result"]["profiles"][0]["energy"] == pytest.approx(
        s["result"]["profiles"][0]["closed_form"], abs=1e-9)


def test_fem_save_and_restart(tmp_path):
    code, s = run(tmp_path, "fem", "--levels", "2", "--energy", "w_c:{c:1.1}", "--save-field", "u.csv")
    assert code == 0 and s["result"]["gap"] < 0
    code, s = run(tmp_path, "fem", "--levels", "2", "--init", "u.csv", "--out", "back.csv")
    assert code == 0 and s["result"]["gap"] >= -1e-8
    assert (tmp_path / "back.csv").read_text().startswith("element,x1,x2,det,distortion,energy_density")


def test_fem_circles_and_curl(tmp_path):
    code, s = run(tmp_path, "fem", "--domain", "disc", "--levels", "2", "--cstar", "1.1")
    assert code == 0 and s["result"]["energy_inside"] > 0
    code, s = run(tmp_path, "curl", "--levels", "2", "--lc", "0.5", "--project")
    assert code == 0 and s["result"]["gap"] < 0 and s["result"]["projection_gap"] >= 0


def test_pinn_small(tmp_path):
    code, s = run(tmp_path, "pinn", "--grid", "8", "--iters", "3", "--dump-field", "f.csv")
    assert code == 0 and s["result"]["iterations"] == 3
    assert len((tmp_path / "f.csv").read_text().splitlines()) == 65


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nsubcommand = fem\nlevels = 1\nenergy = w_c:{c:1.2}\n")
    code, s = run(tmp_path, "fem", "--config", str(cfg), "--levels", "2")
    assert code == 0
    saved = ExperimentConfig.from_text((tmp_path / "config.txt").read_text())
    assert saved["levels"] == 2 and saved["energy"] == "w_c:{c:1.2}"


def test_config_rejects_mismatched_subcommand():
    with pytest.raises(ValueError):
        ExperimentConfig.from_text("subcommand = scan\n", "fem")
    with pytest.raises(ValueError):
        parse_flat("levels 3")
    with pytest.raises(ValueError):
        parse_flat("a = 1\na = 2")


def _value(opt):
    base = {"int": st.integers(-10**6, 10**6), "float": st.floats(allow_nan=False, allow_infinity=False),
            "str": st.text(st.characters(blacklist_categories=("Cs", "Cc")), max_size=12),
            "bool": st.booleans()}
    if opt.type.startswith("list["):
        return st.lists(base[opt.type[5:-1]], max_size=4)
    return base[opt.type]


@st.composite
def configs(draw):
    name = draw(st.sampled_from(sorted(SCHEMAS)))
    schema = ExperimentConfig.schema(name)
    keys = draw(st.lists(st.sampled_from(sorted(schema)), unique=True))
    return ExperimentConfig(name, {k: draw(_value(schema[k])) for k in keys})


@settings(max_examples=200, deadline=None)
@given(configs())
def test_config_roundtrip(cfg):
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back == cfg
