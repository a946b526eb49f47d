from __future__ import annotations

import csv
import json
import logging

import pytest

from ellhecke import cli
from ellhecke.operator import read_cache_meta

SMALL = ["--grid", "8,12", "--hecke-x", "0.22,0.05;0.13,0.21"]


def write_cfg(tmp_path, text):
    p = tmp_path / "run.json"
    p.write_text(text)
    return str(p)


def run(tmp_path, *args, out="out"):
    return cli.main([*args, "--out", str(tmp_path / out), "-q"])


@pytest.fixture(scope="module")
def m0_out(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["operator", *SMALL, "--out", str(d / "out"), "-q"]) in (0, 2)
    return d


# ---------------------------------------------------------------------------
# configuration


def test_defaults_validate():
    cfg = cli.load_config(None)
    assert cfg.m == 0 and cfg.grid == (16, 32, 64) and cfg.tau == 0.3 + 1.1j


def test_full_config_round_trips(tmp_path):
    cfg = cli.load_config(write_cfg(tmp_path, json.dumps({
        "curve": {"tau": [0.1, 1.3], "marked_points": []},
        "hecke_points": ["0.2+0.1j"], "grid": [8, 16], "m": 0,
        "tolerances": {"commutator": 0.1}, "output_dir": "res", "seed": 4, "top_k": 5})))
    assert cfg.tau == 0.1 + 1.3j and cfg.hecke_points == (0.2 + 0.1j,)
    assert cfg.tolerances.commutator == 0.1 and cfg.tolerances.adjoint == 1e-2
    assert cli.parse_config(cfg.to_dict()) == cfg


@pytest.mark.parametrize("text, needle", [
    ('{\n  "curve": {\n    "tau": [0.3, -1.0]\n  }\n}', "line 3"),
    ('{\n  "grid": [8, 16],\n  "colour": 1\n}', "line 3"),
    ('{\n  "tau": [0.3, 1.1]\n}', "line 2"),
    ('{\n  "m": 1\n}', "line 2"),
    ('{\n  "grid": [16, 8]\n}', "line 2"),
    ('{\n  "hecke_points": [[0.5, 0.0]]\n}', "line 2"),
    ('{\n  "curve": {"tau": [0.3, 1.1], "marked_points": [[0.3, 0.2]]},\n  "m": 1,\n  "grid": [32]\n}',
     "line 4"),
    ('{\n  "grid": [8,\n}', "line 3, column 1"),
])
def test_invalid_configs_exit_3_with_location(tmp_path, caplog, text, needle):
    path = write_cfg(tmp_path, text)
    with caplog.at_level(logging.ERROR):
        assert run(tmp_path, "identities", "--config", path) == cli.EXIT_CONFIG
    assert needle in caplog.text
    assert not (tmp_path / "out").exists()


def test_bad_flags_exit_3(tmp_path):
    assert run(tmp_path, "operator", "--grid", "4") == cli.EXIT_CONFIG
    assert run(tmp_path, "operator", "--grid", "eight") == cli.EXIT_CONFIG
    assert run(tmp_path, "operator", "--hecke-x", "0,0") == cli.EXIT_CONFIG
    assert run(tmp_path, "operator", "--seed", "-1") == cli.EXIT_CONFIG


# ---------------------------------------------------------------------------
# commands


def test_identities_report(tmp_path):
    assert run(tmp_path, "identities") == cli.EXIT_OK
    rep = json.loads((tmp_path / "out" / "identities.json").read_text())
    assert rep["passed"] and all(r["passed"] for r in rep["records"])
    assert {"name", "samples", "max_residual", "tol", "passed"} <= set(rep["records"][0])


def test_identities_unreachable_tolerance_exits_2(tmp_path):
    path = write_cfg(tmp_path, '{"tolerances": {"identity": 1e-18}, "identity_taus": [[0, 1]]}')
    assert run(tmp_path, "identities", "--config", path) == cli.EXIT_NUMERICAL
    assert json.loads((tmp_path / "out" / "identities.json").read_text())["passed"] is False


def test_operator_outputs(m0_out):
    out = m0_out / "out"
    with open(out / "eigenvalues_m0.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "eigenvalue", "N", "x"]
    assert len(rows) == 1 + 2 * (64 + 144)
    assert rows[1][3] == "0.22+0.05j"
    rep = json.loads((out / "defects_m0.json").read_text())
    assert len(rep["operators"]) == 4 and len(rep["commutators"]) == 2
    for name in ("m0_x0_N8.ehk1", "m0_x1_N12.ehk1"):
        meta = read_cache_meta(out / "cache" / name)
        assert meta["kind"] == "m0" and meta["symmetrized"]


def test_compare_and_spectrum_need_operator_data(tmp_path, caplog):
    for verb in ("compare-p1", "spectrum"):
        with caplog.at_level(logging.ERROR):
            assert run(tmp_path, verb, *SMALL) == cli.EXIT_CONFIG
        assert "ellhecke operator" in caplog.text


def test_compare_p1_threshold_zero_fails(m0_out):
    path = m0_out / "zero.json"
    path.write_text('{"tolerances": {"p1_threshold": 0}}')
    rc = cli.main(["compare-p1", *SMALL, "--config", str(path), "--out", str(m0_out / "out"), "-q"])
    assert rc == cli.EXIT_NUMERICAL
    rep = json.loads((m0_out / "out" / "compare_p1.json").read_text())
    assert len(rep["comparisons"]) == 2 and rep["passed"] is False
    per = rep["comparisons"][0]["per_N"][0]
    assert len(per["eigenvalues_m0"]) == 10 and max(d["value"] for d in per["relative_differences"]) < 1e-6


def test_spectrum_report(m0_out):
    rc = cli.main(["spectrum", *SMALL, "--out", str(m0_out / "out"), "-q"])
    assert rc in (cli.EXIT_OK, cli.EXIT_NUMERICAL)
    rep = json.loads((m0_out / "out" / "spectrum.json").read_text())
    s = rep["spectra"][0]
    assert [p["N"] for p in s["per_N"]] == [8, 12]
    assert s["per_N"][0]["ratios"][0] == 1.0
    assert len(s["cauchy"]["per_index"]) == 10
    assert rep["passed"] == all(c["strictly_decreasing"] for sp in rep["spectra"]
                                for c in sp["cauchy"]["per_index"])


def test_stale_cache_is_recomputed(tmp_path, caplog):
    args = ["operator", "--grid", "8", "--hecke-x", "0.22,0.05"]
    assert run(tmp_path, *args) == cli.EXIT_OK
    cache = tmp_path / "out" / "cache" / "m0_x0_N8.ehk1"
    good = cache.read_bytes()
    path = write_cfg(tmp_path, '{"curve": {"tau": [0.3, 1.2]}}')
    with caplog.at_level(logging.WARNING):
        assert run(tmp_path, *args, "--config", path) == cli.EXIT_OK
    assert "does not match" in caplog.text
    assert cache.read_bytes() != good


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    names = ("eigenvalues_m0.csv", "defects_m0.json", "spectrum.json", "cache/m0_x1_N12.ehk1")
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        monkeypatch.chdir(tmp_path / d)
        assert cli.main(["operator", *SMALL, "--out", "out", "-q"]) in (0, 2)
        assert cli.main(["spectrum", *SMALL, "--out", "out", "-q"]) in (0, 2)
    for name in names:
        assert (tmp_path / "a/out" / name).read_bytes() == (tmp_path / "b/out" / name).read_bytes()
    # rerunning in place reuses the caches and rewrites the same bytes
    before = (tmp_path / "b/out/defects_m0.json").read_bytes()
    assert cli.main(["operator", *SMALL, "--out", "out", "-q"]) in (0, 2)
    assert (tmp_path / "b/out/defects_m0.json").read_bytes() == before
