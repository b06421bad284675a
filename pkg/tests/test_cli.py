"""End-to-end CLI behaviour: subcommands, exit codes, and determinism."""

import json

import pytest

from causalid.cli import main

BOW = """\
node X obs
node Y obs
node U lat
edge X Y
edge U X
edge U Y
"""

FRONTDOOR = """\
node X obs
node Z obs
node Y obs
node U lat
edge X Z
edge Z Y
edge U X
edge U Y
"""

BACKDOOR = """\
node Z obs
node X obs
node Y obs
edge Z X
edge Z Y
edge X Y
"""


@pytest.fixture
def graphs(tmp_path):
    paths = {}
    for name, text in [("bow", BOW), ("fd", FRONTDOOR), ("bd", BACKDOOR)]:
        p = tmp_path / f"{name}.cg"
        p.write_text(text)
        paths[name] = str(p)
    return paths


class TestIdentify:
    def test_frontdoor_exit_zero(self, graphs, capsys):
        code = main(["identify", "--graph", graphs["fd"], "--do", "X", "--on", "Y"])
        assert code == 0
        assert "identifiable" in capsys.readouterr().out

    def test_bow_exit_two(self, graphs, capsys):
        code = main(["identify", "--graph", graphs["bow"], "--do", "X", "--on", "Y"])
        assert code == 2
        assert "not identifiable" in capsys.readouterr().out

    def test_unknown_node_exit_one(self, graphs, capsys):
        code = main(["identify", "--graph", graphs["bd"], "--do", "Q", "--on", "Y"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_json_output_parses(self, graphs, capsys):
        code = main(
            ["identify", "--graph", graphs["fd"], "--do", "X", "--on", "Y", "--json"]
        )
        assert code == 0
        data = json.loads(capsys.readouterr().out)
        assert data["identifiable"] is True
        assert data["estimand"]["kind"] in ("sum", "product", "quotient", "marginal")

    def test_deterministic_output(self, graphs, capsys):
        main(["identify", "--graph", graphs["fd"], "--do", "X", "--on", "Y", "--json"])
        first = capsys.readouterr().out
        main(["identify", "--graph", graphs["fd"], "--do", "X", "--on", "Y", "--json"])
        assert capsys.readouterr().out == first


class TestDeriveAndCheck:
    def test_round_trip(self, graphs, tmp_path, capsys):
        out = tmp_path / "d.json"
        code = main(
            ["derive", "--graph", graphs["bd"], "--do", "X", "--on", "Y",
             "--out", str(out)]
        )
        assert code == 0
        capsys.readouterr()
        code = main(["check", "--derivation", str(out), "--models", "2"])
        assert code == 0
        assert "accepted" in capsys.readouterr().out

    def test_tampered_derivation_exit_three(self, graphs, tmp_path, capsys):
        out = tmp_path / "d.json"
        main(["derive", "--graph", graphs["bd"], "--do", "X", "--on", "Y",
              "--out", str(out)])
        data = json.loads(out.read_text())
        data["steps"][0]["after"] = data["steps"][0]["before"]
        tampered = tmp_path / "tampered.json"
        tampered.write_text(json.dumps(data))
        capsys.readouterr()
        code = main(["check", "--derivation", str(tampered), "--models", "0"])
        assert code == 3
        assert "rejected" in capsys.readouterr().out

    def test_derive_bow_exit_two(self, graphs):
        assert main(["derive", "--graph", graphs["bow"], "--do", "X", "--on", "Y"]) == 2


class TestDsep:
    def test_chain(self, tmp_path, capsys):
        p = tmp_path / "chain.cg"
        p.write_text("node X obs\nnode Z obs\nnode Y obs\nedge X Z\nedge Z Y\n")
        code = main(["dsep", "--graph", str(p), "--x", "X", "--y", "Y",
                     "--given", "Z"])
        assert code == 0
        assert "true" in capsys.readouterr().out

    def test_overlap_is_input_error(self, tmp_path, capsys):
        p = tmp_path / "chain.cg"
        p.write_text("node X obs\nnode Y obs\nedge X Y\n")
        code = main(["dsep", "--graph", str(p), "--x", "X", "--y", "X"])
        assert code == 1


class TestCComp:
    def test_frontdoor_blocks(self, graphs, capsys):
        code = main(["ccomp", "--graph", graphs["fd"]])
        assert code == 0
        blocks = json.loads(capsys.readouterr().out)
        assert blocks == [["X", "Y", "U"], ["Z"]]

    def test_scope_restriction(self, graphs, capsys):
        code = main(["ccomp", "--graph", graphs["fd"], "--scope", "Z", "Y"])
        assert code == 0
        blocks = json.loads(capsys.readouterr().out)
        assert blocks == [["Z"], ["Y", "U"]]


class TestOracle:
    def test_verify_frontdoor(self, graphs, capsys):
        code = main(
            ["oracle", "verify", "--graph", graphs["fd"], "--do", "X", "--on", "Y",
             "--trials", "20", "--json"]
        )
        assert code == 0
        data = json.loads(capsys.readouterr().out)
        assert data["report"]["all_passed"] is True
        assert data["report"]["max_abs_error"] <= 1e-9

    def test_verify_not_identifiable(self, graphs):
        code = main(
            ["oracle", "verify", "--graph", graphs["bow"], "--do", "X", "--on", "Y"]
        )
        assert code == 2

    def test_witness_bow(self, graphs, capsys):
        code = main(
            ["oracle", "witness", "--graph", graphs["bow"], "--do", "X", "--on", "Y",
             "--json"]
        )
        assert code == 0
        data = json.loads(capsys.readouterr().out)
        assert data["found"] is True
        assert data["observational_gap"] <= 1e-6
        assert data["causal_gap"] >= 1e-2

    def test_witness_zero_budget(self, graphs, capsys):
        code = main(
            ["oracle", "witness", "--graph", graphs["bd"], "--do", "X", "--on", "Y",
             "--budget", "0", "--json"]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out)["found"] is False


class TestExportDot:
    def test_latents_dashed(self, graphs, capsys):
        code = main(["export-dot", "--graph", graphs["bow"]])
        assert code == 0
        out = capsys.readouterr().out
        assert '"U" [style=dashed];' in out
        assert '"X" -> "Y";' in out

    def test_parse_error_reports_line(self, tmp_path, capsys):
        p = tmp_path / "bad.cg"
        p.write_text("node X obs\nedge X Y\n")
        code = main(["export-dot", "--graph", str(p)])
        assert code == 1
        assert "line 2" in capsys.readouterr().err
