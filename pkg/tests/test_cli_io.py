import json
from fractions import Fraction

import pytest

from qmf.series_algebra import EXACT, HalfInt, Poly
from qmf.cli_io import (
    SpecFileError,
    parse_problem_spec,
    preset_problem,
    result_document,
    run_command,
    serialize_problem_spec,
)
from qmf.quasimode_pipeline import compute_quasimodes

F = Fraction

MINIMAL = """
[problem]
n = 1
rank = 1
mode = exact
order = 2

[lambda]
1
"""

CUBIC = MINIMAL + """
[potential]
3  1

[level]
value = 1
"""


class TestParsing:
    def test_minimal_harmonic(self):
        spec = parse_problem_spec(MINIMAL)
        assert spec.problem.n == 1
        assert spec.problem.V.coefficient((2,)) == F(1)
        assert spec.order == HalfInt(4)

    def test_unnormalized_quadratic_rejected(self):
        bad = MINIMAL + "\n[potential]\n2  2\n"
        with pytest.raises(SpecFileError, match="not normalized"):
            parse_problem_spec(bad)

    def test_unknown_section(self):
        with pytest.raises(SpecFileError, match="unknown section"):
            parse_problem_spec(MINIMAL + "\n[nonsense]\n")

    def test_unknown_key_with_location(self):
        with pytest.raises(SpecFileError, match="line 4"):
            parse_problem_spec("[problem]\nn = 1\nrank = 1\nbogus = 3\norder = 1\n[lambda]\n1\n")

    def test_decimal_rejected_in_exact_mode(self):
        with pytest.raises(SpecFileError, match="float mode"):
            parse_problem_spec(MINIMAL + "\n[potential]\n3  0.25\n")

    def test_level_value_and_index_conflict(self):
        with pytest.raises(SpecFileError, match="not both"):
            parse_problem_spec(MINIMAL + "\n[level]\nvalue = 1\nindex = 0\n")

    def test_fractions_and_rank2(self):
        text = """
[problem]
n = 1
rank = 2
mode = exact
order = 3

[lambda]
2

[potential]
2  4
3  1/2

[endomorphism]
1 2  1  1
2 2  0  4

[connection]
1 1 2  1  1/2

[level]
value = 6
"""
        spec = parse_problem_spec(text)
        assert spec.problem.rank == 2
        assert spec.problem.mu == (F(0), F(4))
        assert spec.problem.Gamma[0][1][0].coefficient((1,)) == F(-1, 2)

    def test_gamma_section(self):
        text = MINIMAL + "\n[gamma]\n1 1  2  1/3\n"
        spec = parse_problem_spec(text)
        assert spec.problem.gamma is not None
        assert spec.problem.gamma[0][0].coefficient((2,)) == F(1, 3)
        assert spec.problem.gamma[0][0].coefficient((0,)) == F(1)

    def test_round_trip(self):
        for preset in ("cubic1d", "witten1d:c=2", "iso2d", "rank2"):
            spec = preset_problem(preset, order=HalfInt(4))
            text = serialize_problem_spec(spec)
            back = parse_problem_spec(text)
            assert back.problem == spec.problem
            assert back.order == spec.order
            assert back.level_value == spec.level_value


class TestPresets:
    def test_witten_expansion_is_supersymmetric_pair(self):
        # V must equal (phase')^2 and W = -phase'' for phase = x^2/2 + c x^3/6
        c = F(2)
        spec = preset_problem(f"witten1d:c={c}")
        dphi = Poly(EXACT, 1, {(1,): F(1), (2,): c / 2})
        assert spec.problem.V == dphi * dphi
        ddphi = Poly(EXACT, 1, {(0,): F(1), (1,): c})
        assert spec.problem.W[0][0] == -ddphi

    def test_unknown_preset(self):
        with pytest.raises(SpecFileError, match="unknown preset"):
            preset_problem("nope")

    def test_unknown_param(self):
        with pytest.raises(SpecFileError, match="unknown preset parameters"):
            preset_problem("cubic1d:zz=1")

    def test_rank2_level_is_mixed(self):
        spec = preset_problem("rank2")
        res = compute_quasimodes(spec.problem, HalfInt(2), e0=spec.level_value)
        assert res.level.parity == "mixed"
        assert res.level.m0 == 2


class TestCommands:
    def test_spectrum_matches_formula(self, capsys):
        rc = run_command(["spectrum", "--preset", "harmonic:lam=2", "--degree", "3"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "E = 2" in out and "E = 6" in out

    def test_compute_writes_document(self, tmp_path, capsys):
        out = tmp_path / "res.json"
        rc = run_command(["compute", "--preset", "cubic1d", "--order", "2",
                          "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["schema"] == 1
        assert doc["level"]["E0"] == "1"
        assert [2, "1"] in doc["eigenvalues"][0]
        assert [4, "-11/16"] in doc["eigenvalues"][0]

    def test_exact_mode_documents_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for path in (a, b):
            rc = run_command(["compute", "--preset", "iso2d", "--order", "2",
                              "--out", str(path)])
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_level_is_input_error(self, capsys):
        rc = run_command(["compute", "--preset", "harmonic", "--order", "2",
                          "--level", "7/3"])
        assert rc == 1
        assert "not in the model spectrum" in capsys.readouterr().err

    def test_verify_all_green(self, capsys):
        rc = run_command(["verify", "--preset", "cubic1d", "--order", "2"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "[pass] transport" in out
        assert "[pass] projector" in out

    def test_verify_subset(self, capsys):
        rc = run_command(["verify", "--preset", "cubic1d", "--order", "2",
                          "--checks", "parity"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "[pass] parity" in out
        assert "transport" not in out

    def test_check_failure_exit_code(self, monkeypatch, capsys):
        from qmf import cli_io
        from qmf.quasimode_pipeline import VerificationReport

        def fake_transport(result):
            return VerificationReport(name="transport", passed=False, order=None,
                                      max_residual=1.0, detail="forced failure")

        monkeypatch.setattr(cli_io, "transport_residual", fake_transport)
        rc = run_command(["verify", "--preset", "cubic1d", "--order", "2",
                          "--checks", "transport"])
        assert rc == 2
        assert "FAIL" in capsys.readouterr().out

    def test_crosscheck_writes_csv(self, tmp_path, capsys):
        csv = tmp_path / "pts.csv"
        rc = run_command(["crosscheck", "--preset", "quartic1d", "--order", "2",
                          "--hbar", "0.2,0.1", "--grid", "512", "--csv", str(csv)])
        assert rc == 0
        lines = csv.read_text().strip().splitlines()
        assert lines[0] == "hbar,error"
        assert len(lines) == 3

    def test_missing_source_is_input_error(self, capsys):
        rc = run_command(["compute", "--order", "2"])
        assert rc == 1


class TestResultDocument:
    def test_norm2_and_members_serialized(self):
        spec = preset_problem("iso2d", order=HalfInt(4))
        res = compute_quasimodes(spec.problem, spec.order, e0=spec.level_value)
        doc = result_document(spec, res, [])
        assert doc["level"]["m0"] == 2
        assert doc["level"]["K_doubled"] == 1
        assert doc["eigenfunctions"][0]["norm2_constant"] == "1/2"
        ks = {tuple(m["alpha"]) for m in doc["level"]["members"]}
        assert ks == {(1, 0), (0, 1)}
