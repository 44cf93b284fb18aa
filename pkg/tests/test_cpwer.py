import json

import numpy as np
import pytest

from spkattr.cpwer import (
    CpwerReport,
    cpwer,
    load_transcript_streams,
    min_cost_assignment,
    word_edit_distance,
)
from spkattr.errors import DataError

from oracles import cpwer_oracle, edit_distance_oracle, exhaustive_min_assignment


class TestWordEditDistance:
    def test_equal(self):
        c = word_edit_distance("a b c".split(), "a b c".split())
        assert (c.substitutions, c.insertions, c.deletions) == (0, 0, 0)

    def test_empty_hypothesis_all_deletions(self):
        c = word_edit_distance("a b c".split(), [])
        assert (c.substitutions, c.insertions, c.deletions) == (0, 0, 3)

    def test_mixed_case(self):
        c = word_edit_distance("a b c".split(), "a x c d".split())
        assert (c.substitutions, c.insertions, c.deletions) == (1, 1, 0)

    @pytest.mark.parametrize("seed", range(20))
    def test_total_matches_recursive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        ref = rng.integers(0, 4, size=rng.integers(0, 8)).tolist()
        hyp = rng.integers(0, 4, size=rng.integers(0, 8)).tolist()
        assert word_edit_distance(ref, hyp).total == edit_distance_oracle(ref, hyp)

    @pytest.mark.parametrize("seed", range(10))
    def test_triangle_inequality(self, seed):
        rng = np.random.default_rng(100 + seed)
        a = rng.integers(0, 3, size=rng.integers(1, 7)).tolist()
        b = rng.integers(0, 3, size=rng.integers(1, 7)).tolist()
        c = rng.integers(0, 3, size=rng.integers(1, 7)).tolist()
        ab = word_edit_distance(a, b).total
        bc = word_edit_distance(b, c).total
        ac = word_edit_distance(a, c).total
        assert ac <= ab + bc


class TestAssignmentSolver:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_exhaustive(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        cost = rng.integers(0, 20, size=(n, n)).astype(float)
        perm = min_cost_assignment(cost)
        got = sum(cost[i, perm[i]] for i in range(n))
        want = exhaustive_min_assignment(cost.tolist())
        assert got == pytest.approx(want)
        assert sorted(perm) == list(range(n))


class TestCpwer:
    def test_relabeled_identity_is_zero(self):
        ref = {"alice": "a b c".split(), "bob": "d e".split()}
        hyp = {"spk1": "d e".split(), "spk0": "a b c".split()}
        report = cpwer(ref, hyp)
        assert report.cpwer == 0.0

    def test_fixture_0_4(self):
        ref = {"s1": "a b c".split(), "s2": "d e".split()}
        hyp = {"x": "a b".split(), "y": "d e f".split()}
        report = cpwer(ref, hyp)
        assert report.cpwer == pytest.approx(0.4)
        assert report.total_reference_words == 5
        assert report.deletions == 1 and report.insertions == 1 and report.substitutions == 0

    def test_extra_insertion_stream(self):
        ref = {"s1": "a b c".split(), "s2": "d e".split()}
        hyp = {"x": "a b".split(), "y": "d e f".split(), "z": "z z".split()}
        report = cpwer(ref, hyp)
        assert report.cpwer == pytest.approx((2 + 2) / 5)
        assert report.insertions == 3

    def test_missing_hypothesis_stream_counts_deletions(self):
        ref = {"s1": "a b c".split(), "s2": "d e".split()}
        hyp = {"x": "a b c".split()}
        report = cpwer(ref, hyp)
        assert report.cpwer == pytest.approx(2 / 5)
        assert report.deletions == 2

    def test_empty_reference_rejected(self):
        with pytest.raises(DataError):
            cpwer({}, {"x": ["a"]})
        with pytest.raises(DataError):
            cpwer({"s": []}, {"x": ["a"]})

    def test_can_exceed_one(self):
        ref = {"s": ["a"]}
        hyp = {"x": "b c d e".split()}
        assert cpwer(ref, hyp).cpwer > 1.0

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k_ref = int(rng.integers(1, 5))
        k_hyp = int(rng.integers(1, 5))
        ref = {
            f"r{i}": rng.integers(0, 5, size=rng.integers(1, 12)).tolist() for i in range(k_ref)
        }
        hyp = {
            f"h{i}": rng.integers(0, 5, size=rng.integers(0, 12)).tolist() for i in range(k_hyp)
        }
        report = cpwer(ref, hyp)
        assert report.cpwer == pytest.approx(cpwer_oracle(ref, hyp))

    @pytest.mark.parametrize("seed", range(15))
    def test_assignment_solver_path_matches_exhaustive(self, seed):
        rng = np.random.default_rng(500 + seed)
        k = int(rng.integers(2, 6))
        ref = {f"r{i}": rng.integers(0, 4, size=rng.integers(1, 10)).tolist() for i in range(k)}
        hyp = {f"h{i}": rng.integers(0, 4, size=rng.integers(0, 10)).tolist() for i in range(k)}
        via_solver = cpwer(ref, hyp, force_assignment_solver=True)
        via_search = cpwer(ref, hyp)
        assert via_solver.cpwer == pytest.approx(via_search.cpwer)

    @pytest.mark.parametrize("seed", range(10))
    def test_monotone_under_added_hypothesis_stream(self, seed):
        rng = np.random.default_rng(800 + seed)
        ref = {f"r{i}": rng.integers(0, 4, size=5).tolist() for i in range(2)}
        hyp = {f"h{i}": rng.integers(0, 4, size=5).tolist() for i in range(2)}
        base = cpwer(ref, hyp).cpwer
        hyp["extra"] = rng.integers(0, 4, size=3).tolist()
        assert cpwer(ref, hyp).cpwer >= base

    def test_deterministic_assignment_report(self):
        ref = {"a": ["x"], "b": ["x"]}
        hyp = {"p": ["x"], "q": ["x"]}
        r1 = cpwer(ref, hyp)
        r2 = cpwer(ref, hyp)
        assert r1.assignment == r2.assignment
        # tie between both pairings: lexicographically smallest kept
        assert r1.assignment[0]["hypothesis"] == "p"


class TestTranscriptFiles:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text(json.dumps({"speakers": {"a": ["1", "2"], "b": []}}))
        streams = load_transcript_streams(path)
        assert streams == {"a": ["1", "2"], "b": []}

    def test_malformed_json_error_has_location(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"speakers": {"a": [}')
        with pytest.raises(DataError, match="line"):
            load_transcript_streams(path)

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "bad2.json"
        path.write_text(json.dumps({"not_speakers": {}}))
        with pytest.raises(DataError):
            load_transcript_streams(path)

    def test_report_json_fields(self):
        report = CpwerReport(0.5, 4, 1, 0, 1, [{"reference": "a", "hypothesis": "b", "errors": 2}])
        obj = json.loads(report.to_json())
        assert set(obj) == {
            "cpwer",
            "total_reference_words",
            "substitutions",
            "insertions",
            "deletions",
            "assignment",
        }
