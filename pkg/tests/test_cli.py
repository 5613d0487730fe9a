"""CLI: transcript replay contract, exit codes, simulate smoke."""

import json
from pathlib import Path

import pytest

from planloop.cli import main, replay_transcript

TRANSCRIPTS = Path(__file__).parent.parent / "transcripts"


class TestReplay:
    def test_inventors_transcript_passes(self):
        report, code = replay_transcript(TRANSCRIPTS / "inventors.json")
        assert code == 0
        assert "turn 0: expected add-steps | actual add-steps | ok" in report
        assert "turn 2: expected add-steps | actual add-steps | ok" in report
        assert "ada lovelace" in report
        assert report.endswith("result: PASS")

    def test_crossfit_transcript_passes(self):
        report, code = replay_transcript(TRANSCRIPTS / "crossfit.json")
        assert code == 0
        assert "turn 1: expected alter-steps | actual alter-steps | ok" in report

    def test_wrong_expected_action_fails_naming_the_turn(self, tmp_path):
        doc = json.loads((TRANSCRIPTS / "crossfit.json").read_text())
        doc["expected_actions"] = ["add-steps", "ask-question"]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(doc))
        report, code = replay_transcript(path)
        assert code == 1
        assert "turn 1: expected ask-question | actual alter-steps | MISMATCH" in report
        assert report.endswith("result: FAIL")

    def test_missing_expected_step_fails(self, tmp_path):
        doc = json.loads((TRANSCRIPTS / "crossfit.json").read_text())
        doc["expected_final_steps"].append("Win the games")
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(doc))
        report, code = replay_transcript(path)
        assert code == 1
        assert "missing expected steps: Win the games" in report

    def test_replay_is_deterministic(self):
        first, _ = replay_transcript(TRANSCRIPTS / "inventors.json")
        second, _ = replay_transcript(TRANSCRIPTS / "inventors.json")
        assert first == second

    def test_unreadable_file_is_usage_error(self, capsys):
        assert main(["replay", "does-not-exist.json"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_malformed_transcript_is_usage_error(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"goal": "g"}')
        assert main(["replay", str(path)]) == 2

    def test_main_replay_exit_codes(self, capsys):
        assert main(["replay", str(TRANSCRIPTS / "inventors.json")]) == 0
        out = capsys.readouterr().out
        assert "result: PASS" in out


class TestSimulate:
    def test_synthetic_sweep_reports_zero_violations(self, tmp_path, capsys):
        code = main([
            "simulate", "--synthetic", "3", "--seed", "11", "--turns", "3",
            "--out", str(tmp_path / "reports"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "episodes=3" in out
        assert "violations=0" in out
        assert (tmp_path / "reports" / "sweep.json").exists()
        assert (tmp_path / "reports" / "turns.csv").exists()

    def test_persona_dir_mode(self, tmp_path, capsys):
        persona_dir = tmp_path / "personas"
        persona_dir.mkdir()
        (persona_dir / "quiet.json").write_text(json.dumps({
            "name": "quiet",
            "goal_text": "learn to whittle",
            "response_rules": [],
            "max_turns": 1,
        }))
        script = tmp_path / "script.json"
        script.write_text(json.dumps([
            {"policy_id": "meta-controller", "match": "",
             "response": {"thought": "", "action": "ask-question", "arguments": []}},
            {"policy_id": "ask-question", "match": "",
             "response": {"thought": "", "question": "Whittle what?"}},
        ]))
        code = main([
            "simulate", str(persona_dir), "--script", str(script),
            "--out", str(tmp_path / "reports"),
        ])
        assert code == 0
        report = json.loads((tmp_path / "reports" / "quiet.json").read_text())
        assert report["actions"] == ["ask-question"]

    def test_missing_persona_dir_is_usage_error(self, tmp_path):
        assert main(["simulate", str(tmp_path / "empty"), "--out", str(tmp_path / "r")]) == 2
