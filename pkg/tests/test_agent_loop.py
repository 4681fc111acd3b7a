"""Agent loop tests: scripted runs, checkpoint gating, determinism."""

import json
import shutil

import pytest

from deckforge.agent import (
    IterationLimitError,
    load_transcript,
    resume_agent,
    run_agent,
)
from deckforge.deck_model import default_registry, parse_deck
from deckforge.providers import MockChatProvider
from deckforge.validator import validate


def prepare_tc1_workdir(tmp_path, fixtures_dir, name="wd"):
    wd = tmp_path / name
    wd.mkdir()
    shutil.copy(fixtures_dir / "tables" / "tc1_pipe_data.csv",
                wd / "tc1_pipe_data.csv")
    return wd


def tc1_provider(fixtures_dir, skip=0):
    return MockChatProvider.from_script(
        fixtures_dir / "scripts" / "tc1_run.json", skip=skip)


class TestScriptedTc1Run:
    def test_full_run_artifacts_and_validation(self, tmp_path, fixtures_dir):
        wd = prepare_tc1_workdir(tmp_path, fixtures_dir)
        transcript = run_agent("Build the single-pipe model from tc1_pipe_data.csv",
                               wd, tc1_provider(fixtures_dir), auto_approve=True)
        assert transcript.status == "completed"
        assert transcript.final_answer.startswith("Generated tc1_pipe.i")
        assert len(transcript.turns) <= 20
        assert "tc1_pipe.spec.yaml" in transcript.artifacts
        assert (wd / "tc1_pipe.i").exists()
        deck = parse_deck((wd / "tc1_pipe.i").read_text())
        assert validate(deck, default_registry()).errors() == ()
        assert (wd / "transcript.jsonl").exists()

    def test_byte_identical_across_runs(self, tmp_path, fixtures_dir):
        outputs = []
        for name in ("a", "b"):
            wd = prepare_tc1_workdir(tmp_path, fixtures_dir, name)
            run_agent("Build the single-pipe model from tc1_pipe_data.csv",
                      wd, tc1_provider(fixtures_dir), auto_approve=True)
            outputs.append({
                "transcript": (wd / "transcript.jsonl").read_bytes(),
                "deck": (wd / "tc1_pipe.i").read_bytes(),
                "spec": (wd / "tc1_pipe.spec.yaml").read_bytes(),
                "trace": (wd / "tc1_pipe.i.trace.json").read_bytes(),
            })
        assert outputs[0] == outputs[1]

    def test_checkpoint_halts_without_auto_approve(self, tmp_path, fixtures_dir):
        wd = prepare_tc1_workdir(tmp_path, fixtures_dir)
        transcript = run_agent("Build the single-pipe model",
                               wd, tc1_provider(fixtures_dir), auto_approve=False)
        assert transcript.status == "awaiting-approval"
        assert (wd / "tc1_pipe.spec.yaml").exists()
        assert not (wd / "tc1_pipe.i").exists()  # no deck before approval

    def test_resume_after_human_edit(self, tmp_path, fixtures_dir):
        wd = prepare_tc1_workdir(tmp_path, fixtures_dir)
        halted = run_agent("Build the single-pipe model",
                           wd, tc1_provider(fixtures_dir), auto_approve=False)
        assert halted.status == "awaiting-approval"
        # human edit: bump the inlet velocity in the reviewed spec
        spec_path = wd / "tc1_pipe.spec.yaml"
        spec_path.write_text(spec_path.read_text().replace(
            "      value: 1.0\n      units: m/s", "      value: 1.5\n      units: m/s"))
        transcript = resume_agent(
            wd, tc1_provider(fixtures_dir, skip=halted.rounds))
        assert transcript.status == "completed"
        deck = parse_deck((wd / "tc1_pipe.i").read_text())
        assert deck.block("Components").child("inlet").param("v_bc").value.payload == 1.5

    def test_transcript_round_trips(self, tmp_path, fixtures_dir):
        wd = prepare_tc1_workdir(tmp_path, fixtures_dir)
        transcript = run_agent("Build it", wd, tc1_provider(fixtures_dir),
                               auto_approve=True)
        loaded = load_transcript(wd)
        assert loaded == transcript


class TestScriptedTc3Run:
    def _prepare(self, tmp_path, fixtures_dir):
        from deckforge.knowledge_store import HashedBagEmbedder, ingest_directory

        wd = tmp_path / "wd"
        wd.mkdir()
        ingest_directory(fixtures_dir / "corpus" / "tc3_docs",
                         wd / "stores" / "dynamic", HashedBagEmbedder())
        return wd

    def test_gap_filling_run(self, tmp_path, fixtures_dir):
        wd = self._prepare(tmp_path, fixtures_dir)
        provider = MockChatProvider.from_script(
            fixtures_dir / "scripts" / "tc3_run.json")
        transcript = run_agent("Build the five-channel model", wd, provider,
                               auto_approve=True)
        assert transcript.status == "completed"
        deck = parse_deck((wd / "tc3_abtr.i").read_text())
        assert deck.block("Executioner").param("dt") is not None
        assert validate(deck, default_registry()).errors() == ()

    def test_halt_resume_with_interleaved_text_decisions(self, tmp_path,
                                                         fixtures_dir):
        # the tc3 script mixes text decisions (retrieval answers, creator
        # decks) between turns; resume must fast-forward past them
        wd = self._prepare(tmp_path, fixtures_dir)
        script = fixtures_dir / "scripts" / "tc3_run.json"
        halted = run_agent("Build the five-channel model", wd,
                           MockChatProvider.from_script(script))
        assert halted.status == "awaiting-approval"
        assert not (wd / "tc3_abtr.i").exists()
        transcript = resume_agent(
            wd, MockChatProvider.from_script(script, skip=halted.rounds))
        assert transcript.status == "completed"
        assert (wd / "tc3_abtr.i").exists()
        trace = json.loads((wd / "tc3_abtr.i.trace.json").read_text())
        assert trace["Executioner/dt"]["assumed"] is True


class TestLoopEdges:
    def test_iteration_limit(self, tmp_path):
        looping = MockChatProvider(
            [{"thought": "ponder", "tool": "text_reader", "args": {"file": "x"}}] * 30)
        with pytest.raises(IterationLimitError) as err:
            run_agent("never finishes", tmp_path / "wd", looping)
        transcript = err.value.transcript
        assert transcript.rounds == 20
        assert transcript.status == "iteration-limit"
        assert (tmp_path / "wd" / "transcript.jsonl").exists()

    def test_tool_error_becomes_observation(self, tmp_path):
        provider = MockChatProvider([
            {"thought": "look", "tool": "pdf_query", "args": {"query": "x", "k": 1}},
            {"thought": "", "final": "done anyway"},
        ])
        transcript = run_agent("query empty stores", tmp_path / "wd", provider)
        assert transcript.status == "completed"
        assert "ERROR(EmptyStoreError)" in transcript.turns[0].observation

    def test_unknown_tool_is_error_observation(self, tmp_path):
        provider = MockChatProvider([
            {"thought": "", "tool": "not_a_tool", "args": {}},
            {"final": "done"},
        ])
        transcript = run_agent("x", tmp_path / "wd", provider)
        assert "ERROR" in transcript.turns[0].observation

    def test_multi_tool_turn_sequential_order(self, tmp_path):
        wd = tmp_path / "wd"
        wd.mkdir()
        (wd / "a.txt").write_text("alpha")
        (wd / "b.txt").write_text("beta")
        provider = MockChatProvider([
            {"thought": "read both", "tools": [
                {"name": "text_reader", "args": {"file": "a.txt"}},
                {"name": "text_reader", "args": {"file": "b.txt"}},
            ]},
            {"final": "done"},
        ])
        transcript = run_agent("x", wd, provider)
        actions = [t.action for t in transcript.turns if t.action]
        assert [a[1]["file"] for a in actions] == ["a.txt", "b.txt"]
        assert transcript.turns[0].thought == "read both"
        assert transcript.turns[1].thought == ""
        assert "alpha" in transcript.turns[0].observation
        assert "beta" in transcript.turns[1].observation

    def test_deck_artifact_blocked_before_spec(self, tmp_path):
        # the checkpoint contract covers direct file writes, not just the
        # creator tool: no deck lands on disk before a model spec exists
        provider = MockChatProvider([
            {"thought": "sneak a deck out", "files": [
                {"path": "model.i", "content": "[Executioner]\n  type = Transient\n[]\n"}]},
            {"final": "done"},
        ])
        from deckforge.agent import ToolError
        with pytest.raises(ToolError):
            run_agent("x", tmp_path / "wd", provider, auto_approve=True)
        assert not (tmp_path / "wd" / "model.i").exists()

    def test_creator_outputs_recorded_as_artifacts(self, tmp_path, fixtures_dir):
        wd = prepare_tc1_workdir(tmp_path, fixtures_dir)
        transcript = run_agent("Build it", wd, tc1_provider(fixtures_dir),
                               auto_approve=True)
        assert "tc1_pipe.i" in transcript.artifacts
        assert "tc1_pipe.i.trace.json" in transcript.artifacts
        assert "tc1_pipe.spec.yaml" in transcript.artifacts
        for artifact in transcript.artifacts:
            assert (wd / artifact).exists()

    def test_artifact_paths_are_relative(self, tmp_path, fixtures_dir):
        wd = prepare_tc1_workdir(tmp_path, fixtures_dir)
        transcript = run_agent("x", wd, tc1_provider(fixtures_dir),
                               auto_approve=True)
        for artifact in transcript.artifacts:
            assert not artifact.startswith("/")
        raw = (wd / "transcript.jsonl").read_text()
        assert str(wd) not in raw
