"""Pipeline orchestration: checkpoints, resume behavior, and the CLI."""
from __future__ import annotations

import json

import pytest

from instructforge.cli import main
from instructforge.consistency import ExtractedAnswer, InstructionRecord
from instructforge.errors import StageOrderError, ValidationError
from instructforge.gateway import CallableBackend, LlmGateway
from instructforge.instructions import CognitiveLevel, InstructionCandidate, pair_job, single_job
from instructforge.pipeline import (
    CHECKPOINT_FILES,
    FILTER_REPORT_FILE,
    REPORT_FILE,
    STAGES,
    STATE_FILE,
    TIMINGS_FILE,
    PipelineRun,
    PipelineState,
    atomic_write_text,
    candidate_from_row,
    candidate_to_row,
    record_from_row,
    record_to_row,
    stage_rng,
)


def pipeline_script(request):
    """Deterministic canned backend: replies depend only on the request tag."""
    kind, _, detail = request.request_tag.partition(":")
    if kind == "seed":
        return "1. alpha risk\n2. beta exposure\n3. sharpe ratio\n4. value at risk"
    if kind == "expand":
        return (
            f"Prerequisite Concepts: pre{detail}a, pre{detail}b\n"
            f"Advanced Concepts: adv{detail}a, adv{detail}b"
        )
    if kind == "extract":
        return f"corpus{detail}x, corpus{detail}y"
    if kind == "inst":
        return f"Generated Question: How does factor {detail[:6]} move the portfolio?"
    if kind == "vote":
        return [f"Reason: factor {detail[:6]} dominates.\nAnswer: A"] * request.n_samples
    raise AssertionError(f"unexpected tag {request.request_tag!r}")


def weak_vote_script(request):
    """Like pipeline_script but votes never reach a 0.6 consensus."""
    if request.request_tag.startswith("vote:"):
        return ["Answer: A", "Answer: B", "Answer: C", "junk", "junk"]
    return pipeline_script(request)


@pytest.fixture
def corpus(tmp_path):
    root = tmp_path / "corpus"
    (root / "textbook").mkdir(parents=True)
    (root / "notes").mkdir()
    (root / "textbook" / "basics.txt").write_text(
        "Portfolio construction balances expected return against volatility. "
        "Diversification reduces idiosyncratic risk across asset classes.",
        encoding="utf-8",
    )
    (root / "textbook" / "factors.txt").write_text(
        "Factor models explain returns through systematic exposures such as "
        "value, momentum, and quality factors.",
        encoding="utf-8",
    )
    (root / "notes" / "memo.txt").write_text(
        "Risk parity weights holdings by inverse volatility contribution.",
        encoding="utf-8",
    )
    return root


def fresh_run(out_dir, task, config, corpus_dir, script=pipeline_script, **kwargs):
    gateway = LlmGateway(CallableBackend(script))
    return PipelineRun(out_dir, task, config, gateway, corpus_dir=corpus_dir, **kwargs)


class TestStageRng:
    def test_deterministic_per_stage(self):
        assert stage_rng(7, "seed").random() == stage_rng(7, "seed").random()

    def test_streams_differ_between_stages_and_seeds(self):
        draws = {
            stage_rng(seed, stage).random()
            for seed in (7, 8, 9)
            for stage in STAGES
        }
        assert len(draws) == len(STAGES) * 3


class TestAtomicWrite:
    def test_creates_parents_and_overwrites(self, tmp_path):
        target = tmp_path / "deep" / "nested" / "file.txt"
        atomic_write_text(target, "one")
        atomic_write_text(target, "two")
        assert target.read_text(encoding="utf-8") == "two"

    def test_leaves_no_temp_files(self, tmp_path):
        target = tmp_path / "file.txt"
        atomic_write_text(target, "content")
        assert [p.name for p in tmp_path.iterdir()] == ["file.txt"]


class TestRowCodecs:
    def test_candidate_round_trip_single(self):
        candidate = InstructionCandidate(
            text="Explain duration?",
            job=single_job("duration", CognitiveLevel.ANALYZE),
            raw_completion="Explain duration?",
        )
        row = candidate_to_row(candidate)
        back = candidate_from_row(row)
        assert back.job == candidate.job
        assert back.text == candidate.text

    def test_candidate_round_trip_pair(self):
        candidate = InstructionCandidate(
            text="Relate alpha and beta?",
            job=pair_job("alpha", "beta", CognitiveLevel.EVALUATE),
            raw_completion="Relate alpha and beta?",
        )
        assert candidate_from_row(candidate_to_row(candidate)).job == candidate.job

    def test_tampered_job_id_rejected(self):
        row = candidate_to_row(
            InstructionCandidate(
                text="Explain duration?",
                job=single_job("duration", CognitiveLevel.ANALYZE),
                raw_completion="Explain duration?",
            )
        )
        row["job_id"] = "0" * 16
        with pytest.raises(ValidationError):
            candidate_from_row(row)

    def test_record_round_trip(self):
        candidate = InstructionCandidate(
            text="Explain beta?",
            job=single_job("beta", CognitiveLevel.APPLY),
            raw_completion="Explain beta?",
        )
        record = InstructionRecord(
            instruction=candidate.text,
            response="Reason: market exposure.\nAnswer: B",
            consensus_answer=ExtractedAnswer("option", "B"),
            consensus_fraction=0.8,
            candidate=candidate,
        )
        back = record_from_row(record_to_row(record))
        assert back == record


class TestPipelineState:
    def test_round_trip(self):
        state = PipelineState(
            config_hash="c" * 64,
            rng_seed=7,
            completed=["seed", "expand"],
            stage_stats={"seed": {"keywords": 4, "llm_calls": 1}},
            flags={"skip_expansion": False},
        )
        assert PipelineState.from_json(state.to_json()) == state

    def test_stage_labels(self):
        state = PipelineState(config_hash="c" * 64, rng_seed=7)
        assert state.stage_label == "Empty"
        labels = []
        for stage in STAGES:
            state.completed.append(stage)
            labels.append(state.stage_label)
        assert labels == ["Seeded", "Expanded", "Retrieved", "Generated", "Filtered", "Exported"]

    def test_json_lists_checkpoints_for_completed_stages_only(self):
        state = PipelineState(config_hash="c" * 64, rng_seed=7, completed=["seed", "expand"])
        payload = json.loads(state.to_json())
        assert payload["checkpoints"] == {
            "seed": "keywords_seed.jsonl",
            "expand": "keywords_expanded.jsonl",
        }
        assert payload["stage"] == "Expanded"


class TestPipelineRun:
    def test_full_run_counts_and_artifacts(self, tmp_path, mc_task, small_config, corpus):
        out = tmp_path / "run"
        run = fresh_run(out, mc_task, small_config, corpus)
        report = run.run_all()

        assert run.state.completed == list(STAGES)
        for stage in STAGES:
            assert (out / CHECKPOINT_FILES[stage]).is_file()
        for name in (STATE_FILE, REPORT_FILE, TIMINGS_FILE, FILTER_REPORT_FILE):
            assert (out / name).is_file()

        stats = run.state.stage_stats
        assert stats["seed"] == {"keywords": 4, "llm_calls": 1}
        assert stats["expand"] == {"new_keywords": 8, "pool_size": 12, "llm_calls": 2}
        assert stats["retrieve"] == {
            "new_keywords": 4,
            "pool_size": 16,
            "documents": 3,
            "llm_calls": 2,
        }
        # 16 keywords: 96 single jobs exceed the budget of ceil(50 * 1.5) = 75,
        # so 45 singles plus 30 pairs are enumerated.
        assert stats["generate"] == {"jobs": 75, "candidates": 75, "dropped": 0, "llm_calls": 75}
        assert stats["filter"]["kept"] == 50
        assert stats["filter"]["dropped_truncated"] == 25
        assert stats["export"] == {"dataset_size": 50, "llm_calls": 0}

        assert report.dataset_size == 50
        assert report.llm_calls == 1 + 2 + 2 + 75 + 75
        assert report.config_hash == small_config.content_hash()
        assert report.rng_seed == small_config.rng_seed

        dataset_lines = (out / "dataset.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(dataset_lines) == 50
        first = json.loads(dataset_lines[0])
        assert first["answer"] == "A"
        assert first["instruction"].startswith("How does factor ")

        timings = json.loads((out / TIMINGS_FILE).read_text(encoding="utf-8"))
        assert sorted(timings) == sorted(STAGES)

    def test_identical_reruns(self, tmp_path, mc_task, small_config, corpus):
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            fresh_run(out, mc_task, small_config, corpus).run_all()
            outputs.append(
                (
                    (out / "dataset.jsonl").read_bytes(),
                    (out / REPORT_FILE).read_bytes(),
                )
            )
        assert outputs[0] == outputs[1]

    def test_stagewise_equals_run_all(self, tmp_path, mc_task, small_config, corpus):
        whole = tmp_path / "whole"
        fresh_run(whole, mc_task, small_config, corpus).run_all()

        stepped = tmp_path / "stepped"
        for stage in STAGES:
            # A fresh run object (and gateway) per stage, as separate
            # processes would have.
            run = fresh_run(stepped, mc_task, small_config, corpus)
            run.run_stage(stage)
        report = fresh_run(stepped, mc_task, small_config, corpus).build_report()

        assert (stepped / "dataset.jsonl").read_bytes() == (whole / "dataset.jsonl").read_bytes()
        assert report.to_json().encode() == (whole / REPORT_FILE).read_bytes()

    def test_interrupted_run_resumes_identically(self, tmp_path, mc_task, small_config, corpus):
        whole = tmp_path / "whole"
        fresh_run(whole, mc_task, small_config, corpus).run_all()

        resumed = tmp_path / "resumed"
        first = fresh_run(resumed, mc_task, small_config, corpus)
        first.run_stage("seed")
        first.run_stage("expand")
        first.run_stage("retrieve")
        # Simulate a new process picking the directory back up.
        fresh_run(resumed, mc_task, small_config, corpus).run_all()

        assert (resumed / "dataset.jsonl").read_bytes() == (whole / "dataset.jsonl").read_bytes()
        assert (resumed / REPORT_FILE).read_bytes() == (whole / REPORT_FILE).read_bytes()

    def test_completed_stage_requires_force(self, tmp_path, mc_task, small_config, corpus):
        run = fresh_run(tmp_path / "run", mc_task, small_config, corpus)
        run.run_stage("seed")
        with pytest.raises(StageOrderError):
            run.run_stage("seed")

    def test_out_of_order_stage_rejected(self, tmp_path, mc_task, small_config, corpus):
        run = fresh_run(tmp_path / "run", mc_task, small_config, corpus)
        with pytest.raises(StageOrderError):
            run.run_stage("expand")

    def test_unknown_stage_rejected(self, tmp_path, mc_task, small_config, corpus):
        run = fresh_run(tmp_path / "run", mc_task, small_config, corpus)
        with pytest.raises(ValidationError):
            run.run_stage("polish")

    def test_report_requires_export(self, tmp_path, mc_task, small_config, corpus):
        run = fresh_run(tmp_path / "run", mc_task, small_config, corpus)
        run.run_stage("seed")
        with pytest.raises(StageOrderError):
            run.build_report()

    def test_force_invalidates_downstream(self, tmp_path, mc_task, small_config, corpus):
        out = tmp_path / "run"
        run = fresh_run(out, mc_task, small_config, corpus)
        run.run_all()
        baseline = (out / "dataset.jsonl").read_bytes()

        run.run_stage("generate", force=True)
        assert run.state.completed == ["seed", "expand", "retrieve", "generate"]
        assert not (out / CHECKPOINT_FILES["filter"]).exists()
        assert not (out / CHECKPOINT_FILES["export"]).exists()
        assert not (out / REPORT_FILE).exists()
        assert not (out / FILTER_REPORT_FILE).exists()

        run.run_stage("filter")
        run.run_stage("export")
        assert (out / "dataset.jsonl").read_bytes() == baseline

    def test_run_all_force_reruns_from_scratch(self, tmp_path, mc_task, small_config, corpus):
        out = tmp_path / "run"
        run = fresh_run(out, mc_task, small_config, corpus)
        run.run_all()
        baseline = (out / "dataset.jsonl").read_bytes()
        again = fresh_run(out, mc_task, small_config, corpus)
        again.run_all(force=True)
        assert (out / "dataset.jsonl").read_bytes() == baseline
        assert again.state.stage_stats["seed"]["llm_calls"] == 1

    def test_config_change_rejected_on_resume(self, tmp_path, mc_task, small_config, corpus):
        out = tmp_path / "run"
        fresh_run(out, mc_task, small_config, corpus).run_stage("seed")
        with pytest.raises(ValidationError):
            fresh_run(out, mc_task, small_config.replace(target_dataset_size=49), corpus)

    def test_skip_flags(self, tmp_path, mc_task, small_config):
        out = tmp_path / "run"
        run = fresh_run(
            out, mc_task, small_config, None, skip_expansion=True, skip_retrieval=True
        )
        report = run.run_all()
        stats = run.state.stage_stats
        assert stats["expand"] == {"new_keywords": 0, "pool_size": 4, "llm_calls": 0}
        assert stats["retrieve"] == {
            "new_keywords": 0,
            "pool_size": 4,
            "documents": 0,
            "llm_calls": 0,
        }
        # 4 keywords: 24 singles fit the budget of 75; the remaining pair
        # budget exceeds the 24 possible pairs, so every job is enumerated.
        assert stats["generate"]["jobs"] == 48
        assert report.dataset_size == 48

    def test_retrieval_without_corpus_rejected(self, tmp_path, mc_task, small_config):
        run = fresh_run(tmp_path / "run", mc_task, small_config, None, skip_expansion=True)
        run.run_stage("seed")
        run.run_stage("expand")
        with pytest.raises(ValidationError):
            run.run_stage("retrieve")

    def test_tau_override_rescues_weak_votes(self, tmp_path, mc_task, small_config):
        strict = fresh_run(
            tmp_path / "strict",
            mc_task,
            small_config,
            None,
            script=weak_vote_script,
            skip_expansion=True,
            skip_retrieval=True,
        )
        strict.run_all()
        assert strict.state.stage_stats["filter"]["kept"] == 0
        assert strict.state.stage_stats["filter"]["dropped_below_threshold"] == 48

        lax = fresh_run(
            tmp_path / "lax",
            mc_task,
            small_config,
            None,
            script=weak_vote_script,
            skip_expansion=True,
            skip_retrieval=True,
            tau_override=0.0,
        )
        lax.run_all()
        assert lax.state.stage_stats["filter"]["kept"] == 48

    def test_state_records_flags(self, tmp_path, mc_task, small_config, corpus):
        run = fresh_run(
            tmp_path / "run", mc_task, small_config, corpus, skip_retrieval=True, tau_override=0.5
        )
        run.run_stage("seed")
        payload = json.loads((tmp_path / "run" / STATE_FILE).read_text(encoding="utf-8"))
        assert payload["flags"]["skip_retrieval"] is True
        assert payload["flags"]["tau_override"] == 0.5


@pytest.fixture
def cli_files(tmp_path, small_config, corpus):
    """Task and config files plus a recorded transcript of a full run."""
    task_path = tmp_path / "task.txt"
    task_path.write_text(
        "name = finance_mc\n"
        "description = Answer multiple-choice questions about corporate finance.\n"
        "domain_label = corporate finance\n"
        "answer_format = multiple_choice\n",
        encoding="utf-8",
    )
    config_path = tmp_path / "config.txt"
    config_path.write_text(small_config.to_text(), encoding="utf-8")

    from instructforge.task import load_task

    record_dir = tmp_path / "recorded"
    gateway = LlmGateway(
        CallableBackend(pipeline_script), transcript_path=record_dir / "transcript.jsonl"
    )
    run = PipelineRun(
        record_dir, load_task(task_path), small_config, gateway, corpus_dir=corpus
    )
    with gateway:
        run.run_all()
    return {
        "task": str(task_path),
        "config": str(config_path),
        "corpus": str(corpus),
        "transcript": str(record_dir / "transcript.jsonl"),
        "dataset": record_dir / "dataset.jsonl",
        "report": record_dir / REPORT_FILE,
        "tmp": tmp_path,
    }


def replay_args(cli_files, out, *extra):
    return [
        "replay",
        "--task",
        cli_files["task"],
        "--config",
        cli_files["config"],
        "--out",
        str(out),
        "--corpus",
        cli_files["corpus"],
        "--transcript",
        cli_files["transcript"],
        *extra,
    ]


class TestCli:
    def test_replay_reproduces_recorded_run(self, cli_files):
        out = cli_files["tmp"] / "replayed"
        assert main(replay_args(cli_files, out)) == 0
        assert (out / "dataset.jsonl").read_bytes() == cli_files["dataset"].read_bytes()
        assert (out / REPORT_FILE).read_bytes() == cli_files["report"].read_bytes()

    def test_stage_subcommands_in_sequence(self, cli_files):
        out = cli_files["tmp"] / "staged"
        for stage in STAGES:
            args = [
                stage,
                "--task",
                cli_files["task"],
                "--config",
                cli_files["config"],
                "--out",
                str(out),
                "--corpus",
                cli_files["corpus"],
                "--backend",
                "mock",
                "--transcript",
                cli_files["transcript"],
            ]
            assert main(args) == 0
        assert (out / "dataset.jsonl").read_bytes() == cli_files["dataset"].read_bytes()
        # The export subcommand finalizes the run report.
        assert (out / REPORT_FILE).read_bytes() == cli_files["report"].read_bytes()

    def test_stats_command(self, cli_files, capsys):
        sunburst = cli_files["tmp"] / "sunburst.csv"
        code = main(
            [
                "stats",
                "--dataset",
                str(cli_files["dataset"]),
                "--min-pair-frequency",
                "2",
                "--sunburst",
                str(sunburst),
            ]
        )
        assert code == 0
        captured = capsys.readouterr().out
        assert "Instructions" in captured
        assert "50" in captured
        assert sunburst.read_text(encoding="utf-8").startswith("verb,noun,count")

    def test_mock_requires_transcript(self, cli_files):
        out = cli_files["tmp"] / "x1"
        args = replay_args(cli_files, out)
        args.remove("--transcript")
        args.remove(cli_files["transcript"])
        assert main(args) == 2

    def test_malformed_config(self, cli_files):
        bad = cli_files["tmp"] / "bad.txt"
        bad.write_text("not a config line\n", encoding="utf-8")
        out = cli_files["tmp"] / "x2"
        args = replay_args(cli_files, out)
        args[args.index(cli_files["config"])] = str(bad)
        assert main(args) == 2

    def test_unknown_config_override(self, cli_files):
        out = cli_files["tmp"] / "x3"
        assert main(replay_args(cli_files, out, "--set", "bogus_key=1")) == 2

    def test_bad_override_syntax(self, cli_files):
        out = cli_files["tmp"] / "x4"
        assert main(replay_args(cli_files, out, "--set", "no_equals_sign")) == 2

    def test_missing_task_file(self, cli_files):
        out = cli_files["tmp"] / "x5"
        args = replay_args(cli_files, out)
        args[args.index(cli_files["task"])] = str(cli_files["tmp"] / "absent.txt")
        assert main(args) == 2

    def test_stage_order_violation(self, cli_files):
        out = cli_files["tmp"] / "x6"
        args = [
            "expand",
            "--task",
            cli_files["task"],
            "--config",
            cli_files["config"],
            "--out",
            str(out),
            "--backend",
            "mock",
            "--transcript",
            cli_files["transcript"],
        ]
        assert main(args) == 4

    def test_exhausted_transcript(self, cli_files):
        empty = cli_files["tmp"] / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        out = cli_files["tmp"] / "x7"
        args = replay_args(cli_files, out)
        args[args.index(cli_files["transcript"])] = str(empty)
        assert main(args) == 3

    def test_seed_override_reaches_state(self, cli_files):
        out = cli_files["tmp"] / "x8"
        # Only the seed stage: its request tag does not depend on the RNG,
        # so the recorded transcript still replays under a different seed.
        args = [
            "seed",
            "--task",
            cli_files["task"],
            "--config",
            cli_files["config"],
            "--out",
            str(out),
            "--backend",
            "mock",
            "--transcript",
            cli_files["transcript"],
            "--seed",
            "99",
        ]
        assert main(args) == 0
        payload = json.loads((out / STATE_FILE).read_text(encoding="utf-8"))
        assert payload["rng_seed"] == 99

    def test_config_override_reaches_state(self, cli_files):
        out = cli_files["tmp"] / "x9"
        assert main(replay_args(cli_files, out, "--set", "consistency_threshold=0.2")) == 0
        payload = json.loads((out / STATE_FILE).read_text(encoding="utf-8"))
        baseline = json.loads(cli_files["report"].read_text(encoding="utf-8"))
        assert payload["config_hash"] != baseline["config_hash"]

    def test_tau_flag_recorded_in_flags(self, cli_files):
        out = cli_files["tmp"] / "x10"
        assert main(replay_args(cli_files, out, "--tau", "0")) == 0
        payload = json.loads((out / STATE_FILE).read_text(encoding="utf-8"))
        assert payload["flags"]["tau_override"] == 0.0
