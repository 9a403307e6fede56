import json

import pytest

from conftest import make_task, write_jsonl
from src.errors import ValidationError
from src.llm_backend import ScriptedBackend
from src.stream import (NEUTRAL_TAG, Regime, SyntheticSpec, dump_stream, forecast_for_brier,
                        generate_synthetic, group_batches, load_stream, read_tasks, tag_marker)
from src.tasks import Forecast, Outcome
from src.metrics import brier


def _record(task_id, batch_id_, **extra):
    record = {"id": task_id, "batch_id": batch_id_, "question": f"Question {task_id}?",
              "candidates": ["Yes", "No"], "close_time": "2025-03-01T12:00:00Z", "outcome_index": 0}
    record.update(extra)
    return record


def test_load_stream_groups_batches(tmp_path):
    path = write_jsonl(tmp_path / "s.jsonl", [
        _record("a", 0), _record("b", 0, market_prices=[0.4, 0.6]), _record("c", 2),
    ])
    batches = load_stream(path)
    assert [[t.id for t in b] for b in batches] == [["a", "b"], ["c"]]
    assert batches[0][1].market_prices == (0.4, 0.6)
    assert batches[1][0].close_time.isoformat() == "2025-03-01T12:00:00+00:00"


def test_load_stream_skips_blank_lines(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text(json.dumps(_record("a", 0)) + "\n\n" + json.dumps(_record("b", 1)) + "\n", encoding="utf-8")
    assert [t.id for t in read_tasks(path)] == ["a", "b"]


@pytest.mark.parametrize("bad, field", [
    ({"candidates": ["Only"]}, "candidates"),
    ({"market_prices": [0.5]}, "market_prices"),
    ({"market_prices": [1.5, 0.2]}, "market_prices"),
    ({"outcome_index": 5}, "outcome_index"),
    ({"batch_id": "zero"}, "batch_id"),
    ({"close_time": "yesterday"}, "close_time"),
])
def test_invalid_records_report_field_and_line(tmp_path, bad, field):
    path = write_jsonl(tmp_path / "s.jsonl", [_record("ok", 0), _record("bad", 0, **bad)])
    with pytest.raises(ValidationError) as info:
        read_tasks(path)
    assert info.value.line_number == 2
    assert info.value.field == field


def test_missing_field(tmp_path):
    record = _record("a", 0)
    del record["question"]
    with pytest.raises(ValidationError) as info:
        read_tasks(write_jsonl(tmp_path / "s.jsonl", [record]))
    assert info.value.field == "question"
    assert info.value.line_number == 1


def test_invalid_json_line(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text(json.dumps(_record("a", 0)) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(ValidationError) as info:
        read_tasks(path)
    assert info.value.line_number == 2


def test_decreasing_batch_id_rejected(tmp_path):
    path = write_jsonl(tmp_path / "s.jsonl", [_record("a", 1), _record("b", 0)])
    with pytest.raises(ValidationError) as info:
        read_tasks(path)
    assert info.value.field == "batch_id"


def test_duplicate_task_id_rejected(tmp_path):
    path = write_jsonl(tmp_path / "s.jsonl", [_record("a", 0), _record("a", 1)])
    with pytest.raises(ValidationError) as info:
        read_tasks(path)
    assert info.value.line_number == 2


def test_dump_then_load_preserves_tasks(tmp_path):
    tasks = [make_task("x", 0, prices=(0.3, 0.7)), make_task("y", 1, outcome_index=1)]
    dump_stream(tasks, tmp_path / "s.jsonl")
    assert read_tasks(tmp_path / "s.jsonl") == tasks


def test_group_batches_keeps_order():
    tasks = [make_task("a", 0), make_task("b", 0), make_task("c", 1)]
    assert [[t.id for t in b] for b in group_batches(tasks)] == [["a", "b"], ["c"]]
    assert group_batches([]) == []


# ---------------- 合成任务流 ----------------

def test_forecast_for_brier_hits_target():
    for target in (0.0, 0.1, 0.3, 0.5, 1.2, 2.0):
        for y in (0, 1):
            probs = forecast_for_brier(target, y)
            assert brier(Forecast(tuple(probs)), Outcome.one_hot(y, 2)) == pytest.approx(target, abs=1e-12)


def test_synthetic_spec_validation():
    with pytest.raises(ValidationError):
        SyntheticSpec(2, 2, (Regime(1, ("G",)),)).validate()
    with pytest.raises(ValidationError):
        SyntheticSpec(2, 2, (Regime(0, ("G",)), Regime(0, ("B",)))).validate()
    with pytest.raises(ValidationError):
        SyntheticSpec(2, 2, (Regime(0, (NEUTRAL_TAG,)),)).validate()
    with pytest.raises(ValidationError):
        SyntheticSpec(2, 2, (Regime(0, ("G",), base_brier_on=0.1, base_brier_off=1.5),)).validate()
    with pytest.raises(ValidationError):
        SyntheticSpec.from_dict({"n_batches": 2, "regimes": []})


def test_synthetic_spec_from_dict():
    spec = SyntheticSpec.from_dict({
        "n_batches": 3, "tasks_per_batch": 4, "seed": 7,
        "regimes": [{"start_batch": 0, "helpful_experience_tags": ["G"], "harmful_experience_tags": ["B"]},
                    {"start_batch": 2, "harmful_experience_tags": ["G"]}],
    })
    assert spec.regime_for(1).helpful_experience_tags == ("G",)
    assert spec.regime_for(2).harmful_experience_tags == ("G",)
    assert spec.all_tags() == ["G", "B"]


def _spec():
    return SyntheticSpec(3, 4, (Regime(0, ("G",), ("B",)), Regime(2, (), ("G",))), seed=3)


def test_generate_synthetic_shapes():
    artifacts = generate_synthetic(_spec())
    assert len(artifacts.tasks) == 12
    assert [t.batch_id for t in artifacts.tasks] == [0] * 4 + [1] * 4 + [2] * 4
    assert [e.id for e in artifacts.seed_experiences] == ["seed-G", "seed-B"]
    assert artifacts.seed_experiences[0].improvement == tag_marker("G")
    for task in artifacts.tasks:
        assert "<<" not in task.question
        assert abs(sum(task.market_prices) - 1.0) < 1e-3


def test_generate_synthetic_is_deterministic():
    first = generate_synthetic(_spec())
    second = generate_synthetic(_spec())
    assert first.tasks == second.tasks
    assert first.transcript.to_dict() == second.transcript.to_dict()


def _predict(transcript, task, prompt):
    reply = transcript.chat([{"role": "user", "content": prompt}], operation="predict", task_id=task.id)
    probs = json.loads(reply.content)
    return brier(Forecast((probs["Alpha"], probs["Beta"])), task.outcome())


def test_synthetic_transcript_encodes_regimes():
    artifacts = generate_synthetic(_spec())
    transcript = artifacts.transcript
    early, late = artifacts.tasks[0], artifacts.tasks[8]
    guided = "Task-Specific Guideline\n- Apply lesson {} to this task."

    assert _predict(transcript, early, "plain") == pytest.approx(0.3)
    assert _predict(transcript, early, guided.format("<<G>>")) == pytest.approx(0.1)
    assert _predict(transcript, early, guided.format("<<B>>")) == pytest.approx(0.5)
    assert _predict(transcript, early, guided.format("<<neutral>>")) == pytest.approx(0.3)
    assert _predict(transcript, late, guided.format("<<G>>")) == pytest.approx(0.5)
    assert _predict(transcript, late, guided.format("<<B>>")) == pytest.approx(0.3)


def test_synthetic_transcript_survives_save_and_load(tmp_path):
    artifacts = generate_synthetic(_spec())
    artifacts.transcript.save(tmp_path / "transcript.json")
    loaded = ScriptedBackend.from_file(tmp_path / "transcript.json")
    assert loaded.to_dict() == artifacts.transcript.to_dict()
