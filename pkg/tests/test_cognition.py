import json

import pytest

from src.cognition import (EMPTY_GUIDELINE, Guideline, compile_guideline, generate_queries, parse_bullets,
                           reflect, render_compile_prompt, summarize_experience)
from src.errors import ParseError, ValidationError
from src.llm_backend import ScriptedBackend
from src.memory_bank import (DEFAULT_META_GUIDELINE, TARGET_EXPERIENCE, TARGET_QUESTION, MetaGuideline,
                             RetrievalHit)
from src.tasks import Trajectory

OVERGENERALIZATION = {
    "failure_pattern": ("Over-generalization of domain-specific lessons across fundamentally different "
                        "task types and contexts."),
    "synthesis_instruction": ("When generating guidelines from past experiences, explicitly verify that the "
                              "domain, task type, and contextual factors closely align before transferring "
                              "lessons."),
}

INJURY_LESSON = {
    "category": "Sports/NFL",
    "failure_reason": "Relied on the season record and static betting odds.",
    "improvement": ("Check dynamic injury reports and roster changes published close to kickoff "
                    "instead of static betting odds."),
    "missed_information": "Official injury report for the week of the game.",
}


def _backend(operation, reply, task_id="*"):
    return ScriptedBackend([{"operation": operation, "task_id": task_id, "reply": reply}])


def _hits(experiences, scores=None):
    scores = scores or [1.0] * len(experiences)
    return [RetrievalHit(e.id, s, s, e) for e, s in zip(experiences, scores)]


# ---------------- generate_queries ----------------

def test_generate_queries_returns_scripted_queries(nfl_task):
    reply = json.dumps({"queries": [
        {"query": "NFL injury report impact", "search_target": "experience"},
        {"query": "Cincinnati vs Pittsburgh", "search_target": "question"},
    ]})
    queries = generate_queries(_backend("generate_queries", reply), nfl_task)
    assert [(q.query, q.target) for q in queries] == [
        ("NFL injury report impact", TARGET_EXPERIENCE),
        ("Cincinnati vs Pittsburgh", TARGET_QUESTION),
    ]


def test_generate_queries_caps_at_three(nfl_task):
    reply = json.dumps({"queries": [{"query": f"q{i}", "search_target": "question"} for i in range(5)]})
    queries = generate_queries(_backend("generate_queries", reply), nfl_task)
    assert [q.query for q in queries] == ["q0", "q1", "q2"]


def test_generate_queries_falls_back_on_garbage(nfl_task):
    queries = generate_queries(_backend("generate_queries", "I cannot help with that."), nfl_task)
    assert len(queries) == 1
    assert queries[0].query == nfl_task.question
    assert queries[0].target == TARGET_QUESTION


def test_generate_queries_accepts_fenced_json(nfl_task):
    reply = "Here you go:\n```json\n{\"queries\": [{\"query\": \"odds\", \"search_target\": \"exp\"}]}\n```"
    queries = generate_queries(_backend("generate_queries", reply), nfl_task)
    assert [(q.query, q.target) for q in queries] == [("odds", TARGET_EXPERIENCE)]


# ---------------- compile_guideline ----------------

def test_compile_guideline_keeps_bullets_and_provenance(nfl_task, nfl_experiences):
    reply = ("- Prioritize official injury reports close to the game date.\n"
             "- Confirm the exact game date before researching.\n"
             "- Model the impact of key player absences and home advantage.")
    guideline = compile_guideline(_backend("compile_guideline", reply), nfl_task,
                                  _hits(nfl_experiences, [0.9, 0.6]), DEFAULT_META_GUIDELINE)
    assert len(guideline.bullets) == 3
    assert guideline.bullets[0] == "Prioritize official injury reports close to the game date."
    assert guideline.source_experience_ids == ("50fe0d0c", "7a1c9e22")
    assert guideline.meta_guideline_id == "default"


def test_compile_guideline_without_hits_is_empty(nfl_task):
    backend = ScriptedBackend()
    assert compile_guideline(backend, nfl_task, [], DEFAULT_META_GUIDELINE) is EMPTY_GUIDELINE


def test_compile_guideline_caps_bullets(nfl_task, nfl_experiences):
    reply = "\n".join(f"{i}. step {i}" for i in range(1, 10))
    guideline = compile_guideline(_backend("compile_guideline", reply), nfl_task,
                                  _hits(nfl_experiences), DEFAULT_META_GUIDELINE)
    assert guideline.bullets == tuple(f"step {i}" for i in range(1, 9))


def test_compile_prompt_orders_hits_and_injects_meta(nfl_task, nfl_experiences):
    meta = MetaGuideline("mg1", "pattern", "Only transfer lessons within the same sport.", 2)
    hits = _hits(nfl_experiences, [0.4, 0.8])
    experiences = [h.experience for h in sorted(hits, key=lambda h: -h.weighted_score)]
    prompt = render_compile_prompt(nfl_task, experiences, meta)
    assert f"Current Task: {nfl_task.question}" in prompt
    assert "[Experience 1 (id 7a1c9e22, Sports/MLS) Summary:" in prompt
    assert "[Experience 2 (id 50fe0d0c, Sports/NCAAF) Summary:" in prompt
    assert "CRITICAL: Experience Applicability Check\nOnly transfer lessons within the same sport." in prompt
    assert "generate a FOCUSED and ACTIONABLE guideline (3-5 bullet points)" in prompt


def test_compile_prompt_default_meta_text(nfl_task, nfl_experiences):
    prompt = render_compile_prompt(nfl_task, nfl_experiences, DEFAULT_META_GUIDELINE)
    assert prompt.count("CRITICAL: Experience Applicability Check") == 1
    assert "Identify which lessons are directly applicable vs. need adaptation." in prompt


def test_parse_bullets_variants():
    assert parse_bullets('["a", "b"]') == ["a", "b"]
    assert parse_bullets('{"bullets": ["x"]}') == ["x"]
    assert parse_bullets("Intro\n* one\n• two\n2) three") == ["one", "two", "three"]
    assert parse_bullets("just a sentence") == ["just a sentence"]
    assert parse_bullets("") == []


# ---------------- reflect ----------------

def test_reflect_returns_meta_guideline_text(nfl_task, nfl_experiences):
    backend = _backend("reflect", json.dumps(OVERGENERALIZATION))
    guideline = Guideline(("Rely on last season's odds.",), ("50fe0d0c",))
    record = reflect(backend, nfl_task, guideline, _hits(nfl_experiences[:1]))
    assert record.failure_pattern.startswith("Over-generalization of domain-specific lessons")
    assert record.synthesis_instruction == OVERGENERALIZATION["synthesis_instruction"]
    assert reflect(backend, nfl_task, guideline, _hits(nfl_experiences[:1])) == record


def test_reflect_malformed_reply_raises(nfl_task, nfl_experiences):
    guideline = Guideline(("x",), ("50fe0d0c",))
    with pytest.raises(ParseError):
        reflect(_backend("reflect", "no idea"), nfl_task, guideline, _hits(nfl_experiences))
    with pytest.raises(ParseError):
        reflect(_backend("reflect", json.dumps({"failure_pattern": "p"})), nfl_task, guideline,
                _hits(nfl_experiences))


# ---------------- summarize_experience ----------------

def _trajectory():
    trajectory = Trajectory()
    trajectory.add("model_message", "Pittsburgh is 4-1 and favored by the odds.")
    trajectory.add("model_message", '{"Cincinnati": 0.35, "Pittsburgh": 0.65}')
    return trajectory


def test_summarize_experience_builds_candidate(nfl_task):
    backend = _backend("summarize_experience", json.dumps(INJURY_LESSON))
    candidate = summarize_experience(backend, nfl_task, _trajectory(), nfl_task.outcome())
    assert "injury reports" in candidate.improvement
    assert candidate.weight is None
    assert candidate.question == nfl_task.question
    assert candidate.category == "Sports/NFL"
    again = summarize_experience(backend, nfl_task, _trajectory(), nfl_task.outcome())
    assert again.to_record() == candidate.to_record()


def test_summarize_experience_prompt_names_realized_outcome(nfl_task):
    backend = ScriptedBackend([{"operation": "summarize_experience", "task_id": "*",
                                "when": ["Realized outcome: Cincinnati"], "reply": json.dumps(INJURY_LESSON)}])
    assert summarize_experience(backend, nfl_task, _trajectory(), nfl_task.outcome()).improvement


def test_summarize_experience_empty_trajectory(nfl_task):
    with pytest.raises(ValidationError):
        summarize_experience(ScriptedBackend(), nfl_task, Trajectory(), nfl_task.outcome())


def test_summarize_experience_requires_improvement(nfl_task):
    reply = json.dumps(dict(INJURY_LESSON, improvement=""))
    with pytest.raises(ParseError):
        summarize_experience(_backend("summarize_experience", reply), nfl_task, _trajectory(),
                             nfl_task.outcome())
