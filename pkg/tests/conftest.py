import json
import os
import sys
from datetime import datetime, timezone

import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.embedding import HashingEmbedder
from src.memory_bank import Experience
from src.tasks import Task

NFL_QUESTION = ("Which professional football team, Cincinnati or Pittsburgh, "
                "will win the game scheduled for Oct 16, 2025?")
NFL_CLOSE = datetime(2025, 10, 16, 20, 0, tzinfo=timezone.utc)

INJURY_EXPERIENCE = dict(
    question="Which team will win the NCAAF game between the two ranked rivals?",
    category="Sports/NCAAF",
    failure_reason=("The agent over-relied on pre-game betting odds and recent season trends without "
                    "accounting for roster changes or home advantage dynamics closer to the game date."),
    improvement=("Incorporate dynamic, up-to-date info (roster, coaching) as the event approaches. "
                 "Avoid static betting odds."),
    missed_information="Injury reports released in the week of the game.",
)

SCHEDULE_EXPERIENCE = dict(
    question="Will the MLS match be won by the home side?",
    category="Sports/MLS",
    failure_reason="The agent failed to update its prediction to reflect the rescheduling of the match.",
    improvement="Always verify the event date and confirm the prediction is relative to the current schedule.",
    missed_information="The league's updated fixture list.",
)


def make_task(task_id="t1", batch_id=0, outcome_index=0, question="Will it rain tomorrow?",
              candidates=("Yes", "No"), prices=None, close_time=None):
    """构造一个已结算任务"""
    return Task(
        id=task_id,
        question=question,
        candidates=tuple(candidates),
        close_time=close_time or datetime(2025, 3, 1, 12, 0, tzinfo=timezone.utc),
        batch_id=batch_id,
        market_prices=None if prices is None else tuple(prices),
        outcome_index=outcome_index,
    )


def make_experience(exp_id, weight=None, **fields):
    """构造一条经验，未给出的文本字段用占位内容"""
    values = dict(question=f"question for {exp_id}", category="", failure_reason="",
                  improvement=f"lesson {exp_id}", missed_information="")
    values.update(fields)
    return Experience(id=exp_id, weight=weight, **values)


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def forecast_reply(mapping):
    return json.dumps(mapping)


@pytest.fixture
def embedder():
    return HashingEmbedder()


@pytest.fixture
def nfl_task():
    return Task(
        id="nfl-2025-10-16",
        question=NFL_QUESTION,
        candidates=("Cincinnati", "Pittsburgh"),
        close_time=NFL_CLOSE,
        batch_id=0,
        market_prices=(0.35, 0.65),
        outcome_index=0,
    )


@pytest.fixture
def nfl_experiences():
    return [
        make_experience("50fe0d0c", **INJURY_EXPERIENCE),
        make_experience("7a1c9e22", **SCHEDULE_EXPERIENCE),
    ]
