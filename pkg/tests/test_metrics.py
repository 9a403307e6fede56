import numpy as np
import pytest

from conftest import make_task, write_jsonl
from src.errors import ValidationError
from src.metrics import (TaskScore, brier, gain, market_return, portfolio_accumulate, read_forecasts,
                         read_reports_jsonl, score_forecasts, score_task, utility, weekly_report,
                         write_reports_csv, write_reports_jsonl, write_scores_csv)
from src.tasks import Forecast, Outcome


def test_brier_perfect_forecast():
    assert brier(Forecast((0.0, 1.0, 0.0)), Outcome.one_hot(1, 3)) == 0.0


def test_brier_nfl_baseline():
    assert brier(Forecast((0.65, 0.35)), Outcome.one_hot(1, 2)) == pytest.approx(0.845)


def test_brier_uniform_binary():
    for y in (0, 1):
        assert brier(Forecast.uniform(2), Outcome.one_hot(y, 2)) == pytest.approx(0.5)


def test_brier_dimension_mismatch():
    with pytest.raises(ValidationError):
        brier(Forecast((0.5, 0.5)), Outcome.one_hot(0, 3))


def test_market_return_examples():
    assert market_return(Forecast((0.55, 0.45)), (0.5, 0.5), Outcome.one_hot(0, 2)) == pytest.approx(0.5)
    assert market_return(Forecast((0.5, 0.5)), (0.5, 0.5), Outcome.one_hot(0, 2)) == 0.0
    assert market_return(Forecast((0.9, 0.1)), (0.5, 0.5), Outcome.one_hot(1, 2)) == pytest.approx(-0.5)


def test_market_return_without_prices():
    assert market_return(Forecast((0.9, 0.1)), None, Outcome.one_hot(0, 2)) is None


def test_market_return_rejects_bad_prices():
    with pytest.raises(ValidationError):
        market_return(Forecast((0.9, 0.1)), (1.5, 0.5), Outcome.one_hot(0, 2))


def test_metrics_match_brute_force_oracles():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        raw = rng.dirichlet(np.ones(k))
        forecast = Forecast(tuple(float(v) for v in raw))
        prices = tuple(float(v) for v in rng.uniform(0.0, 1.0, size=k))
        y = int(rng.integers(0, k))
        outcome = Outcome.one_hot(y, k)

        expected_brier = 0.0
        for i in range(k):
            target = 1.0 if i == y else 0.0
            expected_brier += (forecast.probs[i] - target) ** 2
        expected_return = 0.0
        for i in range(k):
            if forecast.probs[i] > prices[i]:
                expected_return += (1.0 if i == y else 0.0) - prices[i]

        b = brier(forecast, outcome)
        assert b == pytest.approx(expected_brier, abs=1e-12)
        assert 0.0 <= b <= 2.0
        assert market_return(forecast, prices, outcome) == pytest.approx(expected_return, abs=1e-12)


def test_utility_policies():
    assert utility(TaskScore("t", 0.25)) == -0.25
    assert utility(TaskScore("t", 0.0)) == 0.0
    assert utility(TaskScore("t", 0.8, correct=True), "accuracy") == 1.0
    assert utility(TaskScore("t", 0.1, correct=False), "accuracy") == 0.0
    with pytest.raises(ValidationError):
        utility(TaskScore("t", 0.1), "log")


def test_gain_from_brier_utilities():
    on = TaskScore("t", 0.25, utility=-0.25)
    off = TaskScore("t", 0.5329, utility=-0.5329)
    assert gain(on, off) == pytest.approx(0.2829)


def test_score_task_fills_every_field():
    task = make_task(outcome_index=0, prices=(0.5, 0.5))
    score = score_task(task, Forecast((0.55, 0.45)))
    assert score.brier == pytest.approx(0.405)
    assert score.market_return == pytest.approx(0.5)
    assert score.utility == -score.brier
    assert score.correct


def test_score_task_needs_outcome():
    task = make_task()
    unresolved = type(task)(task.id, task.question, task.candidates, task.close_time, task.batch_id)
    with pytest.raises(ValidationError):
        score_task(unresolved, Forecast((0.5, 0.5)))


def test_portfolio_examples():
    assert portfolio_accumulate([0.0, 0.0], 100) == [100.0, 200.0]
    assert portfolio_accumulate([0.5], 100) == [150.0]
    assert portfolio_accumulate([-1.0], 100) == [0.0]
    assert portfolio_accumulate([0.0, 0.5], 100) == [100.0, 250.0]


def test_portfolio_requires_positive_stake():
    with pytest.raises(ValidationError):
        portfolio_accumulate([0.1], 0.0)


def test_weekly_report_means():
    on = [TaskScore("a", 0.2, 0.5), TaskScore("b", 0.4, None)]
    off = [TaskScore("a", 0.3), TaskScore("b", 0.5)]
    report = weekly_report(3, on, previous_value=100.0, stake_per_week=100.0, scores_off=off)
    assert report.batch_id == 3
    assert report.n_tasks == 2
    assert report.mean_brier == pytest.approx(0.3)
    assert report.mean_brier_off == pytest.approx(0.4)
    assert report.mean_return == pytest.approx(0.5)
    assert report.portfolio_value_after == pytest.approx(250.0)


def test_weekly_report_without_prices_and_empty():
    report = weekly_report(0, [TaskScore("a", 0.2)], 0.0, 100.0)
    assert report.mean_return == 0.0
    assert report.mean_brier_off is None
    with pytest.raises(ValidationError):
        weekly_report(0, [], 0.0, 100.0)


def test_report_files_round_trip(tmp_path):
    reports = [weekly_report(0, [TaskScore("a", 0.2, 0.1)], 0.0, 100.0),
               weekly_report(1, [TaskScore("b", 0.6, -0.2)], 110.0, 100.0)]
    write_reports_jsonl(reports, tmp_path / "weekly.jsonl")
    write_reports_csv(reports, tmp_path / "weekly.csv")
    assert read_reports_jsonl(tmp_path / "weekly.jsonl") == reports
    lines = (tmp_path / "weekly.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "batch_id,mean_brier,mean_brier_off,mean_return,n_tasks,portfolio_value_after"
    assert lines[1].startswith("0,0.2,,")
    assert len(lines) == 3


def _binary_stream():
    return [make_task(f"t{i}", batch_id=i // 2, outcome_index=i % 2) for i in range(4)]


def test_score_forecasts_one_hot_is_zero():
    tasks = _binary_stream()
    forecasts = {t.id: Forecast(Outcome.one_hot(t.outcome_index, 2).y) for t in tasks}
    scores, reports = score_forecasts(tasks, forecasts)
    assert [r.mean_brier for r in reports] == [0.0, 0.0]
    assert len(scores) == 4


def test_score_forecasts_uniform_is_half():
    tasks = _binary_stream()
    _, reports = score_forecasts(tasks, {t.id: Forecast.uniform(2) for t in tasks})
    assert [r.mean_brier for r in reports] == [pytest.approx(0.5), pytest.approx(0.5)]
    assert [r.portfolio_value_after for r in reports] == [100.0, 200.0]


def test_score_forecasts_lists_missing_ids():
    tasks = _binary_stream()
    with pytest.raises(ValidationError) as info:
        score_forecasts(tasks, {"t0": Forecast.uniform(2)})
    assert "t1, t2, t3" in str(info.value)


def test_read_forecasts_formats(tmp_path):
    tasks = _binary_stream()
    path = write_jsonl(tmp_path / "f.jsonl", [
        {"task_id": "t0", "probs": [0.7, 0.3]},
        {"task_id": "t1", "forecast": {"No": 0.6, "Yes": 0.4}},
        {"task_id": "t2", "forecast_on": {"Yes": 1.0, "No": 0.0}, "brier_on": 0.0},
    ])
    forecasts = read_forecasts(path, tasks)
    assert forecasts["t0"].probs == (0.7, 0.3)
    assert forecasts["t1"].probs == (0.4, 0.6)
    assert forecasts["t2"].probs == (1.0, 0.0)


def test_read_forecasts_unknown_task(tmp_path):
    path = write_jsonl(tmp_path / "f.jsonl", [{"task_id": "zzz", "probs": [0.5, 0.5]}])
    with pytest.raises(ValidationError) as info:
        read_forecasts(path, _binary_stream())
    assert info.value.line_number == 1


def test_write_scores_csv(tmp_path):
    write_scores_csv([TaskScore("t0", 0.5, None, -0.5, False)], tmp_path / "scores.csv")
    lines = (tmp_path / "scores.csv").read_text(encoding="utf-8").splitlines()
    assert lines == ["task_id,brier,market_return,utility,correct", "t0,0.5,,-0.5,False"]
