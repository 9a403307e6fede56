"""
合成任务流上的端到端演化场景：有用经验被强化、有害经验被压制、机制切换后旧经验退场
"""

from collections import Counter

import pytest

from src.algorithms import AlgorithmUtils, LiveEvolutionAlgorithm
from src.config import EvolutionConfig
from src.embedding import HashingEmbedder
from src.memory_bank import ExperienceBank
from src.stream import Regime, SyntheticSpec, generate_synthetic, group_batches


def _run(spec, operations=None, **config):
    artifacts = generate_synthetic(spec)
    weights = []
    if operations is not None:
        chat = artifacts.transcript.chat

        def counting_chat(messages, **kwargs):
            operations[kwargs["operation"]] += 1
            return chat(messages, **kwargs)

        artifacts.transcript.chat = counting_chat

    def snapshot(outcome):
        weights.append({e.id: e.weight for e in algo.experience_bank})

    algo = LiveEvolutionAlgorithm(artifacts.transcript, HashingEmbedder(),
                                  ExperienceBank(artifacts.seed_experiences),
                                  config=EvolutionConfig(**config), on_batch=snapshot)
    result = algo.execute(group_batches(artifacts.tasks))
    return algo, result["outcomes"], weights


def test_helpful_experience_is_reinforced_and_harmful_is_suppressed():
    spec = SyntheticSpec(5, 10, (Regime(0, ("G",), ("B",)),), seed=11)
    algo, outcomes, weights = _run(spec, retrieval_threshold=0.15)

    assert algo.experience_bank.get("seed-G").weight > 1.5
    assert algo.experience_bank.get("seed-B").weight == pytest.approx(0.0, abs=1e-9)
    final = outcomes[-1]
    assert all("seed-B" not in r.retrieved_ids for r in final.results)
    assert any("seed-G" in r.retrieved_ids for r in final.results)
    # 有记忆的平均 Brier 在每一批都不差于无记忆
    for outcome in outcomes[1:]:
        assert outcome.report.mean_brier <= outcome.report.mean_brier_off + 1e-9
    assert [w["seed-G"] for w in weights] == sorted(w["seed-G"] for w in weights)


def test_first_batch_commits_neutral_lessons_for_harmful_tasks():
    spec = SyntheticSpec(5, 10, (Regime(0, ("G",), ("B",)),), seed=11)
    algo, outcomes, _ = _run(spec, retrieval_threshold=0.15)

    assert len(outcomes[0].committed_experience_ids) == 3
    for exp_id in outcomes[0].committed_experience_ids:
        assert algo.experience_bank.get(exp_id).improvement == "<<neutral>>"
    # 之后有害经验不再被检索，有记忆与无记忆持平，候选经验无法通过验证
    assert all(not o.committed_experience_ids for o in outcomes[1:])
    assert len(algo.meta_bank) == 1


def test_regime_shift_retires_stale_experience():
    spec = SyntheticSpec(10, 6, (Regime(0, ("G",), ("B", "C")), Regime(5, (), ("G",))), seed=5)
    algo, outcomes, weights = _run(spec, retrieval_threshold=0.5)

    g_weights = [w["seed-G"] for w in weights]
    assert g_weights[4] == pytest.approx(3.0)
    for before, after in zip(g_weights[4:], g_weights[5:]):
        assert after <= before + 1e-12
    assert g_weights[9] < 0.5
    assert all("seed-G" not in r.retrieved_ids for r in outcomes[9].results)

    late = outcomes[7:]
    mean_on = AlgorithmUtils.mean(o.report.mean_brier for o in late)
    mean_off = AlgorithmUtils.mean(o.report.mean_brier_off for o in late)
    assert abs(mean_on - mean_off) <= 0.05


def test_regime_shift_is_replayable():
    spec = SyntheticSpec(10, 6, (Regime(0, ("G",), ("B", "C")), Regime(5, (), ("G",))), seed=5)
    _, first, _ = _run(spec, retrieval_threshold=0.5)
    _, second, _ = _run(spec, retrieval_threshold=0.5)
    for a, b in zip(first, second):
        assert a.report == b.report
        assert [r.to_record(("Alpha", "Beta")) for r in a.results] == \
               [r.to_record(("Alpha", "Beta")) for r in b.results]


# ---------------- 消融 ----------------

REINFORCE = SyntheticSpec(5, 10, (Regime(0, ("G",), ("B",)),), seed=11)


def test_without_weight_update_weights_stay_put():
    algo, outcomes, weights = _run(REINFORCE, retrieval_threshold=0.15, update_weights=False)
    _, full, _ = _run(REINFORCE, retrieval_threshold=0.15)

    assert all(w["seed-G"] == 1.0 and w["seed-B"] == 1.0 for w in weights)
    assert algo.experience_bank.get("seed-G").times_retrieved == 0
    for outcome in outcomes:
        assert outcome.report.mean_brier == pytest.approx(0.3)
    assert full[4].report.mean_brier == pytest.approx(0.2)
    assert outcomes[0].results[0].weights_after == {"seed-G": 1.0}


def test_without_meta_guidelines_bank_stays_empty():
    operations = Counter()
    algo, outcomes, weights = _run(REINFORCE, operations, retrieval_threshold=0.15, use_meta_guidelines=False)
    _, _, full_weights = _run(REINFORCE, retrieval_threshold=0.15)

    assert len(algo.meta_bank) == 0
    assert operations["reflect"] == 0
    assert all(r.added_meta_guideline_id is None for o in outcomes for r in o.results)
    assert weights == full_weights


def test_without_compile_injects_raw_experiences():
    operations = Counter()
    algo, outcomes, weights = _run(REINFORCE, operations, retrieval_threshold=0.15, compile_guidelines=False)
    _, full, full_weights = _run(REINFORCE, retrieval_threshold=0.15)

    assert operations["compile_guideline"] == 0
    assert [o.report for o in outcomes] == [o.report for o in full]
    assert weights == full_weights
    first = outcomes[0].results[0]
    assert first.guideline.meta_guideline_id == "none"
    assert first.guideline.bullets == ("[Experience 1 (id seed-G, synthetic) Summary: Improvement: <<G>>]",)


def test_without_active_retrieve_skips_query_generation():
    operations = Counter()
    _, outcomes, _ = _run(REINFORCE, operations, retrieval_threshold=0.15, active_retrieve=False)

    assert operations["generate_queries"] == 0
    assert operations["predict"] >= 50
    assert len(outcomes) == 5
