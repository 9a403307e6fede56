"""
算法工具类
演化算法共享的辅助函数：最差任务选择、改进判定、权重轨迹重建
"""

import math
from typing import Dict, Iterable, List, Sequence, Tuple

# 浮点比较容差：0.5 - 0.45 这类差值要和阈值 0.05 判为相等
IMPROVEMENT_TOLERANCE = 1e-9


class AlgorithmUtils:
    """
    算法工具类，提供各种演化步骤共享的功能
    """

    @staticmethod
    def worst_count(n, fraction):
        """
        最差部分的任务数 ceil(fraction * n)，至少 1 个，至多 n 个

        参数:
        n (int): 任务数
        fraction (float): 比例 (0, 1]

        返回:
        int: 任务数
        """
        if n <= 0:
            return 0
        # 先舍入再取整，避免 0.3 * 10 = 3.0000000000000004 被算成 4
        count = math.ceil(round(fraction * n, 9))
        return max(1, min(n, count))

    @staticmethod
    def select_worst(results, fraction):
        """
        选出有记忆效用最低的那部分任务

        参数:
        results (list): ContrastiveResult 列表
        fraction (float): 比例

        返回:
        list: 任务 id，按效用升序、id 升序
        """
        if not results:
            return []
        ordered = sorted(results, key=lambda r: (r.score_on.utility, r.task_id))
        return [r.task_id for r in ordered[:AlgorithmUtils.worst_count(len(results), fraction)]]

    @staticmethod
    def meets_improvement(improvement, threshold):
        """改进量是否达到阈值（含等于）"""
        return improvement >= threshold - IMPROVEMENT_TOLERANCE

    @staticmethod
    def weight_trajectories(ledger_records: Iterable[Dict]) -> Dict[str, List[Tuple[int, float]]]:
        """
        从运行账本重建每条经验每周结束时的权重

        参数:
        ledger_records: 账本记录，每条带 batch_id 和 weights_after

        返回:
        dict: 经验 id -> [(batch_id, 权重), ...]
        """
        per_batch: Dict[str, Dict[int, float]] = {}
        for record in ledger_records:
            batch_id = record["batch_id"]
            for exp_id, weight in record.get("weights_after", {}).items():
                per_batch.setdefault(exp_id, {})[batch_id] = weight
        return {exp_id: sorted(points.items()) for exp_id, points in per_batch.items()}

    @staticmethod
    def mean(values: Sequence[float]):
        values = list(values)
        return math.fsum(values) / len(values) if values else None
