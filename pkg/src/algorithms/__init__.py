"""
记忆演化算法包
"""

# 导入所有算法类，方便外部使用
from .base_algorithm import BaseAlgorithm
from .algorithm_utils import AlgorithmUtils
from .live_evolution_algorithm import BatchOutcome, ContrastiveResult, LiveEvolutionAlgorithm

# 版本信息
__version__ = "0.1.0"
