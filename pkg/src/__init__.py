"""
在线自演化记忆的预测智能体

经验库 + 元准则库，按周做 检索 -> 编译 -> 作答 -> 更新 的循环
"""

__version__ = "0.1.1"
