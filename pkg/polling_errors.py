"""
异常定义
"""
from typing import Optional


class PollingError(Exception):
    """所有排队分析错误的基类"""


class DomainError(PollingError, ValueError):
    """参数超出定义域（不稳定负载、奇点处取值、未知坐标等）"""


class BranchError(DomainError):
    """实数 y 处 Δ(y) < 0，平方根分支不存在"""


class ContractViolationError(PollingError):
    """状态不可达或违反服务规则"""


class CapacityError(PollingError):
    """截断状态空间超出上限"""


class SolverError(PollingError):
    """平稳分布求解未达到残差要求"""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class PrecisionError(PollingError):
    """级数系数提取无法达到要求的精度"""


class InputError(PollingError, ValueError):
    """输入数据缺失或格式错误"""
