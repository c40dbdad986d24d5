"""
模型参数模块
三队列阈值轮询系统（Model I）与带 N 策略休假的抢占优先级系统（Model II）的参数、负载与稳定性
"""
import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional

from polling_config import BASE_RATES
from polling_errors import DomainError

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-12


def _check_rate(name: str, value: float, allow_zero: bool = False) -> None:
    if not math.isfinite(value):
        raise DomainError(f"{name} 必须是有限数，当前为 {value}")
    if allow_zero and value < 0:
        raise DomainError(f"{name} 不能为负，当前为 {value}")
    if not allow_zero and value <= 0:
        raise DomainError(f"{name} 必须严格为正，当前为 {value}")


def _check_threshold(threshold_n) -> None:
    if isinstance(threshold_n, bool) or not isinstance(threshold_n, int):
        raise DomainError(f"阈值 N 必须是整数，当前为 {threshold_n!r}")
    if threshold_n < 1:
        raise DomainError(f"阈值 N 必须 ≥ 1，当前为 {threshold_n}")


@dataclass(frozen=True)
class PollingParams:
    """
    Model I 参数：三个队列的到达率、服务率与阈值 N

    λ3 允许为 0（Q3 无到达的退化实例），其余速率必须严格为正。
    """
    lambda1: float
    lambda2: float
    lambda3: float
    mu1: float
    mu2: float
    mu3: float
    threshold_n: int

    def __post_init__(self):
        _check_rate('lambda1', self.lambda1)
        _check_rate('lambda2', self.lambda2)
        _check_rate('lambda3', self.lambda3, allow_zero=True)
        _check_rate('mu1', self.mu1)
        _check_rate('mu2', self.mu2)
        _check_rate('mu3', self.mu3)
        _check_threshold(self.threshold_n)

    @property
    def rho1(self) -> float:
        return self.lambda1 / self.mu1

    @property
    def rho2(self) -> float:
        return self.lambda2 / self.mu2

    def with_lambda3(self, lambda3: float) -> 'PollingParams':
        return dataclasses.replace(self, lambda3=lambda3)


@dataclass(frozen=True)
class Loads:
    rho1: float
    rho2: float
    rho3: float
    rho_total: float


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    slack: float


@dataclass(frozen=True)
class ModelIIParams:
    """
    Model II 参数，已归一化使 λ1 + λ2 + μ1 + μ2 = 1
    """
    lambda1: float
    lambda2: float
    mu1: float
    mu2: float
    threshold_n: int

    def __post_init__(self):
        for name in ('lambda1', 'lambda2', 'mu1', 'mu2'):
            _check_rate(name, getattr(self, name))
        _check_threshold(self.threshold_n)
        total = self.lambda1 + self.lambda2 + self.mu1 + self.mu2
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise DomainError(f"Model II 参数未归一化：λ1+λ2+μ1+μ2 = {total!r}")

    @property
    def rho1(self) -> float:
        return self.lambda1 / self.mu1

    @property
    def rho2(self) -> float:
        return self.lambda2 / self.mu2

    @property
    def lam(self) -> float:
        """λ = λ1 + λ2"""
        return self.lambda1 + self.lambda2

    @property
    def rho_bar1(self) -> float:
        """ρ̄1 = λ / μ1"""
        return self.lam / self.mu1

    @property
    def r2(self) -> float:
        return self.lambda2 / self.lam

    @property
    def stable(self) -> bool:
        return self.rho1 + self.rho2 < 1.0


def traffic_loads(p: PollingParams) -> Loads:
    """计算各队列负载 ρi = λi/μi 及总负载"""
    rho1 = p.lambda1 / p.mu1
    rho2 = p.lambda2 / p.mu2
    rho3 = p.lambda3 / p.mu3
    return Loads(rho1=rho1, rho2=rho2, rho3=rho3, rho_total=rho1 + rho2 + rho3)


def stability_check(p: PollingParams) -> StabilityReport:
    """遍历性条件 ρ < 1"""
    rho = traffic_loads(p).rho_total
    return StabilityReport(stable=rho < 1.0, slack=1.0 - rho)


def lambda3_for_total_load(p_without_lambda3: PollingParams, rho_target: float) -> float:
    """
    求使总负载等于 rho_target 的 λ3 = μ3(ρ − ρ1 − ρ2)

    Args:
        p_without_lambda3 (PollingParams): 参数（其中的 λ3 被忽略）
        rho_target (float): 目标总负载，取值 (ρ1+ρ2, 1]

    Returns:
        float: λ3
    """
    p = p_without_lambda3
    base = p.rho1 + p.rho2
    if not rho_target > base:
        raise DomainError(f"目标负载 {rho_target} 不大于 ρ1+ρ2 = {base}，Q3 到达率将非正")
    if rho_target > 1.0:
        raise DomainError(f"目标负载 {rho_target} 超过 1")
    return p.mu3 * (rho_target - base)


def at_load(p: PollingParams, rho_target: float) -> PollingParams:
    """返回总负载为 rho_target 的参数副本"""
    return p.with_lambda3(lambda3_for_total_load(p, rho_target))


def lambda3_for_epsilon(p: PollingParams, epsilon: float, omega: Optional[float] = None) -> float:
    """
    扰动约定 λ3 = μ3(1−ρ1−ρ2) − ε·ω，ω 缺省为 μ3（此时 ρ = 1 − ε）
    """
    omega = p.mu3 if omega is None else omega
    if epsilon <= 0:
        raise DomainError(f"ε 必须为正，当前为 {epsilon}")
    if omega <= 0:
        raise DomainError(f"ω 必须为正，当前为 {omega}")
    lambda3 = p.mu3 * (1.0 - p.rho1 - p.rho2) - epsilon * omega
    if lambda3 < 0:
        raise DomainError(f"ε = {epsilon} 过大，λ3 = {lambda3} 为负")
    return lambda3


def epsilon_of(p: PollingParams, omega: Optional[float] = None) -> float:
    """扰动约定下的 ε = (μ3(1−ρ1−ρ2) − λ3)/ω"""
    omega = p.mu3 if omega is None else omega
    return (p.mu3 * (1.0 - p.rho1 - p.rho2) - p.lambda3) / omega


def normalize_model2(p: PollingParams) -> ModelIIParams:
    """
    将 (λ1, λ2, μ1, μ2) 除以它们的和，得到 Model II 归一化参数；λ3、μ3 被忽略
    """
    total = p.lambda1 + p.lambda2 + p.mu1 + p.mu2
    return ModelIIParams(
        lambda1=p.lambda1 / total,
        lambda2=p.lambda2 / total,
        mu1=p.mu1 / total,
        mu2=p.mu2 / total,
        threshold_n=p.threshold_n,
    )


def base_params(lambda3: float = 0.0) -> PollingParams:
    """基准实例（λ1=0.1, λ2=0.3, μ1=0.5, μ2=1, μ3=1.5, N=10）"""
    return PollingParams(lambda3=lambda3, **BASE_RATES)
