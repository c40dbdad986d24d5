"""
重负载极限模块
Q3 临界负载时缩放队长与缩放等待时间的指数极限，以及与 Model II 平稳分布组合的联合极限分布
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from ctmc_core import TruncationCaps, boundary_mass, solve_model2, StationaryDist
from polling_errors import DomainError
from polling_model import ModelIIParams, PollingParams, normalize_model2

logger = logging.getLogger(__name__)

TAIL_MASS_LIMIT = 1e-6  # 截断边界质量超过该值时给出精度警告


@dataclass(frozen=True)
class HeavyTrafficLimit:
    """
    缩放队长 εX3 的极限为参数 η 的指数分布

    omega 为扰动速率；omega = μ3 时 ε = 1 − ρ。
    """
    eta: float
    omega: float
    mu3: float

    def epsilon_scale(self, rho: float) -> float:
        """ω = μ3 约定下的 ε = 1 − ρ"""
        if not self.omega == self.mu3:
            raise DomainError("ε = 1 − ρ 仅在 ω = μ3 时成立")
        if not 0 < rho < 1:
            raise DomainError(f"负载 ρ 必须位于 (0, 1)，当前为 {rho}")
        return 1.0 - rho


@dataclass(frozen=True)
class LimitMoments:
    queue_mean: float
    queue_std: float
    wait_mean: float
    wait_std: float


@dataclass(frozen=True)
class JointLimitResult:
    """联合极限分布 𝓛(x1,x2)·(1 − e^{−ηζ})"""
    probability: float
    spatial: float
    exponential: float
    boundary_mass: float
    precision_warning: bool


def workload_bracket(p: PollingParams) -> float:
    """(1−ρ1−ρ2) + (μ3/μ1)ρ1 + (μ3/μ2)ρ2"""
    return (1.0 - p.rho1 - p.rho2) + (p.mu3 / p.mu1) * p.rho1 + (p.mu3 / p.mu2) * p.rho2


def eta(p: PollingParams, omega: Optional[float] = None) -> HeavyTrafficLimit:
    """
    计算极限参数 η = ω / (bracket·μ3)，与 λ3 无关

    Args:
        p (PollingParams): 模型参数
        omega (float): 扰动速率，缺省为 μ3

    Returns:
        HeavyTrafficLimit: 极限参数
    """
    if p.rho1 + p.rho2 >= 1.0:
        raise DomainError(f"ρ1 + ρ2 = {p.rho1 + p.rho2:.6f} ≥ 1，Q3 不存在重负载极限")
    omega = p.mu3 if omega is None else omega
    if omega <= 0:
        raise DomainError(f"ω 必须为正，当前为 {omega}")
    value = omega / (workload_bracket(p) * p.mu3)
    logger.debug(f"η = {value:.7f}（ω = {omega}）")
    return HeavyTrafficLimit(eta=value, omega=omega, mu3=p.mu3)


def _check_nonnegative(name: str, value) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if np.any(value < 0) or np.any(np.isnan(value)):
        raise DomainError(f"{name} 必须非负")
    return value


def scaled_queue_cdf(h: HeavyTrafficLimit, zeta):
    """P(εX3 ≤ ζ) 的极限 1 − exp(−ηζ)"""
    zeta = _check_nonnegative('ζ', zeta)
    return -np.expm1(-h.eta * zeta)[()]


def scaled_queue_density(h: HeavyTrafficLimit, zeta):
    """P0(ζ) = η·exp(−ηζ)"""
    zeta = _check_nonnegative('ζ', zeta)
    return (h.eta * np.exp(-h.eta * zeta))[()]


def scaled_wait_cdf(h: HeavyTrafficLimit, p: PollingParams, t):
    """缩放等待时间的极限 1 − exp(−μ3·η·t)"""
    t = _check_nonnegative('t', t)
    return -np.expm1(-p.mu3 * h.eta * t)[()]


def limit_moments(h: HeavyTrafficLimit, p: PollingParams) -> LimitMoments:
    queue_mean = 1.0 / h.eta
    wait_mean = 1.0 / (p.mu3 * h.eta)
    return LimitMoments(queue_mean=queue_mean, queue_std=queue_mean,
                        wait_mean=wait_mean, wait_std=wait_mean)


@lru_cache(maxsize=8)
def _model2_oracle(p2: ModelIIParams, caps: TruncationCaps) -> StationaryDist:
    # 键为归一化速率，与 λ3 无关
    return solve_model2(p2, caps)


def spatial_cdf_table(p: PollingParams, caps: TruncationCaps) -> np.ndarray:
    """𝓛(x1, x2) = P(high ≤ x1, low ≤ x2) 的累积表，行 x1、列 x2"""
    dist = _model2_oracle(normalize_model2(p), caps)
    frame = dist.frame
    table = np.zeros((caps.cap1 + 1, caps.cap2 + 1))
    np.add.at(table, (frame['i'].to_numpy(), frame['j'].to_numpy()), frame['prob'].to_numpy())
    return table.cumsum(axis=0).cumsum(axis=1)


def joint_limit_cdf(p: PollingParams, x1, x2, zeta, caps: TruncationCaps) -> JointLimitResult:
    """
    Q1、Q2 队长与 Q3 缩放队长的联合极限分布函数

    x1、x2 可以取 math.inf（按截断上限处理）。截断边界质量超过 1e-6 时给出精度警告。
    """
    if p.rho1 + p.rho2 >= 1.0:
        raise DomainError(f"ρ1 + ρ2 = {p.rho1 + p.rho2:.6f} ≥ 1，联合极限不存在")
    if x1 < 0 or x2 < 0:
        return JointLimitResult(0.0, 0.0, float(scaled_queue_cdf(eta(p), zeta)), 0.0, False)
    limit = eta(p)
    table = spatial_cdf_table(p, caps)
    row = caps.cap1 if math.isinf(x1) else min(int(x1), caps.cap1)
    col = caps.cap2 if math.isinf(x2) else min(int(x2), caps.cap2)
    spatial = float(table[row, col])
    exponential = float(scaled_queue_cdf(limit, zeta))
    mass = boundary_mass(_model2_oracle(normalize_model2(p), caps), caps)
    warn = mass > TAIL_MASS_LIMIT
    if warn:
        logger.warning(f"截断边界质量 {mass:.3e} 超过 {TAIL_MASS_LIMIT}，请增大截断上限")
    return JointLimitResult(probability=spatial * exponential, spatial=spatial,
                            exponential=exponential, boundary_mass=mass, precision_warning=warn)
