"""
尾渐近分析模块
Model II（N 策略休假的抢占优先级队列）的母函数闭式、奇点分类与各边缘/联合分布的精确尾渐近

所有公式都在归一化速率（λ1+λ2+μ1+μ2 = 1）下计算，入口参数必须是 ModelIIParams。
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import binom

from ctmc_core import Mode, StationaryDist
from polling_config import D_ZERO_TOL
from polling_errors import BranchError, DomainError, InputError, PrecisionError
from polling_model import ModelIIParams

logger = logging.getLogger(__name__)

BRANCH_TOL = 1e-12  # 1/b1 处 1 − b1·y 的舍入容差
KAPPA_LIMIT_BAND = 1e-8  # |1 − ρ̄1·y| 小于该值时 κ 取极限值
RATE_MATCH_TOL = 1e-12  # 判断 μ1 = μ2、ρ̄1 = η1 等等式的相对容差

PGF_NAMES = ('L1', 'L2', 'L3', 'L_total', 'L_low')


class RegimeKind(str, Enum):
    D_POSITIVE = 'DPositive'
    D_ZERO = 'DZero'
    D_NEGATIVE = 'DNegative'


@dataclass(frozen=True)
class Regime:
    """L2(y) 的主奇点：位置与性质"""
    kind: RegimeKind
    singularity: float
    nature: str

    @property
    def decay_rate(self) -> float:
        return 1.0 / self.singularity


@dataclass(frozen=True)
class AsymptoticConstants:
    """
    归一化参数下的全部记号常数

    x1_val、x2_val 是 y = 0 时核多项式的两个根；c21、c22、c23 为低优先级方向的尾常数。
    """
    b1: float
    b2: float
    c0: float
    c1: float
    x1_val: float
    x2_val: float
    eta1: float
    eta2: float
    a_coef: float
    b_coef: float
    D: float
    rho_bar1: float
    r2: float
    B_tilde: float
    l3_at_one: float
    h_at_one: float
    c21: float
    c22: float
    c23: float


@dataclass(frozen=True)
class SpecialFunctionValues:
    """给定 y（实数或复数，可为数组）处的各特殊函数值"""
    y: np.ndarray
    delta: np.ndarray
    sqrt_delta: np.ndarray
    F: np.ndarray
    T: np.ndarray
    T_star: np.ndarray
    H: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    x2: np.ndarray
    a_of_y: np.ndarray
    iota: np.ndarray
    kappa: np.ndarray
    lambda1: float = field(repr=False, default=0.0)

    def factored_kernel(self, x):
        """−λ1(x − α(y))(x − x2(y))，应与 x_kernel 一致"""
        x = np.asarray(x)
        return -self.lambda1 * (x - self.alpha) * (x - self.x2)


@dataclass(frozen=True)
class TailEstimate:
    """π_n ~ C·n^p·γ^n"""
    quantity: str
    constant: float
    power: float
    decay_rate: float
    regime: Optional[str] = None
    case: Optional[str] = None
    exact: bool = False

    def __post_init__(self):
        if not 0.0 < self.decay_rate < 1.0:
            raise DomainError(f"{self.quantity} 的衰减率 {self.decay_rate} 不在 (0, 1) 内")
        if not math.isfinite(self.constant) or self.constant <= 0:
            logger.warning(f"{self.quantity} 的渐近常数 {self.constant} 非正，结果可能不可靠")

    def value(self, n):
        n = np.asarray(n, dtype=float)
        return self.constant * n ** self.power * self.decay_rate ** n

    def as_row(self) -> Dict[str, object]:
        return {
            'quantity': self.quantity,
            'C': self.constant,
            'p': self.power,
            'gamma': self.decay_rate,
            'regime': self.regime or '',
            'case': self.case or '',
        }


@dataclass(frozen=True)
class LowMarginalRelation:
    """π_n^(l) = multiplier · π_{2,(0,n+1)}，以及由此得到的尾估计"""
    n: int
    multiplier: float
    source_index: int
    applicable: bool
    tail: TailEstimate


@dataclass(frozen=True)
class BoundaryProbs:
    """
    边界概率：pi2[j] = π_{2,(0,j)}（j ≥ 1，pi2[0] 不使用），pi3[j] = π_{3,(0,j)}（0 ≤ j < N）
    """
    pi2: np.ndarray
    pi3: np.ndarray

    def low_busy(self, j: int) -> float:
        if j < 1 or j >= len(self.pi2):
            raise InputError(f"缺少边界概率 π_2,(0,{j})")
        return float(self.pi2[j])

    def vacation(self, j: int) -> float:
        if j < 0 or j >= len(self.pi3):
            raise InputError(f"缺少边界概率 π_3,(0,{j})")
        return float(self.pi3[j])


@dataclass(frozen=True)
class SeriesCoefficients:
    coefficients: np.ndarray
    error_bound: float


def _scalar(value):
    value = np.asarray(value)
    return value[()] if value.ndim == 0 else value


def _require_model2(p2) -> ModelIIParams:
    if not isinstance(p2, ModelIIParams):
        raise DomainError("尾渐近计算需要归一化的 ModelIIParams，请先调用 normalize_model2")
    if not p2.stable:
        raise DomainError(f"Model II 不稳定：ρ1 + ρ2 = {p2.rho1 + p2.rho2:.6f} ≥ 1")
    return p2


def _h_poly(r2: float, n: int, y):
    return np.polynomial.polynomial.polyval(r2 * np.asarray(y), np.ones(n))


def _f_poly(p2: ModelIIParams, y):
    y = np.asarray(y)
    return p2.lambda2 * y ** 2 - (1.0 - 2.0 * p2.mu1 + p2.mu2) * y + 2.0 * p2.mu2


def sigma(p2: ModelIIParams, c: AsymptoticConstants, eta: float) -> float:
    """σ(η) = K(η)/(b1√π)，K(η) = λ2·b1·√(1−b2/b1) / (2√(b1b2)(η − b1))"""
    k = p2.lambda2 * c.b1 * math.sqrt(1.0 - c.b2 / c.b1) / (2.0 * math.sqrt(c.b1 * c.b2) * (eta - c.b1))
    return k / (c.b1 * math.sqrt(math.pi))


def sigma1(p2: ModelIIParams, c: AsymptoticConstants, eta: float) -> float:
    """
    总人数母函数在 1/b1 处分支点的系数，仅在 ρ̄1 ≥ 1 时有定义

    由 κ(y) 中 √Δ 项的系数得到：σ1(η) = (μ1 − μ2)·σ(η) / (μ1(1 − ρ̄1/b1))
    """
    if c.rho_bar1 < 1.0:
        raise DomainError(f"σ1 仅在 ρ̄1 ≥ 1 时有定义，当前 ρ̄1 = {c.rho_bar1}")
    return (p2.mu1 - p2.mu2) * sigma(p2, c, eta) / (p2.mu1 * (1.0 - c.rho_bar1 / c.b1))


@lru_cache(maxsize=64)
def constants(p2: ModelIIParams) -> AsymptoticConstants:
    """
    计算全部记号常数

    Args:
        p2 (ModelIIParams): 归一化且稳定的 Model II 参数

    Returns:
        AsymptoticConstants: 常数集合
    """
    p2 = _require_model2(p2)
    lam1, lam2, mu1, mu2 = p2.lambda1, p2.lambda2, p2.mu1, p2.mu2
    lam = lam1 + lam2
    root = math.sqrt(lam1 * mu1)

    b1 = lam2 / (lam2 + (math.sqrt(mu1) - math.sqrt(lam1)) ** 2)
    b2 = lam2 / (lam2 + (math.sqrt(mu1) + math.sqrt(lam1)) ** 2)
    disc0 = math.sqrt((lam + mu1) ** 2 - 4.0 * lam1 * mu1)
    c0 = 2.0 * lam1 / ((lam + mu1) + disc0)
    c1 = lam2 * c0 / disc0

    disc_eta = math.sqrt((1.0 - 2.0 * mu1) ** 2 + 4.0 * (mu1 - mu2) * lam2)
    eta1 = ((1.0 - 2.0 * mu1) + disc_eta) / (2.0 * mu2)
    eta2 = -(mu1 - mu2) * lam2 / (mu2 ** 2 * eta1)

    slack = 1.0 - p2.rho1 - p2.rho2
    a_coef = slack / (2.0 * mu2) * eta1 / (eta1 - eta2)
    b_coef = slack / (2.0 * mu2) * eta2 / (eta2 - eta1)
    d_value = (lam + mu1 - 2.0 * root) * (mu1 - mu2 - root) + lam2 * mu2
    b_tilde = (mu2 - mu1 - mu2 * b1 + root) / root

    r2 = p2.r2
    h1 = float(_h_poly(r2, p2.threshold_n, 1.0))

    def beta(y: float) -> float:
        return float(_h_poly(r2, p2.threshold_n, y)) / h1

    c21 = 2.0 * a_coef * float(_f_poly(p2, 1.0 / eta1)) * beta(1.0 / eta1)
    c22 = (a_coef * lam2 * math.sqrt(1.0 - b2 / b1)
           / (math.sqrt(math.pi) * b1 * math.sqrt(b1 * b2)) * beta(1.0 / b1))

    partial = AsymptoticConstants(
        b1=b1, b2=b2, c0=c0, c1=c1, x1_val=c0 / p2.rho1, x2_val=1.0 / c0,
        eta1=eta1, eta2=eta2, a_coef=a_coef, b_coef=b_coef, D=d_value,
        rho_bar1=p2.rho_bar1, r2=r2, B_tilde=b_tilde,
        l3_at_one=slack, h_at_one=h1, c21=c21, c22=c22, c23=0.0,
    )
    c23 = (a_coef * sigma(p2, partial, eta1) + b_coef * sigma(p2, partial, eta2)) * beta(1.0 / b1)
    result = dataclasses.replace(partial, c23=c23)
    logger.debug(f"记号常数：b1={b1:.6f}, c0={c0:.6f}, η1={eta1:.6f}, D={d_value:.3e}")
    return result


def regime(p2: ModelIIParams) -> Regime:
    """按 D 的符号确定 L2(y) 的主奇点"""
    c = constants(p2)
    if abs(c.D) <= D_ZERO_TOL:
        return Regime(RegimeKind.D_ZERO, 1.0 / c.b1, 'branch point and simple pole')
    if c.D > 0:
        return Regime(RegimeKind.D_POSITIVE, 1.0 / c.eta1, 'simple pole')
    return Regime(RegimeKind.D_NEGATIVE, 1.0 / c.b1, 'branch point')


def _sqrt_delta(p2: ModelIIParams, c: AsymptoticConstants, y):
    """√Δ(y) = λ2·√(1−b1y)·√(1−b2y)/√(b1b2)，在 |y| < 1/b1 内取主值分支"""
    y = np.asarray(y)
    u1 = 1.0 - c.b1 * y
    u2 = 1.0 - c.b2 * y
    if not np.iscomplexobj(y):
        u1 = np.where((u1 < 0) & (u1 > -BRANCH_TOL), 0.0, u1)
        if np.any(u1 < 0):
            raise BranchError(f"实数 y 超出 1/b1 = {1.0 / c.b1:.6f}，Δ(y) 的平方根分支不存在")
    return p2.lambda2 / math.sqrt(c.b1 * c.b2) * np.sqrt(u1) * np.sqrt(u2)


def _x2_root(p2: ModelIIParams, y, sd):
    return ((p2.lam + p2.mu1 - p2.lambda2 * np.asarray(y)) + sd) / (2.0 * p2.lambda1)


def _iota(p2: ModelIIParams, y, sd):
    e = p2.mu1 - p2.lam + p2.lambda2 * np.asarray(y) + sd
    return 2.0 * p2.mu1 * p2.lambda2 / (p2.mu2 * e)


def _kappa_limit(p2: ModelIIParams, c: AsymptoticConstants) -> float:
    y0 = 1.0 / c.rho_bar1
    sd = float(_sqrt_delta(p2, c, y0))
    iota = float(_iota(p2, y0, sd))
    numerator = 1.0 - (p2.mu2 / p2.mu1) * y0 * iota
    if abs(numerator) > KAPPA_LIMIT_BAND:
        raise DomainError(f"κ(y) 在 y = 1/ρ̄1 = {y0:.6f} 处有极点")
    e = p2.mu1 - p2.lam + p2.lambda2 * y0 + sd
    d_delta = -2.0 * p2.lambda2 * (p2.lam + p2.mu1 - p2.lambda2 * y0)
    d_e = p2.lambda2 + d_delta / (2.0 * sd)
    d_iota = -2.0 * p2.mu1 * p2.lambda2 * d_e / (p2.mu2 * e ** 2)
    return (p2.mu2 / (p2.mu1 * c.rho_bar1)) * (iota + y0 * d_iota)


def _kappa(p2: ModelIIParams, c: AsymptoticConstants, y, iota):
    """κ(y) = (1 − (μ2/μ1)·y·ι(y)) / (1 − ρ̄1·y)；y = 1/ρ̄1 为可去点时取极限"""
    y = np.asarray(y)
    numerator = 1.0 - (p2.mu2 / p2.mu1) * y * iota
    denominator = 1.0 - c.rho_bar1 * y
    near = np.abs(denominator) < KAPPA_LIMIT_BAND
    with np.errstate(divide='ignore', invalid='ignore'):
        kappa = numerator / denominator
    if np.any(near):
        kappa = np.where(near, _kappa_limit(p2, c), kappa)
    return kappa


def _l3(p2: ModelIIParams, c: AsymptoticConstants, y):
    return c.l3_at_one * _h_poly(c.r2, p2.threshold_n, y) / c.h_at_one


def special_values(p2: ModelIIParams, y) -> SpecialFunctionValues:
    """
    计算 y 处的特殊函数值（支持数组与复数）

    Args:
        p2 (ModelIIParams): 归一化参数
        y: 实数 |y| ≤ 1/b1，或复数 |y| < 1/b1

    Returns:
        SpecialFunctionValues: Δ, F, T, T*, H, β, α, x2, a(y), ι, κ
    """
    c = constants(p2)
    y = np.asarray(y)
    sd = _sqrt_delta(p2, c, y)
    delta = (p2.lam + p2.mu1 - p2.lambda2 * y) ** 2 - 4.0 * p2.lambda1 * p2.mu1
    f = _f_poly(p2, y)
    h = _h_poly(c.r2, p2.threshold_n, y)
    x2 = _x2_root(p2, y, sd)
    iota = _iota(p2, y, sd)
    with np.errstate(divide='ignore', invalid='ignore'):
        a_of_y = p2.lambda1 + p2.lambda2 * (1.0 - y) + p2.mu2 * (1.0 - 1.0 / y)
    return SpecialFunctionValues(
        y=y, delta=delta, sqrt_delta=sd, F=f, T=f - y * sd, T_star=f + y * sd,
        H=h, beta=h / c.h_at_one, alpha=p2.mu1 / (p2.lambda1 * x2), x2=x2,
        a_of_y=a_of_y, iota=iota, kappa=_kappa(p2, c, y, iota), lambda1=p2.lambda1,
    )


def kernel_root_alpha(p2: ModelIIParams, y):
    """
    核多项式 xK(x,y) 的小根 α(y) = μ1/(λ1·x2(y))

    实数 y > 1/b1 时抛出 BranchError。
    """
    c = constants(p2)
    sd = _sqrt_delta(p2, c, y)
    return _scalar(p2.mu1 / (p2.lambda1 * _x2_root(p2, y, sd)))


def x_kernel(p2: ModelIIParams, x, y):
    """核多项式 xK(x, y) = −λ1x² + (λ1 + λ2 + μ1 − λ2y)x − μ1"""
    x = np.asarray(x)
    y = np.asarray(y)
    return _scalar(-p2.lambda1 * x ** 2 + (p2.lam + p2.mu1 - p2.lambda2 * y) * x - p2.mu1)


def u_root(p2: ModelIIParams, eta: float) -> float:
    """μ1u² − (1−μ2−λ2/η)u + λ1 = 0 模较小的根"""
    s = 1.0 - p2.mu2 - p2.lambda2 / eta
    disc = s * s - 4.0 * p2.lambda1 * p2.mu1
    if disc < 0:
        if disc < -BRANCH_TOL:
            raise BranchError(f"η = {eta} 时 u(η) 的判别式为负")
        disc = 0.0
    return (s - math.sqrt(disc)) / (2.0 * p2.mu1)


def dominant_radius(p2: ModelIIParams, which: str) -> float:
    """母函数的收敛半径（主奇点的模）"""
    if which not in PGF_NAMES:
        raise DomainError(f"未知的母函数 {which!r}，可选 {PGF_NAMES}")
    if which == 'L3':
        return math.inf
    c = constants(p2)
    radius = regime(p2).singularity
    if which != 'L_total':
        return radius
    if math.isclose(p2.mu1, p2.mu2, rel_tol=RATE_MATCH_TOL):
        return 1.0 / c.rho_bar1
    if c.rho_bar1 >= 1.0:
        return radius
    return min(radius, 1.0 / c.rho_bar1)


def _pgf_values(p2: ModelIIParams, c: AsymptoticConstants, which: str, y, x=None):
    y = np.asarray(y)
    l3 = _l3(p2, c, y)
    if which == 'L3':
        return l3
    if which == 'L_total' and math.isclose(p2.mu1, p2.mu2, rel_tol=RATE_MATCH_TOL):
        return l3 / (1.0 - c.rho_bar1 * y)
    sd = _sqrt_delta(p2, c, y)
    iota = _iota(p2, y, sd)
    one_minus = 1.0 - y * iota
    if which == 'L2':
        return l3 * iota / one_minus
    if which == 'L_low':
        return (p2.mu2 / p2.lambda2) * l3 * iota / one_minus
    if which == 'L1':
        return l3 / ((_x2_root(p2, y, sd) - np.asarray(x)) * one_minus)
    return l3 * _kappa(p2, c, y, iota) / one_minus


def eval_pgf(p2: ModelIIParams, which: str, point):
    """
    计算母函数闭式

    L1 的 point 为 (x, y)，其余为 y。L2(y) = Σ π_{2,(0,n+1)} yⁿ，L_low 为低优先级顾客数的完整边缘分布
    （含休假状态），L_total 为系统总人数。

    Args:
        p2 (ModelIIParams): 归一化参数
        which (str): 'L1'、'L2'、'L3'、'L_total'、'L_low'
        point: 求值点，可为数组或复数

    Returns:
        母函数值
    """
    c = constants(p2)
    x = None
    if which == 'L1':
        try:
            x, y = point
        except (TypeError, ValueError) as e:
            raise DomainError("L1 需要 (x, y) 形式的求值点") from e
    else:
        y = point
    radius = dominant_radius(p2, which)
    y = np.asarray(y)
    if np.any(np.abs(y) >= radius * (1.0 - 1e-12)):
        raise DomainError(f"{which} 在 |y| ≥ {radius:.6f} 处不解析")
    if which == 'L1':
        x2 = _x2_root(p2, y, _sqrt_delta(p2, c, y))
        if np.any(np.abs(np.asarray(x)) >= np.abs(x2)):
            raise DomainError("L1(x, y) 要求 |x| < x2(y)")
    return _scalar(_pgf_values(p2, c, which, y, x))


def pgf_evaluator(p2: ModelIIParams, which: str) -> Callable:
    """返回 y -> 母函数值 的函数，供 series_coefficients 使用"""
    if which == 'L1':
        raise DomainError("L1 是二元函数，请固定 x 后使用 eval_pgf")
    return lambda y: eval_pgf(p2, which, y)


def l2_partial_fractions(p2: ModelIIParams, y):
    """[a·T*/(1−η1y) + b·T*/(1−η2y)]·ι·β，与 L2(y) 应当一致"""
    c = constants(p2)
    v = special_values(p2, y)
    bracket = c.a_coef * v.T_star / (1.0 - c.eta1 * v.y) + c.b_coef * v.T_star / (1.0 - c.eta2 * v.y)
    return _scalar(bracket * v.iota * v.beta)


def pgf_identities(p2: ModelIIParams, x: float, y: float) -> Dict[str, Tuple[float, float]]:
    """
    L1 的四个特例闭式与一般表达式的对照，值为 (闭式, 一般式)
    """
    c = constants(p2)
    lam = p2.lam
    l2 = eval_pgf(p2, 'L2', y)
    l3 = eval_pgf(p2, 'L3', y)
    l3_zero = eval_pgf(p2, 'L3', 0.0)
    return {
        'L1(x,1)': (p2.rho1 * (1.0 - p2.rho1) / (1.0 - p2.rho1 * x),
                    eval_pgf(p2, 'L1', (x, 1.0))),
        'L1(1,y)': ((p2.mu2 - p2.lambda2 * y) / p2.lambda2 * l2 - l3,
                    eval_pgf(p2, 'L1', (1.0, y))),
        'L1(y,y)': ((lam * y - p2.mu2) / (p2.mu1 * (1.0 - c.rho_bar1 * y)) * l2
                    + lam / (p2.mu1 * (1.0 - c.rho_bar1 * y)) * l3,
                    eval_pgf(p2, 'L1', (y, y))),
        'L1(x,0)': (c.c0 / (1.0 - c.c0 * x) * l3_zero,
                    eval_pgf(p2, 'L1', (x, 0.0))),
        'L2': (l2_partial_fractions(p2, y), l2),
    }


def boundary_probs(dist: StationaryDist, p2) -> BoundaryProbs:
    """
    从 Model II 截断链平稳分布中提取边界概率

    Args:
        dist (StationaryDist): Model II 平稳分布
        p2: Model II 参数（仅使用阈值 N）
    """
    frame = dist.frame
    if 'mode' not in frame.columns:
        raise InputError("边界概率需要 Model II 的平稳分布")
    edge = frame[frame['i'] == 0]
    busy = edge[edge['mode'] == Mode.BUSY.value].set_index('j')['prob']
    idle = edge[edge['mode'] == Mode.VACATION.value].set_index('j')['prob']
    top = int(busy.index.max()) if len(busy) else 0
    pi2 = np.zeros(top + 1)
    pi2[busy.index.to_numpy()] = busy.to_numpy()
    n = p2.threshold_n
    pi3 = np.zeros(n)
    present = idle.index.to_numpy()
    pi3[present[present < n]] = idle.to_numpy()[present < n]
    return BoundaryProbs(pi2=pi2, pi3=pi3)


def _psi_polynomials(p2: ModelIIParams, bp: BoundaryProbs, j_max: int) -> List[np.ndarray]:
    """ψ_j 写成 g = 1/(1−c0x) 的多项式，返回各阶系数（下标为 g 的幂次）"""
    c = constants(p2)
    g_at_x1 = 1.0 / (1.0 - c.c0 * c.x1_val)
    scale = p2.lambda2 * c.c0 / p2.lambda1
    polys = [np.array([0.0, c.c0 * float(_l3(p2, c, 0.0))])]
    for j in range(1, j_max + 1):
        prev = polys[-1]
        boundary = bp.low_busy(j) + (bp.vacation(j) if j < p2.threshold_n else 0.0)
        a_j = c.c0 / p2.lambda1 * (p2.lambda2 * np.polynomial.polynomial.polyval(g_at_x1, prev)
                                   + p2.lambda1 * boundary)
        new = np.zeros(len(prev) + 1)
        new[1] += a_j
        for m in range(1, len(prev)):
            for k in range(1, m + 1):
                w = scale * prev[m] * g_at_x1 ** (m - k + 1)
                new[k + 1] += w
                new[k] -= w
        polys.append(new)
    return polys


def psi_recursion(p2: ModelIIParams, bp: BoundaryProbs, j: int, x):
    """
    ψ_j(x) = Σ_{i≥1} π_{1,(i,j)} x^{i−1}

    ψ0(x) = c0·L3(0)/(1−c0x)，ψ_j 由 ψ_{j−1} 递推；x = x1 处的差商取导数极限。
    """
    if j < 0:
        raise DomainError(f"j 必须非负，当前为 {j}")
    c = constants(p2)
    x = np.asarray(x)
    if np.any(np.abs(x) >= c.x2_val):
        raise DomainError(f"ψ_j(x) 要求 |x| < 1/c0 = {c.x2_val:.6f}")
    polys = _psi_polynomials(p2, bp, j)
    g = 1.0 / (1.0 - c.c0 * x)
    if j == 0:
        return _scalar(polys[0][1] * g)

    prev = polys[j - 1]
    g1 = 1.0 / (1.0 - c.c0 * c.x1_val)
    psi_prev_x = np.polynomial.polynomial.polyval(g, prev)
    psi_prev_x1 = np.polynomial.polynomial.polyval(g1, prev)
    slope_x1 = np.polynomial.polynomial.polyval(g1, np.polynomial.polynomial.polyder(prev)) * c.c0 * g1 ** 2
    dx = x - c.x1_val
    near = np.abs(dx) < 1e-9
    with np.errstate(divide='ignore', invalid='ignore'):
        quotient = np.where(near, slope_x1, (psi_prev_x - psi_prev_x1) / np.where(near, 1.0, dx))
    a_j = c.c0 / p2.lambda1 * (p2.lambda2 * psi_prev_x1 + p2.lambda1 * (
        bp.low_busy(j) + (bp.vacation(j) if j < p2.threshold_n else 0.0)))
    value = a_j * g + p2.lambda2 * c.c0 * x / p2.lambda1 * g * quotient
    return _scalar(value)


def psi_coefficients(p2: ModelIIParams, bp: BoundaryProbs, j: int, count: int) -> np.ndarray:
    """
    ψ_j 的 Taylor 系数，即 π_{1,(i,j)}，i = 1..count

    g^m 中 xⁿ 的系数为 C(n+m−1, m−1)·c0ⁿ
    """
    c = constants(p2)
    poly = _psi_polynomials(p2, bp, j)[j]
    n = np.arange(count, dtype=float)
    out = np.zeros(count)
    for m in range(1, len(poly)):
        out += poly[m] * binom(n + m - 1, m - 1)
    return out * c.c0 ** n


def tail_high_marginal(p2: ModelIIParams) -> TailEstimate:
    """高优先级边缘分布 (1−ρ1)ρ1ⁿ，对所有 n 精确成立"""
    p2 = _require_model2(p2)
    return TailEstimate('pi_h(n)', 1.0 - p2.rho1, 0.0, p2.rho1, exact=True)


def tail_joint_fixed_low(p2: ModelIIParams, j: int) -> TailEstimate:
    """固定低优先级人数 j，π_{1,(n,j)} ~ L3(0)·(c1^j/j!)·n^j·c0^{n−j}"""
    if j < 0:
        raise DomainError(f"j 必须非负，当前为 {j}")
    c = constants(p2)
    l3_zero = float(_l3(p2, c, 0.0))
    constant = l3_zero * c.c1 ** j / (math.factorial(j) * c.c0 ** j)
    return TailEstimate(f'pi1(n,{j})', constant, float(j), c.c0, regime=regime(p2).kind.value)


def tail_joint_fixed_high(p2: ModelIIParams, i: int) -> TailEstimate:
    """
    固定高优先级人数 i 时沿低优先级方向的尾

    i = 0 对应服务台在 Q2 的 π_{2,(0,n)}，i ≥ 1 对应 π_{1,(i,n)}。
    """
    if i < 0:
        raise DomainError(f"i 必须非负，当前为 {i}")
    c = constants(p2)
    reg = regime(p2)
    quantity = 'pi2(0,n)' if i == 0 else f'pi1({i},n)'
    root_rho1 = math.sqrt(p2.rho1)
    if reg.kind == RegimeKind.D_POSITIVE:
        return TailEstimate(quantity, c.c21 * u_root(p2, c.eta1) ** i, 0.0, c.eta1,
                            regime=reg.kind.value)
    if reg.kind == RegimeKind.D_ZERO:
        return TailEstimate(quantity, c.c22 * root_rho1 ** i, -0.5, c.b1, regime=reg.kind.value)
    return TailEstimate(quantity, c.c23 * (1.0 + i * c.B_tilde) * root_rho1 ** i, -1.5, c.b1,
                        regime=reg.kind.value)


def tail_low_marginal(p2: ModelIIParams, n: int) -> LowMarginalRelation:
    """
    π_n^(l) = (μ2/λ2)·π_{2,(0,n+1)}

    只在 n ≥ N 时作为精确关系给出，n < N 时标记为不适用。
    """
    base = tail_joint_fixed_high(p2, 0)
    multiplier = p2.mu2 / p2.lambda2
    tail = TailEstimate('pi_l(n)', base.constant * multiplier * base.decay_rate, base.power,
                        base.decay_rate, regime=base.regime)
    applicable = n >= p2.threshold_n
    if not applicable:
        logger.info(f"n = {n} < N = {p2.threshold_n}，低优先级边缘关系标记为不适用")
    return LowMarginalRelation(n=n, multiplier=multiplier, source_index=n + 1,
                               applicable=applicable, tail=tail)


def tail_total(p2: ModelIIParams) -> TailEstimate:
    """系统总人数的尾渐近，按 D 的符号与 ρ̄1 的位置分情形"""
    c = constants(p2)
    reg = regime(p2)
    rb = c.rho_bar1
    kind = reg.kind.value

    if math.isclose(p2.mu1, p2.mu2, rel_tol=RATE_MATCH_TOL):
        gamma = p2.rho1 + p2.rho2
        constant = c.l3_at_one * float(_h_poly(c.r2, p2.threshold_n, 1.0 / gamma)) / c.h_at_one
        return TailEstimate('pi_T(n)', constant, 0.0, gamma, regime=kind, case='equal-rates', exact=True)

    def pole_constant() -> float:
        y0 = 1.0 / rb
        l2 = float(_pgf_values(p2, c, 'L2', y0))
        l3 = float(_l3(p2, c, y0))
        return (p2.mu1 - p2.mu2) / (p2.mu1 * rb) * l2 + l3

    if reg.kind == RegimeKind.D_POSITIVE:
        if rb < 1.0 and math.isclose(rb, c.eta1, rel_tol=RATE_MATCH_TOL):
            return TailEstimate('pi_T(n)', (p2.mu1 - p2.mu2) / p2.mu1 * c.c21, 1.0, c.eta1,
                                regime=kind, case='1c')
        if rb >= 1.0 or rb < c.eta1:
            constant = (p2.mu1 - p2.mu2) * c.eta1 / (p2.mu1 * (c.eta1 - rb)) * c.c21
            return TailEstimate('pi_T(n)', constant, 0.0, c.eta1, regime=kind, case='1a')
        return TailEstimate('pi_T(n)', pole_constant(), 0.0, rb, regime=kind, case='1b')

    if reg.kind == RegimeKind.D_ZERO:
        if rb >= 1.0:
            y_branch = 1.0 / c.b1
            sd = _sqrt_delta(p2, c, y_branch)
            kappa = float(_kappa(p2, c, y_branch, _iota(p2, y_branch, sd)))
            return TailEstimate('pi_T(n)', kappa / c.b1 * c.c22, -0.5, c.b1, regime=kind, case='2a')
        return TailEstimate('pi_T(n)', pole_constant(), 0.0, rb, regime=kind, case='2b')

    if rb >= 1.0:
        beta_branch = float(_h_poly(c.r2, p2.threshold_n, 1.0 / c.b1)) / c.h_at_one
        constant = (c.a_coef * sigma1(p2, c, c.eta1) + c.b_coef * sigma1(p2, c, c.eta2)) * beta_branch
        return TailEstimate('pi_T(n)', constant, -1.5, c.b1, regime=kind, case='3a')
    case = '3c' if math.isclose(rb, math.sqrt(p2.rho1), rel_tol=RATE_MATCH_TOL) else '3b'
    return TailEstimate('pi_T(n)', pole_constant(), 0.0, rb, regime=kind, case=case)


def series_coefficients(evaluator: Callable, count: int, radius: float,
                        tol: float = 1e-9) -> SeriesCoefficients:
    """
    用圆周上的离散 Fourier 变换提取前 count 个 Taylor 系数

    在半径 radius/2 的圆上取 M ≥ 8·count 个节点（2 的幂）。误差界由舍入误差与混叠误差两部分估计，
    超过 tol 时抛出 PrecisionError。

    Args:
        evaluator: 在圆盘 |y| < radius 内解析、接受复数组的函数
        count (int): 系数个数
        radius (float): 解析半径
        tol (float): 允许的绝对误差

    Returns:
        SeriesCoefficients: 系数与误差界
    """
    if count < 1:
        raise DomainError(f"系数个数必须为正，当前为 {count}")
    if not radius > 0:
        raise DomainError(f"解析半径必须为正，当前为 {radius}")
    r_eval = min(radius, 4.0) / 2.0
    nodes = 1 << max(6, int(math.ceil(math.log2(8 * count))))
    angles = 2.0 * np.pi * np.arange(nodes) / nodes
    values = np.asarray(evaluator(r_eval * np.exp(1j * angles)), dtype=complex)
    coefficients = np.fft.fft(values) / nodes / r_eval ** np.arange(nodes)

    outer = min(radius, 4.0) * 0.9
    outer_max = float(np.abs(np.asarray(evaluator(outer * np.exp(1j * angles)), dtype=complex)).max())
    inner_max = float(np.abs(values).max())
    k = np.arange(count)
    ratio = (r_eval / outer) ** nodes
    aliasing = outer_max * outer ** (-k.astype(float)) * ratio / (1.0 - ratio)
    rounding = 10.0 * np.finfo(float).eps * inner_max * r_eval ** (-k.astype(float))
    error = float((aliasing + rounding).max())
    if error > tol:
        raise PrecisionError(f"前 {count} 个系数的误差界 {error:.3e} 超过 {tol:.1e}，请减少系数个数")
    return SeriesCoefficients(coefficients=coefficients[:count].real.copy(), error_bound=error)


def fit_decay(values, n, power: float = 0.0) -> float:
    """
    拟合衰减率：对 log π_n − p·log n 关于 n 做线性回归，γ = exp(斜率)
    """
    values = np.asarray(values, dtype=float)
    n = np.asarray(n, dtype=float)
    mask = values > 0
    if power != 0.0:
        mask &= n > 0
    if mask.sum() < 2:
        raise InputError("拟合衰减率至少需要两个正的概率值")
    target = np.log(values[mask]) - power * np.log(np.where(n[mask] > 0, n[mask], 1.0))
    slope, _ = np.polyfit(n[mask], target, 1)
    return float(np.exp(slope))


def tail_report(p2: ModelIIParams, max_i: int = 2, max_j: int = 2) -> pd.DataFrame:
    """汇总各尾估计，列为 quantity,C,p,gamma,regime,case"""
    estimates = [tail_high_marginal(p2)]
    estimates += [tail_joint_fixed_low(p2, j) for j in range(max_j + 1)]
    estimates += [tail_joint_fixed_high(p2, i) for i in range(max_i + 1)]
    estimates.append(tail_low_marginal(p2, p2.threshold_n).tail)
    estimates.append(tail_total(p2))
    frame = pd.DataFrame([e.as_row() for e in estimates])
    logger.info(f"尾估计汇总完成：{len(frame)} 项，区域 {regime(p2).kind.value}")
    return frame


def constants_frame(p2: ModelIIParams) -> pd.DataFrame:
    c = constants(p2)
    reg = regime(p2)
    rows = [{'name': key, 'value': value} for key, value in c.__dict__.items()]
    rows.append({'name': 'singularity', 'value': reg.singularity})
    return pd.DataFrame(rows)
