"""
连续时间马氏链模块
Model I（阈值轮询）与 Model II（N 策略休假抢占优先级）的转移结构、截断生成元与平稳分布求解
截断链的平稳分布是所有解析结果的对照基准（oracle）
"""
import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property, partial
from typing import Callable, Dict, Hashable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spilu, spsolve

from polling_config import DIRECT_SOLVE_LIMIT, GMRES_MAXITER, MAX_STATES, ROW_SUM_TOL, SOLVER_TOL
from polling_errors import CapacityError, ContractViolationError, DomainError, SolverError
from polling_model import ModelIIParams, PollingParams

logger = logging.getLogger(__name__)


class ServerPosition(IntEnum):
    Q1 = 1
    Q2 = 2
    Q3 = 3


class Mode(str, Enum):
    BUSY = 'Busy'
    VACATION = 'Vacation'


@dataclass(frozen=True)
class TruncationCaps:
    """每个坐标的最大计数；Model II 只使用 cap1、cap2"""
    cap1: int
    cap2: int
    cap3: Optional[int] = None

    def __post_init__(self):
        for name in ('cap1', 'cap2', 'cap3'):
            value = getattr(self, name)
            if value is None and name == 'cap3':
                continue
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise DomainError(f"截断上限 {name} 必须是正整数，当前为 {value!r}")

    @classmethod
    def parse(cls, text: str) -> 'TruncationCaps':
        """解析 'a,b' 或 'a,b,c' 形式的命令行参数"""
        try:
            parts = [int(part) for part in text.split(',')]
        except ValueError as e:
            raise DomainError(f"无法解析截断上限 {text!r}：{e}") from e
        if len(parts) not in (2, 3):
            raise DomainError(f"截断上限需要 2 或 3 个整数，当前为 {text!r}")
        return cls(*parts)

    def as_tuple(self) -> Tuple[int, ...]:
        return tuple(c for c in (self.cap1, self.cap2, self.cap3) if c is not None)

    def recommendation_warnings(self, threshold_n: int) -> List[str]:
        """每个上限建议不小于 max(N + 2, 4)"""
        floor = max(threshold_n + 2, 4)
        return [
            f"截断上限 {value} 小于建议值 {floor}"
            for value in self.as_tuple() if value < floor
        ]


class Model1State(NamedTuple):
    x1: int
    x2: int
    x3: int
    server: ServerPosition

    def within(self, caps: TruncationCaps) -> bool:
        return self.x1 <= caps.cap1 and self.x2 <= caps.cap2 and self.x3 <= caps.cap3


class Model2State(NamedTuple):
    i: int
    j: int
    mode: Mode

    def within(self, caps: TruncationCaps) -> bool:
        return self.i <= caps.cap1 and self.j <= caps.cap2


State = Union[Model1State, Model2State]
TransitionFn = Callable[[Hashable], List[Tuple[Hashable, float]]]


@dataclass(frozen=True)
class Generator:
    """截断生成元：稀疏矩阵（行和为 0）与状态编号"""
    matrix: sp.csr_matrix
    states: Tuple[Hashable, ...]
    index: Dict[Hashable, int] = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.states)

    @classmethod
    def from_matrix(cls, rates, states: Sequence[Hashable]) -> 'Generator':
        """由非对角速率矩阵构造生成元，对角线按行和重新计算"""
        off = sp.csr_matrix(rates, dtype=float)
        off.setdiag(0.0)
        off.eliminate_zeros()
        if off.nnz and off.data.min() < 0:
            raise DomainError("非对角速率必须非负")
        states = tuple(states)
        return cls(matrix=_with_diagonal(off), states=states,
                   index={s: k for k, s in enumerate(states)})

    def row_sum_error(self) -> float:
        if self.dimension == 0:
            return 0.0
        return float(np.abs(np.asarray(self.matrix.sum(axis=1))).max())


@dataclass(frozen=True)
class StationaryDist:
    """平稳分布及其达到的残差 ‖πQ‖∞"""
    states: Tuple[Hashable, ...]
    probs: np.ndarray
    residual: float
    index: Optional[Dict[Hashable, int]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.index is None:
            object.__setattr__(self, 'index', {s: k for k, s in enumerate(self.states)})

    @cached_property
    def frame(self) -> pd.DataFrame:
        return stationary_frame(self)

    def prob(self, state: Hashable) -> float:
        k = self.index.get(state)
        return 0.0 if k is None else float(self.probs[k])


def model1_dispatch(x1: int, x2: int, x3: int, server: ServerPosition,
                    threshold_n: int) -> ServerPosition:
    """
    每次事件后重新确定服务台位置

    Q1 优先；Q1 清空后转 Q2（Q2 空则转 Q3）；Q2 清空后转 Q3；
    在 Q3 时若 Q2 达到阈值或 Q3 清空则转 Q2。系统全空时服务台停在原处。
    """
    if x1 > 0:
        return ServerPosition.Q1
    if server == ServerPosition.Q1:
        if x2 > 0:
            return ServerPosition.Q2
        if x3 > 0:
            return ServerPosition.Q3
        return ServerPosition.Q1
    if server == ServerPosition.Q2:
        return ServerPosition.Q2 if x2 > 0 else ServerPosition.Q3
    if x2 > 0 and (x2 >= threshold_n or x3 == 0):
        return ServerPosition.Q2
    return ServerPosition.Q3


def _check_model1_state(s: Model1State, threshold_n: int) -> None:
    if min(s.x1, s.x2, s.x3) < 0:
        raise ContractViolationError(f"队长不能为负：{s}")
    if model1_dispatch(s.x1, s.x2, s.x3, s.server, threshold_n) != s.server:
        raise ContractViolationError(f"不可达状态（服务台位置与规则不符）：{s}")


def model1_transitions(s: Model1State, p: PollingParams) -> List[Tuple[Model1State, float]]:
    """
    Model I 的全部转移及速率

    阈值切换是瞬时的，(0, N, x3, Q3) 停留时间为零：到达该状态的转移直接指向 (0, N, x3, Q2)。
    被阈值打断的 Q3 服务从头开始，指数分布下无需额外状态。
    """
    n = p.threshold_n
    _check_model1_state(s, n)
    x1, x2, x3, server = s
    out = []
    for rate, counts in ((p.lambda1, (x1 + 1, x2, x3)),
                         (p.lambda2, (x1, x2 + 1, x3)),
                         (p.lambda3, (x1, x2, x3 + 1))):
        if rate > 0:
            out.append((Model1State(*counts, model1_dispatch(*counts, server, n)), rate))

    if server == ServerPosition.Q1 and x1 > 0:
        rate, counts = p.mu1, (x1 - 1, x2, x3)
    elif server == ServerPosition.Q2 and x2 > 0:
        rate, counts = p.mu2, (x1, x2 - 1, x3)
    elif server == ServerPosition.Q3 and x3 > 0:
        rate, counts = p.mu3, (x1, x2, x3 - 1)
    else:
        return out
    out.append((Model1State(*counts, model1_dispatch(*counts, server, n)), rate))
    return out


def model2_transitions(s: Model2State,
                       p2: Union[ModelIIParams, PollingParams]) -> List[Tuple[Model2State, float]]:
    """
    Model II 的全部转移及速率

    只用到 λ1、λ2、μ1、μ2 和 N，因此也接受未归一化的 PollingParams（平稳分布与时间尺度无关）。
    """
    i, j, mode = s
    n = p2.threshold_n
    if i < 0 or j < 0:
        raise ContractViolationError(f"队长不能为负：{s}")
    if mode == Mode.VACATION and (i != 0 or j >= n):
        raise ContractViolationError(f"休假状态要求 i = 0 且 j < N：{s}")
    if mode == Mode.BUSY and i == 0 and j == 0:
        raise ContractViolationError(f"系统为空时服务台应处于休假：{s}")

    out = [(Model2State(i + 1, j, Mode.BUSY), p2.lambda1)]
    if mode == Mode.VACATION and j + 1 < n:
        out.append((Model2State(0, j + 1, Mode.VACATION), p2.lambda2))
    else:
        out.append((Model2State(i, j + 1, Mode.BUSY), p2.lambda2))

    if mode == Mode.BUSY:
        if i > 0:
            target = (i - 1, j)
            rate = p2.mu1
        else:
            target = (0, j - 1)
            rate = p2.mu2
        next_mode = Mode.VACATION if target == (0, 0) else Mode.BUSY
        out.append((Model2State(*target, next_mode), rate))
    return out


def _with_diagonal(off: sp.csr_matrix) -> sp.csr_matrix:
    outflow = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(outflow)).tocsr()


def build_truncated_generator(transition_fn: TransitionFn, caps: TruncationCaps,
                              initial_state: State,
                              max_states: int = MAX_STATES) -> Generator:
    """
    从初始状态出发枚举截断盒内全部可达状态并组装生成元

    离开盒子的到达被拒绝（速率直接省略），因此生成元保持守恒。

    Args:
        transition_fn: 状态 -> [(目标状态, 速率)]
        caps (TruncationCaps): 截断上限
        initial_state: 起始状态（通常为空系统）
        max_states (int): 状态数上限

    Returns:
        Generator: 截断生成元
    """
    if not initial_state.within(caps):
        raise DomainError(f"初始状态 {initial_state} 不在截断范围内")
    index = {initial_state: 0}
    states = [initial_state]
    rows, cols, vals = [], [], []
    k = 0
    while k < len(states):
        for target, rate in transition_fn(states[k]):
            if rate <= 0 or not target.within(caps):
                continue
            idx = index.get(target)
            if idx is None:
                idx = len(states)
                if idx >= max_states:
                    raise CapacityError(f"状态数超过上限 {max_states}，请减小截断上限")
                index[target] = idx
                states.append(target)
            rows.append(k)
            cols.append(idx)
            vals.append(rate)
        k += 1

    n = len(states)
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    generator = Generator(matrix=_with_diagonal(off), states=tuple(states), index=index)
    error = generator.row_sum_error()
    if error > ROW_SUM_TOL:
        raise ContractViolationError(f"生成元行和误差 {error} 超过 {ROW_SUM_TOL}")
    logger.info(f"截断生成元组装完成：{n} 个状态，{off.nnz} 个非零转移")
    return generator


def model1_generator(p: PollingParams, caps: TruncationCaps) -> Generator:
    if caps.cap3 is None:
        raise DomainError("Model I 需要三个截断上限")
    for message in caps.recommendation_warnings(p.threshold_n):
        logger.warning(message)
    start = Model1State(0, 0, 0, ServerPosition.Q1)
    return build_truncated_generator(partial(model1_transitions, p=p), caps, start)


def model2_generator(p2: Union[ModelIIParams, PollingParams], caps: TruncationCaps) -> Generator:
    for message in caps.recommendation_warnings(p2.threshold_n)[:2]:
        logger.warning(message)
    start = Model2State(0, 0, Mode.VACATION)
    return build_truncated_generator(partial(model2_transitions, p2=p2), caps, start)


def _solve_reduced(a: sp.csc_matrix, b: np.ndarray) -> np.ndarray:
    if a.shape[0] <= DIRECT_SOLVE_LIMIT:
        return spsolve(a, b, use_umfpack=False)
    logger.info(f"维数 {a.shape[0]} 超过直接求解上限，改用 ILU 预条件 GMRES")
    ilu = spilu(a, drop_tol=1e-6, fill_factor=10)
    preconditioner = LinearOperator(a.shape, ilu.solve)
    x, info = gmres(a, b, M=preconditioner, rtol=1e-13, atol=0.0, restart=60,
                    maxiter=GMRES_MAXITER)
    if info != 0:
        logger.warning(f"GMRES 未在迭代上限内收敛（info={info}），以残差检查为准")
    return x


def stationary_distribution(g: Generator, tol: float = SOLVER_TOL) -> StationaryDist:
    """
    求解 πQ = 0, Σπ = 1

    固定第一个状态（空系统）为参照，求解其余分量的约化线性方程组；
    残差 ‖πQ‖∞ 在求解后检查，超过 tol 时抛出 SolverError。
    """
    n = g.dimension
    if n == 0:
        raise DomainError("空生成元没有平稳分布")
    if n == 1:
        return StationaryDist(states=g.states, probs=np.ones(1), residual=0.0, index=g.index)

    q = g.matrix
    a = (-q.T).tocsc()[1:, 1:]
    b = np.asarray(q[0, 1:].todense()).ravel()
    try:
        x = _solve_reduced(a, b)
    except (RuntimeError, ValueError) as e:
        logger.error(f"平稳分布求解失败：{str(e)}")
        raise SolverError(f"平稳分布求解失败：{e}") from e

    pi = np.concatenate(([1.0], np.asarray(x, dtype=float)))
    if not np.all(np.isfinite(pi)):
        raise SolverError("平稳分布含非有限值（生成元可能不可约性不成立）")
    negative = pi.min()
    if negative < 0:
        if negative < -1e-12 * pi.max():
            logger.warning(f"平稳解存在负分量 {negative:.3e}，已截断为 0")
        pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()

    residual = float(np.abs(q.T @ pi).max())
    if residual > tol:
        raise SolverError(f"残差 {residual:.3e} 超过容差 {tol:.1e}", residual=residual)
    logger.info(f"平稳分布求解完成：维数 {n}，残差 {residual:.3e}")
    return StationaryDist(states=g.states, probs=pi, residual=residual, index=g.index)


def solve_model1(p: PollingParams, caps: TruncationCaps, tol: float = SOLVER_TOL) -> StationaryDist:
    return stationary_distribution(model1_generator(p, caps), tol)


def solve_model2(p2: Union[ModelIIParams, PollingParams], caps: TruncationCaps,
                 tol: float = SOLVER_TOL) -> StationaryDist:
    return stationary_distribution(model2_generator(p2, caps), tol)


def stationary_frame(d: StationaryDist) -> pd.DataFrame:
    """
    平稳分布转为 DataFrame

    Model I 列为 x1,x2,x3,server,prob；Model II 列为 i,j,mode,prob
    """
    first = d.states[0]
    if isinstance(first, Model1State):
        frame = pd.DataFrame(
            [(s.x1, s.x2, s.x3, int(s.server)) for s in d.states],
            columns=['x1', 'x2', 'x3', 'server'],
        )
    elif isinstance(first, Model2State):
        frame = pd.DataFrame(
            [(s.i, s.j, s.mode.value) for s in d.states],
            columns=['i', 'j', 'mode'],
        )
    else:
        frame = pd.DataFrame({'state': list(d.states)})
    frame['prob'] = d.probs
    return frame


_MODEL2_SPECS = {
    'high': ('i', None),
    'low': ('j', None),
    'total': (None, None),
    'low@high': ('j', 'high'),
    'low@low': ('j', 'low'),
    'low@vacation': ('j', 'vacation'),
}
_MODEL1_SPECS = ('x1', 'x2', 'x3', 'server', 'total')


def marginal(d: StationaryDist, spec: Union[str, Callable[[Hashable], int]]) -> np.ndarray:
    """
    边缘分布（下标即取值）

    Model II 支持 'high'、'low'、'total'，以及按服务台状态拆分的
    'low@high'（i ≥ 1）、'low@low'（i = 0 且忙）、'low@vacation'，拆分后的向量之和为该状态的概率。
    Model I 支持 'x1'、'x2'、'x3'、'server'、'total'。也可传入 状态 -> 非负整数 的函数。
    """
    if callable(spec):
        keys = np.fromiter((spec(s) for s in d.states), dtype=np.int64, count=len(d.states))
        return np.bincount(keys, weights=d.probs)

    frame = d.frame
    if 'i' in frame.columns:
        if spec not in _MODEL2_SPECS:
            raise DomainError(f"未知的边缘分布坐标 {spec!r}")
        column, split = _MODEL2_SPECS[spec]
        keys = (frame['i'] + frame['j']) if column is None else frame[column]
        weights = frame['prob']
        if split == 'high':
            weights = weights.where(frame['i'] >= 1, 0.0)
        elif split == 'low':
            weights = weights.where((frame['i'] == 0) & (frame['mode'] == Mode.BUSY.value), 0.0)
        elif split == 'vacation':
            weights = weights.where(frame['mode'] == Mode.VACATION.value, 0.0)
    else:
        if spec not in _MODEL1_SPECS:
            raise DomainError(f"未知的边缘分布坐标 {spec!r}")
        keys = (frame['x1'] + frame['x2'] + frame['x3']) if spec == 'total' else frame[spec]
        weights = frame['prob']
    return np.bincount(keys.to_numpy(dtype=np.int64), weights=weights.to_numpy(dtype=float))


def joint_low_high(d: StationaryDist) -> pd.DataFrame:
    """Model II 的 (i, j) 联合分布表，行 i、列 j"""
    frame = d.frame
    return frame.pivot_table(index='i', columns='j', values='prob', aggfunc='sum', fill_value=0.0)


def model2_prob(d: StationaryDist, i: int, j: int, mode: Mode = Mode.BUSY) -> float:
    return d.prob(Model2State(i, j, mode))


def boundary_mass(d: StationaryDist, caps: TruncationCaps) -> float:
    """落在截断边界层（任一坐标等于上限）上的概率质量"""
    frame = d.frame
    if 'i' in frame.columns:
        on_edge = (frame['i'] >= caps.cap1) | (frame['j'] >= caps.cap2)
    else:
        on_edge = (frame['x1'] >= caps.cap1) | (frame['x2'] >= caps.cap2)
        if caps.cap3 is not None:
            on_edge |= frame['x3'] >= caps.cap3
    return float(frame.loc[on_edge, 'prob'].sum())
