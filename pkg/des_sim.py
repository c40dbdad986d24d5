"""
离散事件仿真模块
按阈值轮询规则逐事件模拟 Model I，输出等待时间样本、队长的时间平均占用与 Q3 到达时刻看到的状态
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.stats
from tqdm import tqdm

from ctmc_core import ServerPosition, model1_dispatch
from polling_config import (
    DEFAULT_DEPARTURES, DEFAULT_SEED, EXP_BLOCK_SIZE, WARMUP_FRACTION, X3_BUCKET_CAP, X3_HIST_MAX,
)
from polling_errors import ContractViolationError, DomainError, InputError
from polling_model import PollingParams, traffic_loads

logger = logging.getLogger(__name__)

CLASSES = (1, 2, 3)
OccupancyKey = Tuple[int, int, int, int]


@dataclass(frozen=True)
class SimConfig:
    """
    仿真配置

    warmup_departures 缺省为 min_departures 的 20%；第 r 次重复使用种子 seed + r。
    """
    min_departures: int = DEFAULT_DEPARTURES
    warmup_departures: Optional[int] = None
    seed: int = DEFAULT_SEED
    replications: int = 1

    def __post_init__(self):
        if self.warmup_departures is None:
            object.__setattr__(self, 'warmup_departures', int(self.min_departures * WARMUP_FRACTION))
        if not self.min_departures > self.warmup_departures >= 0:
            raise DomainError(
                f"需要 min_departures > warmup_departures ≥ 0，当前为 "
                f"{self.min_departures}, {self.warmup_departures}"
            )
        if self.replications < 1:
            raise DomainError(f"重复次数必须 ≥ 1，当前为 {self.replications}")
        if self.min_departures < 10_000:
            logger.warning(f"离开数 {self.min_departures} 少于 10000，统计量波动较大")


@dataclass
class SimulationStats:
    """
    一次（或合并后的多次）仿真的统计量

    occupancy 的键为 (x1, x2, min(x3, X3_BUCKET_CAP), server)，值为停留时间；
    x3_hist 为 x3 的精确时间直方图，超出长度的部分计入 x3_overflow。
    waits_first 以首次开始服务计等待，waits_last 以最终完成的那次服务开始计。
    """
    occupancy: Dict[OccupancyKey, float]
    x3_hist: np.ndarray
    x3_overflow: float
    waits_first: Dict[int, np.ndarray]
    waits_last: Dict[int, np.ndarray]
    served: Dict[int, int]
    total_time: float
    q3_arrival_states: Dict[OccupancyKey, int]
    seeds: Tuple[int, ...] = field(default_factory=tuple)

    def time_fractions(self) -> Dict[OccupancyKey, float]:
        return {key: value / self.total_time for key, value in self.occupancy.items()}


@dataclass(frozen=True)
class ScaledObservable:
    """ε = 1 − ρ 缩放后的 Q3 队长（按时间加权）与 Q3 等待时间"""
    epsilon: float
    zeta_support: np.ndarray
    zeta_weights: np.ndarray
    scaled_w3_first: np.ndarray
    scaled_w3_last: np.ndarray

    def queue_ecdf(self) -> 'EmpiricalCDF':
        return EmpiricalCDF(self.zeta_support, self.zeta_weights)

    def wait_ecdf(self, last_start: bool = False) -> 'EmpiricalCDF':
        return empirical_cdf(self.scaled_w3_last if last_start else self.scaled_w3_first)

    @property
    def queue_mean(self) -> float:
        return float(np.dot(self.zeta_support, self.zeta_weights) / self.zeta_weights.sum())


class _ExponentialStream:
    """按块生成标准指数随机数"""

    def __init__(self, rng: np.random.Generator, block: int = EXP_BLOCK_SIZE):
        self._rng = rng
        self._block = block
        self._buffer = rng.standard_exponential(block)
        self._pos = 0

    def draw(self, rate: float) -> float:
        if self._pos == self._block:
            self._buffer = self._rng.standard_exponential(self._block)
            self._pos = 0
        value = self._buffer[self._pos]
        self._pos += 1
        return float(value) / rate


class _HeadOfLine:
    """各队列队首顾客的服务进度"""
    __slots__ = ('first_start', 'last_start', 'remaining')

    def __init__(self):
        self.first_start: Optional[float] = None
        self.last_start: Optional[float] = None
        self.remaining: Optional[float] = None

    def clear(self):
        self.first_start = None
        self.last_start = None
        self.remaining = None


def simulate(p: PollingParams, cfg: SimConfig, replication: int = 0) -> SimulationStats:
    """
    模拟 Model I 直到离开数达到 cfg.min_departures

    Q1 的抢占让被打断的 Q2/Q3 服务在之后继续；Q2 达到阈值打断的 Q3 服务在之后重新开始。
    同一时刻的事件先处理服务完成，再按类别顺序处理到达。

    Args:
        p (PollingParams): 模型参数
        cfg (SimConfig): 仿真配置
        replication (int): 重复编号，种子为 cfg.seed + replication

    Returns:
        SimulationStats: 预热之后的统计量
    """
    seed = cfg.seed + replication
    stream = _ExponentialStream(np.random.default_rng(seed))
    n = p.threshold_n
    arrival_rates = {1: p.lambda1, 2: p.lambda2, 3: p.lambda3}
    service_rates = {1: p.mu1, 2: p.mu2, 3: p.mu3}

    queues: Dict[int, deque] = {k: deque() for k in CLASSES}
    heads = {k: _HeadOfLine() for k in CLASSES}
    next_arrival = [stream.draw(arrival_rates[k]) if arrival_rates[k] > 0 else math.inf for k in CLASSES]
    completion = math.inf
    serving: Optional[int] = None
    server = ServerPosition.Q1
    now = 0.0

    occupancy: Dict[OccupancyKey, float] = {}
    x3_hist = np.zeros(X3_HIST_MAX)
    x3_overflow = 0.0
    total_time = 0.0
    waits_first: Dict[int, List[float]] = {k: [] for k in CLASSES}
    waits_last: Dict[int, List[float]] = {k: [] for k in CLASSES}
    served = {k: 0 for k in CLASSES}
    q3_states: Dict[OccupancyKey, int] = {}
    departures = 0
    recording = cfg.warmup_departures == 0

    def start_service(k: int) -> float:
        head = heads[k]
        if head.first_start is None:
            head.first_start = now
        if head.remaining is None:
            head.last_start = now
            head.remaining = stream.draw(service_rates[k])
        return now + head.remaining

    while departures < cfg.min_departures:
        t_arrival = min(next_arrival)
        t_event = completion if completion <= t_arrival else t_arrival
        if recording:
            dt = t_event - now
            x3 = len(queues[3])
            key = (len(queues[1]), len(queues[2]), min(x3, X3_BUCKET_CAP), int(server))
            occupancy[key] = occupancy.get(key, 0.0) + dt
            if x3 < X3_HIST_MAX:
                x3_hist[x3] += dt
            else:
                x3_overflow += dt
            total_time += dt
        now = t_event

        if completion <= t_arrival:
            k = serving
            arrived = queues[k].popleft()
            head = heads[k]
            departures += 1
            if recording:
                waits_first[k].append(head.first_start - arrived)
                waits_last[k].append(head.last_start - arrived)
                served[k] += 1
            head.clear()
            serving = None
            completion = math.inf
            if not recording and departures >= cfg.warmup_departures:
                recording = True
        else:
            k = next_arrival.index(t_arrival) + 1
            if k == 3 and recording:
                x3 = len(queues[3])
                key = (len(queues[1]), len(queues[2]), min(x3, X3_BUCKET_CAP), int(server))
                q3_states[key] = q3_states.get(key, 0) + 1
            queues[k].append(now)
            next_arrival[k - 1] = now + stream.draw(arrival_rates[k])

        x1, x2, x3 = len(queues[1]), len(queues[2]), len(queues[3])
        target = model1_dispatch(x1, x2, x3, server, n)
        if serving is not None and int(target) != serving:
            head = heads[serving]
            if target == ServerPosition.Q1:
                head.remaining = completion - now
            else:
                # Q2 阈值打断 Q3：下次重新开始服务
                head.remaining = None
            serving = None
            completion = math.inf
        server = target
        if serving is None and len(queues[int(server)]) > 0:
            serving = int(server)
            completion = start_service(serving)

        if serving is not None and serving != 1 and x1 > 0:
            raise ContractViolationError(f"t={now:.6f}：Q1 非空时服务了 Q{serving}")
        if serving == 3 and x2 >= n:
            raise ContractViolationError(f"t={now:.6f}：Q2 达到阈值 {n} 时仍在服务 Q3")

    stats = SimulationStats(
        occupancy=occupancy,
        x3_hist=np.trim_zeros(x3_hist, 'b'),
        x3_overflow=x3_overflow,
        waits_first={k: np.asarray(v) for k, v in waits_first.items()},
        waits_last={k: np.asarray(v) for k, v in waits_last.items()},
        served=served,
        total_time=total_time,
        q3_arrival_states=q3_states,
        seeds=(seed,),
    )
    logger.info(f"仿真完成（种子 {seed}）：{departures} 个离开，统计时长 {total_time:.1f}")
    return stats


def merge_stats(a: SimulationStats, b: SimulationStats) -> SimulationStats:
    """合并两份统计量（结合律成立）"""
    occupancy = dict(a.occupancy)
    for key, value in b.occupancy.items():
        occupancy[key] = occupancy.get(key, 0.0) + value
    size = max(len(a.x3_hist), len(b.x3_hist))
    hist = np.zeros(size)
    hist[:len(a.x3_hist)] += a.x3_hist
    hist[:len(b.x3_hist)] += b.x3_hist
    q3_states = dict(a.q3_arrival_states)
    for key, count in b.q3_arrival_states.items():
        q3_states[key] = q3_states.get(key, 0) + count
    return SimulationStats(
        occupancy=occupancy,
        x3_hist=hist,
        x3_overflow=a.x3_overflow + b.x3_overflow,
        waits_first={k: np.concatenate([a.waits_first[k], b.waits_first[k]]) for k in CLASSES},
        waits_last={k: np.concatenate([a.waits_last[k], b.waits_last[k]]) for k in CLASSES},
        served={k: a.served[k] + b.served[k] for k in CLASSES},
        total_time=a.total_time + b.total_time,
        q3_arrival_states=q3_states,
        seeds=a.seeds + b.seeds,
    )


def simulate_replications(p: PollingParams, cfg: SimConfig) -> List[SimulationStats]:
    """按 cfg.replications 依次运行独立重复，第 r 次的种子为 seed + r"""
    return [
        simulate(p, cfg, replication=r)
        for r in tqdm(range(cfg.replications), desc='仿真重复', disable=cfg.replications == 1)
    ]


def batch_means_interval(samples, batches: int = 20, confidence: float = 0.95) -> Tuple[float, float]:
    """
    批均值置信区间

    Returns:
        tuple: (均值, 半宽)
    """
    samples = np.asarray(samples, dtype=float)
    if batches < 2:
        raise DomainError(f"批数必须 ≥ 2，当前为 {batches}")
    if len(samples) < batches:
        raise InputError(f"样本数 {len(samples)} 少于批数 {batches}")
    usable = len(samples) - len(samples) % batches
    means = samples[:usable].reshape(batches, -1).mean(axis=1)
    half = scipy.stats.t.ppf(0.5 + confidence / 2.0, batches - 1) * means.std(ddof=1) / math.sqrt(batches)
    return float(means.mean()), float(half)


def occupancy_marginal(stats: SimulationStats, coordinate: str) -> np.ndarray:
    """
    队长的时间平均边缘分布（下标即取值）

    'x3' 使用精确直方图（溢出部分不计入）；'server' 的下标为服务台位置编号。
    """
    if stats.total_time <= 0:
        raise InputError("统计时长为 0，无法计算占用分布")
    if coordinate == 'x3':
        return stats.x3_hist / stats.total_time
    position = {'x1': 0, 'x2': 1, 'server': 3}
    if coordinate not in position:
        raise DomainError(f"未知的占用坐标 {coordinate!r}")
    idx = position[coordinate]
    size = max(key[idx] for key in stats.occupancy) + 1
    out = np.zeros(size)
    for key, value in stats.occupancy.items():
        out[key[idx]] += value
    return out / stats.total_time


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    size = max(len(p), len(q))
    p = np.pad(p, (0, size - len(p)))
    q = np.pad(q, (0, size - len(q)))
    return float(0.5 * np.abs(p - q).sum())


def arrival_state_distance(stats: SimulationStats) -> Dict[str, float]:
    """
    Q3 到达时刻看到的状态与时间平均占用在各坐标边缘上的全变差距离

    Poisson 到达看到时间平均，各距离应随仿真长度趋于 0。

    Returns:
        dict: 坐标 -> 全变差距离，坐标为 x1、x2、x3、server
    """
    arrivals = sum(stats.q3_arrival_states.values())
    if arrivals == 0:
        raise InputError("没有记录到 Q3 到达，无法比较到达时刻状态")
    if stats.total_time <= 0:
        raise InputError("统计时长为 0，无法计算占用分布")
    out = {}
    for name, idx in (('x1', 0), ('x2', 1), ('x3', 2), ('server', 3)):
        size = 1 + max(max(key[idx] for key in stats.occupancy), max(key[idx] for key in stats.q3_arrival_states))
        seen = np.zeros(size)
        timed = np.zeros(size)
        for key, count in stats.q3_arrival_states.items():
            seen[key[idx]] += count
        for key, value in stats.occupancy.items():
            timed[key[idx]] += value
        out[name] = total_variation(seen / arrivals, timed / stats.total_time)
    return out


def scaled_samples(stats: SimulationStats, p: PollingParams) -> ScaledObservable:
    """以 ε = 1 − ρ 缩放 Q3 的占用分布与等待时间"""
    rho = traffic_loads(p).rho_total
    if rho >= 1.0:
        raise DomainError(f"总负载 ρ = {rho} ≥ 1，缩放因子不存在")
    epsilon = 1.0 - rho
    if stats.x3_overflow > 0:
        logger.warning(f"x3 直方图溢出时长 {stats.x3_overflow:.3e}，缩放分布中未计入")
    support = np.flatnonzero(stats.x3_hist)
    return ScaledObservable(
        epsilon=epsilon,
        zeta_support=support * epsilon,
        zeta_weights=stats.x3_hist[support] / stats.total_time,
        scaled_w3_first=stats.waits_first[3] * epsilon,
        scaled_w3_last=stats.waits_last[3] * epsilon,
    )


class EmpiricalCDF:
    """右连续的（可加权）经验分布函数"""

    def __init__(self, samples, weights=None):
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            raise DomainError("经验分布函数需要非空样本")
        weights = np.ones_like(samples) if weights is None else np.asarray(weights, dtype=float).ravel()
        if weights.shape != samples.shape or np.any(weights < 0) or weights.sum() <= 0:
            raise DomainError("权重必须非负、与样本等长且总和为正")
        order = np.argsort(samples, kind='stable')
        points, inverse = np.unique(samples[order], return_inverse=True)
        mass = np.bincount(inverse, weights=weights[order])
        self.points = points
        self.cumulative = np.cumsum(mass) / mass.sum()
        self.cumulative[-1] = 1.0

    def __call__(self, x):
        idx = np.searchsorted(self.points, np.asarray(x, dtype=float), side='right')
        values = np.concatenate(([0.0], self.cumulative))[idx]
        return values[()] if np.ndim(values) == 0 else values

    def left_limits(self) -> np.ndarray:
        return np.concatenate(([0.0], self.cumulative[:-1]))


def empirical_cdf(samples) -> EmpiricalCDF:
    return EmpiricalCDF(samples)


def ks_distance(ecdf: EmpiricalCDF, analytic_cdf: Callable) -> float:
    """sup|F̂ − F|，在每个跳跃点的左右两侧取值"""
    reference = np.asarray(analytic_cdf(ecdf.points), dtype=float)
    upper = np.abs(ecdf.cumulative - reference).max()
    lower = np.abs(reference - ecdf.left_limits()).max()
    return float(min(1.0, max(upper, lower)))


def ks_two_sample(a: EmpiricalCDF, b: EmpiricalCDF) -> float:
    """两个经验分布函数之间的 sup 距离"""
    points = np.union1d(a.points, b.points)
    return float(np.abs(a(points) - b(points)).max())
