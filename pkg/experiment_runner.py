"""
实验编排模块
按基准实例复现验证流程：负载扫描仿真、(1−ρ)W3 比率误差表、经验分布导出、尾渐近校验与重负载极限检查
"""
import dataclasses
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress
from tqdm import tqdm

from ctmc_core import (
    TruncationCaps, boundary_mass, marginal, model2_prob, solve_model1, solve_model2,
)
from des_sim import (
    CLASSES, SimConfig, SimulationStats, arrival_state_distance, batch_means_interval, empirical_cdf,
    ks_distance, ks_two_sample, merge_stats, occupancy_marginal, scaled_samples, simulate_replications,
    total_variation,
)
from heavy_traffic import (
    TAIL_MASS_LIMIT, eta, joint_limit_cdf, limit_moments, scaled_queue_cdf, scaled_wait_cdf,
    spatial_cdf_table,
)
from polling_config import (
    DEFAULT_DEPARTURES, DEFAULT_SEED, LOAD_SCHEDULE, MODEL1_CAPS, MODEL2_CAPS, OUTPUT_DIR,
    WARMUP_FRACTION, load_config_file,
)
from polling_errors import DomainError, InputError, PollingError
from polling_model import PollingParams, at_load, base_params, normalize_model2
from result_storage import ecdf_frame, occupancy_frame, save_frame, waits_frame
from tail_asymptotics import (
    constants_frame, dominant_radius, fit_decay, pgf_evaluator, series_coefficients, tail_high_marginal,
    tail_joint_fixed_high, tail_joint_fixed_low, tail_low_marginal, tail_report, tail_total,
)

logger = logging.getLogger(__name__)

ECDF_GRID_POINTS = 201
WAIT_BATCHES = 20
ORACLE_TV_LIMIT = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    """
    一次实验的全部输入

    params 中的 λ3 只是占位，各负载下的 λ3 由 at_load 求出。
    """
    params: PollingParams
    loads: Tuple[float, ...]
    sim: SimConfig
    model1_caps: TruncationCaps
    model2_caps: TruncationCaps
    output_dir: str = OUTPUT_DIR

    def __post_init__(self):
        base = self.params.rho1 + self.params.rho2
        for rho in self.loads:
            if not base < rho < 1.0:
                raise DomainError(f"负载 {rho} 不在 (ρ1+ρ2, 1) = ({base:.4f}, 1) 内")
        if not self.loads:
            raise DomainError("负载列表为空")

    def at(self, rho: float) -> PollingParams:
        return at_load(self.params, rho)

    @classmethod
    def default(cls) -> 'ExperimentConfig':
        return cls(
            params=base_params(),
            loads=tuple(LOAD_SCHEDULE),
            sim=SimConfig(min_departures=DEFAULT_DEPARTURES, seed=DEFAULT_SEED),
            model1_caps=TruncationCaps(*MODEL1_CAPS),
            model2_caps=TruncationCaps(*MODEL2_CAPS),
        )

    @classmethod
    def from_sources(cls, config_path: Optional[str] = None, seed: Optional[int] = None,
                     loads: Optional[Sequence[float]] = None, caps: Optional[str] = None,
                     out: Optional[str] = None, departures: Optional[int] = None) -> 'ExperimentConfig':
        """
        组合配置：命令行参数 > 配置文件 > 环境变量与默认常数
        """
        cfg = cls.default()
        if config_path:
            cfg = _apply_file(cfg, load_config_file(config_path))
        sim = cfg.sim
        if departures is not None:
            sim = SimConfig(min_departures=departures, seed=sim.seed, replications=sim.replications)
        if seed is not None:
            sim = dataclasses.replace(sim, seed=seed)
        overrides = {'sim': sim}
        if loads:
            overrides['loads'] = tuple(float(r) for r in loads)
        if caps:
            parsed = TruncationCaps.parse(caps)
            overrides['model1_caps' if parsed.cap3 is not None else 'model2_caps'] = parsed
        if out:
            overrides['output_dir'] = out
        return dataclasses.replace(cfg, **overrides)


def parse_floats(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError as e:
        raise InputError(f"无法解析数值列表 {text!r}：{e}") from e


def _apply_file(cfg: ExperimentConfig, values: Dict[str, Dict[str, str]]) -> ExperimentConfig:
    try:
        model = values.get('model', {})
        rates = {key: float(model[key]) for key in ('lambda1', 'lambda2', 'mu1', 'mu2', 'mu3') if key in model}
        if 'threshold_n' in model:
            rates['threshold_n'] = int(model['threshold_n'])
        params = dataclasses.replace(cfg.params, **rates)

        simulation = values.get('simulation', {})
        departures = int(simulation.get('departures', cfg.sim.min_departures))
        warmup = simulation.get('warmup')
        sim = SimConfig(
            min_departures=departures,
            warmup_departures=int(warmup) if warmup is not None else int(departures * WARMUP_FRACTION),
            seed=int(simulation.get('seed', cfg.sim.seed)),
            replications=int(simulation.get('replications', cfg.sim.replications)),
        )
        loads = parse_floats(simulation['loads']) if 'loads' in simulation else cfg.loads

        truncation = values.get('truncation', {})
        model1_caps = TruncationCaps.parse(truncation['model1_caps']) if 'model1_caps' in truncation else cfg.model1_caps
        model2_caps = TruncationCaps.parse(truncation['model2_caps']) if 'model2_caps' in truncation else cfg.model2_caps
    except (KeyError, ValueError) as e:
        if isinstance(e, PollingError):
            raise
        raise InputError(f"配置文件取值错误：{e}") from e
    output_dir = values.get('output', {}).get('directory', cfg.output_dir)
    return ExperimentConfig(params=params, loads=loads, sim=sim, model1_caps=model1_caps,
                            model2_caps=model2_caps, output_dir=output_dir)


@dataclass(frozen=True)
class RatioErrorRow:
    """比率误差 = (估计值 − 仿真值)/仿真值 × 100"""
    rho: float
    statistic: str
    estimated: float
    simulated: float

    @property
    def ratio_error(self) -> float:
        return (self.estimated - self.simulated) / self.simulated * 100.0

    def as_row(self) -> Dict[str, float]:
        return {'rho': self.rho, 'statistic': self.statistic, 'estimated': self.estimated,
                'simulated': self.simulated, 'ratio_error': self.ratio_error}


@lru_cache(maxsize=16)
def simulate_load(cfg: ExperimentConfig, rho: float) -> SimulationStats:
    """在负载 rho 下运行全部重复并合并统计量（同一配置只运行一次）"""
    p = cfg.at(rho)
    runs = simulate_replications(p, cfg.sim)
    merged = runs[0]
    for extra in runs[1:]:
        merged = merge_stats(merged, extra)
    return merged


def wait_interval_rows(rho: float, stats: SimulationStats, batches: int = WAIT_BATCHES) -> List[Dict]:
    """各类顾客平均等待的批均值置信区间；样本少于批数时半宽记为 NaN"""
    rows = []
    for k in CLASSES:
        samples = stats.waits_first[k]
        if samples.size >= batches:
            mean, half = batch_means_interval(samples, batches=batches)
        else:
            mean = float(samples.mean()) if samples.size else math.nan
            half = math.nan
        rows.append({'rho': rho, 'class': k, 'served': stats.served[k], 'mean_wait': mean,
                     'half_width': half})
    return rows


def run_simulate(cfg: ExperimentConfig) -> List[str]:
    """
    各负载下导出等待时间样本（两种口径）与占用分布，
    并汇总平均等待的批均值区间与 Q3 到达时刻状态的全变差距离
    """
    paths = []
    intervals = []
    arrivals = []
    for rho in tqdm(cfg.loads, desc='负载'):
        stats = simulate_load(cfg, rho)
        paths.append(save_frame(waits_frame(stats), f'waits_rho{rho:g}.csv', cfg.output_dir))
        paths.append(save_frame(waits_frame(stats, last_start=True),
                                f'waits_last_start_rho{rho:g}.csv', cfg.output_dir))
        paths.append(save_frame(occupancy_frame(stats), f'occupancy_rho{rho:g}.csv', cfg.output_dir))
        intervals += wait_interval_rows(rho, stats)
        for coordinate, tv in arrival_state_distance(stats).items():
            arrivals.append({'rho': rho, 'coordinate': coordinate, 'tv': tv})
    paths.append(save_frame(pd.DataFrame(intervals), 'wait_intervals.csv', cfg.output_dir))
    paths.append(save_frame(pd.DataFrame(arrivals), 'arrival_state_tv.csv', cfg.output_dir))
    return paths


def run_solve(cfg: ExperimentConfig, model: str = 'model1') -> List[str]:
    """求解截断链平稳分布并导出；Model I 按负载逐个求解，Model II 求解一次"""
    if model == 'model2':
        dist = solve_model2(normalize_model2(cfg.params), cfg.model2_caps)
        return [save_frame(dist.frame, 'stationary_model2.csv', cfg.output_dir)]
    paths = []
    for rho in tqdm(cfg.loads, desc='负载'):
        dist = solve_model1(cfg.at(rho), cfg.model1_caps)
        mass = boundary_mass(dist, cfg.model1_caps)
        if mass > TAIL_MASS_LIMIT:
            logger.warning(f"ρ = {rho}：截断边界质量 {mass:.3e}，请增大截断上限")
        paths.append(save_frame(dist.frame, f'stationary_model1_rho{rho:g}.csv', cfg.output_dir))
    return paths


def run_tails(cfg: ExperimentConfig) -> List[str]:
    p2 = normalize_model2(cfg.params)
    return [
        save_frame(constants_frame(p2), 'tail_constants.csv', cfg.output_dir),
        save_frame(tail_report(p2), 'tail_report.csv', cfg.output_dir),
    ]


def run_table1(cfg: ExperimentConfig) -> List[RatioErrorRow]:
    """
    (1−ρ)W3 的均值与标准差：重负载指数极限给出的估计值与仿真值的比率误差
    """
    limit = eta(cfg.params)
    analytic = limit_moments(limit, cfg.params)
    rows = []
    for rho in tqdm(cfg.loads, desc='比率误差'):
        scaled = scaled_samples(simulate_load(cfg, rho), cfg.at(rho))
        samples = scaled.scaled_w3_first
        if samples.size < 2:
            raise InputError(f"ρ = {rho}：Q3 等待时间样本不足")
        rows.append(RatioErrorRow(rho, 'mean', analytic.wait_mean, float(samples.mean())))
        rows.append(RatioErrorRow(rho, 'std', analytic.wait_std, float(samples.std(ddof=1))))
    save_frame(pd.DataFrame([r.as_row() for r in rows]), 'table1.csv', cfg.output_dir)
    return rows


def _grid(samples: np.ndarray) -> np.ndarray:
    upper = float(np.quantile(samples, 0.999)) if samples.size else 1.0
    return np.linspace(0.0, max(upper, 1e-12), ECDF_GRID_POINTS)


def run_cdf_export(cfg: ExperimentConfig) -> List[str]:
    """
    导出各负载下 (1−ρ)W3、W1、W2 的经验分布函数，以及 W1/W2 跨负载的两两 KS 距离
    """
    limit = eta(cfg.params)
    paths = []
    class_ecdfs: Dict[Tuple[float, int], object] = {}
    for rho in tqdm(cfg.loads, desc='CDF'):
        stats = simulate_load(cfg, rho)
        p = cfg.at(rho)
        scaled = scaled_samples(stats, p)
        w3 = scaled.wait_ecdf()
        frame = ecdf_frame(w3, _grid(scaled.scaled_w3_first),
                           analytic=lambda x: scaled_wait_cdf(limit, p, x))
        paths.append(save_frame(frame, f'w3_scaled_cdf_rho{rho:g}.csv', cfg.output_dir))
        for k in (1, 2):
            samples = stats.waits_first[k]
            ecdf = empirical_cdf(samples)
            class_ecdfs[(rho, k)] = ecdf
            paths.append(save_frame(ecdf_frame(ecdf, _grid(samples)), f'w{k}_cdf_rho{rho:g}.csv',
                                    cfg.output_dir))

    rows = []
    for idx, rho_a in enumerate(cfg.loads):
        for rho_b in cfg.loads[idx + 1:]:
            for k in (1, 2):
                rows.append({'load_a': rho_a, 'load_b': rho_b, 'class': k,
                             'ks': ks_two_sample(class_ecdfs[(rho_a, k)], class_ecdfs[(rho_b, k)])})
    paths.append(save_frame(pd.DataFrame(rows, columns=['load_a', 'load_b', 'class', 'ks']),
                            'w12_pairwise_ks.csv', cfg.output_dir))
    return paths


@dataclass(frozen=True)
class ValidationReport:
    frame: pd.DataFrame
    passed: bool
    lines: Tuple[str, ...] = ()


def _relative(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.abs(b)


def run_tail_validation(cfg: ExperimentConfig) -> ValidationReport:
    """
    用 Model II 截断链逐条核对尾渐近结论，输出 check,quantity,n,oracle,asymptote,ratio 等列
    """
    p2 = normalize_model2(cfg.params)
    caps = cfg.model2_caps
    dist = solve_model2(p2, caps)
    mass = boundary_mass(dist, caps)
    note = f'boundary mass {mass:.2e}' if mass > TAIL_MASS_LIMIT else ''
    if note:
        logger.warning(f"Model II 截断边界质量 {mass:.3e} 超过 {TAIL_MASS_LIMIT}")
    rows = []
    verdicts = []

    def add(check: str, quantity: str, ns, oracle, asymptote, passed: bool, **extra):
        for n, o, a in zip(ns, oracle, asymptote):
            rows.append({'check': check, 'quantity': quantity, 'n': int(n), 'oracle': float(o),
                         'asymptote': float(a), 'ratio': float(o) / float(a) if a else math.nan,
                         'passed': passed, 'note': note, **extra})
        verdicts.append(passed)

    high = marginal(dist, 'high')
    est = tail_high_marginal(p2)
    ns = np.arange(0, 13)
    add('high-marginal', est.quantity, ns, high[ns], est.value(ns),
        bool(np.all(_relative(high[ns], est.value(ns)) <= 1e-6)))

    # π_{1,(n,1)}/π_{1,(n,0)} 关于 n 线性，斜率为 c1/c0
    ns = np.arange(2, 10)
    col0 = np.array([model2_prob(dist, int(n), 0) for n in ns])
    col1 = np.array([model2_prob(dist, int(n), 1) for n in ns])
    est0, est1 = tail_joint_fixed_low(p2, 0), tail_joint_fixed_low(p2, 1)
    slope = est1.constant / est0.constant
    fit = linregress(ns, col1 / col0)
    add('fixed-low', 'pi1(n,1)/pi1(n,0)', ns, col1 / col0, slope * ns,
        bool(fit.rvalue ** 2 >= 0.999 and abs(fit.slope / slope - 1.0) <= 0.01),
        fitted_slope=fit.slope, expected_slope=slope)

    ns = np.arange(40, 81)
    est = tail_joint_fixed_high(p2, 0)
    pi2 = np.array([model2_prob(dist, 0, int(n)) for n in ns])
    gamma = fit_decay(pi2, ns, est.power)
    add('fixed-high', est.quantity, ns, pi2, est.value(ns), abs(gamma / est.decay_rate - 1.0) <= 0.01,
        fitted_decay=gamma, expected_decay=est.decay_rate)

    low = marginal(dist, 'low')
    relation = tail_low_marginal(p2, p2.threshold_n)
    ns = np.arange(p2.threshold_n, 61)
    scaled = np.array([relation.multiplier * model2_prob(dist, 0, int(n) + 1) for n in ns])
    add('low-marginal', 'pi_l(n)', ns, low[ns], scaled, bool(np.all(_relative(low[ns], scaled) <= 1e-6)))

    total = marginal(dist, 'total')
    est = tail_total(p2)
    ns = np.arange(40, 81)
    gamma = fit_decay(total[ns], ns, est.power)
    add('total', est.quantity, ns, total[ns], est.value(ns), abs(gamma / est.decay_rate - 1.0) <= 0.01,
        fitted_decay=gamma, expected_decay=est.decay_rate, case=est.case)

    ns = np.arange(0, 21)
    for which, oracle in (('L2', np.array([model2_prob(dist, 0, int(n) + 1) for n in ns])),
                          ('L_total', total[ns])):
        series = series_coefficients(pgf_evaluator(p2, which), len(ns), dominant_radius(p2, which))
        add('series', which, ns, oracle, series.coefficients,
            bool(np.all(np.abs(series.coefficients - oracle) <= 1e-6)))

    frame = pd.DataFrame(rows)
    save_frame(frame, 'tail_validation.csv', cfg.output_dir)
    passed = all(verdicts)
    logger.info(f"尾渐近校验{'通过' if passed else '未通过'}（{sum(verdicts)}/{len(verdicts)}）")
    return ValidationReport(frame=frame, passed=passed)


def _joint_x1x2(stats: SimulationStats) -> Dict[Tuple[int, int], float]:
    joint: Dict[Tuple[int, int], float] = {}
    for (x1, x2, _, _), value in stats.occupancy.items():
        joint[(x1, x2)] = joint.get((x1, x2), 0.0) + value / stats.total_time
    return joint


def run_heavy_traffic_check(cfg: ExperimentConfig) -> ValidationReport:
    """
    最大负载下：(1−ρ)X3 经验分布与 Exp(η) 的 KS 距离、(X1, X2) 占用与 Model II 的全变差距离

    有两个负载时还要求 KS 距离随负载增大而减小。
    """
    limit = eta(cfg.params)
    table = spatial_cdf_table(cfg.params, cfg.model2_caps)
    density = np.diff(np.diff(table, axis=0, prepend=0.0), axis=1, prepend=0.0)
    rows = []
    for rho in sorted({min(cfg.loads), max(cfg.loads)}):
        stats = simulate_load(cfg, rho)
        scaled = scaled_samples(stats, cfg.at(rho))
        ks = ks_distance(scaled.queue_ecdf(), lambda z: scaled_queue_cdf(limit, z))
        joint = _joint_x1x2(stats)
        size = (max(table.shape[0], 1 + max(k[0] for k in joint)),
                max(table.shape[1], 1 + max(k[1] for k in joint)))
        simulated = np.zeros(size)
        for (x1, x2), value in joint.items():
            simulated[x1, x2] = value
        oracle = np.zeros(size)
        oracle[:table.shape[0], :table.shape[1]] = density
        tv = total_variation(simulated.ravel(), oracle.ravel())
        rows.append({'rho': rho, 'ks_queue': ks, 'tv_x1x2': tv})
        logger.info(f"ρ = {rho}：KS = {ks:.4f}，TV = {tv:.4f}")

    frame = pd.DataFrame(rows)
    save_frame(frame, 'heavy_traffic_check.csv', cfg.output_dir)
    top = frame.iloc[-1]
    passed = bool(top['ks_queue'] <= 0.05 and top['tv_x1x2'] <= 0.05)
    lines = [
        f"KS((1−ρ)X3, Exp(η)) at ρ={top['rho']:g}: {top['ks_queue']:.4f} "
        f"{'✓' if top['ks_queue'] <= 0.05 else '✗'}",
        f"TV((X1,X2), Model II) at ρ={top['rho']:g}: {top['tv_x1x2']:.4f} "
        f"{'✓' if top['tv_x1x2'] <= 0.05 else '✗'}",
    ]
    if len(frame) > 1:
        bottom = frame.iloc[0]
        shrinks = bool(top['ks_queue'] < bottom['ks_queue'])
        passed = passed and shrinks
        lines.append(f"KS at ρ={top['rho']:g} < KS at ρ={bottom['rho']:g}: "
                     f"{top['ks_queue']:.4f} < {bottom['ks_queue']:.4f} {'✓' if shrinks else '✗'}")
    return ValidationReport(frame=frame, passed=passed, lines=tuple(lines))


def run_model1_oracle_check(cfg: ExperimentConfig, tolerance: float = ORACLE_TV_LIMIT) -> ValidationReport:
    """
    最小负载下仿真占用的 x1、x2、x3 边缘分布与 Model I 截断链平稳分布的全变差距离
    """
    rho = min(cfg.loads)
    stats = simulate_load(cfg, rho)
    dist = solve_model1(cfg.at(rho), cfg.model1_caps)
    rows = []
    for coordinate in ('x1', 'x2', 'x3'):
        tv = total_variation(occupancy_marginal(stats, coordinate), marginal(dist, coordinate))
        rows.append({'rho': rho, 'coordinate': coordinate, 'tv': tv, 'passed': tv <= tolerance})
        logger.info(f"ρ = {rho}：{coordinate} 边缘分布 TV = {tv:.4f}")
    frame = pd.DataFrame(rows)
    save_frame(frame, 'model1_oracle_tv.csv', cfg.output_dir)
    lines = tuple(f"TV({row['coordinate']}, Model I) at ρ={rho:g}: {row['tv']:.4f} "
                  f"{'✓' if row['passed'] else '✗'}" for row in rows)
    return ValidationReport(frame=frame, passed=bool(frame['passed'].all()), lines=lines)


def run_heavy_traffic_summary(cfg: ExperimentConfig,
                              zetas: Sequence[float] = (0.5, 1.0, 2.0, 4.0)) -> pd.DataFrame:
    """η、极限矩与联合极限分布网格（x1, x2 ≤ 3）"""
    limit = eta(cfg.params)
    moments = limit_moments(limit, cfg.params)
    logger.info(f"η = {limit.eta:.7f}，缩放队长均值 {moments.queue_mean:.7f}，缩放等待均值 {moments.wait_mean:.7f}")
    rows = []
    for x1 in range(4):
        for x2 in range(4):
            for zeta in zetas:
                result = joint_limit_cdf(cfg.params, x1, x2, zeta, cfg.model2_caps)
                rows.append({'x1': x1, 'x2': x2, 'zeta': zeta, 'probability': result.probability,
                             'precision_warning': result.precision_warning})
    frame = pd.DataFrame(rows)
    save_frame(frame, 'joint_limit_cdf.csv', cfg.output_dir)
    return frame
