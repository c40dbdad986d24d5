"""
结果校验模块
检验截断链、尾渐近与重负载极限结果的正确性和一致性
"""
import dataclasses
import logging
from typing import Dict, List

import numpy as np

from ctmc_core import boundary_mass, model1_generator, model2_generator, solve_model2, stationary_distribution
from des_sim import arrival_state_distance
from experiment_runner import (
    ORACLE_TV_LIMIT, ExperimentConfig, run_heavy_traffic_check, run_model1_oracle_check, run_table1,
    run_tail_validation, simulate_load,
)
from heavy_traffic import TAIL_MASS_LIMIT, eta, limit_moments
from polling_config import ROW_SUM_TOL, SOLVER_TOL
from polling_model import normalize_model2
from tail_asymptotics import constants, regime, tail_report, tail_total

logger = logging.getLogger(__name__)

SCALE_FACTOR = 7.3
RATIO_ERROR_LIMIT = 5.0  # (1−ρ)W3 比率误差（%）超过该值给出警告
ARRIVAL_TV_LIMIT = 0.02  # Q3 到达时刻状态与时间平均的边缘全变差上限


def validate_results(cfg: ExperimentConfig, include_simulation: bool = False) -> Dict:
    """
    全面校验计算结果

    Args:
        cfg (ExperimentConfig): 实验配置
        include_simulation (bool): 是否运行仿真相关的检查（耗时）

    Returns:
        dict: 包含校验结果的字典
    """
    logger.info("开始结果校验...")

    results = {
        'is_valid': True,
        'errors': [],
        'warnings': [],
        'statistics': {}
    }

    try:
        # 1. 重负载常数
        limit = eta(cfg.params)
        moments = limit_moments(limit, cfg.params)
        results['statistics']['eta'] = round(limit.eta, 7)
        results['statistics']['scaled_wait_mean'] = round(moments.wait_mean, 7)

        # 2. 生成元与平稳解
        generator_issues = check_generators(cfg, results['statistics'])
        _collect(results, generator_issues)

        # 3. 尾渐近
        tail_issues = check_tail_asymptotics(cfg, results['statistics'])
        _collect(results, tail_issues)

        # 4. 尺度不变性
        _collect(results, check_scale_invariance(cfg))

        # 5. 仿真
        if include_simulation:
            _collect(results, check_simulation(cfg, results['statistics']))

        logger.info("结果校验完成")
        return results

    except Exception as e:
        logger.error(f"结果校验过程中出错：{str(e)}")
        results['is_valid'] = False
        results['errors'].append(f"校验过程出错：{str(e)}")
        return results


def _collect(results: Dict, issues: List[str]) -> None:
    """带【严重】标记的问题记为错误，其余记为警告"""
    for issue in issues:
        if '严重' in issue:
            results['is_valid'] = False
            results['errors'].append(issue)
        else:
            results['warnings'].append(issue)


def check_generators(cfg: ExperimentConfig, stats: Dict) -> List[str]:
    """
    检查生成元行和与平稳分布残差，并报告截断边界质量

    Args:
        cfg (ExperimentConfig): 实验配置
        stats (dict): 统计信息，原地追加

    Returns:
        list: 问题列表
    """
    issues = []
    rho = max(cfg.loads)
    checks = (
        ('Model I', model1_generator(cfg.at(rho), cfg.model1_caps), cfg.model1_caps),
        ('Model II', model2_generator(normalize_model2(cfg.params), cfg.model2_caps), cfg.model2_caps),
    )
    for name, generator, caps in checks:
        row_error = generator.row_sum_error()
        if row_error > ROW_SUM_TOL:
            issues.append(f"【严重】{name} 生成元行和误差 {row_error:.3e} 超过 {ROW_SUM_TOL}")
        dist = stationary_distribution(generator)
        if dist.residual > SOLVER_TOL:
            issues.append(f"【严重】{name} 平稳分布残差 {dist.residual:.3e} 超过 {SOLVER_TOL}")
        mass = boundary_mass(dist, caps)
        if mass > TAIL_MASS_LIMIT:
            issues.append(f"{name} 截断边界质量 {mass:.3e}，建议增大截断上限 {caps.as_tuple()}")
        stats[f'{name} states'] = generator.dimension
        stats[f'{name} residual'] = f'{dist.residual:.3e}'
    return issues


def check_tail_asymptotics(cfg: ExperimentConfig, stats: Dict) -> List[str]:
    """逐条核对尾渐近结论，未通过的条目记为严重问题"""
    issues = []
    p2 = normalize_model2(cfg.params)
    c = constants(p2)
    reg = regime(p2)
    total = tail_total(p2)
    stats['tail'] = {
        'regime': reg.kind.value,
        'D': f'{c.D:.7f}',
        'c0': f'{c.c0:.7f}',
        'b1': f'{c.b1:.6f}',
        'total case': total.case,
        'total decay': f'{total.decay_rate:.6f}',
    }
    report = run_tail_validation(cfg)
    failed = report.frame[~report.frame['passed']]
    for (check, quantity), _ in failed.groupby(['check', 'quantity']):
        issues.append(f"【严重】尾渐近检查未通过：{check} / {quantity}")
    if 'fitted_decay' in report.frame.columns:
        fitted = report.frame.dropna(subset=['fitted_decay']).drop_duplicates(['check', 'quantity'])
        for _, row in fitted.iterrows():
            stats['tail'][f"{row['quantity']} fitted decay"] = f"{row['fitted_decay']:.6f}"
    return issues


def check_scale_invariance(cfg: ExperimentConfig) -> List[str]:
    """六个速率同乘一个常数后，Model II 平稳分布与尾常数不变"""
    issues = []
    p = cfg.params
    scaled = dataclasses.replace(p, **{
        name: getattr(p, name) * SCALE_FACTOR
        for name in ('lambda1', 'lambda2', 'lambda3', 'mu1', 'mu2', 'mu3')
    })
    base_dist = solve_model2(p, cfg.model2_caps)
    scaled_dist = solve_model2(scaled, cfg.model2_caps)
    diff = float(np.abs(base_dist.probs - scaled_dist.probs).max())
    if diff > 1e-10:
        issues.append(f"【严重】速率同乘 {SCALE_FACTOR} 后平稳分布变化 {diff:.3e}")
    before = tail_report(normalize_model2(p))
    after = tail_report(normalize_model2(scaled))
    if not np.allclose(before['C'], after['C'], rtol=1e-10) or not np.allclose(
            before['gamma'], after['gamma'], rtol=1e-12):
        issues.append(f"【严重】速率同乘 {SCALE_FACTOR} 后尾常数发生变化")
    return issues


def check_simulation(cfg: ExperimentConfig, stats: Dict) -> List[str]:
    """
    仿真验收检查

    最小负载下与 Model I 截断链的边缘分布全变差、最大负载下的重负载极限 KS/TV 及其随负载的单调性、
    (1−ρ)W3 均值比率误差随负载减小，以及 Q3 到达时刻状态与时间平均的一致性
    """
    issues = []
    oracle = run_model1_oracle_check(cfg)
    stats['model1 oracle'] = _line_dict(oracle.lines)
    if not oracle.passed:
        issues.append(f"【严重】ρ = {min(cfg.loads)} 下仿真占用与 Model I 平稳分布的全变差超过 {ORACLE_TV_LIMIT}")

    check = run_heavy_traffic_check(cfg)
    stats['heavy traffic'] = _line_dict(check.lines)
    if not check.passed:
        issues.append("【严重】重负载极限检查未通过")

    rows = run_table1(cfg)
    for row in rows:
        if abs(row.ratio_error) > RATIO_ERROR_LIMIT:
            issues.append(f"ρ = {row.rho} 的 {row.statistic} 比率误差 {row.ratio_error:.2f}% 超过 {RATIO_ERROR_LIMIT}%")
    means = [row for row in rows if row.statistic == 'mean']
    if len(means) > 1:
        low = min(means, key=lambda row: row.rho)
        high = max(means, key=lambda row: row.rho)
        stats['ratio error'] = {f'mean at ρ={row.rho:g}': f'{row.ratio_error:.2f}%' for row in means}
        if not abs(high.ratio_error) < abs(low.ratio_error):
            issues.append(f"【严重】均值比率误差未随负载减小：ρ = {low.rho} 时 {low.ratio_error:.2f}%，"
                          f"ρ = {high.rho} 时 {high.ratio_error:.2f}%")

    for rho in cfg.loads:
        distances = arrival_state_distance(simulate_load(cfg, rho))
        worst = max(distances, key=distances.get)
        if distances[worst] > ARRIVAL_TV_LIMIT:
            issues.append(f"ρ = {rho}：Q3 到达时刻 {worst} 的分布与时间平均相差 {distances[worst]:.4f}")
    return issues


def _line_dict(lines) -> Dict[str, str]:
    return {line.split(':')[0]: line.split(':', 1)[1].strip() for line in lines}


def print_validation_report(results: Dict):
    """
    打印校验报告：状态、错误与警告，之后按重负载常数、截断链、尾渐近与仿真分节列出统计量

    Args:
        results (dict): validate_results 的返回值
    """
    stats = dict(results['statistics'])
    print("\n" + "=" * 60)
    print("阈值轮询模型校验报告")
    print("=" * 60)
    print(f"\n校验状态: {'✓ 通过' if results['is_valid'] else '✗ 失败'}"
          f"（{len(results['errors'])} 个错误，{len(results['warnings'])} 个警告）")

    for title, items in (('【错误】', results['errors']), ('【警告】', results['warnings'])):
        if items:
            print(f"\n{title}:")
            for item in items:
                print(f"  - {item}")

    if 'eta' in stats:
        print("\n【重负载极限】:")
        print(f"  η = {stats.pop('eta')}")
        if 'scaled_wait_mean' in stats:
            print(f"  (1−ρ)W3 极限均值 = 标准差 = {stats.pop('scaled_wait_mean')}")

    chains = [key for key in stats if key.startswith('Model I')]
    if chains:
        print("\n【截断链】:")
        for name in ('Model I', 'Model II'):
            if f'{name} states' in stats:
                print(f"  {name}: {stats.pop(f'{name} states')} 个状态，残差 {stats.pop(f'{name} residual', '-')}")

    tail = stats.pop('tail', None)
    if tail:
        print("\n【尾渐近】:")
        print(f"  区域 {tail.get('regime', '-')}，D = {tail.get('D', '-')}")
        if 'total case' in tail:
            print(f"  总人数：情形 {tail['total case']}，γ = {tail.get('total decay', '-')}")
        for key, value in tail.items():
            if key.endswith('fitted decay'):
                print(f"    - {key}: {value}")

    for key in ('model1 oracle', 'heavy traffic', 'ratio error'):
        section = stats.pop(key, None)
        if section:
            print(f"\n【仿真 / {key}】:")
            for k, v in section.items():
                print(f"    - {k}: {v}")

    if stats:
        print("\n【其他】:")
        for key, value in stats.items():
            print(f"  {key}: {value}")

    print("\n" + "=" * 60 + "\n")
