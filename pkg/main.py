"""
主程序入口
协调模型求解、仿真、尾渐近与重负载极限计算以及结果校验
"""
import argparse
import logging
import sys

from experiment_runner import (
    ExperimentConfig, parse_floats, run_cdf_export, run_heavy_traffic_summary, run_simulate, run_solve, run_table1,
    run_tails,
)
from polling_config import LOG_FORMAT, LOG_LEVEL
from polling_errors import PollingError
from result_validator import print_validation_report, validate_results

# 配置日志
logging.basicConfig(level=getattr(logging, LOG_LEVEL), format=LOG_FORMAT)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='阈值轮询排队系统：截断链求解、仿真、尾渐近与重负载极限')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='INI 配置文件路径')
    common.add_argument('--seed', type=int, help='随机数种子')
    common.add_argument('--rho', help='负载列表，逗号分隔，例如 0.8,0.99')
    common.add_argument('--caps', help='截断上限：a,b,c（Model I）或 a,b（Model II）')
    common.add_argument('--out', help='输出目录')
    common.add_argument('--departures', type=int, help='每次重复的离开数')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('simulate', parents=[common], help='仿真并导出等待时间与占用分布')
    solve = sub.add_parser('solve', parents=[common], help='求解截断链平稳分布')
    solve.add_argument('--model', choices=('model1', 'model2'), default='model1')
    sub.add_parser('heavy-traffic', parents=[common], help='η、极限矩与联合极限分布')
    sub.add_parser('tails', parents=[common], help='尾渐近常数与估计')
    sub.add_parser('table1', parents=[common], help='(1−ρ)W3 的比率误差表')
    sub.add_parser('cdf-export', parents=[common], help='导出经验分布函数')
    validate = sub.add_parser('validate', parents=[common], help='运行全部校验')
    validate.add_argument('--skip-simulation', action='store_true', help='跳过仿真相关的检查')
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    loads = parse_floats(args.rho) if args.rho else None
    return ExperimentConfig.from_sources(
        config_path=args.config, seed=args.seed, loads=loads, caps=args.caps,
        out=args.out, departures=args.departures,
    )


def run(argv=None) -> int:
    """运行主程序，返回退出码"""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        logger.info(f"执行 {args.command}，负载 {cfg.loads}，输出目录 {cfg.output_dir}")

        if args.command == 'simulate':
            run_simulate(cfg)
        elif args.command == 'solve':
            run_solve(cfg, args.model)
        elif args.command == 'tails':
            run_tails(cfg)
        elif args.command == 'heavy-traffic':
            grid = run_heavy_traffic_summary(cfg)
            print(grid.to_string(index=False))
        elif args.command == 'table1':
            for row in run_table1(cfg):
                print(f"ρ={row.rho:<6g} {row.statistic:<5} 估计 {row.estimated:.6f}  "
                      f"仿真 {row.simulated:.6f}  比率误差 {row.ratio_error:+.4f}%")
        elif args.command == 'cdf-export':
            run_cdf_export(cfg)
        elif args.command == 'validate':
            results = validate_results(cfg, include_simulation=not args.skip_simulation)
            print_validation_report(results)
            return EXIT_OK if results['is_valid'] else EXIT_FAILED
        return EXIT_OK

    except PollingError as e:
        logger.error(f"{args.command} 执行失败：{str(e)}")
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(run())
