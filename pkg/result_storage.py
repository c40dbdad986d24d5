"""
结果存储模块
将平稳分布、仿真样本、占用分布、经验分布函数与各类报告写成 CSV
"""
import logging
import os
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from polling_config import OUTPUT_DIR
from polling_errors import InputError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def result_path(name: str, directory: Optional[str] = None) -> str:
    """
    拼接输出文件路径，必要时创建目录

    Args:
        name (str): 文件名
        directory (str): 输出目录，缺省为 OUTPUT_DIR

    Returns:
        str: 文件路径
    """
    directory = directory or OUTPUT_DIR
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, name)


def save_frame(df: pd.DataFrame, name: str, directory: Optional[str] = None) -> str:
    """
    保存 DataFrame 为 CSV（UTF-8，带表头，浮点数保留全部有效位）

    Args:
        df (pd.DataFrame): 要保存的数据
        name (str): 文件名
        directory (str): 输出目录

    Returns:
        str: 写入的文件路径
    """
    if df is None or df.empty:
        logger.warning(f"{name} 没有数据需要保存")
    path = result_path(name, directory)
    try:
        df.to_csv(path, index=False, encoding='utf-8', float_format=FLOAT_FORMAT)
    except OSError as e:
        logger.error(f"保存 {path} 失败：{str(e)}")
        raise
    logger.info(f"已保存 {len(df)} 行到 {path}")
    return path


def load_frame(path: str, columns: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """读取 CSV，并检查必需的列"""
    try:
        df = pd.read_csv(path, encoding='utf-8')
    except OSError as e:
        logger.error(f"读取 {path} 失败：{str(e)}")
        raise
    missing = [c for c in (columns or ()) if c not in df.columns]
    if missing:
        raise InputError(f"{path} 缺少列 {missing}")
    return df


def waits_frame(stats, last_start: bool = False) -> pd.DataFrame:
    """等待时间样本，列为 class,sample"""
    waits = stats.waits_last if last_start else stats.waits_first
    parts = [
        pd.DataFrame({'class': k, 'sample': samples})
        for k, samples in sorted(waits.items())
    ]
    return pd.concat(parts, ignore_index=True)


def occupancy_frame(stats) -> pd.DataFrame:
    """时间平均占用，列为 x1,x2,x3,server,time_fraction（x3 为归并后的取值）"""
    keys = sorted(stats.occupancy)
    frame = pd.DataFrame(keys, columns=['x1', 'x2', 'x3', 'server'])
    frame['time_fraction'] = [stats.occupancy[k] / stats.total_time for k in keys]
    return frame


def ecdf_frame(ecdf, grid: Optional[np.ndarray] = None, analytic=None) -> pd.DataFrame:
    """
    经验分布函数表，列为 x,ecdf；给出 analytic 时追加 analytic 列
    """
    x = ecdf.points if grid is None else np.asarray(grid, dtype=float)
    frame = pd.DataFrame({'x': x, 'ecdf': ecdf(x)})
    if analytic is not None:
        frame['analytic'] = analytic(x)
    return frame
