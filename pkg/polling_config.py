"""
排队分析工具的配置文件
所有参数都可以通过同名环境变量覆盖；实验配置文件（INI）由 load_config_file 读取
"""
import configparser
import logging
import os
from typing import Dict

logger = logging.getLogger(__name__)


def _env_int(name: str, default: int) -> int:
    return int(os.environ.get(name, default))


def _env_float(name: str, default: float) -> float:
    return float(os.environ.get(name, default))


# 日志配置
LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# 截断链（oracle）配置
MAX_STATES = _env_int('MAX_STATES', 2_000_000)  # 状态空间上限，超过即报容量错误
DIRECT_SOLVE_LIMIT = _env_int('DIRECT_SOLVE_LIMIT', 60_000)  # 超过该维数改用迭代求解
SOLVER_TOL = _env_float('SOLVER_TOL', 1e-10)  # ‖πQ‖∞ 上限
ROW_SUM_TOL = _env_float('ROW_SUM_TOL', 1e-12)
GMRES_MAXITER = _env_int('GMRES_MAXITER', 500)

# 尾渐近配置
D_ZERO_TOL = _env_float('D_ZERO_TOL', 1e-12)  # |D| 小于该值视为 D = 0

# 仿真配置
DEFAULT_SEED = _env_int('DEFAULT_SEED', 20240601)
DEFAULT_DEPARTURES = _env_int('DEFAULT_DEPARTURES', 1_000_000)
WARMUP_FRACTION = _env_float('WARMUP_FRACTION', 0.2)
X3_BUCKET_CAP = _env_int('X3_BUCKET_CAP', 200)  # 联合占用直方图中 x3 的归并上限
X3_HIST_MAX = _env_int('X3_HIST_MAX', 200_000)  # x3 精确直方图长度，超出部分计入溢出
EXP_BLOCK_SIZE = 1 << 16  # 指数随机数批量生成的块大小

# 输出配置
OUTPUT_DIR = os.environ.get('OUTPUT_DIR', 'results')

# 基准实例：λ1=0.1, λ2=0.3, μ1=0.5, μ2=1, μ3=1.5, N=10
BASE_RATES = {
    'lambda1': 0.1,
    'lambda2': 0.3,
    'mu1': 0.5,
    'mu2': 1.0,
    'mu3': 1.5,
    'threshold_n': 10,
}
LOAD_SCHEDULE = (0.8, 0.9, 0.95, 0.975, 0.99)
MODEL1_CAPS = (30, 30, 150)
MODEL2_CAPS = (60, 300)

# INI 文件各节允许的键
CONFIG_SECTIONS = {
    'model': ('lambda1', 'lambda2', 'mu1', 'mu2', 'mu3', 'threshold_n'),
    'simulation': ('departures', 'warmup', 'seed', 'replications', 'loads'),
    'truncation': ('model1_caps', 'model2_caps'),
    'output': ('directory',),
}


def load_config_file(path: str) -> Dict[str, Dict[str, str]]:
    """
    读取实验配置文件（带节的键值文本）

    Args:
        path (str): INI 文件路径

    Returns:
        dict: {节名: {键: 原始字符串}}，只包含已知的节与键
    """
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding='utf-8') as handle:
            parser.read_file(handle)
    except OSError as e:
        logger.error(f"读取配置文件失败：{str(e)}")
        raise

    values: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in CONFIG_SECTIONS:
            logger.warning(f"忽略未知配置节 [{section}]")
            continue
        known = CONFIG_SECTIONS[section]
        entries = {}
        for key, raw in parser.items(section):
            if key not in known:
                logger.warning(f"忽略未知配置项 {section}.{key}")
                continue
            entries[key] = raw.strip()
        values[section] = entries
    logger.info(f"已读取配置文件 {path}")
    return values
