import os

import numpy as np
import pandas as pd
import pytest

from des_sim import SimConfig, empirical_cdf, simulate
from polling_errors import InputError
from polling_model import at_load
from result_storage import ecdf_frame, load_frame, occupancy_frame, result_path, save_frame, waits_frame


@pytest.fixture(scope='module')
def stats(base):
    return simulate(at_load(base, 0.9), SimConfig(min_departures=5000, seed=21))


def test_result_path_creates_directory(out_dir):
    path = result_path('x.csv', out_dir)
    assert os.path.isdir(out_dir)
    assert path == os.path.join(out_dir, 'x.csv')


def test_save_and_load(out_dir):
    frame = pd.DataFrame({'n': [0, 1, 2], 'value': [1 / 3, 1e-300, 2.5]})
    path = save_frame(frame, 'values.csv', out_dir)
    loaded = load_frame(path, columns=['n', 'value'])
    # 浮点数按 17 位有效数字写出，读回不丢精度
    assert loaded['value'].tolist() == pytest.approx(frame['value'].tolist(), rel=1e-15)


def test_load_frame_missing_columns(out_dir):
    path = save_frame(pd.DataFrame({'a': [1]}), 'a.csv', out_dir)
    with pytest.raises(InputError):
        load_frame(path, columns=['a', 'b'])


def test_load_frame_missing_file(out_dir):
    with pytest.raises(OSError):
        load_frame(os.path.join(out_dir, 'nothing.csv'))


def test_waits_frame(stats):
    frame = waits_frame(stats)
    assert list(frame.columns) == ['class', 'sample']
    assert len(frame) == sum(stats.served.values())
    assert frame.groupby('class').size().to_dict() == {k: v for k, v in stats.served.items() if v}
    last = waits_frame(stats, last_start=True)
    assert (last['sample'].to_numpy() >= frame['sample'].to_numpy()).all()


def test_occupancy_frame(stats):
    frame = occupancy_frame(stats)
    assert list(frame.columns) == ['x1', 'x2', 'x3', 'server', 'time_fraction']
    assert frame['time_fraction'].sum() == pytest.approx(1.0)
    assert set(frame['server']) <= {1, 2, 3}


def test_ecdf_frame():
    ecdf = empirical_cdf([1.0, 2.0, 2.0, 4.0])
    frame = ecdf_frame(ecdf)
    assert frame['x'].tolist() == [1.0, 2.0, 4.0]
    assert frame['ecdf'].tolist() == [0.25, 0.75, 1.0]
    grid = np.array([0.0, 3.0])
    frame = ecdf_frame(ecdf, grid, analytic=lambda x: x / 4.0)
    assert frame['ecdf'].tolist() == [0.0, 0.75]
    assert frame['analytic'].tolist() == [0.0, 0.75]
