import json

import numpy as np
import pytest

from ivra.bench import bench_models, grid_shape, injection_scaling, run_bench, time_injection
from ivra.pipeline import InjectConfig, PromptSpec, run_pipeline


@pytest.mark.parametrize("n,shape", [(576, (24, 24)), (12, (3, 4)), (7, (1, 7)), (1, (1, 1))])
def test_grid_shape(n, shape):
    assert grid_shape(n) == shape


@pytest.fixture(scope="module")
def small():
    return bench_models(16, 64, 2, head_dim=16)


def test_report_fields(small):
    cfg = InjectConfig(inject_layers=(1,))
    r = run_bench(16, 64, 2, cfg, reps=5, warmups=1, models=small)
    assert r.baseline_ms > 0 and r.injected_ms > 0
    assert r.overhead_fraction == pytest.approx(r.injected_ms / r.baseline_ms - 1)
    assert (r.n_patches, r.d_model, r.num_layers, r.repetitions) == (16, 64, 2, 5)
    assert r.inject_layers == [1] and r.position == "P0" and not r.parallel
    data = json.loads(r.to_json())
    assert set(data) == {
        "n_patches", "d_model", "num_layers", "baseline_ms", "injected_ms", "overhead_fraction",
        "repetitions", "warmups", "inject_layers", "position", "lam", "parallel",
    }


def test_benchmarking_does_not_change_outputs(small):
    enc, dec, image = small
    cfg = InjectConfig(inject_layers=(0, 1))
    before = run_pipeline(image, PromptSpec(), enc, dec, cfg).tokens
    run_bench(16, 64, 2, cfg, reps=5, models=small)
    np.testing.assert_array_equal(run_pipeline(image, PromptSpec(), enc, dec, cfg).tokens, before)


def test_bench_argument_checks(small):
    with pytest.raises(ValueError):
        run_bench(16, 64, 2, InjectConfig(), reps=4, models=small)
    with pytest.raises(ValueError):
        run_bench(0, 64, 2, InjectConfig())


def test_injection_timers_run():
    assert time_injection(16, 8, reps=3, warmups=1) > 0
    small, large, ratio = injection_scaling(16, 32, 8, reps=3, warmups=1)
    assert small > 0 and large > 0 and ratio == pytest.approx(large / small)
