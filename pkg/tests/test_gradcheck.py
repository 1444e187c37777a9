import numpy as np
import pytest

from snsc import tensor as T
from snsc.checks import CASES, STEPS, run_checks
from snsc.gradcheck import gradcheck
from snsc.nn import Conv2d


def test_linear_graph_is_exact(rng):
    res = gradcheck(lambda x: T.sum_all(T.scale(x, 3.0)), {"x": rng.standard_normal((1, 2, 3, 3))})
    assert res.max_relative_error <= 1e-9
    assert res.checked == 18 and not res.skipped


def test_conv_relu_sum(rng):
    conv = Conv2d(2, 3, 3, 1, rng, dtype=np.float64)
    res = gradcheck(lambda x: T.sum_all(T.relu(conv(x))), {"x": rng.standard_normal((2, 2, 5, 5))},
                    step=1e-5, params=conv.named_parameters())
    assert res.max_relative_error <= 1e-6
    assert res.checked > 0


def test_gwap_default_epsilon(rng):
    point = {"e": rng.standard_normal((2, 3, 4, 4)), "v": rng.uniform(0.1, 1.0, (2, 3, 4, 4))}
    proj = rng.standard_normal((2, 3, 1, 1))
    res = gradcheck(lambda e, v: T.sum_all(T.mul(T.gwap(e, v, 1e-4), T.Tensor(proj))), point, step=1e-5)
    assert res.max_relative_error <= 1e-6


def test_hinge_coordinates_are_skipped():
    x = np.array([1e-7, 1.0, -1.0, 0.5]).reshape(1, 1, 2, 2)
    res = gradcheck(lambda x: T.sum_all(T.relu(x)), {"x": x}, step=1e-5)
    assert res.skipped == [("x", 0)]
    assert res.checked == 3 and res.max_relative_error <= 1e-12


def test_float64_differencing_path(rng):
    res = gradcheck(lambda x: T.sum_all(T.square(x)), {"x": rng.standard_normal((1, 1, 3, 3))},
                    step=1e-4, extended=False)
    assert res.max_relative_error <= 1e-8


def test_rejects_bad_step_and_nonscalar():
    with pytest.raises(ValueError):
        gradcheck(lambda x: T.sum_all(x), {"x": np.ones((1, 1, 1, 1))}, step=1e-2)
    with pytest.raises(T.ShapeError):
        gradcheck(lambda x: T.relu(x), {"x": np.ones((1, 1, 2, 2))})


def test_rejects_float32_params(rng):
    conv = Conv2d(1, 1, 1, 1, rng)
    with pytest.raises(TypeError):
        gradcheck(lambda x: T.sum_all(conv(x)), {"x": np.ones((1, 1, 2, 2))}, params=conv.named_parameters())


def test_point_data_restored(rng):
    conv = Conv2d(1, 2, 3, 1, rng, dtype=np.float64)
    before = conv.weight.data.copy()
    gradcheck(lambda x: T.sum_all(conv(x)), {"x": rng.standard_normal((1, 1, 3, 3))},
              params=conv.named_parameters())
    assert conv.weight.data.dtype == np.float64
    np.testing.assert_array_equal(conv.weight.data, before)


def test_every_op_has_a_case():
    assert set(CASES) == set(STEPS) == {"conv2d", "batchnorm", "relu", "resample", "gwap",
                                         "side_chain_forward", "fuse", "l1_loss"}


@pytest.mark.parametrize("seed", [1, 2])
def test_run_checks_other_seeds(seed):
    res = run_checks(seed=seed, points=2)
    for op, rs in res.items():
        assert max(r.max_relative_error for r in rs) <= 1e-6, op
        assert all(r.checked > 0 for r in rs)


def test_single_op_run_matches_suite():
    a = run_checks(["gwap"], seed=3, points=2)["gwap"]
    b = run_checks(["relu", "gwap"], seed=3, points=2)["gwap"]
    assert [r.max_relative_error for r in a] == [r.max_relative_error for r in b]


def test_unknown_op():
    with pytest.raises(KeyError):
        run_checks(["softmax"])
