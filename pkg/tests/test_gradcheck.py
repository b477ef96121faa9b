import numpy as np

from certcast import gradcheck
from certcast import tensor as tc


def test_suite_passes_small():
    report = gradcheck.run_suite(seed=3, configs_per_op=5, model_seeds=1)
    assert report.max_error < gradcheck.TOLERANCE
    assert "constraints" in report.per_op and "rfft_irfft" in report.per_op


def test_check_agrees_on_a_correct_gradient():
    x = tc.Tensor(np.array([0.3, -0.7]), requires_grad=True)
    assert gradcheck.check(lambda: tc.sin(x).sum(), [x]) < 1e-6


def test_rel_error_flags_mismatch():
    assert gradcheck.rel_error(np.array([1.0]), np.array([2.0])) > 0.1
    assert gradcheck.rel_error(np.array([1.0]), np.array([1.0])) == 0.0
