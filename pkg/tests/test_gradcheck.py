import numpy as np

from latentda.gradcheck import numeric_gradient, relative_error, run_gradcheck
from latentda.mda import MDALayer


class CorruptedB(MDALayer):
    """Drops a tenth of the projection moment; forward is untouched."""

    def _moments(self, alpha, xhat, dy):
        a, b = super()._moments(alpha, xhat, dy)
        return a, 0.9 * b


class TestHarness:
    def test_numeric_gradient_of_quadratic(self):
        x = np.array([1.0, -2.0, 0.5])
        g = numeric_gradient(lambda: float(np.sum(x ** 3)), x)
        np.testing.assert_allclose(g, 3 * x ** 2, rtol=1e-9)

    def test_relative_error_floor(self):
        assert relative_error(np.array([0.0]), np.array([1e-9])) == 1e-9 / 1e-6
        assert relative_error(np.array([2.0]), np.array([1.0])) == 0.5

    def test_short_run_passes(self):
        report = run_gradcheck(seed=4, trials=8)
        assert report.passed, report.worst()
        assert len(report.lines()) == 9

    def test_single_domain_trials_are_tight(self):
        report = run_gradcheck(seed=1, trials=12, network=False)
        single = [t for t in report.trials if t.domains == 1]
        assert single and max(t.max_error for t in single) <= 1e-6

    def test_corrupted_backward_is_reported(self):
        report = run_gradcheck(seed=0, trials=8, network=False, layer_cls=CorruptedB)
        assert not report.passed
        assert report.max_error > 1e-3
