"""
Unit tests for finite-difference gradient checking.
"""

import unittest
import numpy as np

import sys
import os
sys.path.append(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

import tensor as T
from tensor import Tensor
from gradcheck import (DEFAULT_TOLERANCE, LAYER_CASES, check_model, grad_check, relative_error,
                       run_gradcheck_suite, small_model_config)


class TestGradCheck(unittest.TestCase):
    """Test cases for grad_check and the suite."""

    def test_relative_error_floor(self):
        """Test the relative error formula and its denominator floor."""
        self.assertAlmostEqual(float(relative_error(1.0, 0.5)), 0.5)
        self.assertEqual(float(relative_error(0.0, 0.0)), 0.0)
        self.assertAlmostEqual(float(relative_error(1e-9, 0.0)), 0.1)

    def test_exact_gradient_passes(self):
        """Test a cubic whose analytic gradient is exact."""
        x = Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True, name="x")
        result = grad_check(lambda: T.tensor_sum(x * x * x), [x])
        self.assertTrue(result.passed())
        self.assertEqual(len(result.per_parameter_errors), 3)
        np.testing.assert_array_equal(x.grad, np.zeros(3))

    def test_wrong_gradient_is_detected(self):
        """Test that a deliberately broken gradient fails."""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)

        def broken():
            return T._make(np.asarray(np.sum(x.data ** 2)), (x,), lambda g: (g * x.data,), "broken")

        self.assertFalse(grad_check(broken, [x]).passed())

    def test_rejects_single_precision(self):
        """Test that 32-bit parameters are refused."""
        x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        with self.assertRaises(ValueError):
            grad_check(lambda: T.tensor_sum(x), [x])

    def test_sampling_limits_coordinates(self):
        """Test num_samples."""
        x = Tensor(np.linspace(-1.0, 1.0, 10), requires_grad=True)
        result = grad_check(lambda: T.tensor_sum(T.tanh(x)), {"x": x}, num_samples=4)
        self.assertEqual(len(result.names), 4)
        self.assertTrue(all(name.startswith("x[") for name in result.names))

    def test_layer_suite_passes(self):
        """Test two random instances of every layer case."""
        results = run_gradcheck_suite(instances=2 * len(LAYER_CASES), seed=1, include_models=False)
        self.assertEqual(set(results), set(LAYER_CASES))
        for name, result in results.items():
            self.assertLess(result.max_relative_error, DEFAULT_TOLERANCE, name)

    def test_full_model_gradients(self):
        """Test sampled coordinates of two complete architectures."""
        for group, base in ((3, "cnn"), (2, "gru")):
            result = check_model(small_model_config(group, base), num_samples=20, seed=0)
            self.assertEqual(len(result.per_parameter_errors), 20)
            self.assertLess(float(np.median(result.per_parameter_errors)), 1e-6, f"{group}/{base}")
            self.assertLess(result.max_relative_error, 1e-2, f"{group}/{base}")


if __name__ == '__main__':
    unittest.main()
