import unittest

import numpy as np

from skelbeat.kernel import autodiff
from skelbeat.kernel.autodiff import BackwardError, ComputeGraph, \
    GradientCheckError, ShapeError, grad_check


class TestForward(unittest.TestCase):

    def test_relu(self):
        """relu([-1, 2]) gives [0, 2]"""
        graph = ComputeGraph()
        out = graph.relu(graph.input('x', [-1.0, 2.0]))
        np.testing.assert_array_equal(graph.forward(output=out), [0.0, 2.0])

    def test_logsumexp_uniform(self):
        """logsumexp of two zeros is ln 2"""
        graph = ComputeGraph()
        out = graph.logsumexp(graph.input('x', [0.0, 0.0]))
        self.assertAlmostEqual(float(graph.forward(output=out)), np.log(2.0),
                               places=14)

    def test_softmax_ce_uniform(self):
        """cross-entropy of uniform logits is ln 2"""
        graph = ComputeGraph()
        out = graph.softmax_ce(graph.input('x', [0.0, 0.0]), 0)
        self.assertAlmostEqual(float(graph.forward(output=out)), np.log(2.0),
                               places=14)

    def test_shape_error_names_op(self):
        """incompatible matmul operands raise ShapeError with the shapes"""
        graph = ComputeGraph()
        graph.matmul(graph.input('a', np.ones((2, 3))),
                     graph.input('b', np.ones((2, 3))))
        with self.assertRaises(ShapeError) as context:
            graph.forward()
        self.assertIn('matmul', str(context.exception))
        self.assertIn('(2, 3)', str(context.exception))

    def test_feeds(self):
        """inputs can be fed at forward time and re-fed"""
        graph = ComputeGraph()
        x = graph.input('x')
        out = graph.square(x)
        self.assertEqual(float(graph.forward({'x': 3.0}, out)), 9.0)
        self.assertEqual(float(graph.forward({'x': -2.0}, out)), 4.0)


class TestBackward(unittest.TestCase):

    def test_square(self):
        """d/dx x^2 at 3 is 6"""
        graph = ComputeGraph()
        x = graph.input('x', 3.0)
        out = graph.square(x)
        graph.forward()
        self.assertEqual(float(graph.backward(out, [x])[0]), 6.0)

    def test_softmax_ce_gradient(self):
        """gradient of uniform cross-entropy is softmax minus one-hot"""
        graph = ComputeGraph()
        x = graph.input('x', [0.0, 0.0])
        out = graph.softmax_ce(x, 0)
        graph.forward()
        np.testing.assert_allclose(graph.backward(out, [x])[0],
                                   [-0.5, 0.5], atol=1e-15)

    def test_logit_mean_gradient(self):
        """gradient of the logit mean over 4 classes is 1/4 each"""
        graph = ComputeGraph()
        x = graph.input('x', [1.0, -2.0, 0.5, 3.0])
        out = graph.mean(x)
        graph.forward()
        np.testing.assert_allclose(graph.backward(out, [x])[0],
                                   [0.25] * 4)

    def test_backward_before_forward(self):
        """backward without forward raises BackwardError"""
        graph = ComputeGraph()
        x = graph.input('x', 1.0)
        out = graph.square(x)
        with self.assertRaises(BackwardError):
            graph.backward(out, [x])

    def test_unreachable_leaf_gets_zeros(self):
        """leaves not feeding the output get zero gradients"""
        graph = ComputeGraph()
        x = graph.input('x', [1.0, 2.0])
        unused = graph.param('w', np.ones((2, 2)))
        out = graph.sum(graph.square(x))
        graph.forward()
        grads = graph.backward(out, [x, unused])
        np.testing.assert_array_equal(grads[1], np.zeros((2, 2)))

    def test_accumulation(self):
        """a node used twice accumulates both gradients"""
        graph = ComputeGraph()
        x = graph.input('x', 2.0)
        out = graph.mul(x, x) + x
        graph.forward()
        self.assertEqual(float(graph.backward(out, [x])[0]), 5.0)

    def test_relu_kink(self):
        """the relu subgradient at 0 is 0"""
        graph = ComputeGraph()
        x = graph.input('x', [0.0, 1.0])
        out = graph.sum(graph.relu(x))
        graph.forward()
        np.testing.assert_array_equal(graph.backward(out, [x])[0],
                                      [0.0, 1.0])

    def test_linearity(self):
        """grad of a f + b g equals a grad f + b grad g"""
        rng = np.random.default_rng(3)
        point = rng.normal(size=4)

        def grad_of(build):
            graph = ComputeGraph()
            x = graph.input('x', point)
            out = build(graph, x)
            graph.forward()
            return graph.backward(out, [x])[0]

        def f(graph, x):
            return graph.logsumexp(x)

        def g(graph, x):
            return graph.sum(graph.tanh(x))

        combined = grad_of(lambda graph, x: graph.add(
            graph.scale(f(graph, x), 2.5), graph.scale(g(graph, x), -0.5)))
        np.testing.assert_allclose(
            combined, 2.5 * grad_of(f) - 0.5 * grad_of(g), atol=1e-14)

    def test_repeated_runs_identical(self):
        """identical graphs give bit-identical gradients"""
        rng = np.random.default_rng(0)
        x0, w0 = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))

        def run():
            graph = ComputeGraph()
            x = graph.input('x', x0)
            w = graph.param('w', w0)
            out = graph.softmax_ce(graph.matmul(x, w), [0, 1, 2, 0, 1])
            graph.forward()
            return graph.backward(out, [x, w])

        first, second = run(), run()
        for a, b in zip(first, second):
            self.assertEqual(a.tobytes(), b.tobytes())

    def test_module_functions(self):
        """forward_ops and backward wrap the graph methods"""
        graph = ComputeGraph()
        x = graph.input('x', 4.0)
        out = graph.square(x)
        self.assertEqual(float(autodiff.forward_ops(graph)), 16.0)
        self.assertEqual(float(autodiff.backward(graph, out, [x])[0]), 8.0)


class TestGradCheck(unittest.TestCase):
    """Every op against central finite differences at random points."""

    points = 20

    def check(self, build, shape, tolerance=1e-5, seed=0, offset=0.0):
        rng = np.random.default_rng(seed)
        for _ in range(self.points):
            point = rng.normal(size=shape) + offset
            error = grad_check(build, point, step=1e-5)
            self.assertLess(error, tolerance)

    def test_matmul(self):
        w = np.random.default_rng(1).normal(size=(4, 3))
        self.check(lambda g, x: g.sum(g.matmul(x, g.constant(w))), (2, 4),
                   tolerance=1e-7)

    def test_add_sub_mul(self):
        c = np.random.default_rng(2).normal(size=(3,))
        self.check(lambda g, x: g.sum(g.mul(g.sub(x, g.constant(c)),
                                            g.add(x, g.constant(c)))), (3,))

    def test_scale(self):
        self.check(lambda g, x: g.sum(g.scale(x, -3.5)), (4,),
                   tolerance=1e-9)

    def test_affine_relu_ce(self):
        rng = np.random.default_rng(4)
        w1, b1 = rng.normal(size=(6, 5)), rng.normal(size=5)
        w2, b2 = rng.normal(size=(5, 3)), rng.normal(size=3)

        def network(g, x):
            hidden = g.relu(g.affine(x, g.constant(w1), g.constant(b1)))
            logits = g.affine(hidden, g.constant(w2), g.constant(b2))
            return g.softmax_ce(logits, [0, 2])

        self.check(network, (2, 6))

    def test_tanh_square(self):
        self.check(lambda g, x: g.sum(g.square(g.tanh(x))), (5,))

    def test_reductions(self):
        self.check(lambda g, x: g.sum(g.square(g.mean(x, axis=0))), (3, 4))
        self.check(lambda g, x: g.mean(g.square(g.sum(x, axis=1))), (3, 4))

    def test_logsumexp(self):
        self.check(lambda g, x: g.sum(g.logsumexp(x)), (3, 4),
                   tolerance=1e-6)

    def test_select(self):
        self.check(lambda g, x: g.sum(g.square(g.select(x, [1, 0, 2]))),
                   (3, 3))

    def test_reshape(self):
        self.check(lambda g, x: g.sum(g.square(g.reshape(x, (2, 6)))),
                   (3, 4))

    def test_linear_map_is_exact(self):
        """a pure linear map checks to 1e-9"""
        w = np.array([1.0, -2.0, 0.5, 3.0, 1.5])
        self.assertLess(grad_check(
            lambda g, x: g.sum(g.mul(x, g.constant(w))),
            np.ones(5), step=1e-5), 1e-9)

    def test_step_range(self):
        """steps outside [1e-7, 1e-3] are rejected"""
        with self.assertRaises(ValueError):
            grad_check(lambda g, x: g.sum(x), np.ones(2), step=1e-2)

    def test_non_finite(self):
        """non-finite intermediates raise GradientCheckError"""
        with self.assertRaises(GradientCheckError):
            grad_check(lambda g, x: g.sum(g.scale(x, np.inf)), np.ones(2))


if __name__ == '__main__':
    unittest.main()
