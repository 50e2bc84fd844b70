"""A tour of the reverse-mode engine behind every model in this package.

Builds a few small graphs out of Tensor operations, backpropagates, and
cross-checks one analytic gradient against central finite differences.
Everything here runs on float64 numpy arrays; there is no framework
underneath.
"""

import numpy as np

from laneformer.autodiff import (
    Tensor,
    add,
    backpropagate,
    grad_check,
    matmul,
    reduce_sum,
    relu,
    row_softmax,
)


def main():
    rng = np.random.default_rng(0)

    # --- a two-layer perceptron, by hand -----------------------------------
    x = Tensor(rng.normal(size=(4, 3)))
    w1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    hidden = relu(matmul(x, w1))
    loss = reduce_sum(matmul(hidden, w2))
    backpropagate(loss)

    print("loss value:", float(loss.data))
    print("w1 gradient shape:", w1.grad.shape)
    print("w2 gradient shape:", w2.grad.shape)

    # compare one entry of w2.grad against a central difference
    i, j = 2, 1
    h = 1e-6
    base = w2.data[i, j]
    w2.data[i, j] = base + h
    up = float(reduce_sum(matmul(relu(matmul(x, w1)), w2)).data)
    w2.data[i, j] = base - h
    down = float(reduce_sum(matmul(relu(matmul(x, w1)), w2)).data)
    w2.data[i, j] = base
    numeric = (up - down) / (2 * h)
    print(f"w2.grad[{i},{j}] analytic {w2.grad[i, j]:.10f} "
          f"vs numeric {numeric:.10f}")

    # --- the bundled checker does this for every input entry ----------------
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

    def f(a, b):
        return reduce_sum(row_softmax(add(a, b)))

    report = grad_check(f, [a, b], h=1e-6, tol=1e-6)
    print("grad_check passed:", report.passed,
          f"(max rel error {report.max_error:.2e})")

    # gradients accumulate across shared subexpressions
    c = Tensor(np.array([[2.0]]), requires_grad=True)
    double = add(c, c)
    quad = add(double, double)
    backpropagate(reduce_sum(quad))
    print("d(4c)/dc accumulated through a diamond graph:", float(c.grad[0, 0]))


if __name__ == "__main__":
    main()
