import numpy as np
import pytest

from qabot.tensor import Tape, Tensor, backward


def finite_difference(func, tensors, h=1e-5):
    """Central finite-difference gradients of a scalar-valued func.

    ``func`` takes the tensors and returns a plain float computed without
    any tape. Independent of the reverse-mode path it is used to check.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        g_flat = g.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = func(*tensors)
            flat[i] = original - h
            down = func(*tensors)
            flat[i] = original
            g_flat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_gradients(build, tensors):
    """Tape gradients of ``build`` (tensors -> scalar Tensor) at the leaves."""
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with Tape():
        out = build(*tensors)
        backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def assert_close_grads(analytic, numeric, rel_tol=1e-4, abs_floor=1e-7):
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3)
        rel = np.abs(a - n) / denom
        mask = np.abs(a - n) > abs_floor
        assert not np.any(rel[mask] > rel_tol), (
            f"gradient mismatch: max rel err {rel[mask].max()}"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_tensor(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)
