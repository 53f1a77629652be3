"""Finite-difference gradient verification.

The central-difference oracle is the ground truth for every analytic
gradient in the package; it deliberately re-evaluates the user function
under no_grad so it shares nothing with the tape machinery it checks.
"""

from __future__ import annotations

from .tensor import ShapeError, Tensor, backward, no_grad, tape


def grad_check(f, tensors, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps the tensors to a scalar Tensor. Relative error per coordinate
    is |analytic - numeric| / max(1, |analytic|).
    """
    tensors = list(tensors)
    for t in tensors:
        t.zero_grad()
    loss = f(*tensors)
    if loss.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {loss.shape}")
    backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else None for t in tensors]
    for t in tensors:
        t.zero_grad()

    max_err = 0.0
    with no_grad():
        for t, ga in zip(tensors, analytic):
            if not t.requires_grad:
                continue
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(*tensors).data)
                flat[i] = orig - h
                fm = float(f(*tensors).data)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * h)
                err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
                if err > max_err:
                    max_err = err
    tape().clear()
    return max_err
