import sys

import numpy as np
import pytest
import torch

torch.set_num_threads(1)


class ReluSigns:
    """Records the sign pattern of every ReLU input during a forward pass."""

    def __init__(self, module):
        self.parts = []
        self.handles = [m.register_forward_pre_hook(self._hook)
                        for m in module.modules() if isinstance(m, torch.nn.ReLU)] if module is not None else []

    def _hook(self, mod, inputs):
        self.parts.append((inputs[0] > 0).flatten())

    def take(self):
        sig = torch.cat(self.parts) if self.parts else torch.zeros(0, dtype=torch.bool)
        self.parts = []
        return sig

    def close(self):
        for h in self.handles:
            h.remove()


def fd_grad(fn, tensor, eps=1e-4, signs=None, refine=3):
    """Central finite differences of scalar ``fn()`` w.r.t. every element of ``tensor``.

    With a ``ReluSigns`` recorder, an element whose stencil flips some ReLU
    input is retried with a step shrunk by 10x up to ``refine`` times.
    Returns the gradient, a mask of elements that needed a smaller step and
    a mask of elements that still crossed a kink.
    """
    grad = torch.zeros_like(tensor)
    small = torch.zeros_like(tensor, dtype=torch.bool)
    kink = torch.zeros_like(tensor, dtype=torch.bool)
    fn()
    base = signs.take() if signs else None
    flat, gflat = tensor.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        for r in range(refine + 1 if signs else 1):
            h = eps / 10 ** r
            flat[i] = orig + h
            hi = fn().item()
            sig_hi = signs.take() if signs else None
            flat[i] = orig - h
            lo = fn().item()
            sig_lo = signs.take() if signs else None
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * h)
            crossed = bool(signs) and not (torch.equal(sig_hi, base) and torch.equal(sig_lo, base))
            if not crossed:
                break
        small.view(-1)[i] = r > 0
        kink.view(-1)[i] = crossed
    return grad, small, kink


def rel_err(a, b):
    scale = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / scale


def check_grads(fn, tensors, eps=1e-4, tol=1e-4, module=None, min_coverage=0.9):
    """Compare autograd with central differences per tensor; return the worst relative error.

    When ``module`` is given, elements whose stencil crosses a ReLU kink
    are differenced with a smaller step instead. Elements still crossing a
    kink after refinement are left out, and at least ``min_coverage`` of
    all elements must be compared.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    signs = ReluSigns(module) if module is not None else None
    worst, compared, total = 0.0, 0, 0
    try:
        for t in tensors:
            analytic = t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
            with torch.no_grad():
                numeric, _, kink = fd_grad(fn, t, eps, signs)
            keep = ~kink
            assert keep.any(), f"tensor {tuple(t.shape)}: every element crosses a kink"
            compared += int(keep.sum())
            total += keep.numel()
            err = rel_err(analytic[keep], numeric[keep])
            worst = max(worst, err)
            assert err < tol, f"tensor {tuple(t.shape)}: relative error {err:.3e}"
    finally:
        if signs:
            signs.close()
    assert compared >= min_coverage * total, f"only {compared}/{total} elements free of kinks"
    return worst


def projected(out, seed=0):
    """Fixed random projection of a tensor to a scalar; a plain sum hides BatchNorm-invariant directions."""
    g = torch.Generator().manual_seed(seed)
    w = torch.randn(out.shape, generator=g, dtype=out.dtype)
    return (out * w).sum()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is not None and acc.RESULTS:
        terminalreporter.section("acceptance")
        for line in acc.RESULTS:
            terminalreporter.write_line(line)
