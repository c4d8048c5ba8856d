import numpy as np
import pytest
import torch

torch.set_default_dtype(torch.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def logits(rng, b=4, k=5, scale=2.0):
    return torch.tensor(rng.normal(0, scale, size=(b, k)), dtype=torch.float64)


def central_fd(fn, z: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central finite-difference gradient of scalar ``fn`` at ``z`` (float64)."""
    z = z.detach().clone()
    g = torch.zeros_like(z)
    flat, gflat = z.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        fp = float(fn(z))
        flat[i] = old - h
        fm = float(fn(z))
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def autograd_grad(fn, z: torch.Tensor) -> torch.Tensor:
    z = z.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(fn(z), z)
    return g


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / denom


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
