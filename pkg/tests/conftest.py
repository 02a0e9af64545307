import numpy as np
import pytest

from fgnn import engine as E
from fgnn.engine import Graph, ParamStore
from fgnn.groups import dihedral_group, flip_group, klein_group, trivial_group


@pytest.fixture(scope="session")
def d8():
    return dihedral_group()


@pytest.fixture(scope="session")
def z2():
    return flip_group()


@pytest.fixture(scope="session")
def all_groups():
    return {"trivial": trivial_group(), "flip": flip_group(), "klein": klein_group(), "d8": dihedral_group()}


def rel_error(a, n, floor=1e-3):
    """Elementwise |a - n| / max(|a|, |n|, floor); the floor keeps near-zero
    gradients from turning round-off into large relative errors."""
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def fd_check(fn, params: ParamStore, x, h=1e-5, max_entries=40, seed=0, check_input=True):
    """Central-difference check of d/d(params, x) sum(fn(g, x) * R).

    ``fn(graph, x_tensor)`` builds the forward pass. Returns the max relative
    error over a random subset of at most ``max_entries`` entries per array.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    g = Graph(params)
    xt = g.input(x)
    out = fn(g, xt)
    R = rng.standard_normal(out.shape)
    loss = E.add_n([E.dense(E.reshape(out, (1, -1)), R.reshape(-1, 1))])
    grads = g.backward(loss, wrt=[xt])

    def value():
        return float((fn(None, E.Tensor(x)).data * R).sum())

    worst = 0.0
    arrays = [(name, params[name], grads.get(name, np.zeros_like(params[name]))) for name in params]
    if check_input:
        arrays.append(("x", x, grads[xt]))
    for _, arr, analytic in arrays:
        flat = arr.reshape(-1)
        idx = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = value()
            flat[i] = old - h
            fm = value()
            flat[i] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, float(rel_error(analytic.reshape(-1)[i], num)))
    return worst


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
