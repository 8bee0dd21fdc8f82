import numpy as np
import pytest

from honeyvault import kernels
from honeyvault.authn import enrollment_template
from honeyvault.facespace import fit_face_space
from honeyvault.synth import make_toy_corpus
from honeyvault.vault import create_vault, fabricate_usernames

BACKENDS = kernels.available_backends()


@pytest.fixture(scope="session")
def toy():
    """300 faces from a planted d=80 model, and the face space fitted to them."""
    pairs, truth = make_toy_corpus(7, 300, 50, 200, 80)
    space = fit_face_space(pairs, 80, 80, 80)
    return pairs, truth, space


@pytest.fixture(scope="session")
def space(toy):
    return toy[2]


@pytest.fixture(scope="session")
def small_vault(toy):
    """50 enrolled toy users."""
    pairs, _, space = toy
    names = fabricate_usernames(50, seed=11, stream="test-users")
    entries = [(u, x, g) for u, (x, g) in zip(names, pairs[:50])]
    return create_vault(space, entries), entries


@pytest.fixture(scope="session")
def toy_templates(toy):
    pairs, _, space = toy
    return np.array([enrollment_template(space, x, g) for x, g in pairs])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records and prints one acceptance line."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
