import numpy as np
import pytest

from anholo.algebroid import AlgebroidSpec
from anholo.expressions import compile_field
from anholo.jets import ScalarField

XVARS3 = ("x1", "x2", "x3")


def eps3(a, b, c):
    return float((a - b) * (b - c) * (c - a)) / 2.0


def build_so3() -> AlgebroidSpec:
    """Rotation-generator anchor on a 3D chart with constant antisymmetric
    structure functions: rho rows (0, x3, -x2), (-x3, 0, x1), (x2, -x1, 0),
    C^c_ab = eps(a, b, c)."""
    rows = [["0", "x3", "-x2"], ["-x3", "0", "x1"], ["x2", "-x1", "0"]]
    rho = np.array(
        [[compile_field(t, XVARS3) for t in row] for row in rows], dtype=object
    )
    c = np.empty((3, 3, 3), dtype=object)
    for f in range(3):
        for a in range(3):
            for b in range(3):
                c[f, a, b] = ScalarField.constant(eps3(a, b, f), 3)
    return AlgebroidSpec(3, 3, rho, c, name="so3")


@pytest.fixture(scope="session")
def so3():
    return build_so3()


@pytest.fixture(scope="session")
def trivial2():
    return AlgebroidSpec.trivial(2)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260819)
