import functools
from math import pi

import numpy as np
import pytest

from spiralis.pipeline import refine
from spiralis.problem import FREE, UNBOUNDED, ProblemSpec
from spiralis.structure import ArcStructure

EX1 = ProblemSpec(0.0, 0.0, -pi / 3, 0.4, 0.4, -pi / 6, 2.0, 0.0, 0.0, UNBOUNDED)
EX2 = ProblemSpec(0.0, 0.0, -pi / 3, 0.4, 0.4, -pi / 6, 2.0, FREE, FREE, 5.0)
EX3A = ProblemSpec(0.0, 0.0, pi / 3, 0.4, 0.4, pi / 4, 0.6, 5.0, 2.0, UNBOUNDED)
EX3B = ProblemSpec(0.0, 0.0, pi / 3, 0.4, 0.4, pi / 4, 0.6, 8.0, 2.0, UNBOUNDED)

# reference refined solutions (b, arc lengths, switching times)
REFERENCE = {
    "ex1": dict(
        spec=EX1, structure="- + - +", b=15.733062270883,
        xi=(0.058051025764, 0.548479899032, 0.941948974236, 0.451520100968),
        t=(0.058051025764, 0.606530924796, 1.548479899032)),
    "ex2": dict(
        spec=EX2, structure="+ P - M", b=19.012850374851,
        xi=(0.454980338573, 0.531189265997, 0.525960064001, 0.487870331429),
        t=(0.454980338573, 0.986169604570, 1.512129668571)),
    "ex3a": dict(
        spec=EX3A, structure="- + - + -", b=48.985303304067,
        xi=(0.237659563282, 0.164288710499, 0.043943296148, 0.105089860239, 0.049018569832),
        t=(0.237659563282, 0.401948273781, 0.445891569929, 0.550981430168)),
    "ex3c": dict(
        spec=EX3B, structure="- + - 0 - + -", b=89.945849353595,
        xi=(0.190593874793, 0.125757754134, 0.024206619117, 0.139477144951,
            0.013358892816, 0.071150272188, 0.035455442002),
        t=(0.190593874793, 0.316351628926, 0.340558248044, 0.480035392994,
           0.493394285810, 0.564544557998)),
}

EX1_CRITICALS = (15.733062270883, 40.016886269449, 49.380682469500, 51.368649667030)


@functools.lru_cache(maxsize=None)
def refined(name: str):
    ref = REFERENCE[name]
    return refine(ref["spec"], ArcStructure.parse(ref["structure"]))


@pytest.fixture(params=sorted(REFERENCE))
def reference_case(request):
    return request.param, REFERENCE[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
