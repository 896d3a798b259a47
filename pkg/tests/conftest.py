import numpy as np
import pytest
from hypothesis import strategies as st

from plunder.envs import ObservationModel, Trajectory, get_env
from plunder.pdsl import LENGTH, VELOCITY, And, Or, Policy, Rule, Var, flp, lgs, make_domain, minus


@pytest.fixture(scope="session")
def ss():
    return get_env("ss")


@pytest.fixture(scope="session")
def mg():
    return get_env("mg")


def toy_domain():
    return make_domain("toy", ("L", "R"), {"x": LENGTH, "y": LENGTH, "v": VELOCITY})


def toy_policy(dom=None):
    dom = toy_domain() if dom is None else dom
    return Policy((Rule("L", lgs(Var("x"), 0.5, 3.0), "R"), Rule("R", flp(0.3), "L")), dom)


def toy_model(dom=None, sigma=1.0):
    dom = toy_domain() if dom is None else dom

    def mean(a, s):
        x = np.asarray(s["x"], dtype=float)
        return (np.zeros_like(x) + (1.0 if a == "R" else -1.0))[..., None]

    return ObservationModel(dom, ("z",), (sigma,), mean)


def toy_trajectory():
    return Trajectory({"x": [0.0, 0.4, 0.8, 1.2, 1.6], "y": [0.0] * 5, "v": [1.0] * 5},
                      np.array([[-0.5], [0.3], [1.2], [-0.2], [0.9]]))


@pytest.fixture
def toy():
    dom = toy_domain()
    return dom, toy_policy(dom), toy_model(dom), toy_trajectory()


# random guards over the toy domain's length features

features = st.sampled_from([Var("x"), Var("y"), minus(Var("x"), Var("y"))])
reals = st.floats(-3, 3, allow_nan=False)
probs = st.floats(0.01, 0.99)
leaves = st.one_of(
    st.builds(lambda r: flp(r), probs),
    st.builds(lambda f, x0, k: lgs(f, x0, k), features, reals, st.floats(-4, 4, allow_nan=False)),
)
guards = st.recursive(
    leaves,
    lambda inner: st.one_of(st.builds(And, inner, inner), st.builds(Or, inner, inner)),
    max_leaves=4,
)


@st.composite
def policies(draw, dom=None):
    dom = toy_domain() if dom is None else dom
    rules = draw(st.lists(st.tuples(st.sampled_from(dom.actions), guards, st.sampled_from(dom.actions)), max_size=5))
    return Policy(tuple(Rule(a, g, b) for a, g, b in rules if a != b), dom)
