"""Hypothesis strategies shared by the test modules."""

import numpy as np
from hypothesis import strategies as st

from sgda import stl

SIGNALS = ("u", "v", "w")

thresholds = st.floats(-2.0, 2.0, allow_nan=False).map(lambda x: round(x, 2))
atoms = st.builds(stl.Atom, st.sampled_from(SIGNALS), st.sampled_from((">=", "<=")), thresholds)


def formulas(max_depth: int = 3):
    def extend(children):
        pairs = st.lists(children, min_size=2, max_size=3).map(tuple)
        return st.one_of(
            st.builds(stl.Not, children),
            st.builds(stl.And, pairs),
            st.builds(stl.Or, pairs),
            st.builds(stl.Globally, children),
            st.builds(stl.Eventually, children),
        )

    return st.recursive(atoms, extend, max_leaves=2 ** max_depth)


def depth(f) -> int:
    if isinstance(f, stl.Atom):
        return 0
    if isinstance(f, (stl.And, stl.Or)):
        return 1 + max(depth(c) for c in f.children)
    return 1 + depth(f.child)


@st.composite
def traces(draw, max_len: int = 50):
    n = draw(st.integers(1, max_len))
    vals = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
    return {s: np.array(draw(st.lists(vals, min_size=n, max_size=n))) for s in SIGNALS}


def random_formula(rng: np.random.Generator, depth_left: int = 3):
    """Plain-numpy generator for bulk randomized checks."""
    if depth_left == 0 or rng.random() < 0.3:
        return stl.Atom(SIGNALS[rng.integers(3)], (">=", "<=")[rng.integers(2)],
                        float(np.round(rng.uniform(-2, 2), 2)))
    kind = rng.integers(5)
    if kind == 0:
        return stl.Not(random_formula(rng, depth_left - 1))
    if kind in (1, 2):
        kids = tuple(random_formula(rng, depth_left - 1) for _ in range(rng.integers(2, 4)))
        return stl.And(kids) if kind == 1 else stl.Or(kids)
    child = random_formula(rng, depth_left - 1)
    return stl.Globally(child) if kind == 3 else stl.Eventually(child)


def random_trace(rng: np.random.Generator, max_len: int = 50):
    n = int(rng.integers(1, max_len + 1))
    # coarse grid so that exact ties (robustness 0) do occur
    return {s: np.round(rng.uniform(-3, 3, n), 1) for s in SIGNALS}
