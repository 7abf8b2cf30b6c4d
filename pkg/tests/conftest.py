import itertools

import numpy as np
import pytest

from wisynth.graph import IlfSpec, Label, LabelGraph, Role

from oracles import set_relation

# species-level extensions of the animal example: each label is the set of
# leaf species it covers
ANIMAL_SETS = {
    "dog": {"husky", "bulldog"},
    "wolf": {"grey_wolf"},
    "cat": {"bengal", "tabby"},
    "lion": {"lion"},
    "caninae": {"husky", "bulldog", "grey_wolf"},
    "felidae": {"bengal", "tabby", "lion"},
    "domestic_animals": {"husky", "bulldog", "bengal", "tabby"},
    "wild_animals": {"grey_wolf", "lion"},
    "husky": {"husky"},
    "bengal_cat": {"bengal"},
}
ANIMAL_DESIRED = ["dog", "wolf", "cat", "lion"]
ANIMAL_SEEN = ["caninae", "felidae", "domestic_animals", "wild_animals", "husky", "bengal_cat"]


def graph_from_sets(desired, seen, sets) -> LabelGraph:
    names = list(desired) + list(seen)
    labels = [Label(i, n, Role.DESIRED if n in desired else Role.SEEN) for i, n in enumerate(names)]
    rel = {(i, j): set_relation(frozenset(sets[names[i]]), frozenset(sets[names[j]]))
           for i, j in itertools.combinations(range(len(names)), 2)}
    return LabelGraph(labels, rel)


@pytest.fixture
def animals() -> LabelGraph:
    return graph_from_sets(ANIMAL_DESIRED, ANIMAL_SEEN, ANIMAL_SETS)


@pytest.fixture
def animal_ilfs(animals):
    g = animals
    return [IlfSpec(0, (g.id_of("caninae"), g.id_of("felidae"))),
            IlfSpec(1, (g.id_of("domestic_animals"), g.id_of("wild_animals"))),
            IlfSpec(2, (g.id_of("husky"), g.id_of("bengal_cat")))]


@pytest.fixture
def twins() -> LabelGraph:
    """Seen dog contains desired husky and bulldog; nothing else separates them."""
    return LabelGraph.from_names(["husky", "bulldog"], ["dog"],
                                 {("husky", "dog"): "subsumed", ("bulldog", "dog"): "subsumed"})


@pytest.fixture
def twins_fixed() -> LabelGraph:
    return LabelGraph.from_names(
        ["husky", "bulldog"], ["dog", "arctic_animals"],
        {("husky", "dog"): "subsumed", ("bulldog", "dog"): "subsumed",
         ("husky", "arctic_animals"): "subsumed", ("bulldog", "arctic_animals"): "exclusive",
         ("dog", "arctic_animals"): "overlapping"})


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
