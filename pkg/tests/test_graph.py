import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wisynth.graph import (FORBIDDEN_TRIPLETS, GraphError, IlfSpec, Label, LabelGraph, Relation,
                           Role, check_consistency, check_distinguishability,
                           check_informativeness, from_dag, non_exclusive_neighbors, relation)

from conftest import graph_from_sets
from oracles import dag_relation_by_leaves, random_graph_from_dag, realizable_triplets

E, O, SG, SD = Relation


def triple_graph(t_ab, t_bc, t_ac) -> LabelGraph:
    labels = [Label(i, n, Role.SEEN) for i, n in enumerate("abc")]
    return LabelGraph(labels, {(0, 1): t_ab, (1, 2): t_bc, (0, 2): t_ac})


class TestRelation:
    def test_inverse_is_involution(self):
        for r in Relation:
            assert r.inverse.inverse is r
        assert SG.inverse is SD and E.inverse is E and O.inverse is O

    def test_parse_accepts_names_and_short_codes(self):
        assert Relation.parse("Subsuming") is SG
        assert Relation.parse("sd") is SD
        assert Relation.parse("overlap") is O
        with pytest.raises(GraphError):
            Relation.parse("parent")

    def test_animal_relations(self, animals):
        g = animals
        assert relation(g, "dog", "caninae") is SD
        assert relation(g, "caninae", "dog") is SG
        assert relation(g, "dog", "cat") is E and relation(g, "cat", "dog") is E
        assert relation(g, "domestic_animals", "caninae") is O

    def test_self_relation_rejected(self, animals):
        with pytest.raises(GraphError):
            animals.relation("dog", "dog")

    def test_unknown_label_rejected(self, animals):
        with pytest.raises(GraphError):
            animals.relation("dog", "zebra")
        with pytest.raises(GraphError):
            animals.relation(0, 99)

    def test_orientation_is_stored_once(self):
        labels = [Label(0, "a", Role.SEEN), Label(1, "b", Role.SEEN)]
        with pytest.raises(GraphError, match="twice"):
            LabelGraph(labels, {(0, 1): "exclusive", (1, 0): "exclusive"})
        g = LabelGraph(labels, {(1, 0): "subsuming"})
        assert g.relation(0, 1) is SD

    def test_total_map_required(self):
        labels = [Label(i, n, Role.SEEN) for i, n in enumerate("abc")]
        with pytest.raises(GraphError, match="not total"):
            LabelGraph(labels, {(0, 1): "exclusive"})

    def test_desired_labels_must_be_exclusive(self):
        with pytest.raises(GraphError, match="exclusive"):
            LabelGraph.from_names(["a", "b"], [], {("a", "b"): "overlapping"})


class TestNeighbors:
    def test_animal_examples(self, animals):
        g = animals
        ids = lambda *names: frozenset(g.id_of(n) for n in names)
        assert non_exclusive_neighbors(g, "dog", ids("caninae", "felidae")) == ids("caninae")
        assert non_exclusive_neighbors(g, "dog", []) == frozenset()
        assert non_exclusive_neighbors(g, "dog", ids("caninae", "domestic_animals", "husky")) == \
            ids("caninae", "domestic_animals", "husky")

    def test_label_itself_is_dropped(self, animals):
        g = animals
        assert g.id_of("dog") not in non_exclusive_neighbors(g, "dog", [g.id_of("dog")])


class TestConsistency:
    def test_forbidden_table_matches_set_semantics(self):
        all_triplets = set(itertools.product(Relation, repeat=3))
        assert len(FORBIDDEN_TRIPLETS) == 23
        assert FORBIDDEN_TRIPLETS == all_triplets - realizable_triplets()

    def test_checker_flags_exactly_the_forbidden_rows(self):
        flagged = {t for t in itertools.product(Relation, repeat=3)
                   if not check_consistency(triple_graph(*t)).consistent}
        assert flagged == FORBIDDEN_TRIPLETS

    def test_table_examples(self):
        assert not check_consistency(triple_graph(O, SD, SG)).consistent
        assert check_consistency(triple_graph(SG, SG, SG)).consistent

    def test_cyclic_hierarchy_is_inconsistent(self):
        g = LabelGraph.from_names([], ["husky", "caninae", "dog"], {
            ("husky", "caninae"): "subsuming", ("caninae", "dog"): "subsuming",
            ("dog", "husky"): "subsuming"})
        report = check_consistency(g)
        assert not report.consistent
        assert report.violations[0].labels == (0, 1, 2)

    def test_animal_graph_is_consistent(self, animals):
        assert check_consistency(animals).consistent

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.frozensets(st.integers(0, 5), min_size=1), min_size=3, max_size=6,
                    unique=True))
    def test_sets_never_produce_a_forbidden_triangle(self, sets):
        names = [f"x{i}" for i in range(len(sets))]
        g = graph_from_sets([], names, dict(zip(names, sets)))
        assert check_consistency(g).consistent


class TestDistinguishability:
    def test_twins_flagged(self, twins):
        report = check_distinguishability(twins)
        assert report.indistinct_pairs == ((0, 1),)
        assert not report.distinguishable
        assert report.suggested_fixes == {(0, 1): ()}

    def test_symmetry_breaker_clears_flag(self, twins_fixed):
        assert check_consistency(twins_fixed).consistent
        assert check_distinguishability(twins_fixed).distinguishable

    def test_single_desired_label_is_vacuous(self):
        g = LabelGraph.from_names(["a"], ["s"], {("a", "s"): "subsumed"})
        assert check_distinguishability(g).distinguishable

    def test_adding_one_differing_seen_label_removes_flag(self, rng):
        for _ in range(30):
            g = random_graph_from_dag(rng, 3, 4)
            for yi, yj in check_distinguishability(g).indistinct_pairs:
                # a fresh leaf under yi only: subsumed by nothing, inside yi
                labels = list(g.labels) + [Label(len(g), "breaker", Role.SEEN)]
                rel = {(a, b): r for a, b, r in g.canonical_relations()}
                for lab in g.labels:
                    rel[(lab.id, len(g))] = SG if lab.id == yi or (
                        lab.role == Role.SEEN and g.relation(lab.id, yi) == SG) else E
                g2 = LabelGraph(labels, rel)
                assert (yi, yj) not in check_distinguishability(g2).indistinct_pairs


class TestInformativeness:
    def test_structural_examples(self):
        g = LabelGraph.from_names(["dog", "bird"], ["husky", "bulldog"],
                                  {("husky", "dog"): "subsumed", ("bulldog", "dog"): "subsumed",
                                   ("husky", "bird"): "exclusive", ("bulldog", "bird"): "exclusive",
                                   ("husky", "bulldog"): "exclusive"})
        ilf = IlfSpec(0, (g.id_of("husky"), g.id_of("bulldog")))
        [rep] = check_informativeness(g, [ilf])
        assert not rep.structural and rep.structural_failures == (g.id_of("dog"),)

        binary = LabelGraph.from_names(["dog", "bird"], ["husky", "not_husky"],
                                       {("husky", "dog"): "subsumed", ("husky", "bird"): "exclusive",
                                        ("not_husky", "dog"): "overlapping",
                                        ("not_husky", "bird"): "subsuming",
                                        ("husky", "not_husky"): "exclusive"})
        # the binary husky classifier can vote husky (exclusive to bird) but
        # also not_husky, which has no exclusive desired label: structurally
        # informative for bird, and for dog only through the empirical check
        [rep] = check_informativeness(binary, [IlfSpec(0, (2, 3))])
        assert rep.structural_failures == (binary.id_of("dog"),)
        outputs = np.array([[2], [3], [-1]])
        [rep] = check_informativeness(binary, [IlfSpec(0, (2, 3))], outputs)
        assert rep.empirical

    def test_empirical_failure_when_votes_always_compatible(self, animals, animal_ilfs):
        g = animals
        outputs = np.array([[g.id_of("caninae"), -1, -1]] * 5)
        reps = check_informativeness(g, animal_ilfs, outputs)
        assert reps[0].empirical is False
        assert set(reps[0].empirical_failures) == {g.id_of("dog"), g.id_of("wolf")}
        # abstentions count as outside N(y, space)
        assert reps[1].empirical is True

    def test_shape_mismatch_rejected(self, animals, animal_ilfs):
        with pytest.raises(GraphError):
            check_informativeness(animals, animal_ilfs, np.zeros((3, 2), dtype=int))

    def test_desired_label_in_output_space_rejected(self, animals):
        with pytest.raises(GraphError, match="not a seen label"):
            check_informativeness(animals, [IlfSpec(0, (0,))])


class TestFromDag:
    def test_diamond(self):
        g = from_dag([("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")],
                     {n: "seen" for n in "ABCD"})
        assert g.relation("B", "C") is O
        assert g.relation("A", "D") is SG
        assert g.relation("A", "B") is SG
        assert g.relation("D", "A") is SD

    def test_sibling_leaves_exclusive(self):
        g = from_dag([("r", "x"), ("r", "y")], {"r": "seen", "x": "desired", "y": "desired"})
        assert g.relation("x", "y") is E

    def test_cycle_rejected(self):
        with pytest.raises(GraphError, match="cycle"):
            from_dag([("a", "b"), ("b", "c"), ("c", "a")], {n: "seen" for n in "abc"})

    def test_unknown_label_rejected(self):
        with pytest.raises(GraphError):
            from_dag([("a", "z")], {"a": "seen"})

    @pytest.mark.parametrize("seed", range(10))
    def test_random_dag_matches_descendant_oracle(self, seed):
        rng = np.random.default_rng(seed)
        names = [f"n{i}" for i in range(15)]
        edges = [(names[i], names[j]) for i in range(15) for j in range(i + 1, 15)
                 if rng.random() < 0.15]
        g = from_dag(edges, {n: "seen" for n in names})
        expected = dag_relation_by_leaves(edges, names)
        got = {(a, b): r for a, b, r in g.canonical_relations()}
        assert got == expected
        assert check_consistency(g).consistent

    def test_edges_by_id(self):
        g = from_dag([(0, 1)], {"p": "seen", "c": "desired"})
        assert g.relation("p", "c") is SG


class TestFromNames:
    def test_default_and_roles(self):
        g = LabelGraph.from_names(["a", "b"], ["s"], {("a", "s"): "subsumed"}, default="exclusive")
        assert g.desired == (0, 1) and g.seen == (2,)
        assert g.relation("b", "s") is E
        assert g.role_of("s") is Role.SEEN
        assert g.name_of(2) == "s"

    def test_equality(self, animals):
        from conftest import ANIMAL_DESIRED, ANIMAL_SEEN, ANIMAL_SETS
        assert animals == graph_from_sets(ANIMAL_DESIRED, ANIMAL_SEEN, ANIMAL_SETS)
