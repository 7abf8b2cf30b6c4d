import json

import numpy as np
import pytest

from wisynth import io
from wisynth.cli import main
from wisynth.graph import ABSTAIN, IlfSpec, LabelGraph
from wisynth.model import Family, build_plrm, build_wslg


def run(*argv):
    return main([str(a) for a in argv])


def files(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*"))
            if p.is_file()}


@pytest.fixture
def bundle(tmp_path):
    out = tmp_path / "task"
    assert run("simulate", "--out", out, "--seed", 3, "--m", 150, "--features-dim", 4,
               "--kind-weights", 0.7, 0.2, 0.1) == 0
    return out


class TestCanonicalJson:
    def test_sorted_keys_and_float_format(self):
        text = io.dumps({"b": 0.1, "a": [1, 2.0, None, True]}, indent=None)
        assert text == '{"a":[1,2.0,null,true],"b":0.10000000000000001}'

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            io.dumps(float("nan"))

    def test_round_trip_graph_ilfs_model(self, animals, animal_ilfs, tmp_path):
        m = build_plrm(animals, animal_ilfs)
        m = m.with_theta(np.random.default_rng(0).uniform(0, 1, m.n_factors))
        for obj in (io.graph_to_dict(animals), io.ilfs_to_dict(animals, animal_ilfs),
                    io.model_to_dict(m)):
            text = io.dumps(obj)
            assert io.dumps(io.loads(text)) == text
        back = io.model_from_dict(io.loads(io.dumps(io.model_to_dict(m))))
        assert np.array_equal(back.theta, m.theta)
        assert back.dependencies == m.dependencies
        assert io.graph_from_dict(io.graph_to_dict(animals)) == animals

    def test_tampered_model_rejected(self, animals, animal_ilfs):
        d = io.model_to_dict(build_plrm(animals, animal_ilfs))
        d["graph"]["labels"][0]["name"] = "puppy"
        with pytest.raises(ValueError, match="hash"):
            io.model_from_dict(d)

    def test_posterior_records(self):
        probs = np.array([[0.25, 0.75], [1.0, 0.0]])
        recs = io.posteriors_to_records(probs, ["a", "b"])
        back, names = io.posteriors_from_records(list(reversed(recs)))
        assert names == ["a", "b"] and np.array_equal(back, probs)


class TestCsv:
    def test_abstain_token_and_round_trip(self, tmp_path):
        ilfs = [IlfSpec(7, (1, 2)), IlfSpec(3, (2,))]
        out = np.array([[1, ABSTAIN], [ABSTAIN, 2]])
        path = tmp_path / "o.csv"
        io.write_outputs_csv(path, ilfs, out)
        assert path.read_text() == "7,3\n1,-\n-,2\n"
        np.testing.assert_array_equal(io.read_outputs_csv(path, ilfs), out)
        # columns are matched by ILF id, not position
        np.testing.assert_array_equal(io.read_outputs_csv(path, ilfs[::-1]), out[:, ::-1])

    def test_bad_entries(self, tmp_path):
        path = tmp_path / "o.csv"
        path.write_text("0\nx\n")
        with pytest.raises(ValueError, match="bad output"):
            io.read_outputs_csv(path)
        path.write_text("0\n1\n")
        with pytest.raises(ValueError, match="no column"):
            io.read_outputs_csv(path, [IlfSpec(5, (1,))])

    def test_matrix_round_trip(self, tmp_path):
        X = np.random.default_rng(0).standard_normal((4, 3))
        io.write_matrix_csv(tmp_path / "x.csv", X)
        assert np.array_equal(io.read_matrix_csv(tmp_path / "x.csv"), X)


class TestCheck:
    def write_graph(self, tmp_path, graph):
        path = tmp_path / "graph.json"
        io.write_json(path, io.graph_to_dict(graph))
        return path

    def test_consistent_distinguishable(self, tmp_path, animals, capsys):
        assert run("check", self.write_graph(tmp_path, animals)) == 0
        assert "consistency: ok" in capsys.readouterr().out

    def test_inconsistent_lists_triangle(self, tmp_path, capsys):
        g = LabelGraph.from_names([], ["husky", "caninae", "dog"], {
            ("husky", "caninae"): "subsuming", ("caninae", "dog"): "subsuming",
            ("dog", "husky"): "subsuming"})
        assert run("check", self.write_graph(tmp_path, g)) != 0
        out = capsys.readouterr().out
        assert "inconsistent triangle" in out and "husky" in out

    def test_indistinct_lists_pair(self, tmp_path, twins, capsys):
        assert run("check", self.write_graph(tmp_path, twins)) != 0
        assert "indistinguishable pair: husky, bulldog" in capsys.readouterr().out

    def test_json_format(self, tmp_path, twins, capsys):
        assert run("check", self.write_graph(tmp_path, twins), "--format", "json") == 1
        doc = json.loads(capsys.readouterr().out)
        assert doc["consistent"] and doc["indistinct_pairs"] == [["husky", "bulldog"]]

    def test_bundle_with_ilfs(self, bundle, capsys):
        assert run("check", bundle / "graph.json", "--ilfs", bundle / "ilfs.json",
                   "--outputs", bundle / "outputs.csv") == 0
        assert "ilf 0:" in capsys.readouterr().out

    def test_missing_file_is_usage_error(self, tmp_path, capsys):
        assert run("check", tmp_path / "nope.json") == 2
        assert "error" in capsys.readouterr().err


class TestFit:
    def test_plrm_and_wslg(self, bundle, tmp_path):
        common = ["--graph", bundle / "graph.json", "--ilfs", bundle / "ilfs.json",
                  "--outputs", bundle / "outputs.csv", "--epochs", 2]
        assert run("fit", *common, "--out", tmp_path / "plrm.json") == 0
        assert run("fit", *common, "--kind", "wslg", "--out", tmp_path / "wslg.json") == 0
        w = io.model_from_dict(io.read_json(tmp_path / "wslg.json"))
        assert {d.family for d in w.dependencies} == {Family.PSEUDO_ACCURACY}
        log = io.read_jsonl(tmp_path / "plrm.log.jsonl")
        assert [e["epoch"] for e in log] == [0, 1, 2]

    def test_full_batch_trainer(self, bundle, tmp_path):
        assert run("fit", "--graph", bundle / "graph.json", "--ilfs", bundle / "ilfs.json",
                   "--outputs", bundle / "outputs.csv", "--trainer", "full-batch",
                   "--iterations", 5, "--no-unknown", "--out", tmp_path / "m.json") == 0
        log = io.read_jsonl(tmp_path / "m.log.jsonl")
        assert len(log) == 6 and log[-1]["exact_nll"] <= log[0]["exact_nll"]
        assert not io.model_from_dict(io.read_json(tmp_path / "m.json")).include_unknown

    def test_refuses_indistinct_graph(self, tmp_path, capsys):
        out = tmp_path / "bad"
        assert run("simulate", "--out", out, "--force-indistinct", "--m", 60) == 0
        args = ["fit", "--graph", out / "graph.json", "--ilfs", out / "ilfs.json",
                "--outputs", out / "outputs.csv", "--epochs", 1, "--out", tmp_path / "m.json"]
        assert run(*args) == 1
        assert "distinguishability sanity test" in capsys.readouterr().err
        assert not (tmp_path / "m.json").exists()
        assert run(*args, "--allow-indistinct") == 0


class TestPipelines:
    def label_model_pipeline(self, bundle, out):
        out.mkdir()
        g, f, o = bundle / "graph.json", bundle / "ilfs.json", bundle / "outputs.csv"
        assert run("fit", "--graph", g, "--ilfs", f, "--outputs", o, "--epochs", 2,
                   "--seed", 5, "--out", out / "model.json") == 0
        assert run("predict", "--model", out / "model.json", "--outputs", o,
                   "--method", "gibbs", "--sweeps", 60, "--burn-in", 10, "--seed", 5,
                   "--out", out / "post.jsonl") == 0
        assert run("eval", "--pred", out / "post.jsonl", "--gold", bundle / "gold.csv",
                   "--graph", g, "--out", out / "metrics.json") == 0
        assert run("train-end", "--features", bundle / "features.csv", "--posteriors",
                   out / "post.jsonl", "--graph", g, "--gold", bundle / "gold.csv",
                   "--steps", 50, "--seed", 5, "--out", out / "end") == 0

    def baseline_pipeline(self, bundle, out):
        out.mkdir()
        g, f, o = bundle / "graph.json", bundle / "ilfs.json", bundle / "outputs.csv"
        for method in ("lr-mv", "w-lr-mv", "dap"):
            assert run("baseline", "--method", method, "--graph", g, "--ilfs", f,
                       "--outputs", o, "--out", out / f"{method}.jsonl") == 0
            assert run("eval", "--pred", out / f"{method}.jsonl", "--gold", bundle / "gold.csv",
                       "--graph", g, "--out", out / f"{method}.metrics.json") == 0

    def test_simulate_is_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run("simulate", "--out", tmp_path / name, "--seed", 8, "--m", 80,
                       "--features-dim", 3) == 0
        assert files(tmp_path / "a") == files(tmp_path / "b")
        assert set(files(tmp_path / "a")) == {"graph.json", "ilfs.json", "outputs.csv",
                                              "gold.csv", "spec.json", "features.csv"}
        assert run("simulate", "--out", tmp_path / "c", "--seed", 9, "--m", 80) == 0
        assert files(tmp_path / "a")["outputs.csv"] != files(tmp_path / "c")["outputs.csv"]

    def test_label_model_pipeline_is_byte_identical(self, bundle, tmp_path):
        self.label_model_pipeline(bundle, tmp_path / "a")
        self.label_model_pipeline(bundle, tmp_path / "b")
        assert files(tmp_path / "a") == files(tmp_path / "b")
        metrics = io.read_json(tmp_path / "a" / "end" / "metrics.json")
        assert set(metrics) == {"n_train", "n_test", "end_model", "label_model"}
        assert metrics["n_test"] == 45

    def test_baseline_pipeline_is_byte_identical(self, bundle, tmp_path):
        self.baseline_pipeline(bundle, tmp_path / "a")
        self.baseline_pipeline(bundle, tmp_path / "b")
        assert files(tmp_path / "a") == files(tmp_path / "b")
        rec = io.read_jsonl(tmp_path / "a" / "lr-mv.jsonl")[0]
        assert "<unknown>" in rec["p"] and sum(rec["p"].values()) == 1.0

    def test_eval_prints_metrics(self, bundle, tmp_path, capsys):
        self.baseline_pipeline(bundle, tmp_path / "a")
        capsys.readouterr()
        assert run("eval", "--pred", tmp_path / "a" / "lr-mv.jsonl", "--gold",
                   bundle / "gold.csv", "--graph", bundle / "graph.json") == 0
        assert 0 <= json.loads(capsys.readouterr().out)["accuracy"] <= 1
