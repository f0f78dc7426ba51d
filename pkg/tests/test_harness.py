import dataclasses
import json
import math

import numpy as np
import pytest

from graspview.errors import ConfigError
from graspview.geometry import ShapeClass
from graspview.grasping import CandidateParams, HandGeometry
from graspview.harness import cli
from graspview.harness.config import (
    ExperimentConfig,
    config_from_dict,
    derive_seed,
    derive_seeds,
    load_config,
)
from graspview.harness.corpus import CorpusSpec, build_corpus
from graspview.harness.pipeline import (
    SequenceOrder,
    build_map,
    class_objects,
    corpus_meshes,
    detect,
    map_views,
    run_offline_eval,
    run_sequence_eval,
)
from graspview.harness.report import emit_report, emit_sequence_report
from graspview.simcam import viewpoint_to_pose
from graspview.viewmap import load_map

SMALL_TOML = """
views_per_object = 3
eval_views = 20
eval_trials = 2
sequence_trials = 3
n_values = [1, 5]
master_seed = 7

[corpus]
n_box = 2
n_cylinder = 1

[candidates]
n_samples = 30
"""


@pytest.fixture(scope="module")
def small():
    return config_from_dict({
        "views_per_object": 3, "eval_views": 20, "eval_trials": 2, "sequence_trials": 3, "n_values": [1, 5],
        "master_seed": 7, "corpus": {"n_box": 2, "n_cylinder": 1}, "candidates": {"n_samples": 30},
    })


@pytest.fixture(scope="module")
def small_map(small):
    return build_map(small, "box")


class TestConfig:
    def test_toml(self, tmp_path, small):
        p = tmp_path / "c.toml"
        p.write_text(SMALL_TOML, encoding="utf-8")
        cfg = load_config(p)
        assert cfg.corpus.n_box == 2 and cfg.candidates.n_samples == 30
        assert cfg.config_hash == small.config_hash

    def test_hash_ignores_key_order(self):
        a = config_from_dict({"master_seed": 1, "views_per_object": 4})
        b = config_from_dict({"views_per_object": 4, "master_seed": 1})
        assert a.config_hash == b.config_hash
        assert a.config_hash != a.with_seed(2).config_hash
        assert len(a.config_hash) == 64

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            config_from_dict({"bogus": 1})
        with pytest.raises(ConfigError):
            config_from_dict({"hand": {"palm": 1}})

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            config_from_dict({"views_per_object": 0})
        with pytest.raises(ConfigError):
            config_from_dict({"hand": {"aperture": -1.0}})
        with pytest.raises(ValueError):
            ExperimentConfig().with_seed(-1)

    def test_missing_and_malformed_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("views_per_object = = 3", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.views_per_object == 80
        assert cfg.camera.min_depth == 0.20
        assert cfg.neighborhood.max_translation == 0.02
        assert cfg.neighborhood.max_rotation == pytest.approx(math.radians(20))
        assert cfg.smoothing.variance == 0.2

    def test_seed_derivation(self):
        assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
        assert len({derive_seed(0, "a", k) for k in range(100)}) == 100
        assert derive_seed(0, "a") != derive_seed(1, "a")
        assert derive_seed(2 ** 64 - 1, "x") < 2 ** 64
        s = derive_seeds(3, 10, "score", 1)
        assert s.shape == (10,) and np.array_equal(s, derive_seeds(3, 10, "score", 1))
        assert derive_seeds(3, 0, "x").shape == (0,)


class TestCorpus:
    def test_class_sizes(self):
        meshes = build_corpus(CorpusSpec(n_box=25, n_cylinder=14))
        assert len(meshes) == 39
        assert sum(m.shape_class is ShapeClass.BOX for m in meshes) == 25
        assert sum(m.shape_class is ShapeClass.CYLINDER for m in meshes) == 14

    def test_degenerate_interval(self):
        (box,) = build_corpus(CorpusSpec(n_box=1, n_cylinder=0, box_dims=((0.05, 0.05),) * 3))
        np.testing.assert_array_equal(box.vertices.max(axis=0) - box.vertices.min(axis=0), [0.05] * 3)

    def test_deterministic(self):
        a = build_corpus(CorpusSpec(seed=4))
        b = build_corpus(CorpusSpec(seed=4))
        assert all(np.array_equal(x.vertices, y.vertices) for x, y in zip(a, b))

    def test_validation(self):
        with pytest.raises(ValueError):
            CorpusSpec(cylinder_radius=(0.05, 0.01))
        with pytest.raises(ValueError):
            CorpusSpec(n_box=-1)


class TestBuildMap:
    def test_nothing_fits(self):
        # a closing-region requirement no view can meet: zero candidates anywhere
        cfg = ExperimentConfig(corpus=CorpusSpec(n_box=1, n_cylinder=0), views_per_object=5,
                               candidates=CandidateParams(min_points_in_closing_region=10 ** 6))
        m = build_map(cfg, "box")
        assert m.sample_count == 0
        for c in range(3):
            assert np.all(m.channels[c] == 0)
        assert np.all(np.isnan(m.channel("accuracy")))

    def test_sample_count_bookkeeping(self, small, small_map):
        total = 0
        for obj in class_objects(small, "box"):
            mesh = corpus_meshes(small.corpus)[obj]
            for j, v in enumerate(map_views(small, obj)):
                total += len(detect(small, mesh, viewpoint_to_pose(v), ("map", obj, j))[1])
        assert small_map.sample_count == total > 0

    def test_parallel_matches_serial(self, small, small_map):
        assert build_map(small, "box", jobs=2).identical(small_map)

    def test_meta(self, small, small_map):
        assert small_map.meta["shape_class"] == "box"
        assert small_map.meta["config_hash"] == small.config_hash
        assert small_map.meta["objects"] == 2

    def test_empty_class(self):
        cfg = ExperimentConfig(corpus=CorpusSpec(n_box=1, n_cylinder=0))
        with pytest.raises(ValueError):
            build_map(cfg, "cylinder")


class TestOffline:
    def test_random_twice_identical(self, small, small_map):
        a = run_offline_eval(small, small_map, ["random", "random"])
        b = run_offline_eval(small, small_map, ["random"])
        assert a.trials[0]["strategies"][0] == a.trials[0]["strategies"][1] == b.trials[0]["strategies"][0]

    def test_conservation(self, small, small_map):
        res = run_offline_eval(small, small_map)
        assert {r.strategy for r in res.rows} == {"smart", "head_on", "random"}
        for rec in res.trials:
            for s in rec.get("strategies", []):
                assert s["after_pruning"] <= s["detected"]
                assert s["true_positives"] <= s["positives"]
                fn_fp = s["after_pruning"] - s["true_positives"] - s["true_negatives"]
                assert fn_fp >= s["positives"] - s["true_positives"]
                assert len(s["positive_scores"]) == s["positives"]
        for row in res.rows:
            assert row.true_positives <= row.positives
            assert math.isnan(row.accuracy) or 0 <= row.accuracy <= 1
            assert row.histogram()[1].sum() == row.positives

    def test_parallel_matches_serial(self, small, small_map):
        a = run_offline_eval(small, small_map)
        b = run_offline_eval(small, small_map, jobs=2)
        assert json.dumps(a.trials, sort_keys=True) == json.dumps(b.trials, sort_keys=True)

    def test_report_files(self, small, small_map, tmp_path):
        res = run_offline_eval(small, small_map)
        emit_report(res, tmp_path / "a", small.config_hash, small.master_seed, small_map)
        emit_report(res, tmp_path / "b", small.config_hash, small.master_seed, small_map)
        for name in ("results.csv", "topn_curves.csv", "score_hist.csv", "trials.jsonl", "map_export.csv"):
            a = (tmp_path / "a" / name).read_bytes()
            assert a == (tmp_path / "b" / name).read_bytes()
            assert a.decode().splitlines()[-1] == f"# config_sha256={small.config_hash} master_seed=7"
        hist = (tmp_path / "a" / "score_hist.csv").read_text().splitlines()[1:-1]
        assert sum(int(line.split(",")[-1]) for line in hist) == sum(r.positives for r in res.rows)

    def test_empty_report(self, tmp_path):
        emit_report(None, tmp_path, "abc", 0)
        lines = (tmp_path / "results.csv").read_text().splitlines()
        assert lines == ["strategy,shape_class,trials,detected,after_pruning,positives,true_positives,accuracy",
                         "# config_sha256=abc master_seed=0"]


class TestSequence:
    def test_rejects_zero_trials(self, small, small_map):
        with pytest.raises(ValueError):
            run_sequence_eval(small, small_map, trials=0)

    def test_trace_shape(self, small, small_map, tmp_path):
        res = run_sequence_eval(small, small_map)
        assert [r.order for r in res.rows] == [o.value for o in SequenceOrder]
        for rec in res.traces:
            want = {"V1": 1, "V1_V2": 2, "V1_V3": 2, "V1_V2_V3": 3}[rec["order"]]
            if "reason" not in rec:
                assert len(rec["views"]) == want
        emit_sequence_report(res, tmp_path, small.config_hash, 7)
        assert (tmp_path / "sequence.csv").read_text().splitlines()[0] == "order,trials,successes,success_rate"

    def test_orders_share_first_view(self, small, small_map):
        res = run_sequence_eval(small, small_map)
        by_trial = {}
        for rec in res.traces:
            by_trial.setdefault(rec["trial"], []).append(rec["views"][0])
        for views in by_trial.values():
            assert all(v == views[0] for v in views)


class TestCli:
    def test_missing_config(self, tmp_path):
        assert cli.main(["build-corpus", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == 2

    def test_bad_jobs(self, tmp_path):
        assert cli.main(["build-corpus", "--jobs", "0", "--out", str(tmp_path)]) == 2

    def test_bad_seed(self, tmp_path):
        assert cli.main(["build-corpus", "--seed", "-3", "--out", str(tmp_path)]) == 2

    def test_corrupt_map(self, tmp_path):
        bad = tmp_path / "bad.gvmap"
        bad.write_bytes(b"junk")
        assert cli.main(["export-map", "--map", str(bad), "--out", str(tmp_path)]) == 3

    def test_bad_object(self, tmp_path):
        assert cli.main(["render", "--object", "999", "--out", str(tmp_path)]) == 2

    def test_corpus_and_render(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL_TOML, encoding="utf-8")
        assert cli.main(["build-corpus", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert len(list((tmp_path / "corpus").glob("*.obj"))) == 3
        assert (tmp_path / "corpus" / "corpus.csv").read_text().splitlines()[-1].startswith("# config_sha256=")
        assert cli.main(["render", "--config", str(cfg), "--object", "2", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "object_002.ply").stat().st_size > 100

    def test_map_round_trip(self, tmp_path, small_map):
        from graspview.viewmap import save_map
        save_map(small_map, tmp_path / "m.gvmap")
        assert cli.main(["export-map", "--map", str(tmp_path / "m.gvmap"), "--out", str(tmp_path)]) == 0
        assert load_map(tmp_path / "m.gvmap").identical(small_map)
        assert (tmp_path / "map_export.csv").exists()

    def test_global_flags_after_subcommand(self, tmp_path):
        args = cli.build_parser().parse_args(["render", "--seed", "5", "--out", "x"])
        assert args.seed == 5 and args.out == "x"
