import pytest

from dipalab.config import DEFAULT_SHOTS, ConfigError, ExperimentSpec, load_spec, spec_from_dict


def doc(**sections):
    return {"schema": 1, **sections}


class TestSpec:
    def test_defaults(self):
        spec = spec_from_dict(doc())
        assert spec.shots == (1, 5, 10, 20, 100, 200, 500, "all") == DEFAULT_SHOTS
        assert spec.seeds == (0, 1, 42, 123, 1234)
        assert spec.losses == ("ce", "fl") and spec.dipa == (False, True)
        assert spec.regime == "scratch"
        assert spec.run_count() == 160

    def test_sections(self, tmp_path):
        spec = spec_from_dict(
            doc(
                experiment={"shots": [1, "all"], "losses": ["fl"], "dipa": [True], "seeds": [3]},
                data={"dir": "d"},
                generator={"num_classes": 5, "obs_count_range": [2, 4]},
                model={"embed_dim": 16, "num_heads": 4},
                train={"learning_rate": [1e-3, 1e-2], "dipa_tau": 0.5, "max_epochs": 9},
                pretrain={"max_epochs": 3},
            ),
            base_dir=tmp_path,
        )
        assert spec.shots == (1, "all") and spec.run_count() == 2
        assert spec.data_dir == tmp_path / "d"
        assert spec.generator.obs_count_range == (2, 4)
        assert spec.model.embed_dim == 16
        assert spec.train.learning_rate == (1e-3, 1e-2) and spec.train.dipa_tau == (0.5,)
        assert spec.pretrain.max_epochs == 3

    def test_candidates(self):
        spec = spec_from_dict(
            doc(train={"learning_rate": [1e-3, 1e-2], "focal_gamma": [1.0, 2.0], "dipa_alpha": [0.3, 1.0]})
        )
        assert len(spec.train.candidates("ce", False, 0)) == 2
        assert len(spec.train.candidates("fl", False, 0)) == 4
        fl_on = spec.train.candidates("fl", True, 7)
        assert len(fl_on) == 8
        assert all(c.seed == 7 and c.dipa.enabled for c in fl_on)

    def test_with_seed(self):
        assert ExperimentSpec().with_seed(9).generator.seed == 9


class TestRejects:
    @pytest.mark.parametrize(
        "bad",
        [
            {"schema": 2},
            {},
            doc(extra={}),
            doc(experiment={"shot": [1]}),
            doc(experiment={"shots": []}),
            doc(experiment={"shots": [0]}),
            doc(experiment={"shots": ["most"]}),
            doc(experiment={"shots": [1, 1]}),
            doc(experiment={"losses": ["mse"]}),
            doc(experiment={"regime": "meta"}),
            doc(experiment={"dipa": ["yes"]}),
            doc(experiment={"seeds": [-1]}),
            doc(model={"channels": 4}),
            doc(model={"embed_dim": 7}),
            doc(generator={"num_classes": 1}),
            doc(generator={"colour": 1}),
            doc(train={"learning_rate": []}),
            doc(train={"learning_rate": "fast"}),
            doc(train={"dipa_alpha": [0.0]}),
            doc(train={"patience": 0}),
            doc(pretrain={"learning_rate": -1.0}),
            doc(data={"path": "x"}),
            doc(model=3),
        ],
    )
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            spec_from_dict(bad)

    def test_file_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_spec(tmp_path / "missing.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("schema = 1\n[experiment\n")
        with pytest.raises(ConfigError):
            load_spec(bad)

    def test_file_ok(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text('schema = 1\n[experiment]\nshots = [1, "all"]\nseeds = [0]\n[data]\ndir = "data"\n')
        spec = load_spec(path)
        assert spec.shots == (1, "all") and spec.data_dir == tmp_path / "data"
