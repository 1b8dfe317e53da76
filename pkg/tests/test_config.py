import pytest

from mcn.config import ETA, LAMBDA, RunConfig, load_run_config, read_config_file
from mcn.errors import ConfigurationError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# обучение\nmargin = 0.2\nbatch-size = 16\nlambda = 0.8\nembeddings =\n", encoding="utf-8")
    return path


class TestRunConfig:

    def test_defaults(self):
        config = load_run_config()
        assert config.eta == ETA and config.lambda_ == LAMBDA
        assert config.modalities == "fusion" and config.use_global and config.use_tef

    def test_file_values(self, config_file):
        config = load_run_config(config_file)
        assert config.margin == 0.2 and config.batch_size == 16 and config.lambda_ == 0.8
        assert config.embeddings is None

    def test_flags_win_over_file(self, config_file):
        config = load_run_config(config_file, {"margin": 0.3, "lambda_": 0.1, "batch_size": None})
        assert config.margin == 0.3 and config.lambda_ == 0.1 and config.batch_size == 16

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "bad.env"
        path.write_text("learning_rate = 0.1\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="learning_rate"):
            read_config_file(path)

    def test_unknown_override(self):
        with pytest.raises(ConfigurationError, match="Неизвестный параметр"):
            load_run_config(overrides={"dropout": 0.5})

    @pytest.mark.parametrize("field, value", [("lambda_", 1.5), ("batch_size", 0), ("margin", 0.0), ("modalities", "audio")])
    def test_out_of_range(self, field, value):
        with pytest.raises(ConfigurationError, match="Некорректная конфигурация"):
            load_run_config(overrides={field: value})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "absent.env")

    def test_echo_has_no_paths(self, tmp_path):
        config = RunConfig(checkpoint=tmp_path / "m.mcnp", margin=0.5)
        echo = config.model_echo()
        assert "checkpoint" not in echo and echo["margin"] == 0.5 and "lambda" in echo
        assert RunConfig.model_validate(echo) == config.updated(checkpoint=None)

    def test_require_paths(self, tmp_path):
        with pytest.raises(ConfigurationError, match="annotations"):
            RunConfig().require_paths("annotations")
        with pytest.raises(ConfigurationError, match="не найден"):
            RunConfig(splits=tmp_path / "x.tsv").require_paths("splits")
