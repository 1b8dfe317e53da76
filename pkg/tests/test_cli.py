import json

import pytest

from mcn.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, main

SMALL_CORPUS = ["--videos", "8", "--feature-dim", "4", "--embedding-dim", "4", "--concepts", "8", "--val-fraction", "0.25"]
SMALL_MODEL = ["--lstm-hidden", "8", "--joint-dim", "4", "--visual-hidden", "8", "--batch-size", "8"]


def tree_bytes(root):
    return {
        path.relative_to(root).as_posix(): path.read_bytes()
        for path in sorted(root.rglob("*")) if path.is_file()
    }


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "corpus"), "--seed", "2", *SMALL_CORPUS]) == EXIT_OK
    checkpoint = root / "model.mcnp"
    code = main([
        "train", "--corpus", str(root / "corpus"), "--checkpoint", str(checkpoint),
        "--epochs", "1", *SMALL_MODEL,
    ])
    assert code == EXIT_OK
    return root


class TestSynth:

    def test_same_seed_same_files(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["synth", "--out", str(tmp_path / name), "--seed", "9", *SMALL_CORPUS]) == EXIT_OK
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
        assert "Синтетический корпус" in capsys.readouterr().out

    def test_zero_videos_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["synth", "--out", str(tmp_path), "--videos", "0"])
        assert info.value.code == EXIT_USAGE

    def test_bad_segments(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path), "--segments", "7"]) == EXIT_USAGE
        assert "❌" in capsys.readouterr().err


class TestTrainAndEval:

    def test_train_writes_checkpoint_and_log(self, workspace):
        assert (workspace / "model.mcnp").exists()
        header = (workspace / "model.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == "epoch,train_loss,intra_loss,inter_loss,val_r1"

    def test_eval_checkpoint(self, workspace, capsys):
        out = workspace / "reports"
        code = main([
            "eval", "--corpus", str(workspace / "corpus"),
            "--checkpoint", str(workspace / "model.mcnp"), "--out", str(out),
        ])
        assert code == EXIT_OK
        payload = json.loads((out / "mcn_val.json").read_text(encoding="utf-8"))
        assert payload["config"]["split"] == "val"
        assert "R@1" in capsys.readouterr().out

    def test_upper_bound_baseline(self, workspace, capsys):
        out = workspace / "baselines"
        code = main(["baseline", "upper_bound", "--corpus", str(workspace / "corpus"), "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "upper_bound_val.json").exists()
        assert "100.00" in capsys.readouterr().out

    def test_eval_needs_checkpoint_or_baseline(self, workspace):
        assert main(["eval", "--corpus", str(workspace / "corpus")]) == EXIT_USAGE

    def test_missing_checkpoint(self, workspace, capsys):
        code = main([
            "eval", "--corpus", str(workspace / "corpus"),
            "--checkpoint", str(workspace / "absent.mcnp"), "--out", str(workspace / "r"),
        ])
        assert code == EXIT_USAGE
        assert "не найден" in capsys.readouterr().err


class TestInference:

    def args(self, workspace, command):
        return [command, "--corpus", str(workspace / "corpus"), "--checkpoint", str(workspace / "model.mcnp")]

    def test_localize_ranks_all_candidates(self, workspace, capsys):
        code = main([*self.args(workspace, "localize"), "--video", "v0", "--segments", "6", "--text", "w001"])
        assert code == EXIT_OK
        assert len(capsys.readouterr().out.strip().splitlines()) == 21

    def test_fine_grained_trace(self, workspace, capsys):
        code = main([
            *self.args(workspace, "localize"), "--video", "v0", "--segments", "5",
            "--text", "w001", "--fine-grained", "--window", "6", "--stride", "3",
        ])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "window_start_frame\tdistance"
        assert [line.split("\t")[0] for line in lines[1:3]] == ["0", "3"]

    def test_localize_unknown_video(self, workspace):
        code = main([*self.args(workspace, "localize"), "--video", "nope", "--text", "w001"])
        assert code == EXIT_USAGE

    def test_retrieve(self, workspace, capsys):
        code = main([*self.args(workspace, "retrieve"), "--text", "w001 w002", "--k", "3"])
        assert code == EXIT_OK
        assert len(capsys.readouterr().out.strip().splitlines()) == 3


class TestGradcheck:

    def test_passes(self, capsys):
        code = main(["gradcheck", "--instances", "3", "--full-loss-instances", "1"])
        assert code == EXIT_OK
        assert "❌" not in capsys.readouterr().out

    def test_corrupted_gradients_fail(self, capsys):
        code = main(["gradcheck", "--instances", "2", "--full-loss-instances", "1", "--corrupt-scale", "2"])
        assert code == EXIT_CHECK_FAILED
        assert "❌" in capsys.readouterr().out
