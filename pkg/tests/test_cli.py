"""End-to-end command-line flows with exit-code checks."""

import json

import numpy as np
import pytest

from signrec.cli import main
from signrec.synth import SynthSpec


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data -> train once; downstream commands reuse the artifacts."""
    root = tmp_path_factory.mktemp("cliws")
    spec = dict(
        n_classes=4,
        vs_s_pairs=1,
        vs_d_pairs=1,
        train_per_class=2,
        dev_per_class=0,
        test_per_class=2,
        t_raw=8,
        video_size=8,
        heatmap_size=4,
        keypoints=3,
        embed_dim=6,
        min_separation=0.15,
        seed=5,
    )
    (root / "spec.json").write_text(json.dumps(spec))
    config = dict(
        epochs=2,
        batch_size=4,
        t_long=4,
        channels=[2, 3, 3, 4, 4],
        pools=[[2, 2, 2], [1, 2, 2], None, None, None],
        spatial_aug=False,
        seed=1,
    )
    (root / "train.json").write_text(json.dumps(config))
    assert main(["gen-data", "--spec", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    assert (
        main(
            [
                "train",
                "--config", str(root / "train.json"),
                "--data", str(root / "data"),
                "--out", str(root / "run"),
            ]
        )
        == 0
    )
    return root


class TestGenData:
    def test_outputs_exist(self, workspace):
        assert (workspace / "data" / "manifest.json").exists()
        assert (workspace / "data" / "lexicon.vec").exists()
        assert (workspace / "data" / "train" / "00000.video.bin").exists()

    def test_bad_spec_exits_2(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"n_classes": 1}')
        assert main(["gen-data", "--spec", str(p), "--out", str(tmp_path / "d")]) == 2

    def test_missing_spec_exits_3(self, tmp_path):
        assert (
            main(["gen-data", "--spec", str(tmp_path / "no.json"), "--out", str(tmp_path)])
            == 3
        )


class TestTrain:
    def test_artifacts(self, workspace):
        run = workspace / "run"
        assert (run / "checkpoint.bin").exists()
        assert (run / "metrics.csv").exists()
        assert (run / "training_curves.png").exists()

    def test_metrics_csv_columns(self, workspace):
        header = (workspace / "run" / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,lr,gamma,mu,loss_total,loss_cls,loss_imm,train_top1"

    def test_bad_config_exits_2(self, workspace, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"bogus_key": 1}')
        assert (
            main(
                ["train", "--config", str(p), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "r")]
            )
            == 2
        )

    def test_missing_data_exits_3(self, workspace, tmp_path):
        assert (
            main(
                ["train", "--config", str(workspace / "train.json"),
                 "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "r")]
            )
            == 3
        )


class TestEval:
    def test_report_and_figures(self, workspace):
        out = workspace / "eval" / "report.json"
        code = main(
            ["eval", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
             "--data", str(workspace / "data"), "--crops", "1",
             "--report", str(out)]
        )
        assert code == 0
        report = json.loads(out.read_text())
        assert report["n_instances"] == 8
        assert (workspace / "eval" / "report_confusion.png").exists()
        assert (workspace / "eval" / "report_per_class.png").exists()

    def test_three_crop(self, workspace):
        out = workspace / "eval" / "report3.json"
        code = main(
            ["eval", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
             "--data", str(workspace / "data"), "--crops", "3",
             "--report", str(out), "--no-figures"]
        )
        assert code == 0
        assert json.loads(out.read_text())["crops"] == 3

    def test_missing_checkpoint_exits_3(self, workspace, tmp_path):
        assert (
            main(
                ["eval", "--checkpoint", str(tmp_path / "none.bin"),
                 "--data", str(workspace / "data"),
                 "--report", str(tmp_path / "r.json")]
            )
            == 3
        )


class TestExportRoundTrip:
    def test_export_then_eval_matches(self, workspace):
        slim = workspace / "run" / "inference.bin"
        assert (
            main(
                ["export", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
                 "--inference-only", "--out", str(slim)]
            )
            == 0
        )
        full_report = workspace / "eval" / "full.json"
        slim_report = workspace / "eval" / "slim.json"
        for ckpt, rep in ((workspace / "run" / "checkpoint.bin", full_report), (slim, slim_report)):
            assert (
                main(
                    ["eval", "--checkpoint", str(ckpt), "--data", str(workspace / "data"),
                     "--report", str(rep), "--no-figures"]
                )
                == 0
            )
        a = json.loads(full_report.read_text())
        b = json.loads(slim_report.read_text())
        assert a["per_instance_topk"] == b["per_instance_topk"]
        for sa, sb in zip(a["samples"], b["samples"]):
            assert sa["top2_prob"] == sb["top2_prob"]


class TestInspectLabels:
    def test_json_output(self, workspace, capsys):
        code = main(
            ["inspect-labels", "--lexicon", str(workspace / "data" / "lexicon.vec"),
             "--gloss", "sim0a", "--epsilon", "0.2", "--tau", "0.5"]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["gloss"] == "sim0a"
        assert payload["epsilon"] == 0.2 and payload["tau"] == 0.5
        probs = np.array(payload["probs"])
        assert abs(probs.sum() - 1.0) < 1e-9
        assert probs.max() == pytest.approx(0.8)

    def test_unknown_gloss_exits_3(self, workspace):
        assert (
            main(
                ["inspect-labels", "--lexicon", str(workspace / "data" / "lexicon.vec"),
                 "--gloss", "nothere"]
            )
            == 3
        )


class TestVisignPartition:
    def test_partition_from_report(self, workspace):
        report_path = workspace / "eval" / "report.json"
        if not report_path.exists():
            main(
                ["eval", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
                 "--data", str(workspace / "data"), "--report", str(report_path),
                 "--no-figures"]
            )
        out = workspace / "eval" / "partition.json"
        code = main(
            ["visign-partition", "--baseline-report", str(report_path),
             "--lexicon", str(workspace / "data" / "lexicon.vec"),
             "--out", str(out)]
        )
        assert code == 0
        part = json.loads(out.read_text())
        total = sum(part["counts"].values())
        assert total == 8
        assert part["delta_threshold"] == 0.1

    def test_missing_report_exits_3(self, workspace, tmp_path):
        assert (
            main(
                ["visign-partition", "--baseline-report", str(tmp_path / "no.json"),
                 "--lexicon", str(workspace / "data" / "lexicon.vec"),
                 "--out", str(tmp_path / "p.json")]
            )
            == 3
        )
