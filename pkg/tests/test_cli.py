import csv
import json
import time
from pathlib import Path

import pytest

from tannet import cli, io

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def values(lines, key):
    return [ln.split("=", 1)[1] for ln in lines.splitlines() if ln.startswith(key + "=")]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    t0 = time.perf_counter()
    code = cli.main(["train", "--seed", "3", "--videos", "5", "--eval-videos", "5", "--epochs", "2", "--out", str(out)])
    return code, out, time.perf_counter() - t0


def test_gen_writes_videos_and_manifest(tmp_path, capsys):
    code, out, _ = run(capsys, "gen", "--seed", 7, "--videos", 200, "--classes", 8, "--out", tmp_path / "d")
    assert code == 0
    assert len(list((tmp_path / "d").glob("*.tan"))) == 200
    assert (tmp_path / "d" / "manifest.csv").exists()
    assert out.splitlines()[0] == "# seed=7"


def test_gen_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "gen", "--seed", 4, "--videos", 6, "--out", tmp_path / name)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_bad_classes_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--classes", 0, "--out", tmp_path / "d")
    assert code == 2 and "num_classes" in err
    code, _, err = run(capsys, "gen", "--classes", 2, "--out", tmp_path / "d")
    assert code == 2 and "K must be" in err


def test_train_smoke(trained):
    code, out, seconds = trained
    assert code == 0 and seconds < 60
    for name in ("model.tanckpt", "model.tanckpt.json", "optim.tanckpt", "train_log.csv"):
        assert (out / name).exists()
    head = (out / "train_log.csv").read_text().splitlines()
    assert head[0] == "# seed=3"
    assert "# variant=tan" in head and "# protocol=sampled:25" in head


def test_resume_numbers_epochs_continuously(trained, capsys):
    _, out, _ = trained
    code, stdout, _ = run(capsys, "train", "--seed", 3, "--videos", 5, "--eval-videos", 5, "--epochs", 2, "--out", out, "--resume", out / "model.tanckpt")
    assert code == 0
    rows = [r for r in csv.reader(ln for ln in (out / "train_log.csv").read_text().splitlines() if not ln.startswith("#"))]
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2, 3]
    assert json.loads((out / "model.tanckpt.json").read_text())["epochs_done"] == 4
    assert "epoch 3 " in stdout


def test_resume_with_other_variant_exit_3(trained, tmp_path, capsys):
    _, out, _ = trained
    code, _, err = run(capsys, "train", "--variant", "res2d", "--videos", 5, "--eval-videos", 5, "--epochs", 1, "--out", tmp_path, "--resume", out / "model.tanckpt")
    assert code == 3 and "variant" in err


def test_resume_missing_checkpoint_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--videos", 5, "--epochs", 1, "--out", tmp_path, "--resume", tmp_path / "nope.tanckpt")
    assert code == 1 and "nope.tanckpt" in err


@pytest.mark.filterwarnings("ignore::tannet.autograd.DilationWarning")
def test_train_res3d_logs_reduction(tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--variant", "res3d", "--videos", 3, "--eval-videos", 3, "--epochs", 1, "--out", tmp_path)
    assert code == 0
    log = (tmp_path / "train_log.csv").read_text()
    assert "# output_t=2" in log and "# temporal resolution reduced 16 -> 2 before the head" in log


def test_train_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "train", "--seed", 5, "--videos", 4, "--eval-videos", 4, "--epochs", 1, "--out", tmp_path / name)[0] == 0
    for f in ("model.tanckpt", "optim.tanckpt", "train_log.csv", "model.tanckpt.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize("protocol", ["dense", "sampled:25"])
def test_eval_oracle(capsys, protocol):
    code, out, _ = run(capsys, "eval", "--oracle", "--seed", 2, "--eval-videos", 10, "--protocol", protocol)
    assert code == 0
    assert out.splitlines()[:2] == ["# seed=2", f"# protocol={protocol}"]
    assert values(out, "frame_mAP") == ["1.000000"] and values(out, "video_mAP") == ["1.000000"]


def test_eval_needs_checkpoint(capsys):
    assert run(capsys, "eval", "--eval-videos", 2)[0] == 2


def test_reference_checkpoint_reproduces_report(tmp_path, capsys):
    ref = FIXTURES / "reference"
    code, _, _ = run(capsys, "eval", "--seed", 7, "--checkpoint", ref / "model.tanckpt", "--protocol", "sampled:25", "--csv", tmp_path / "r.csv")
    assert code == 0

    def parse(path):
        rows = list(csv.reader(path.read_text().splitlines()))
        return {r[0]: [float(v) for v in r[1:] if v] for r in rows[2:]}, rows[0]

    got, head = parse(tmp_path / "r.csv")
    want, want_head = parse(ref / "metric_report.csv")
    assert head == want_head and got.keys() == want.keys()
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-6), k


def test_predict_dumps_scores(trained, tmp_path, capsys):
    _, out, _ = trained
    code, _, _ = run(capsys, "predict", "--seed", 3, "--eval-videos", 2, "--checkpoint", out / "model.tanckpt", "--output", tmp_path / "p.csv")
    assert code == 0
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "video_id,frame_idx,class_id,score" and len(lines) == 1 + 2 * 16 * 8


def test_analyze_temporal_rf(capsys):
    code, out, _ = run(capsys, "analyze", "--rf", "temporal", "--seed", 9)
    assert code == 0 and values(out, "temporal_rf") == ["25"]
    assert out.splitlines()[0] == "# seed=9"
    assert values(run(capsys, "analyze", "--rf", "temporal", "--variant", "tan_plainconv")[1], "temporal_rf") == ["9"]


def test_analyze_params_match_checkpoint_entries(capsys):
    code, out, _ = run(capsys, "analyze", "--params")
    assert code == 0
    params = int(values(out, "params")[0])
    assert params == int(values(out, "checkpoint_params")[0]) == 255_208
    entries = io.read_tensors(FIXTURES / "reference" / "model.tanckpt")
    assert sum(a.size for a in entries.values()) == params
    assert (FIXTURES / "reference" / "model.tanckpt").stat().st_size == int(values(out, "checkpoint_bytes")[0])


def test_analyze_level_table_csv(capsys):
    code, out, _ = run(capsys, "analyze", "--csv")
    rows = [ln for ln in out.splitlines() if not ln.startswith("#")]
    assert rows[0] == "level,spatial_rf,temporal_rf,params,macs_per_frame"
    assert [r.split(",")[2] for r in rows[1:5]] == ["7", "13", "19", "25"]


def test_compare_csv_three_rows(capsys):
    code, out, _ = run(capsys, "compare", "tan", "res3d", "res2d", "--csv", "--seed", 1)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "# seed=1"
    assert lines[1] == "variant,params,macs,temporal_rf,spatial_rf,output_t"
    assert [ln.split(",")[0] for ln in lines[2:]] == ["tan", "res3d", "res2d"]


def test_compare_text_table(capsys):
    code, out, _ = run(capsys, "compare", "tan", "tan_plainconv")
    assert code == 0 and len(out.splitlines()) == 4


def test_ablate_five_rows(capsys):
    code, out, _ = run(capsys, "ablate", "--seeds", 0, "--epochs", 1, "--videos", 4, "--eval-videos", 4, "--csv", "--seed", 11)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "# seed=11"
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "row,ta_levels,dilation,frame_map,video_map,frame_map_per_seed"
    assert [r.split(",")[0] for r in body[1:]] == ["TA@4", "TA@3-4", "TA@2-4", "TA@1-4", "TA@1-4 no dilation"]
    assert body[-1].split(",")[2] == "no"


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 21, "variant": "res2d"}))
    code, out, _ = run(capsys, "analyze", "--config", cfg, "--rf", "temporal")
    assert code == 0 and out.splitlines()[:2] == ["# seed=21", "# variant=res2d"]
    code, out, _ = run(capsys, "analyze", "--config", cfg, "--variant", "tan", "--rf", "temporal")
    assert values(out, "temporal_rf") == ["25"]


@pytest.mark.parametrize(
    "body,needle",
    [({"depth": 3}, "depth"), ({"epochs": "ten"}, "epochs"), ({"channels": [8, 8]}, "channels"), ({"data": "/no/such/dir"}, "data")],
)
def test_bad_config_exit_2(tmp_path, capsys, body, needle):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(body))
    code, _, err = run(capsys, "analyze", "--config", cfg)
    assert code == 2 and needle in err


def test_train_from_generated_directory(tmp_path, capsys):
    assert run(capsys, "gen", "--seed", 1, "--videos", 3, "--out", tmp_path / "d")[0] == 0
    code, _, _ = run(capsys, "train", "--data", tmp_path / "d", "--eval-data", tmp_path / "d", "--epochs", 1, "--out", tmp_path / "r")
    assert code == 0
    code, _, err = run(capsys, "train", "--data", tmp_path / "d", "--classes", 6, "--epochs", 1, "--out", tmp_path / "r2")
    assert code == 2 and "classes" in err


def test_threads_env_is_applied(monkeypatch, capsys):
    from threadpoolctl import threadpool_info

    seen = []

    def probe(args):
        seen.extend(p["num_threads"] for p in threadpool_info())
        return 0

    monkeypatch.setattr(cli, "cmd_compare", probe)
    monkeypatch.setenv("TAN_THREADS", "1")
    assert run(capsys, "compare", "tan")[0] == 0
    assert seen and all(n == 1 for n in seen)


def test_threads_env_rejects_garbage(monkeypatch, capsys):
    monkeypatch.setenv("TAN_THREADS", "lots")
    code, _, err = run(capsys, "compare", "tan")
    assert code == 2 and "TAN_THREADS" in err
