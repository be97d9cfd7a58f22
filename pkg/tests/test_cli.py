import json
import subprocess
import sys

import pytest

from faithlog.checkpoint import read_archive
from faithlog.cli import main
from faithlog.evaluation import REPORT_KEYS
from faithlog.log_pipeline import load_dataset, load_templates
from faithlog.synth import SynthConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--out", str(d / "corpus"), "--n-sequences", "200", "--length", "10", "--seed", "7"]) == 0
    assert main(["split", "--dataset", str(d / "corpus" / "sequences.tsv"), "--out", str(d / "split"),
                 "--seed", "7"]) == 0
    (d / "tiny.cfg").write_text("epochs = 6\nbatch_size = 16\nlearning_rate = 0.005\nd_model = 16\nn_heads = 2\nn_layers = 1\n")
    return d


def _train(d, name, *extra):
    return main(["train", "--dataset", str(d / "split" / "train.tsv"), "--config", str(d / "tiny.cfg"),
                 "--out", str(d / name), *extra])


def test_parse_recovers_generator_template_total(workdir, capsys):
    corpus = workdir / "corpus"
    assert main(["parse", "--log", str(corpus / "raw.log"), "--labels", str(corpus / "labels.txt"), "--window", "10",
                 "--out", str(workdir / "parsed")]) == 0
    out = capsys.readouterr().out
    cfg = SynthConfig()
    assert f"templates {cfg.n_templates + cfg.n_anomaly_templates}" in out and "sequences 200" in out
    assert len(load_templates(workdir / "parsed" / "templates.tsv")) == 55
    assert load_dataset(workdir / "parsed" / "sequences.tsv")[0].label in (0, 1)


def test_parse_empty_and_missing_input(tmp_path):
    (tmp_path / "empty.log").write_text("")
    assert main(["parse", "--log", str(tmp_path / "empty.log"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "sequences.tsv").read_text() == ""
    assert main(["parse", "--log", str(tmp_path / "missing.log"), "--out", str(tmp_path / "q")]) == 2


def test_split_copies_templates(workdir):
    assert (workdir / "split" / "templates.tsv").exists()
    train = load_dataset(workdir / "split" / "train.tsv")
    test = load_dataset(workdir / "split" / "test.tsv")
    assert len(train) + len(test) == 200


def test_train_is_bitwise_reproducible_and_logs(workdir):
    assert _train(workdir, "a.npz") == 0
    assert _train(workdir, "b.npz") == 0
    assert (workdir / "a.npz").read_bytes() == (workdir / "b.npz").read_bytes()
    log = (workdir / "a.log.csv").read_text().splitlines()
    assert log[0].startswith("# run_id=") and log[1].startswith("epoch,total,ce")
    assert len(log) == 8
    meta = read_archive(workdir / "a.npz")[0]
    assert log[0] == f"# run_id={meta['run_id']}"


def test_seed_flag_changes_run_id(workdir):
    assert _train(workdir, "s1.npz", "--seed", "1") == 0
    assert read_archive(workdir / "s1.npz")[0]["run_id"] != read_archive(workdir / "a.npz")[0]["run_id"]


def test_ablation_recorded_in_header(workdir):
    (workdir / "abl.cfg").write_text((workdir / "tiny.cfg").read_text() + "negative_pathway = false\n")
    assert main(["train", "--dataset", str(workdir / "split" / "train.tsv"), "--config", str(workdir / "abl.cfg"),
                 "--out", str(workdir / "abl.npz")]) == 0
    assert read_archive(workdir / "abl.npz")[0]["negative_pathway"] is False


def test_single_class_training_data_exits_3(workdir):
    train = load_dataset(workdir / "split" / "train.tsv")
    path = workdir / "split" / "normal.tsv"
    from faithlog.log_pipeline import write_dataset

    write_dataset([s for s in train if not s.label], path)
    assert main(["train", "--dataset", str(path), "--config", str(workdir / "tiny.cfg"),
                 "--out", str(workdir / "n.npz")]) == 3


def test_bad_config_key_is_rejected(workdir):
    (workdir / "bad.cfg").write_text("lamda2 = 0.1\n")
    assert main(["train", "--dataset", str(workdir / "split" / "train.tsv"), "--config", str(workdir / "bad.cfg"),
                 "--out", str(workdir / "x.npz")]) == 3


def test_evaluate_report_is_deterministic_and_keyed(workdir):
    _train(workdir, "a.npz")
    args = ["evaluate", "--dataset", str(workdir / "split" / "test.tsv"), "--checkpoint", str(workdir / "a.npz")]
    assert main(args + ["--out", str(workdir / "r1.json")]) == 0
    assert main(args + ["--out", str(workdir / "r2.json")]) == 0
    assert (workdir / "r1.json").read_bytes() == (workdir / "r2.json").read_bytes()
    report = json.loads((workdir / "r1.json").read_text())
    assert sorted(report["metrics"]) == sorted(REPORT_KEYS)


def test_oracle_checkpoint_reports_full_localization(workdir):
    assert main(["oracle", "--out", str(workdir / "o.npz")]) == 0
    assert main(["evaluate", "--dataset", str(workdir / "split" / "test.tsv"), "--checkpoint",
                 str(workdir / "o.npz"), "--out", str(workdir / "o.json")]) == 0
    m = json.loads((workdir / "o.json").read_text())["metrics"]
    assert all(m[k] == 100.0 for k in ("hr@1", "hr@3", "hr@5", "map@3", "map@5", "mrr", "sr"))


def test_checkpoint_config_mismatch_exits_4(workdir):
    _train(workdir, "a.npz")
    (workdir / "wide.cfg").write_text("d_model = 32\nn_heads = 2\n")
    code = main(["evaluate", "--dataset", str(workdir / "split" / "test.tsv"), "--checkpoint", str(workdir / "a.npz"),
                 "--config", str(workdir / "wide.cfg"), "--out", str(workdir / "m.json")])
    assert code == 4


def test_perturb_verdicts_reconcile_with_printed_rate(workdir, capsys):
    main(["oracle", "--out", str(workdir / "o.npz")])
    _train(workdir, "a.npz")
    data = workdir / "split" / "mixed.tsv"
    text = (workdir / "split" / "test.tsv").read_text() + "single\t1\t52;0\n"
    data.write_text(text)
    assert main(["perturb", "--dataset", str(data), "--templates", str(workdir / "split" / "templates.tsv"),
                 "--checkpoint", str(workdir / "o.npz"),
                 "--out", str(workdir / "v.tsv")]) == 0
    capsys.readouterr()
    assert main(["perturb", "--dataset", str(data), "--checkpoint", str(workdir / "a.npz"),
                 "--out", str(workdir / "v.tsv")]) == 0
    printed = float(capsys.readouterr().out.split()[-1])
    rows = [l.split("\t") for l in (workdir / "v.tsv").read_text().splitlines()[2:]]
    counted = [r for r in rows if r[3] != "skipped"]
    assert printed == pytest.approx(round(100 * sum(r[3] == "supportive" for r in counted) / len(counted), 2))
    assert any(r[0] == "single" and r[3] == "skipped" for r in rows)


def test_detect_writes_one_row_per_sequence(workdir):
    _train(workdir, "a.npz")
    assert main(["detect", "--dataset", str(workdir / "split" / "test.tsv"), "--checkpoint", str(workdir / "a.npz"),
                 "--out", str(workdir / "d.tsv")]) == 0
    lines = (workdir / "d.tsv").read_text().splitlines()
    assert len(lines) == 2 + len(load_dataset(workdir / "split" / "test.tsv"))


def test_module_entry_point(workdir):
    res = subprocess.run([sys.executable, "-m", "faithlog", "evaluate", "--dataset",
                          str(workdir / "split" / "test.tsv"), "--checkpoint", str(workdir / "missing.npz"),
                          "--out", str(workdir / "z.json")], capture_output=True, text=True)
    assert res.returncode == 4 and "error" in res.stderr
