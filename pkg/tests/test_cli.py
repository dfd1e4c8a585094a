import json

import pytest

from argpersuasion.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run
from argpersuasion.corpus import dumps_corpus, parse_corpus

from conftest import debate, utt

FAST = ["--max-epochs", "2", "--embed-dim", "16", "--patience", "1"]


@pytest.fixture(scope="module")
def synth_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "synth.jsonl"
    assert run(["synth", "--n", "40", "--seed", "3", "--out", str(path)]) == EXIT_OK
    return path


def test_synth_writes_corpus_and_manifest(synth_file):
    assert len(parse_corpus(synth_file).debates) == 40
    m = json.loads(synth_file.with_name("synth.jsonl.manifest.json").read_text())
    assert m["plant"]["seed"] == 3 and m["version"]


def test_preprocess_reports_rule_counts(tmp_path, capsys):
    src = tmp_path / "in.jsonl"
    src.write_text(dumps_corpus([debate("a"), debate("tie", votes=(3, 3)), debate("f", forfeit="pro")]))
    out = tmp_path / "out.jsonl"
    assert run(["preprocess", "--in", str(src), "--out", str(out)]) == EXIT_OK
    stats = json.loads(capsys.readouterr().out)
    assert stats == {"read": 3, "kept": 1, "dropped": {"margin": 1, "too_long": 0, "forfeit": 1}}
    assert [d.id for d in parse_corpus(out).debates] == ["a"]
    sidecar = json.loads((tmp_path / "out.jsonl.manifest.json").read_text())
    assert sidecar["provenance"]["config"]["min_margin"] == 2


def test_featurize_csv(synth_file, tmp_path):
    run_dir = tmp_path / "feat"
    assert run(["featurize", "--in", str(synth_file), "--run-dir", str(run_dir)]) == EXIT_OK
    header = (run_dir / "features.csv").read_text().splitlines()[0]
    assert "uni_testimony" in header
    assert (run_dir / "run.log").exists()


def test_evaluate_writes_reproducible_report(synth_file, tmp_path):
    outs = []
    for name in ("a", "b"):
        run_dir = tmp_path / name
        code = run(["evaluate", "--in", str(synth_file), "--folds", "2", "--seed", "7", "--emit-csv",
                    "--run-dir", str(run_dir), *FAST])
        assert code == EXIT_OK
        outs.append((run_dir / "report.json").read_bytes())
        assert (run_dir / "folds.csv").read_text().startswith("fold,accuracy,epochs")
        assert (run_dir / "features.csv").exists()
    assert outs[0] == outs[1]
    rep = json.loads(outs[0])
    assert rep["provenance"]["seed"] == 7 and len(rep["fold_accuracies"]) == 2
    # small corpus selects the no-decay optimizer preset
    assert rep["config"]["weight_decay"] == 0.0


def test_timestamped_run_dir(synth_file, tmp_path):
    runs = tmp_path / "runs"
    args = ["analyze", "--in", str(synth_file), "--runs-dir", str(runs), "--seed", "5"]
    assert run(args) == EXIT_OK and run(args) == EXIT_OK
    dirs = sorted(p.name for p in runs.iterdir())
    assert len(dirs) == 2 and all("_seed5" in d for d in dirs)


def test_train_outputs(synth_file, tmp_path):
    run_dir = tmp_path / "t"
    assert run(["train", "--in", str(synth_file), "--run-dir", str(run_dir), *FAST]) == EXIT_OK
    ckpt = json.loads((run_dir / "checkpoint.json").read_text())
    assert ckpt["provenance"]["config"]["train"]["max_epochs"] == 2
    assert len((run_dir / "history.jsonl").read_text().splitlines()) >= 1


def test_ablate_with_t_test(synth_file, tmp_path):
    run_dir = tmp_path / "abl"
    code = run(["ablate", "--in", str(synth_file), "--folds", "2", "--seeds", "0", "1",
                "--variants", "full", "no_arg_struct", "--run-dir", str(run_dir), *FAST])
    assert code == EXIT_OK
    out = json.loads((run_dir / "ablation.json").read_text())
    assert set(out["variants"]) == {"full", "no_arg_struct"}
    assert out["significance"][0]["label"].startswith("full vs no_arg_struct")


def test_analyze_with_annotations(synth_file, tmp_path):
    ann = tmp_path / "ann.jsonl"
    ann.write_text("".join(json.dumps({"id": i, "labels": l, "system": s}) + "\n" for i, l, s in
                           [(1, ["A", "A"], "A"), (2, ["B", "B"], "A"), (3, ["A", "B"], "B"), (4, ["B", "A"], "B")]))
    run_dir = tmp_path / "an"
    assert run(["analyze", "--in", str(synth_file), "--annotations", str(ann), "--run-dir", str(run_dir)]) == EXIT_OK
    out = json.loads((run_dir / "analysis.json").read_text())
    assert out["krippendorff_alpha"] == pytest.approx(0.125)
    assert out["consistency"]["overall"] == pytest.approx(0.75)


def test_config_file_with_flag_override(synth_file, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# defaults\nin = {synth_file}\nfolds = 2\nmax-epochs = 1\nembed_dim = 16\nseed = 4\n")
    run_dir = tmp_path / "c"
    assert run(["--config", str(cfg), "evaluate", "--seed", "6", "--run-dir", str(run_dir)]) == EXIT_OK
    rep = json.loads((run_dir / "report.json").read_text())
    assert rep["seed"] == 6 and rep["k"] == 2 and rep["config"]["max_epochs"] == 1


def test_config_file_unknown_key(synth_file, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 0.1\n")
    assert run(["--config", str(cfg), "evaluate", "--in", str(synth_file)]) == EXIT_USAGE


def test_missing_input_is_data_error(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    assert run(["evaluate", "--in", str(missing), "--run-dir", str(tmp_path / "r")]) == EXIT_DATA
    assert str(missing) in capsys.readouterr().err


def test_all_streams_disabled_refused(synth_file, tmp_path):
    code = run(["evaluate", "--in", str(synth_file), "--no-text", "--no-prop-ngrams", "--no-link-ngrams",
                "--no-graph", "--run-dir", str(tmp_path / "r")])
    assert code == EXIT_USAGE
    assert not (tmp_path / "r").exists()


@pytest.mark.parametrize("argv", [[], ["bogus"], ["evaluate"], ["synth", "--n", "x", "--out", "o"],
                                  ["evaluate", "--in", "f", "--folds", "1"]])
def test_usage_errors(argv):
    assert run(argv) == EXIT_USAGE


def test_too_few_debates_is_data_error(tmp_path):
    src = tmp_path / "two.jsonl"
    src.write_text(dumps_corpus([debate("a"), debate("b", votes=(1, 5))]))
    assert run(["evaluate", "--in", str(src), "--folds", "5", "--run-dir", str(tmp_path / "r")]) == EXIT_DATA
