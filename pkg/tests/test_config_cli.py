import csv
import json

import numpy as np
import pytest

from brainof.cli import COMMANDS, build_parser, main
from brainof.config import RunConfig, apply_override
from brainof.errors import ConfigError
from brainof.numerics import load_npy

TINY = [
    "--set", "model.d_model=16", "--set", "model.n_latents=4", "--set", "model.n_heads=2",
    "--set", "model.max_seq_len=128", "--set", "data.n_samples=4", "--set", "train.batch_size=2",
]


# -- config ----------------------------------------------------------------------------

def test_defaults_validate_and_round_trip():
    cfg = RunConfig().validate()
    assert RunConfig.from_dict(json.loads(cfg.to_json())).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("doc", [
    {"modle": {}},
    {"model": {"d_modle": 8}},
    {"train": {"lr": -1.0}},
    {"train": {"steps": 1.5}},
    {"train": {"lr": "fast"}},
    {"model": {"top_k": 5}},
    {"model": {"d_model": 20, "n_heads": 2}},
    {"data": {"modalities": ["ECG"]}},
    {"data": {"test_fraction": 1.0}},
    {"finetune": {"mode": "partial"}},
    {"model": []},
])
def test_invalid_configs_are_rejected(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_overrides_win_over_file_values(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"lr": 0.01, "steps": 5}, "data": {"modalities": ["MEG"]}}))
    cfg = RunConfig.load(path, ["train.lr=0.002", 'data.modalities=["EEG","fMRI"]'])
    assert cfg.train.lr == 0.002 and cfg.train.steps == 5
    assert cfg.data.modalities == ["EEG", "fMRI"]


@pytest.mark.parametrize("item", ["train.lr", "lr=1", "a.b.c=1"])
def test_malformed_overrides(item):
    with pytest.raises(ConfigError):
        apply_override({}, item)


def test_invalid_json_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError):
        RunConfig.load(path)


# -- CLI ----------------------------------------------------------------------------------

@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help_lists_every_flag_with_defaults(command, capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--config", "--set", "--out", "--seed", "--checkpoint"):
        assert flag in text
    assert text.count("(default:") >= 5


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_validation_error_exit_code_and_json(tmp_path, capsys):
    code = main(["pretrain", "--out", str(tmp_path), "--set", "train.lr=-1"])
    assert code == 1
    err = _error(capsys)
    assert err["exit_code"] == 1 and err["error"] == "ConfigError" and "lr" in err["message"]


def test_io_error_exit_code(tmp_path, capsys):
    code = main(["pretrain", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "missing")])
    assert code == 3
    assert _error(capsys)["exit_code"] == 3


def test_occlude_without_checkpoint_is_input_error(tmp_path, capsys):
    assert main(["occlude", "--out", str(tmp_path)]) == 1
    assert _error(capsys)["error"] == "InputError"


def test_gen_data_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--out", str(tmp_path / name), "--seed", "5", *TINY]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_pretrain_zero_steps_writes_initial_checkpoint(tmp_path):
    out = tmp_path / "pre"
    assert main(["pretrain", "--out", str(out), "--set", "train.steps=0", *TINY]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("step,")
    assert (out / "checkpoint" / "config.json").exists()
    assert json.loads((out / "checkpoint" / "meta.json").read_text())["step"] == 0


def test_pretrain_resume_and_reconstruct_shapes(tmp_path):
    pre = tmp_path / "pre"
    assert main(["pretrain", "--out", str(pre), "--set", "train.steps=2", *TINY]) == 0
    more = tmp_path / "more"
    args = ["pretrain", "--out", str(more), "--checkpoint", str(pre / "checkpoint"), "--set", "train.steps=3", *TINY]
    assert main(args) == 0
    rows = list(csv.DictReader(open(more / "metrics.csv")))
    assert [int(r["step"]) for r in rows] == [3]
    rec = tmp_path / "rec"
    assert main(["reconstruct", "--out", str(rec), "--checkpoint", str(more / "checkpoint"), *TINY]) == 0
    originals = sorted(rec.glob("*.original.npy"))
    assert len(originals) == 4
    for path in originals:
        stem = path.name[: -len(".original.npy")]
        shapes = {load_npy(rec / f"{stem}.{kind}.npy").shape for kind in ("original", "perturbed", "reconstructed")}
        assert shapes == {(8, 256)}


def test_finetune_route_stats_and_occlude(tmp_path):
    ft = tmp_path / "ft"
    common = [*TINY, "--set", "data.n_samples=8", "--set", "data.test_fraction=0.25"]
    assert main(["finetune", "--out", str(ft), "--set", "finetune.epochs=1", "--set", "finetune.batch_size=4", *common]) == 0
    report = json.loads((ft / "report.json").read_text())
    assert set(report["final"]) == {"train", "test"}
    assert (ft / "metrics.csv").exists()
    rs = tmp_path / "rs"
    assert main(["route-stats", "--out", str(rs), "--checkpoint", str(ft / "checkpoint"), *TINY]) == 0
    lines = (rs / "route_stats.csv").read_text().splitlines()
    assert lines[0] == "step,expert_id,load,bias" and len(lines) == 1 + 2 * 4
    oc = tmp_path / "oc"
    assert main(["occlude", "--out", str(oc), "--checkpoint", str(ft / "checkpoint"), *TINY]) == 0
    rows = list(csv.DictReader(open(oc / "occlusion.csv")))
    assert [int(r["channel"]) for r in rows] == list(range(8))
    assert all(np.isfinite(float(r["score"])) for r in rows)


def test_gradcheck_command_passes(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert report["passed"]
    assert all(m["worst_rel_error"] < 1e-4 for m in report["modules"].values())
