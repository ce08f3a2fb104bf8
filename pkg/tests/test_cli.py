import csv
import json
import logging
import shutil

import numpy as np
import pytest
from scipy import integrate, optimize

from cadlab.cli import main
from cadlab.diffusion import write_samples_csv
from cadlab.manifest import Manifest, sha256_file
from cadlab.noisesim import entropy_of_alpha, max_alpha, target_entropy_cdf
from cadlab.toydata import read_dataset_csv

TINY = """
[run]
name = tiny
seed = {seed}
[data]
n_train = {n}
n_reference = 300
[model]
emb_dim = 8
width = 16
depth = 2
[train]
steps = 40
batch_size = 32
warmup = 4
regime = {regime}
[sample]
n = 48
steps = 6
[sweep]
axis = guidance
grid = 0,1,5,20
"""


def write_cfg(tmp_path, name="tiny.ini", seed=0, n=400, regime="cad"):
    p = tmp_path / name
    p.write_text(TINY.format(seed=seed, n=n, regime=regime))
    return p


def cli(*args):
    return main([str(a) for a in args])


def digests(run, skip=("manifest.json",)):
    return {p.relative_to(run).as_posix(): sha256_file(p) for p in sorted(run.rglob("*")) if p.is_file() and p.name not in skip}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(base)
    assert cli("simulate", "--config", cfg, "--out", base / "runs") == 0
    run = base / "runs" / "tiny"
    assert cli("train", "--run", run) == 0
    return run


def test_run_layout_and_manifest(trained):
    for sub in ("data", "checkpoints", "samples", "metrics", "plots"):
        assert (trained / sub).is_dir()
    m = Manifest.load(trained)
    assert [e.command for e in m.entries][:2] == ["simulate", "train"]
    assert m.dataset_digest == sha256_file(trained / "data/corrupted.csv")
    assert "[train]" in m.config and m.seed == 0 and m.version
    ck = trained / "checkpoints/cad-s0"
    assert {p.name for p in ck.iterdir()} == {"init.ckpt", "final.ckpt", "ema.ckpt", "loss.csv", "model.json"}
    assert m.entries[1].argv[:1] == ["train"]


def test_simulate_is_reproducible_and_refuses_to_overwrite(tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli("simulate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert cli("simulate", "--config", cfg, "--out", tmp_path / "b") == 0
    assert digests(tmp_path / "a/tiny") == digests(tmp_path / "b/tiny")
    before = digests(tmp_path / "a/tiny")
    assert cli("simulate", "--config", cfg, "--out", tmp_path / "a") != 0
    assert digests(tmp_path / "a/tiny") == before


def test_simulate_empty_dataset(tmp_path):
    cfg = write_cfg(tmp_path, n=0)
    assert cli("simulate", "--config", cfg, "--out", tmp_path) == 0
    d = read_dataset_csv(tmp_path / "tiny/data/corrupted.csv")
    assert d["x"].shape == (0, 2)
    stats = json.loads((tmp_path / "tiny/data/stats.json").read_text())
    assert stats["n"] == 0 and stats["flip_rate"] == 0.0
    assert cli("train", "--run", tmp_path / "tiny") != 0


def test_invalid_config_names_field(tmp_path, caplog):
    bad = tmp_path / "bad.ini"
    bad.write_text("[noise]\nkappa = 2\n")
    with caplog.at_level(logging.ERROR, logger="cadlab"):
        assert cli("simulate", "--config", bad, "--out", tmp_path) == 2
    assert "noise.kappa" in caplog.text
    assert not (tmp_path / "run").exists()


def test_simulate_flip_rate_matches_quadrature(tmp_path):
    cfg = tmp_path / "big.ini"
    cfg.write_text("[run]\nname = big\nseed = 7\n[data]\nn_classes = 10\nn_train = 100000\nn_reference = 10\n")
    assert cli("simulate", "--config", cfg, "--out", tmp_path) == 0
    stats = json.loads((tmp_path / "big/data/stats.json").read_text())

    def alpha(u):
        if u <= 0:
            return 0.0
        if u >= 1:
            return max_alpha(10)
        return optimize.brentq(lambda a: entropy_of_alpha(a, 10) - u, 0, max_alpha(10), xtol=1e-14)

    oracle, _ = integrate.quad(lambda t: alpha(target_entropy_cdf(t, 0.5, 0.5)), 0, 1, points=[0.5])
    assert abs(stats["flip_rate"] - oracle) < 0.01
    assert sum(stats["coherence_histogram"]["counts"]) == 100_000


def test_train_twice_same_digests(tmp_path, trained):
    run = tmp_path / "copy"
    shutil.copytree(trained, run)
    shutil.rmtree(run / "checkpoints/cad-s0")
    m = Manifest.load(run)
    m.entries = [e for e in m.entries if e.command == "simulate"]
    m.save()
    assert cli("train", "--run", run) == 0
    for f in ("init.ckpt", "final.ckpt", "ema.ckpt", "loss.csv"):
        assert sha256_file(run / "checkpoints/cad-s0" / f) == sha256_file(trained / "checkpoints/cad-s0" / f)
    assert cli("train", "--run", run) != 0  # append-only


def test_train_zero_steps_equals_init(trained):
    assert cli("train", "--run", trained, "--steps", 0, "--seed", 5) == 0
    ck = trained / "checkpoints/cad-s5"
    assert sha256_file(ck / "init.ckpt") == sha256_file(ck / "final.ckpt") == sha256_file(ck / "ema.ckpt")


def test_train_filtered_records_removed_bins(trained):
    assert cli("train", "--run", trained, "--regime", "filtered") == 0
    info = [e for e in Manifest.load(trained).entries if e.info.get("checkpoint") == "filtered-s0"][0].info
    assert info["removed_bins"] == [0, 1, 2]
    assert info["source_size"] == 400 and info["train_size"] == 250


def test_train_needs_coherence(tmp_path, trained):
    run = tmp_path / "nocoh"
    shutil.copytree(trained, run)
    path = run / "data/corrupted.csv"
    rows = list(csv.reader(path.open()))
    for r in rows[1:]:
        r[5] = ""
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert cli("train", "--run", run, "--seed", 9) != 0
    assert cli("train", "--run", run, "--seed", 9, "--regime", "baseline") == 0


def test_sample_modes_and_determinism(trained):
    assert cli("sample", "--run", trained, "--tag", "none") == 0
    assert cli("sample", "--run", trained, "--tag", "ca0", "--guidance", "ca-cfg", "--omega", 0) == 0
    assert cli("sample", "--run", trained, "--tag", "none2") == 0
    s = trained / "samples"
    assert sha256_file(s / "none.csv") == sha256_file(s / "ca0.csv") == sha256_file(s / "none2.csv")
    assert cli("sample", "--run", trained, "--tag", "none") != 0
    entry = [e for e in Manifest.load(trained).entries if e.command == "sample"][0]
    assert entry.info["steps"] == 6 and "samples/none.csv" in entry.files


def test_sample_default_steps_is_250():
    from cadlab.config import ExperimentConfig

    assert ExperimentConfig().sample.steps == 250


def test_sample_ca_cfg_on_baseline_fails(trained):
    assert cli("train", "--run", trained, "--regime", "baseline", "--steps", 5) == 0
    assert cli("sample", "--run", trained, "--checkpoint", "baseline-s0", "--guidance", "ca-cfg", "--omega", 1, "--tag", "bad") != 0
    assert not (trained / "samples/bad.csv").exists()
    assert cli("sample", "--run", trained, "--checkpoint", "baseline-s0", "--tag", "base") == 0


def test_sample_ddpm_is_seeded(trained):
    assert cli("sample", "--run", trained, "--sampler", "ddpm", "--tag", "p1") == 0
    assert cli("sample", "--run", trained, "--sampler", "ddpm", "--tag", "p2") == 0
    assert sha256_file(trained / "samples/p1.csv") == sha256_file(trained / "samples/p2.csv")


def test_eval_reference_against_itself(tmp_path, trained):
    ref = read_dataset_csv(trained / "data/reference.csv")
    write_samples_csv(tmp_path / "self.csv", ref["x"], ref["clean_label"], 1.0)
    assert cli("eval", "--run", trained, "--samples", tmp_path / "self.csv") == 0
    rows = list(csv.DictReader((trained / "metrics/self.csv").open()))
    assert float(rows[0]["fd"]) <= 1e-8
    assert float(rows[0]["precision"]) == float(rows[0]["recall"]) == float(rows[0]["coverage"]) == 1.0
    assert list(rows[0]) == ["fd", "precision", "recall", "density", "coverage", "accuracy", "is_analog", "n_real", "n_fake", "k", "flags"]


def test_eval_errors(tmp_path, trained):
    write_samples_csv(tmp_path / "empty.csv", np.zeros((0, 2)), [], 1.0)
    assert cli("eval", "--run", trained, "--samples", tmp_path / "empty.csv") != 0
    write_samples_csv(tmp_path / "ok.csv", np.ones((20, 2)) + np.arange(40).reshape(20, 2), np.zeros(20), 1.0)
    assert cli("eval", "--run", trained, "--samples", tmp_path / "ok.csv", "--reference", tmp_path / "missing.csv") != 0
    assert cli("eval", "--run", trained, "--samples", tmp_path / "nothing.csv") != 0


def test_sweeps(trained):
    assert cli("sweep", "--run", trained, "--axis", "coherence", "--grid", ",".join(str(i / 7) for i in range(8)), "--tag", "coh") == 0
    rows = list(csv.reader((trained / "metrics/coh.csv").open()))
    assert rows[0] == ["coherence", "fd", "accuracy", "precision", "recall", "density", "coverage"]
    assert [float(r[0]) for r in rows[1:]] == [i / 7 for i in range(8)]
    assert cli("sweep", "--run", trained, "--tag", "g1") == 0
    assert cli("sweep", "--run", trained, "--tag", "g2") == 0
    g1 = list(csv.reader((trained / "metrics/g1.csv").open()))
    assert [float(r[0]) for r in g1[1:]] == [0, 1, 5, 20]
    assert sha256_file(trained / "metrics/g1.csv") == sha256_file(trained / "metrics/g2.csv")
    assert sha256_file(trained / "plots/g1.svg") == sha256_file(trained / "plots/g2.svg")
    assert (trained / "plots/g1.svg").read_text().lstrip().startswith("<?xml")
    assert cli("sweep", "--run", trained, "--grid", "", "--tag", "empty") != 0
    assert cli("sweep", "--run", trained, "--checkpoint", "baseline-s0", "--axis", "coherence", "--tag", "bc") != 0


def test_manifest_covers_every_file(trained):
    # runs last in this module: every artifact written above must be inventoried and intact
    assert Manifest.load(trained).verify() == []


def test_commands_need_a_run(tmp_path):
    assert cli("train", "--run", tmp_path / "nowhere") != 0
    assert cli("sample", "--run", tmp_path / "nowhere") != 0
