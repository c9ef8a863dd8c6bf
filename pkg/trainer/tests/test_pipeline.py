"""End-to-end: train on the procedural dataset, export, and validate the
artifacts through the consuming toolkit's command line."""

import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from approxtrain import RESNET8_SMALL, make_textures, train_and_export
from approxtrain.datasets import DatasetUnavailable, load_cifar10


def approxlab(*argv):
    return subprocess.run([sys.executable, "-m", "approxlab.cli", *argv],
                          capture_output=True, text=True)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    train_x, train_y, eval_x, eval_y = make_textures(
        n_train=3000, n_eval=300, seed=0)
    manifest = train_and_export(
        arch=RESNET8_SMALL, train_x=train_x, train_y=train_y, eval_x=eval_x,
        eval_y=eval_y, epochs=8, seed=0, out_dir=str(out),
        log=lambda s: None)
    return out, manifest


@pytest.fixture(scope="module")
def baseline_library(tmp_path_factory):
    d = tmp_path_factory.mktemp("lib")
    r = approxlab("gen", "baselines", "--bits", "8", "-O", str(d))
    assert r.returncode == 0, r.stderr
    return d / "library.json"


class TestExportArtifacts:
    def test_manifest_structure(self, exported):
        out, manifest = exported
        assert manifest.architecture["conv_layers"] == 9
        assert manifest.architecture["stages"] == 3
        m = json.loads((out / "manifest.json").read_text())
        assert m["files"]["network"] == "net.json"
        assert set(os.listdir(out)) >= {"net.json", "net.bin",
                                        "eval_split.json", "eval_split.bin"}

    def test_quantization_gap_within_three_points(self, exported):
        _, manifest = exported
        assert manifest.float_accuracy - manifest.int8_accuracy <= 0.03

    def test_stored_mult_counts_are_consistent(self, exported):
        out, _ = exported
        envelope = json.loads((out / "net.json").read_text())
        convs = [l for l in envelope["layers"] if l["type"] == "conv2d"]
        stem = convs[0]
        c, h, w = envelope["input_shape"]
        ho = (h + 2 * stem["pad"] - stem["kernel"][0]) // stem["stride"] + 1
        expected = stem["out_channels"] * ho * ho * c * 9
        assert stem["mults"] == expected


class TestPrimaryInterop:
    def test_loader_accepts_export_and_accuracy_matches(self, exported,
                                                        baseline_library,
                                                        tmp_path):
        out, manifest = exported
        sweep = tmp_path / "sweep"
        r = approxlab("resilience", "full", "--net", str(out / "net.json"),
                      "--dataset", str(out / "eval_split.json"),
                      "--library", str(baseline_library),
                      "--luts", "mul8_exact", "-O", str(sweep))
        assert r.returncode == 0, r.stderr
        baseline = float(read_csv(sweep / "baseline.csv")[0]
                         ["baseline_accuracy_pct"])
        # primary's exact-multiplier accuracy within 0.5 points of the
        # exporter's own integer inference on the shared split
        assert abs(baseline / 100 - manifest.int8_accuracy) <= 0.005

    def test_replacement_sweep_qualitative_shape(self, exported,
                                                 baseline_library, tmp_path):
        # Curate the library through the consuming toolkit, then replace the
        # multiplier everywhere with each curated entry in turn.
        out, manifest = exported
        curated = tmp_path / "curated"
        r = approxlab("curate", "--library", str(baseline_library),
                      "--k", "4", "-O", str(curated))
        assert r.returncode == 0, r.stderr
        sweep = tmp_path / "sweep2"
        r = approxlab("resilience", "full", "--net", str(out / "net.json"),
                      "--dataset", str(out / "eval_split.json"),
                      "--library", str(curated / "library.json"),
                      "-O", str(sweep))
        assert r.returncode == 0, r.stderr
        rows = read_csv(sweep / "full.csv")
        chance = 100.0 / 10
        gentle = [r for r in rows if float(r["mae_pct"]) <= 0.1]
        coarse = [r for r in rows if float(r["mae_pct"]) >= 0.6]
        assert gentle and coarse  # both regimes represented after curation
        for row in gentle:
            drop = float(row["accuracy_drop_pct"])
            assert drop < 2.0, (row["multiplier"], drop)
        for row in coarse:
            acc = float(row["accuracy_pct"])
            assert acc <= chance + 15.0, (row["multiplier"], acc)

    def test_layerwise_sweep_runs(self, exported, baseline_library, tmp_path):
        out, _ = exported
        d = tmp_path / "lw"
        r = approxlab("resilience", "sweep", "--net", str(out / "net.json"),
                      "--dataset", str(out / "eval_split.json"),
                      "--library", str(baseline_library),
                      "--luts", "mul8_trunc6", "--limit", "60",
                      "-O", str(d))
        assert r.returncode == 0, r.stderr
        rows = read_csv(d / "layerwise.csv")
        assert len(rows) == 10  # 9 convs + the dense head
        fractions = [float(r["mult_fraction_pct"]) for r in rows]
        # CSV fractions are rounded to 2 decimals; drift <= rows * 0.005
        assert abs(sum(fractions) - 100.0) <= 0.005 * len(rows)


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        train_x, train_y, eval_x, eval_y = make_textures(
            n_train=600, n_eval=100, seed=5)
        outs = []
        for name in ("a", "b"):
            d = tmp_path / name
            train_and_export(arch=RESNET8_SMALL, train_x=train_x,
                             train_y=train_y, eval_x=eval_x, eval_y=eval_y,
                             epochs=2, seed=5, out_dir=str(d),
                             max_gap=1.0, log=lambda s: None)
            outs.append((d / "net.json").read_bytes()
                        + (d / "net.bin").read_bytes())
        assert outs[0] == outs[1]


class TestCifarScaled:
    def test_cifar_pipeline(self, tmp_path, baseline_library):
        """Scaled CIFAR-10 reproduction; skips when the dataset cannot be
        fetched (no general network access in some environments)."""
        cache = os.environ.get("APPROXTRAIN_CACHE", str(tmp_path / "data"))
        try:
            train_x, train_y, eval_x, eval_y = load_cifar10(cache)
        except DatasetUnavailable as e:
            pytest.skip(f"CIFAR-10 unavailable: {e}")
        out = tmp_path / "cifar"
        manifest = train_and_export(
            arch=RESNET8_SMALL, train_x=train_x[:8000], train_y=train_y[:8000],
            eval_x=eval_x[:500], eval_y=eval_y[:500], epochs=3, seed=0,
            out_dir=str(out), log=lambda s: None)
        assert manifest.float_accuracy - manifest.int8_accuracy <= 0.03
        r = approxlab("resilience", "full", "--net", str(out / "net.json"),
                      "--dataset", str(out / "eval_split.json"),
                      "--library", str(baseline_library),
                      "--luts", "mul8_exact", "-O", str(tmp_path / "cs"))
        assert r.returncode == 0, r.stderr
