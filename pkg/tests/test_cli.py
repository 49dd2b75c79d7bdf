"""CLI: analyze/augment/preprocess/report end-to-end on phantom cohorts."""

import json
import subprocess
import sys

import numpy as np
import pytest

from windowshift import augment as augmod
from windowshift import stats as statsmod
from windowshift.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from windowshift.npyio import read_npy
from windowshift.phantom import PhantomSpec, generate_cohort, write_cohort
from windowshift.volume_io import read_volume, write_mask

SMALL = PhantomSpec(dims=(24, 24, 10), tumor_radius=3.0, noise_std=4.0)


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    cohort = generate_cohort(6, ("uniform", 0.0, 80.0), seed=17, base_spec=SMALL)
    write_cohort(cohort, root)
    return root


@pytest.fixture(scope="module")
def analyzed(cohort_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("analysis")
    code = main(["analyze", "--data", str(cohort_dir / "images"),
                 "--labels", str(cohort_dir / "masks"), "--out", str(out), "--p", "0.3"])
    assert code == EXIT_OK
    return out


def run_bytes(path_dir):
    return {p.relative_to(path_dir).as_posix(): p.read_bytes()
            for p in sorted(path_dir.rglob("*")) if p.is_file()}


class TestAnalyze:
    def test_outputs_exist(self, analyzed):
        assert (analyzed / "stats.json").exists()
        assert (analyzed / "foreground_histogram.csv").exists()
        assert (analyzed / "per_volume_medians.csv").exists()

    def test_derived_quantities_sane(self, analyzed):
        doc = json.loads((analyzed / "stats.json").read_text())
        assert doc["schema_version"] == 1
        window = doc["base_window"]
        bounds = doc["shift_bounds"]
        # Foreground is liver in [90, 170+noise] plus tumor near 50.
        assert window["level"] - window["width"] / 2 < 60
        assert window["level"] + window["width"] / 2 > 150
        assert bounds["level_low"] < bounds["level_high"]
        assert bounds["probability"] == 0.3

    def test_rerun_byte_identical(self, cohort_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(["analyze", "--data", str(cohort_dir / "images"),
                         "--labels", str(cohort_dir / "masks"), "--out", str(out)])
            assert code == EXIT_OK
            outs.append((out / "stats.json").read_bytes())
        assert outs[0] == outs[1]

    def test_threads_do_not_change_results(self, cohort_dir, tmp_path):
        outs = []
        for threads in ("1", "3"):
            out = tmp_path / f"t{threads}"
            code = main(["analyze", "--data", str(cohort_dir / "images"),
                         "--labels", str(cohort_dir / "masks"), "--out", str(out),
                         "--threads", threads])
            assert code == EXIT_OK
            outs.append((out / "stats.json").read_bytes())
        assert outs[0] == outs[1]

    def test_bounds_match_closed_form_on_known_cohort(self, tmp_path):
        # Liver-only shift bounds on constant-valued livers with uniform
        # boosts follow the boost distribution's own quantiles.
        root = tmp_path / "uniform"
        cohort = generate_cohort(
            200, ("uniform", 0.0, 100.0), seed=71,
            base_spec=PhantomSpec(dims=(12, 12, 6), tumor_radius=2.0, noise_std=0.0))
        write_cohort(cohort, root)
        out = tmp_path / "an"
        code = main(["analyze", "--data", str(root / "images"), "--labels", str(root / "masks"),
                     "--out", str(out), "--shift-classes", "1"])
        assert code == EXIT_OK
        doc = json.loads((out / "stats.json").read_text())
        liver_hu = PhantomSpec().liver_hu
        assert doc["shift_bounds"]["level_low"] == pytest.approx(liver_hu + 0.5, abs=2.0)
        assert doc["shift_bounds"]["level_high"] == pytest.approx(liver_hu + 99.5, abs=2.0)

    def test_unreadable_volume_listed_but_run_succeeds(self, cohort_dir, tmp_path, capsys):
        data = tmp_path / "images"
        labels = tmp_path / "masks"
        data.mkdir()
        labels.mkdir()
        for src in (cohort_dir / "images").iterdir():
            (data / src.name).write_bytes(src.read_bytes())
        for src in (cohort_dir / "masks").iterdir():
            (labels / src.name).write_bytes(src.read_bytes())
        (data / "broken.hvol").write_bytes(b"garbage")
        code = main(["analyze", "--data", str(data), "--labels", str(labels),
                     "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        assert "broken.hvol" in capsys.readouterr().err

    def test_all_volumes_unreadable_fails(self, tmp_path):
        data = tmp_path / "images"
        data.mkdir()
        (data / "a.hvol").write_bytes(b"garbage")
        (data / "b.hvol").write_bytes(b"junk")
        code = main(["analyze", "--data", str(data), "--labels", str(data),
                     "--out", str(tmp_path / "out")])
        assert code == EXIT_DATA

    def test_empty_dataset_is_data_error(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        code = main(["analyze", "--data", str(empty), "--labels", str(empty),
                     "--out", str(tmp_path / "out")])
        assert code == EXIT_DATA

    def test_missing_dir_is_config_error(self, tmp_path):
        code = main(["analyze", "--data", str(tmp_path / "nothere"),
                     "--labels", str(tmp_path / "nothere"), "--out", str(tmp_path / "out")])
        assert code == EXIT_CONFIG

    def test_bad_p_is_config_error(self, cohort_dir, tmp_path):
        code = main(["analyze", "--data", str(cohort_dir / "images"),
                     "--labels", str(cohort_dir / "masks"), "--out", str(tmp_path / "o"),
                     "--p", "1.7"])
        assert code == EXIT_CONFIG

    def test_config_file_with_flag_override(self, cohort_dir, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(
            f"data={cohort_dir / 'images'}\n"
            f"labels={cohort_dir / 'masks'}\n"
            f"out={tmp_path / 'from_file'}\n"
            "p=0.2\n"
        )
        code = main(["analyze", "--config", str(config), "--out", str(tmp_path / "flag_wins")])
        assert code == EXIT_OK
        assert not (tmp_path / "from_file").exists()
        doc = json.loads((tmp_path / "flag_wins" / "stats.json").read_text())
        assert doc["shift_bounds"]["probability"] == 0.2


class TestAugmentAndPreprocess:
    def test_p_zero_equals_preprocess(self, cohort_dir, analyzed, tmp_path):
        aug_out = tmp_path / "aug"
        pre_out = tmp_path / "pre"
        stats = str(analyzed / "stats.json")
        assert main(["augment", "--data", str(cohort_dir / "images"),
                     "--labels", str(cohort_dir / "masks"), "--stats", stats,
                     "--out", str(aug_out), "--seed", "5", "--epochs", "1", "--p", "0.0"]) == EXIT_OK
        assert main(["preprocess", "--data", str(cohort_dir / "images"),
                     "--labels", str(cohort_dir / "masks"), "--stats", stats,
                     "--out", str(pre_out)]) == EXIT_OK
        aug_files = sorted((aug_out / "e000").glob("*.npy"))
        assert aug_files
        for aug_file in aug_files:
            pre_file = pre_out / aug_file.name
            assert pre_file.exists()
            assert aug_file.read_bytes() == pre_file.read_bytes()

    def test_same_seed_byte_identical(self, cohort_dir, analyzed, tmp_path):
        stats = str(analyzed / "stats.json")
        snapshots = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["augment", "--data", str(cohort_dir / "images"),
                         "--labels", str(cohort_dir / "masks"), "--stats", stats,
                         "--out", str(out), "--seed", "11", "--epochs", "2"]) == EXIT_OK
            snapshots.append(run_bytes(out))
        assert snapshots[0] == snapshots[1]

    def test_threads_byte_identical(self, cohort_dir, analyzed, tmp_path):
        stats = str(analyzed / "stats.json")
        snapshots = []
        for threads in ("1", "4"):
            out = tmp_path / f"thr{threads}"
            assert main(["augment", "--data", str(cohort_dir / "images"),
                         "--labels", str(cohort_dir / "masks"), "--stats", stats,
                         "--out", str(out), "--seed", "11", "--epochs", "2",
                         "--threads", threads]) == EXIT_OK
            snapshots.append(run_bytes(out))
        assert snapshots[0] == snapshots[1]

    def test_different_seed_differs(self, cohort_dir, analyzed, tmp_path):
        stats = str(analyzed / "stats.json")
        outs = []
        for seed in ("1", "2"):
            out = tmp_path / f"s{seed}"
            assert main(["augment", "--data", str(cohort_dir / "images"),
                         "--labels", str(cohort_dir / "masks"), "--stats", stats,
                         "--out", str(out), "--seed", seed, "--p", "1.0"]) == EXIT_OK
            outs.append(run_bytes(out))
        assert outs[0] != outs[1]

    def test_manifest_replay_reproduces_slices(self, cohort_dir, analyzed, tmp_path):
        stats_path = analyzed / "stats.json"
        out = tmp_path / "replay"
        policy_path = tmp_path / "policy.json"
        doc = statsmod.load_stats_document(stats_path)
        shift = statsmod.shift_policy_from_document(doc, probability=0.8)
        policy = augmod.AugmentationPolicy((
            augmod.window_shift_spec(shift),
            augmod.gamma_spec(probability=0.5),
            augmod.multiplicative_brightness_spec(probability=0.5),
            augmod.flip_spec(probability=0.5),
        ))
        augmod.save_policy(policy_path, policy)
        assert main(["augment", "--data", str(cohort_dir / "images"),
                     "--labels", str(cohort_dir / "masks"), "--stats", str(stats_path),
                     "--policy", str(policy_path), "--out", str(out), "--seed", "23"]) == EXIT_OK

        base = statsmod.window_from_document(doc)
        norm = statsmod.normalization_from_document(doc)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 23
        volumes = {}
        for entry in manifest["slices"][::7]:
            sid = entry["source_id"]
            if sid not in volumes:
                volumes[sid] = read_volume(cohort_dir / "images" / f"{sid}.hvol",
                                           mask_path=cohort_dir / "masks" / f"{sid}.hvol")
            vol, mask = volumes[sid]
            audit = {"window": entry["window"], "window_shifted": entry["window_shifted"],
                     "ops": entry["ops"]}
            pixels, _ = augmod.replay(vol.axial_slice(entry["slice_index"]),
                                      mask.axial_slice(entry["slice_index"]), audit, base, norm)
            written = read_npy(out / entry["file"])
            assert np.array_equal(pixels, written)

    def test_seed_collision_warns(self, cohort_dir, analyzed, tmp_path):
        stats = str(analyzed / "stats.json")
        out = tmp_path / "coll"
        args = ["augment", "--data", str(cohort_dir / "images"),
                "--labels", str(cohort_dir / "masks"), "--stats", stats,
                "--out", str(out), "--seed", "3"]
        assert main(args) == EXIT_OK
        with pytest.warns(UserWarning, match="seed"):
            assert main(args) == EXIT_OK

    def test_missing_stats_is_config_error(self, cohort_dir, tmp_path):
        code = main(["augment", "--data", str(cohort_dir / "images"),
                     "--labels", str(cohort_dir / "masks"),
                     "--stats", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "x"), "--seed", "1"])
        assert code == EXIT_CONFIG

    def test_preprocess_without_labels_takes_all_slices(self, cohort_dir, analyzed, tmp_path):
        out = tmp_path / "nolabels"
        assert main(["preprocess", "--data", str(cohort_dir / "images"),
                     "--stats", str(analyzed / "stats.json"), "--out", str(out)]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        # 6 phantoms x 10 axial slices each
        assert len(manifest["slices"]) == 60


class TestReport:
    def test_perfect_predictions_and_difficult_listing(self, tmp_path):
        root = tmp_path / "data"
        diffs = [5.0, 10.0, 15.0, 30.0, 60.0]
        cohort = []
        for i, d in enumerate(diffs):
            spec = PhantomSpec(dims=(20, 20, 10), tumor_radius=2.5, noise_std=0.0,
                               liver_hu=100.0, tumor_hu=100.0 - d,
                               seed=i, source_id=f"p{i:02d}")
            from windowshift.phantom import generate
            cohort.append(generate(spec))
        write_cohort(cohort, root)
        analysis = tmp_path / "an"
        assert main(["analyze", "--data", str(root / "images"), "--labels", str(root / "masks"),
                     "--out", str(analysis)]) == EXIT_OK

        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        for vol, mask, _ in cohort:
            write_mask(mask, pred_dir / f"{vol.source_id}.hvol", spacing=vol.spacing)

        out = tmp_path / "report"
        assert main(["report", "--data", str(root / "images"), "--labels", str(root / "masks"),
                     "--stats", str(analysis / "stats.json"), "--pred", str(pred_dir),
                     "--out", str(out)]) == EXIT_OK

        dice_doc = json.loads((out / "dice_report.json").read_text())
        assert dice_doc["dice"] == 1.0
        assert all(entry["dice"] == 1.0 for entry in dice_doc["per_volume"])

        contrast_doc = json.loads((out / "contrast_report.json").read_text())
        flagged = [e["source_id"] for e in contrast_doc["per_volume"] if e["difficult"]]
        assert flagged == ["p00", "p01", "p02"]

        header = (out / "separation.csv").read_text().splitlines()[0]
        assert header == "source_id,shifted_level,alpha,sep_base,sep_shifted,sep_additive"

    def test_separation_csv_shows_shift_recovering_contrast(self, tmp_path):
        # Stats come from a normally-timed cohort; the reported volume is
        # over-boosted so its liver clips under the base window.
        from windowshift.phantom import generate
        from dataclasses import replace
        base_spec = PhantomSpec(dims=(28, 28, 12), tumor_radius=3.5, noise_std=5.0,
                                liver_hu=120.0, tumor_hu=90.0)
        normal = tmp_path / "normal"
        write_cohort(generate_cohort(12, ("uniform", 0.0, 40.0), seed=31,
                                     base_spec=base_spec), normal)
        analysis = tmp_path / "an"
        assert main(["analyze", "--data", str(normal / "images"),
                     "--labels", str(normal / "masks"), "--out", str(analysis)]) == EXIT_OK

        over = tmp_path / "over"
        write_cohort([generate(replace(base_spec, contrast_boost=100.0, seed=77,
                                       source_id="over"))], over)
        out = tmp_path / "rep"
        assert main(["report", "--data", str(over / "images"), "--labels", str(over / "masks"),
                     "--stats", str(analysis / "stats.json"), "--out", str(out)]) == EXIT_OK
        rows = (out / "separation.csv").read_text().splitlines()
        assert len(rows) == 2
        _, _, _, sep_base, sep_shifted, sep_additive = rows[1].split(",")
        assert float(sep_shifted) > float(sep_base)
        assert float(sep_additive) == pytest.approx(float(sep_base), abs=1e-6)


class TestPipelineWorker:
    def test_worker_round_trip(self, cohort_dir, analyzed, tmp_path):
        from windowshift.npyio import write_npy
        from windowshift.rng import slice_stream
        from windowshift.augment import apply_policy
        stats_path = analyzed / "stats.json"
        doc = statsmod.load_stats_document(stats_path)
        base = statsmod.window_from_document(doc)
        norm = statsmod.normalization_from_document(doc)
        policy = augmod.make_window_shift_policy(statsmod.shift_policy_from_document(doc, 0.9))

        vol, mask = read_volume(cohort_dir / "images" / "phantom-000.hvol",
                                mask_path=cohort_dir / "masks" / "phantom-000.hvol")
        slice_path = tmp_path / "in.npy"
        mask_path = tmp_path / "in_mask.npy"
        write_npy(slice_path, vol.axial_slice(5))
        write_npy(mask_path, mask.axial_slice(5))

        requests = [
            json.dumps({"op": "augment", "slice": str(slice_path), "mask": str(mask_path),
                        "source_id": "phantom-000", "slice_index": 5, "epoch": 2,
                        "out": str(tmp_path / "out.npy"), "out_mask": str(tmp_path / "out_mask.npy")}),
            json.dumps({"op": "bogus"}),
            json.dumps({"op": "shutdown"}),
        ]
        proc = subprocess.run(
            [sys.executable, "-m", "windowshift.cli", "pipeline-worker",
             "--stats", str(stats_path), "--seed", "77", "--p", "0.9"],
            input="\n".join(requests) + "\n", capture_output=True, text=True, timeout=120)
        lines = [json.loads(line) for line in proc.stdout.strip().splitlines()]
        assert lines[0]["ready"] is True
        assert lines[1]["ok"] is True
        assert lines[2]["ok"] is False
        assert lines[3].get("bye") is True

        expected, _, audit = apply_policy(vol.axial_slice(5), mask.axial_slice(5), policy,
                                          base, norm, slice_stream(77, "phantom-000", 5, 2))
        assert np.array_equal(read_npy(tmp_path / "out.npy"), expected)
        assert lines[1]["audit"]["window"] == audit["window"]
