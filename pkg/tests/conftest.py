"""Session-scoped fixtures shared by the tracker and acceptance suites.

Training a desk-preset model takes a couple of minutes, so the benchmark
scenes and trained models are built once per session and reused.
"""

import pytest

from duotrack import data as D
from duotrack import metrics as M
from duotrack.cli import track_scene, train_model
from duotrack.config import build_config

N_TRAIN_SCENES = 30
N_BENCH_SCENES = 20
TRAIN_SEED = 101
BENCH_SEED = 202
MODEL_SEED = 7
TRAIN_STEPS = 1500


def _write_scenes(root, specs):
    for spec in specs:
        gt, det = D.synth_scene(spec)
        D.write_scene(det, root / spec.name, gt=gt)
    return sorted(d for d in root.iterdir() if d.is_dir())


@pytest.fixture(scope="session")
def train_scene_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("train_scenes")
    specs = D.benchmark_scene_specs(N_TRAIN_SCENES, seed=TRAIN_SEED,
                                    prefix="train")
    return _write_scenes(root, specs)


@pytest.fixture(scope="session")
def bench_scene_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench_scenes")
    specs = D.benchmark_scene_specs(N_BENCH_SCENES, seed=BENCH_SEED,
                                    prefix="bench")
    return _write_scenes(root, specs)


def _train(train_dirs, drop_prob):
    cfg = build_config(preset="desk", config_file=None,
                       overrides={"seed": MODEL_SEED, "steps": TRAIN_STEPS,
                                  "drop_prob": drop_prob})
    return train_model(train_dirs, cfg), cfg


@pytest.fixture(scope="session")
def trained_model(train_scene_dirs):
    """Desk-preset model trained with the default augmentations (drop 0.1)."""
    return _train(train_scene_dirs, drop_prob=0.1)


@pytest.fixture(scope="session")
def trained_model_no_drop(train_scene_dirs):
    """Same recipe but without the random-drop augmentation."""
    return _train(train_scene_dirs, drop_prob=0.0)


def benchmark_report(scene_dirs, adapter_factory, cfg) -> M.EvalReport:
    """Track every benchmark scene and aggregate CLEAR/IDF1 over them."""
    reports = []
    for seq_dir in scene_dirs:
        rows, scene = track_scene(seq_dir, adapter_factory(), cfg)
        hyp = D.Scene(scene.name, scene.width, scene.height, scene.fps)
        for frame, track_id, box, conf in rows:
            hyp.add(frame, D.SceneDetection(box, conf, track_id))
        reports.append(M.evaluate(D.load_scene(seq_dir, "gt"), hyp))
    return M.aggregate(reports)
