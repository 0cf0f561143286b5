import json

import pytest

from stormsift.ingest import load_dataset, write_alerts_jsonl, write_labels_jsonl, write_sop_file
from stormsift.pipeline import (
    ArtifactPaths,
    RunConfig,
    calibrate_pipeline,
    save_artifacts,
    train_pipeline,
)
from stormsift.simulate import simulate_dataset

# Small but non-trivial: 2 regions, rare storms, heartbeats, vague services.
FAST_CONFIG = {
    "walk": {"walks_per_node": 6, "walk_length": 8, "rng_seed": 11},
    "embed": {"dimension": 24, "epochs": 4, "rng_seed": 12},
    "text": {"dimension": 64, "buckets": 2**14, "epochs": 2, "rng_seed": 14},
    "bank": {"max_per_label": 40, "rng_seed": 13},
    "sim": {
        "services": 15,
        "storms": 10,
        "regions": 2,
        "noise_types": 2,
        "rng_seed": 3,
    },
}


def write_dataset(dataset, out):
    (out / "sops").mkdir(parents=True, exist_ok=True)
    write_alerts_jsonl(out / "alerts.jsonl", dataset.alerts)
    write_labels_jsonl(out / "labels.jsonl", dataset.labels or [])
    for sop_id in sorted(dataset.sops):
        write_sop_file(out / "sops", dataset.sops[sop_id])


@pytest.fixture(scope="session")
def fast_config():
    return RunConfig.from_dict(FAST_CONFIG)


@pytest.fixture(scope="session")
def fast_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(FAST_CONFIG, indent=2), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def pipeline_env(tmp_path_factory, fast_config):
    """A simulated dataset with trained + calibrated artifacts, built once."""
    root = tmp_path_factory.mktemp("pipeline")
    data_dir = root / "data"
    dataset = simulate_dataset(fast_config.sim)
    write_dataset(dataset, data_dir)
    loaded = load_dataset(data_dir / "alerts.jsonl", data_dir / "sops", data_dir / "labels.jsonl")

    paths = ArtifactPaths(root / "artifacts")
    state = train_pipeline(loaded, fast_config)
    save_artifacts(state, paths)
    calibrate_pipeline(loaded, fast_config, paths)
    return {
        "root": root,
        "data_dir": data_dir,
        "dataset": loaded,
        "paths": paths,
        "config": fast_config,
        "cutoff": state.cutoff,
    }
