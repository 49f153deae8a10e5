"""Integration smoke: the deformation CLI driven by this service end to end.

Three prompts run 100 iterations each on a quadruped mesh at reduced
resolution; the 20-iteration-averaged semantic loss must be strictly
decreasing for every prompt. The deformation engine is exercised purely
through its CLI and the wire protocol.
"""

import csv
import json
import shutil
import subprocess
import sys
import threading
from pathlib import Path

import pytest

from clip_service.server import GuidanceServer

FIXTURES = Path(__file__).parent / "fixtures"
PROMPTS = ("giraffe", "elephant", "hippo")

DEFORM_CLI = shutil.which("jacfield")


def run_deform(tmp_path, prompt, endpoint):
    config = {
        "mesh": str(FIXTURES / "quadruped.obj"),
        "prompt": prompt,
        "base_prompt": "animal",
        "output_dir": str(tmp_path / f"out-{prompt}"),
        "optimizer": {"iterations": 100, "learning_rate": 0.002},
        "losses": {"alpha": 0.0, "beta": 0.1, "semantic_weight": 1.0},
        "cameras": {"count": 3, "seed": 4, "radius": 2.5, "fov": 45.0,
                    "resolution": 64, "resample": False},
        "patches": {"size": 16, "stride": 16},
        "provider": {"kind": "remote", "endpoint": endpoint},
    }
    config_path = tmp_path / f"run-{prompt}.json"
    config_path.write_text(json.dumps(config))
    proc = subprocess.run(
        [DEFORM_CLI, "deform", "--config", str(config_path)],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    with open(tmp_path / f"out-{prompt}" / "loss.csv") as fh:
        rows = list(csv.DictReader(fh))
    return [float(row["semantic"]) for row in rows]


@pytest.mark.skipif(DEFORM_CLI is None, reason="deformation CLI not installed")
@pytest.mark.parametrize("prompt", PROMPTS)
def test_semantic_loss_decreases_in_20_iteration_buckets(tmp_path, prompt):
    server = GuidanceServer(deterministic=True)
    thread = threading.Thread(target=server.serve_forever,
                              kwargs={"max_sessions": 1}, daemon=True)
    thread.start()
    try:
        semantic = run_deform(tmp_path, prompt, server.endpoint)
    finally:
        server.close()
    assert len(semantic) == 100
    buckets = [sum(semantic[i:i + 20]) / 20.0 for i in range(0, 100, 20)]
    for earlier, later in zip(buckets, buckets[1:]):
        assert later < earlier, f"{prompt}: buckets {buckets}"
