"""Byte-level regression check of a small two-model run tree.

Set AEROBENCH_UPDATE_GOLDEN=1 to rewrite the stored digests after an
intended output change.
"""

import hashlib
import json
import os
from pathlib import Path

from aerobench import cli

GOLDEN = Path(__file__).parent / "golden" / "two_model_run.json"


def file_digests(root: Path) -> dict:
    return {str(p.relative_to(root).as_posix()): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_two_model_run_tree_matches_golden(tmp_path):
    root = tmp_path / "fx"
    assert cli.run(["synth", "--out", str(root), "--seed", "0", "--designs", "F=6,E=4,N=4",
                    "--vertices", "300", "400", "--workers", "2"]) == 0
    doc = json.loads((root / "config.json").read_text())
    doc.update(run_id="golden", bootstrap={"B": 200})
    doc["models"].append({"name": "idw-ext", "command": "{python} -m aerobench.adapters idw --pool {pool} --k 8 --power 2"})
    (root / "golden.json").write_text(json.dumps(doc))
    assert cli.run(["evaluate", "--config", str(root / "golden.json"), "--workers", "2"]) == 0
    digests = file_digests(root / "runs" / "golden")
    if os.environ.get("AEROBENCH_UPDATE_GOLDEN"):
        GOLDEN.write_text(json.dumps(digests, indent=2, sort_keys=True) + "\n")
    expected = json.loads(GOLDEN.read_text())
    assert sorted(digests) == sorted(expected)
    changed = [name for name in expected if digests[name] != expected[name]]
    assert not changed, f"outputs differ from the golden run: {changed}"
