"""Feature recording through the front-end toolkit's CLI.

The trainer never imports the front end; it shells out to `tdfex` so the
features it trains on are exactly what the deployed chain produces. The
normalization statistics (mu/sigma inside the calibration) are derived
from the training split only and reused verbatim for the test split.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

TDFEX = [sys.executable, "-m", "tdfex"]


def _run(args: list[str]) -> str:
    proc = subprocess.run(TDFEX + args, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"tdfex {' '.join(args)} failed "
                           f"(rc={proc.returncode}): {proc.stderr.strip()}")
    return proc.stdout


def calibrate(output: str | Path, corpus_manifest: str | Path | None = None,
              corpus_limit: int = 100, seed: int = 0) -> Path:
    """Derive the front-end calibration, conditioning mu/sigma on the corpus."""
    args = ["--seed", str(seed), "calibrate", "-o", str(output)]
    if corpus_manifest is not None:
        args += ["--corpus", str(corpus_manifest), "--corpus-limit", str(corpus_limit)]
    _run(args)
    return Path(output)


def record_features(manifest: str | Path, outdir: str | Path, calib: str | Path,
                    seed: int = 0) -> Path:
    """Run the time-domain chain over a manifest; NORM features + index."""
    _run(["--seed", str(seed), "features", str(manifest), "-o", str(outdir),
          "--stage", "norm", "--calib", str(calib)])
    index = Path(outdir) / "index.jsonl"
    if not index.exists():
        raise RuntimeError(f"recording produced no index at {index}")
    return index


def classify_features(feature_file: str | Path, weights: str | Path) -> int:
    """Class index the deployed engine assigns to one recorded stream."""
    out = _run(["classify", str(feature_file), "--weights", str(weights)])
    return int(json.loads(out)["class_index"])
