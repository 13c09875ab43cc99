#!/usr/bin/env python3
"""
COREFP Experiment Demo
Shows evaluate → identify → insight-curves working together

This demonstrates the complete COREFP workflow:
1. EVALUATE: train the zoo, fingerprint the victim, calibrate and judge every suspect
2. IDENTIFY: re-judge single suspect files against the saved fingerprint
3. CURVES: export score/radius and score-gap tables from the checkpoint log

Usage:
    python demo_experiment.py
"""

import subprocess
import sys
import tempfile
from pathlib import Path

import yaml

SUSPECTS = ["victim", "hm_sa-00", "pm_fa-00", "em_sa_pr-00"]


def corefp(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "corefp", *args], capture_output=True, text=True)


def run_corefp_demo() -> int:
    """Demonstrate the complete COREFP workflow on the built-in demo config"""
    print("COREFP Experiment Demo")
    print("evaluate → identify → insight-curves\n")

    with tempfile.TemporaryDirectory() as tmpdir:
        out = Path(tmpdir) / "run"

        print("Step 1: EVALUATE (zoo, fingerprint, calibration, verdicts)")
        result = corefp("evaluate", "--config", "demo", "--out", str(out))
        if result.returncode != 0:
            print(f"Evaluate failed ({result.returncode}): {result.stderr}")
            return result.returncode
        print(result.stdout)

        report = yaml.safe_load((out / "report.txt").read_text())
        print(f"Fingerprint: {len(report['fingerprint']['labels'])} core points, "
              f"config hash {report['config_hash'][:16]}...")
        for method, errors in report['breakdown'].items():
            print(f"  {method:<8} error rate by kind: {errors}")

        print("\nStep 2: IDENTIFY (single suspects against the saved fingerprint)")
        for model_id in SUSPECTS:
            result = corefp("identify", "--fingerprint", str(out / "fingerprint" / "fingerprint.json"),
                            "--suspect", str(out / "zoo" / f"{model_id}.json"), "--out", str(out))
            line = result.stdout.strip() if result.returncode == 0 else f"{model_id}: error {result.stderr.strip()}"
            print(f"  {line}")

        print("\nStep 3: CURVES (checkpoint log exports)")
        result = corefp("insight-curves", "--config", "demo", "--out", str(out))
        if result.returncode != 0:
            print(f"Curves failed ({result.returncode}): {result.stderr}")
            return result.returncode
        print(result.stdout)

        print("Experiment complete; every artifact is listed with its SHA3-256 hash in manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(run_corefp_demo())
