"""The sweep benchmark runs and both kernel paths agree."""
from __future__ import annotations

import subprocess
import sys
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_sweep.py"


def test_benchmark_smoke():
    out = subprocess.run([sys.executable, str(BENCH), "--buses", "20", "--steps", "4", "--repeat", "1"],
                         capture_output=True, text=True, check=True)
    assert "numpy" in out.stdout
