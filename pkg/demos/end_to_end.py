"""Simulate a deployment, build ground truth, and report it, all through the CLI.

Usage: python demos/end_to_end.py [scenario.json] [workdir]

Writes the simulated inputs, the ground-truth trajectory and the
range-bucketed report into ``workdir`` (default: a temporary directory),
then prints the headline numbers.
"""

import json
import sys
import tempfile
from pathlib import Path

from rts_uncertainty.cli import main

here = Path(__file__).parent
scenario = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "scenarios" / "line_datasheet.json"
work = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(tempfile.mkdtemp(prefix="rts-demo-"))

for argv in (
    ["simulate", "--config", str(scenario), "--out", str(work)],
    ["pipeline", "--config", str(work / "config.json")],
    ["analyze", "--config", str(work / "config.json")],
):
    code = main(argv)
    if code:
        sys.exit(code)

report = json.loads((work / "out" / "report.json").read_text())
print("prism spread, median mm per range bucket:")
for bucket, s in report["prism_mm"]["total"].items():
    value = "-" if s is None else f"{s['median']:.2f}"
    print(f"  {bucket:>8}: {value}")
pose = report["pose"]
print(f"pose translation median: {pose['translation_mm']['median']:.2f} mm")
print(f"pose rotation median:    {pose['rotation_mrad']['median']:.3f} mrad")
print(f"outputs in {work / 'out'}")
