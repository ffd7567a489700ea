"""End-to-end command-line pipeline in a temporary directory.

Generates a scenario container, tracks it twice (with and without the
re-check stage), and scores both result files against the generated
ground truth — the same flow the acceptance suite automates.
"""

import tempfile
from pathlib import Path

from omctrack.cli import main

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    container = root / "scene.omcf"
    gt = root / "gt.txt"

    print("$ omctrack synth ...")
    main(["synth", "--out", str(container), "--gt", str(gt),
          "--dropped", str(root / "dropped.csv"),
          "--targets", "5", "--frames", "80", "--grid", "16x16",
          "--dropout", "0.25", "--seed", "4"])

    for label, extra in (("full pipeline", []),
                         ("detector only", ["--disable-recheck"])):
        results = root / f"{label.split()[0]}.txt"
        print(f"\n$ omctrack track ... ({label})")
        main(["track", "--container", str(container), "--out", str(results)]
             + extra)
        print(f"\n$ omctrack eval ... ({label})")
        main(["eval", "--gt", str(gt), "--results", str(results)])
