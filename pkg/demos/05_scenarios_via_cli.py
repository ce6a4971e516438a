"""Running shipped scenarios through the command-line entry point and comparing them.

Uses shortened copies of the desk-scale configs, so it finishes in a minute or so.
"""

# %%
import json
import tempfile
from pathlib import Path

from amifml.cli import main

configs = Path(__file__).parents[1] / "configs"
work = Path(tempfile.mkdtemp())
reports = []
for name in ("desk-local", "desk-fed-daily", "desk-fed-daily-quant4", "desk-fed-daily-mask0.10"):
    cfg = json.loads((configs / f"{name}.json").read_text())
    cfg["data"].update(clusters=1, meters_per_cluster=4, train_days=20, test_days=3)
    cfg["model"]["epochs"] = 2
    path = work / f"{name}.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(work / name)]) == 0
    reports.append(str(work / name / "report.json"))

# %% One row per scenario; deltas are against the local-only baseline
main(["compare", *reports])
