"""
A miniature benchmark
=====================

Run every algorithm on two small contours and print the report table. The
full benchmark is ``python -m pinchcut run``; this uses a tiny search
budget so it finishes quickly.
"""
import tempfile

from pinchcut.cli import format_summary
from pinchcut.contour import Contour
from pinchcut.harness import ALGORITHMS, RunConfig, report, run_testbed
from pinchcut.search import SearchConfig
from pinchcut.trpo import TrainConfig

testbed = [
    (Contour(((6, 8), (11, 15), (19, 18)), id="arc"), 1),
    (Contour(((5, 16), (12, 7), (19, 16)), id="V"), 2),
]
cfg = RunConfig(search=SearchConfig(M_two=2, M_many=2, eval_trials=2),
                train=TrainConfig(iterations=2, batch_size=200), trials=4)

runs = run_testbed(testbed, ALGORITHMS, cfg)
rows = [r.row for r in runs]
print(format_summary(rows))

###############################################################################
# The same rows as written to disk: raw per-trial scores, a summary with the
# improvement over the untensioned baseline, and a JSON document.

with tempfile.TemporaryDirectory() as tmp:
    paths = report(rows, tmp)
    print(paths["raw"].read_text())
