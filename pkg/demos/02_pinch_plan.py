"""
Planning a pinch point
======================

Split a V-shaped contour, compare cutting it freehand with a trained
tensioning plan, and save the plan to disk.
"""
import tempfile

import numpy as np

from pinchcut.contour import Contour, segment_contour
from pinchcut.env import Scenario, evaluate
from pinchcut.harness import RunConfig
from pinchcut.search import PinchPlan, SearchConfig, build_plan
from pinchcut.trpo import TrainConfig

###############################################################################
# The contour is split at its sharpest corner; the corner becomes a joint
# area that gets pinned during the cut.

v = Contour(((5, 16), (12, 7), (19, 16)), id="V")
segments, joints = segment_contour(v, 2)
for s in segments:
    print("segment", s.id, s.path)
print("joint", joints[0])

###############################################################################
# A small search keeps the run to a minute or so. The plan holds the cutting
# order, one pinch point and policy per segment, and the joint pins.

cfg = RunConfig(search=SearchConfig(M_two=3, eval_trials=3), train=TrainConfig(iterations=4))
search, train = cfg.seeded()
plan = build_plan(v, 2, cfg.sheet, "MDRLT2", train, search)
print("order", plan.order, "pinch points", plan.tension, "pins", plan.joint_pins)

###############################################################################
# Score both on the same seeds. Lower is better: the count of mesh points
# that ended up on the wrong side of ideal versus actual cut.

seeds = list(range(5))
# with a budget this small the plan often only ties the freehand cut
freehand = Scenario(cfg.sheet, segments, plan.order)
print("no tension:", np.mean(evaluate(freehand, None, seeds)))
print("with plan: ", np.mean(evaluate(plan.scenario(cfg.sheet), plan.policies, seeds)))

with tempfile.TemporaryDirectory() as tmp:
    path = plan.to_json(tmp)
    again = PinchPlan.from_json(path)
    print("reloaded plan order", again.order)
