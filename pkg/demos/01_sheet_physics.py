"""
Sheet physics
=============

A walk through the point-mass sheet: pinning, sagging, pulling a gripped
point and cutting through a stretched sheet.
"""
import numpy as np

from pinchcut.mesh import Direction, Mesh, PhysicsConfig, apply_tension, set_tension, sever, step

###############################################################################
# A 25x25 sheet hung from its four corners sags under gravity while the
# in-plane layout stays on the grid.

sheet = Mesh(25, 25)
for _ in range(300):
    step(sheet)
print("lowest point (mm):", sheet.pos[:, 2].min().round(3))
print("in-plane drift:", np.abs(sheet.pos[:, :2] - sheet.rest[:, :2]).max())

###############################################################################
# The benchmark uses a pre-stretched sheet clamped on all four edges. Gripping
# the centre and pulling it moves that point exactly and drags its neighbours.

bench = PhysicsConfig(prestrain=0.4, constraint_iterations=10)
gauze = Mesh(25, 25, bench, clamp_edges=True)
centre = gauze.index(12, 12)
set_tension(gauze, centre)
for _ in range(3):
    apply_tension(gauze, Direction.PLUS_X)
    step(gauze)
print("gripped point offset:", gauze.pos[centre] - gauze.rest[centre])
print("right neighbour moved by:", (gauze.pos[centre + 1] - gauze.rest[centre + 1]).round(3))

###############################################################################
# Severing a row of points opens a gap: the stretched fabric on either side
# retracts away from the cut.

gauze = Mesh(25, 25, bench, clamp_edges=True)
row = [gauze.index(c, 12) for c in range(8, 17)]
for i in row:
    sever(gauze, i)
for _ in range(50):
    step(gauze)
above, below = gauze.index(12, 13), gauze.index(12, 11)
print("gap opened by (mm):", round(gauze.pos[above, 1] - gauze.pos[below, 1] - 2.0, 3))
