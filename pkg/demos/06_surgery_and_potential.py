"""Eigenvalue shifts under obstacle surgery and the potential theory behind the bounds."""
import math

from obstacle_walk.lattice import empty_environment, plant_vacant_ball
from obstacle_walk.surgery import (
    capacity, eig_shift, escape_probability, harnack_ratio, iterated_box_selection, make_op,
    removal_gain_check,
)
from obstacle_walk.verify import nested_pair
from obstacle_walk.surgery import drop_upper_bound_check

env = empty_environment([(-30, 30), (-30, 30)]).close_sites([(0, 0), (1, 0), (0, 1), (1, 1)])
res = removal_gain_check(env, (0, 0), 20, 0.3)
print(f"removing {res.m} central obstacles from a disc of radius 20: gain {res.gain:.3e}, "
      f"floor shape {res.floor_shape:.3e}, fitted constant {res.fitted_constant:.3f}")

shift = eig_shift(make_op(env, "close_box", [(10, 10), (10, 11)]))
print(f"closing two more sites: lambda {shift.lambda_before:.8f} -> {shift.lambda_after:.8f}")

d1, _, removed = nested_pair(11)
chk = drop_upper_bound_check(d1, removed)
print(f"drop bound on a random pair: actual {chk.actual_drop:.3e} <= 2q/(1-q) = {chk.bound:.3e} (q={chk.q:.3f})")

cap = capacity([(0, 0, 0)])
print(f"\ncapacity of a point in Z^3: {cap.capacity:.6f} from boxes {cap.box_sizes} -> {cap.box_values}")
for R in (32, 64, 128):
    print(f"escape before return from the centre of a disc of radius {R}: "
          f"{escape_probability(R):.5f}, times log R = {escape_probability(R) * math.log(R):.4f}")
for R2 in (0, 10, 20, 30):
    h = harnack_ratio(40, R2, max_sources=64)
    print(f"Harnack ratio R1=40 R2={R2}: {h.ratio:.3f}")

fixture = plant_vacant_ball(empty_environment([(-40, 40), (-40, 40)], closed=True), (0, 0), 14)
for step in iterated_box_selection(fixture, 1, 3):
    print(f"closed box at {step.anchor}: drop {step.actual_drop:.2e} <= bound {step.predicted_bound:.2e}")
