"""Exact mass evolution of the killed walk against Monte Carlo paths."""
import math

import numpy as np

from obstacle_walk.lattice import label_clusters, sample_environment
from obstacle_walk.walk import (
    conditional_law, evolve_mass, hitting_time_distribution, sample_paths, survival_probability,
)

env = sample_environment(2, [(-60, 60), (-60, 60)], 0.9, 7)
lab = label_clusters(env)
start = tuple(int(v) for v in lab.sites(lab.largest())[len(lab.sites(lab.largest())) // 2])
print("start", start)

profiles = evolve_mass(env, start, 200, times=[0, 10, 50, 100, 200])
for prof in profiles:
    print(f"t={prof.t:4d}  survival={prof.total_mass:.6e}  killed so far={prof.killed:.6f}  "
          f"left the box={prof.escaped:.2e}")

# survival decays geometrically once the walk has settled in a good pocket
a, b = profiles[-2], profiles[-1]
print(f"decay rate per step over t=100..200: {math.exp((math.log(b.total_mass) - math.log(a.total_mass)) / 100):.6f}")

n, samples = 30, 10**5
exact = survival_probability(env, start, n)
batch = sample_paths(env, start, n, samples, seed=1)
z = (batch.survival_estimate - exact) / math.sqrt(exact * (1 - exact) / samples)
print(f"P(tau > {n}): exact {exact:.6f}, Monte Carlo {batch.survival_estimate:.6f} (z = {z:+.2f})")

law = conditional_law(env, start, 100)
where = law.domain.sites[np.argmax(law.u)]
print(f"most likely position at t=100 given survival: {tuple(int(v) for v in where)} with prob {law.u.max():.4f}")

target = lab.sites(lab.largest())[::50]
F = hitting_time_distribution(env, start, target, 400)
print(f"P(hit every 50th cluster site by t=400) = {F[-1]:.4f}")
