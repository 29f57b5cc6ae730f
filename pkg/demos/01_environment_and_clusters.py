"""Sample an obstacle field, plant a vacant disc and look at the open clusters."""
import tempfile
from pathlib import Path

from obstacle_walk.lattice import (
    label_clusters, load_environment, origin_spans, plant_vacant_ball, sample_environment,
    save_environment,
)

env = sample_environment(2, [(-100, 99), (-100, 99)], p_open=0.7, seed=42)
print(f"box {env.box}, {env.n_closed} obstacles out of {env.n_sites} sites "
      f"({env.n_closed / env.n_sites:.4f}, expected 0.3)")

# the bit at a site depends on (seed, site) only, so a sub-box regenerates identically
sub = sample_environment(2, [(0, 9), (0, 9)], 0.7, 42)
print("sub-box agrees with the big box:", (sub.closed == env.closed[100:110, 100:110]).all())

lab = label_clusters(env)
big = lab.largest()
print(f"{lab.n_clusters} clusters; largest has {lab.sizes[big]} sites, spans the box: {lab.spanning[big]}")
print("origin in a spanning cluster:", origin_spans(env))

planted = plant_vacant_ball(env, (30, -20), 8)
print(f"planted disc of radius 8 at (30, -20): {env.n_closed - planted.n_closed} obstacles removed")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "env.bin"
    save_environment(planted, path)
    back = load_environment(path)
    print(f"file round trip: {path.stat().st_size} bytes, tag {back.generator_tag}, "
          f"planted {back.planted}")
