"""Find a planted vacant disc in Bernoulli noise."""
import numpy as np

from obstacle_walk.lattice import plant_vacant_ball, sample_environment
from obstacle_walk.localization import LocalizationConfig, detect_truly_open, localize

rho = 12
for seed in range(5):
    centre = tuple(int(v) for v in np.random.default_rng(seed).integers(-150, 150, 2))
    env = plant_vacant_ball(sample_environment(2, [(-200, 199), (-200, 199)], 0.6, seed), centre, rho)
    rep = localize(env, config=LocalizationConfig(rho=rho, epsilon=0.2))
    print(f"seed {seed}: planted {centre}, found {rep.center} (fit {rep.fit_center}), "
          f"sym diff {rep.sym_diff}, obstacles in ball {rep.obstacle_count_in_ball}, "
          f"clear {rep.clear}, truly open boxes nearby {len(rep.truly_open)}")

# the shell index needs some obstacles in the inner ball
env = sample_environment(2, [(-60, 60), (-60, 60)], 0.9, 3)
rep = localize(env, config=LocalizationConfig(rho=10, epsilon=0.3, delta=0.3))
print(f"\nnoise only: centre {rep.center}, shells {rep.shells['counts']}, J = {rep.J}, clear {rep.clear}")

tiles = detect_truly_open(env, 3)
print(f"truly open boxes at ell=3: {len(tiles.passed)} of {len(tiles.anchors)}; "
      f"best stay probability {tiles.stay_probability.max():.3f}")
