"""Interface sizes of partitions of lattice discs."""
from obstacle_walk.lattice import euclidean_ball
from obstacle_walk.surgery import exhaustive_iso_constant, isoperimetric_check, iso_suite

c0, mask = exhaustive_iso_constant(2, 2)
sites = euclidean_ball((0, 0), 2)
print(f"smallest ratio over all 2^13 - 2 partitions of the radius-2 disc: {c0:.6f}")
print("one minimiser:", [tuple(int(v) for v in s) for s in sites[mask]])

half = isoperimetric_check(20, 2, euclidean_ball((0, 0), 20)[:, 0] < 0)
print(f"half-disc cut at R=20: interface {half.min_interface}, floor {half.floor:.2f}, ratio {half.ratio:.4f}")

for R in (5, 10, 20):
    print(f"R={R:2d}:", {k: round(v, 4) for k, v in iso_suite(R, 2, n_random=1000, seed=R).items()})
