"""Conditioned laws on a vacant disc against the continuum eigenfunction."""
from obstacle_walk.continuum import bessel_zero, mu_ball, profile, rho_n
from obstacle_walk.verify import profile_deviation

print(f"j_0,1 = {bessel_zero(0.0, 1):.12f}, mu_B(2) = {mu_ball(2):.12f}, mu_B(3) = {mu_ball(3):.12f}")
print("radius for n=10^6 and n=10^60 at p=1/2:", rho_n(10**6, 2, 0.5), rho_n(10**60, 2, 0.5))

for kind in ("phi1_L1", "phi2_L2"):
    t = profile(kind, 2)
    print(f"{kind}: peak {t.peak:.6f}, normalisation by two rules {t.constant:.12f} / {t.constant_check:.12f}")

print("\nsup |R^2 law - profile| at m = 8 R^2")
for kind in ("endpoint", "bulk"):
    for R in (15, 25, 40):
        dev, peak = profile_deviation(R, kind)
        print(f"  {kind:8s} R={R:3d} deviation {dev:.4f} = {dev / peak:.3f} of the peak")
