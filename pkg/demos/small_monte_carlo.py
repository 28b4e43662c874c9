"""A small Monte Carlo comparing CQIV variants against plain QR and tobit.

Twenty replications of the heteroskedastic design keep this under a minute;
raise ``REPS`` for smoother numbers.

    python3 demos/small_monte_carlo.py
"""
from cqiv import McDesign, run_monte_carlo

REPS = 20
ests = ["cqiv-qr", "cqiv-ols", "cqr", "qr", "tobit-cmle"]
us = [0.1, 0.5, 0.9]
res = run_monte_carlo(McDesign("heteroskedastic"), ests, us, REPS, seed=3)

print(f"{REPS} replications, heteroskedastic design, RMSE (mean bias) of the d coefficient\n")
print("estimator   " + "".join(f"{'u=' + str(u):>20}" for u in us))
for e in ests:
    cells = [res.cell(e, u) for u in us]
    print(f"{e:<12}" + "".join(f"{c['rmse']:>11.3f} ({c['mean_bias']:+.3f})" for c in cells))
