"""A small type-I error and power study; a desk-sized version of `vcgate simulate`."""

from vcgate.simharness import SimScenario, run_power, run_type1

null = SimScenario("M1", "poisson", n=10, m=8, replicates=200, B=1000, seed=1)
table = run_type1([null])
for row in table.rows:
    print(f"size  {row.method:9s} rate={row.rate:.3f} se={row.se:.3f}")

curve = [SimScenario("M1", "poisson", n=10, m=8, effect=e, replicates=100, B=1000, seed=2)
         for e in (0.0, 0.1, 0.3)]
for row in run_power(curve).rows:
    print(f"power {row.method:9s} effect={row.effect:.1f} rate={row.rate:.3f}")
