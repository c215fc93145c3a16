"""Sequential tracking versus the 360-degree MCL baseline on one map."""

from geofloc.experiment import converged_step, mcl_baseline
from geofloc.histogram_filter import track
from geofloc.metrics import LocalizationRecord
from geofloc.sim import ScenarioSpec, gen_scenario

sc = gen_scenario(ScenarioSpec(seed=0, steps=30))
traj = sc.trajectory

res = track(sc.grid, traj.observations, traj.deltas)
ours = [LocalizationRecord(0, t, e, g) for t, (e, g) in enumerate(zip(res.estimates, traj.poses))]
mcl = mcl_baseline(sc.grid, traj)

print(" step  filter err  mcl err")
for a, b in zip(ours, mcl):
    print(f"{a.step:5d}  {a.position_error:10.3f}  {b.position_error:7.3f}")
print("filter converged at step", converged_step(ours, sc.grid))
print("mcl converged at step   ", converged_step(mcl, sc.grid))
