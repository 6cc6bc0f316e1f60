# Mass balance at the vertex for agents crossing from edge 0 into edge 1.
# Run from the repository root: python3 demos/vertex_flux_balance.py
import numpy as np

from netmfg.continuity import balance_residual, total_mass_drift, vertex_flux, vertex_mass
from netmfg.costs import CostModel, Poly, PowerCost
from netmfg.geometry import NetPoint, NetworkGeometry
from netmfg.grid import SpaceTimeGrid
from netmfg.hj import solve_value
from netmfg.mfg import TrajectoryMeasure
from netmfg.trajectory import Synthesizer

g = NetworkGeometry.junction(2)
cost = CostModel(g, [PowerCost(1.0, 0.0), PowerCost(1.0, 0.0)],
                 terminal_edge=[Poly((0.0, 0.5)), Poly((0.0, -1.0))])
grid = SpaceTimeGrid(g, 0.02, 0.02, 1.0, truncation=2.0)
vf = solve_value(g, grid, cost)
synth = Synthesizer(vf)
mu = TrajectoryMeasure([(0.5, synth.run(NetPoint.on_edge(0, 0.3), 0)),
                        (0.5, synth.run(NetPoint.on_edge(0, 0.6), 0))])

print("mass drift:", total_mass_drift(mu))
print("vertex mass over time:", [float(vertex_mass(mu, 0, n)) for n in range(0, mu.n_slices, 10)])
for eps in (0.2, 0.1, 0.05):
    fs = vertex_flux(mu, grid, 0, eps)
    d = fs.discrepancy()
    print(f"eps={eps}: exact balance {balance_residual(mu, fs)}, "
          f"time-integrated flux gap {max(x['time_l1'] for x in d.values()):.4f}")

# counting flux out of the vertex into edge 1, nonzero steps only
q = vertex_flux(mu, grid, 0, 0.1).counting[1]
print(np.c_[grid.times[:-1], q][q != 0])
