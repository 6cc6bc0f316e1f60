# Value function on a two-edge junction with l = a^2, g = x on edge 0 and g = 0 on edge 1.
# Run from the repository root: python3 demos/junction_value_function.py
import numpy as np

from netmfg.costs import CostModel, Poly, PowerCost, trajectory_cost
from netmfg.geometry import NetPoint, NetworkGeometry
from netmfg.grid import SpaceTimeGrid
from netmfg.hj import grid_dpp_residual, solve_value
from netmfg.trajectory import synthesize_optimal

g = NetworkGeometry.junction(2)
cost = CostModel(g, [PowerCost(1.0, 0.0), PowerCost(1.0, 0.0)], terminal_edge=[Poly((0.0, 1.0)), Poly(0.0)])
grid = SpaceTimeGrid(g, 0.02, 0.02, 1.0, truncation=2.0)
vf = solve_value(g, grid, cost)

# from x = 1 with one time unit left the agent walks half way towards the vertex
x = NetPoint.on_edge(0, 1.0)
print("u(1, 0) =", vf.value(x, 0.0), "(closed form 0.75)")
print("grid DPP residual:", grid_dpp_residual(vf))

tr = synthesize_optimal(vf, None, x, 0.0)
print("speeds:", np.unique(np.round(tr.speeds(g), 6)))
print("end point:", tr.points[-1], "cost:", trajectory_cost(cost, tr))

# the time slice at t = 0 along edge 0: quadratic near the vertex, then linear
s = grid.s[0][::10]
print(np.c_[s, vf.edge_values(0, 0)[::10]][:8])
