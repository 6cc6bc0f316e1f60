# Fictitious play for agents who dislike crowds on a two-edge junction.
# Run from the repository root: python3 demos/crowd_aversion_equilibrium.py
from netmfg.costs import AffineOuter, Kernel, MfgCostFamily, Poly
from netmfg.geometry import NetPoint, NetworkGeometry
from netmfg.grid import SpaceTimeGrid
from netmfg.mfg import fictitious_play, wasserstein1

g = NetworkGeometry.junction(2)
# moving costs a^2, staying near others costs 0.5 * (bump kernel * m)
fam = MfgCostFamily(g, h1=[AffineOuter(Poly(1.0))] * 2, h2=[AffineOuter(Poly(0.0), 0.5)] * 2,
                    kernel1=[Kernel("zero")] * 2, kernel2=[Kernel("bump", 0.5)] * 2,
                    terminal_edge=[Poly((0.0, 0.5)), Poly((0.0, 0.8))])
grid = SpaceTimeGrid(g, 0.05, 0.05, 1.0, truncation=2.0)
atoms = [(NetPoint.on_edge(0, 0.4), 0.25), (NetPoint.on_edge(0, 0.8), 0.25),
         (NetPoint.on_edge(0, 1.2), 0.25), (NetPoint.on_edge(1, 0.6), 0.25)]

res = fictitious_play(fam, atoms, grid, max_iter=200, tol=1e-3, n_controls=257)
print("converged:", res.converged, "after", res.iterations, "iterations")
print("exploitability per iteration:", [f"{e:.2e}" for e in res.exploitability])
print("particles:", res.particles)

mu = res.measure
m0, mT = mu.marginal(0), mu.marginal(mu.n_slices - 1)
for i in range(g.n_edges):
    on = [(p.s, w) for p, w in mT if not p.is_vertex and p.edge == i]
    print(f"edge {i} at T: mass {float(sum(w for _, w in on))}, spread {min(s for s, _ in on):.3f}..{max(s for s, _ in on):.3f}")
print("d1(m(0), m(T)) =", wasserstein1(g, m0, mT))
