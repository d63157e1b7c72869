"""Exact degree/length-constrained spanning forests on random point sets."""

import time

import numpy as np

from camlink.solver import (
    brute_force_oracle,
    connected_components,
    feasibility_adjacency,
    feasibility_graph,
    sample_coords,
    solve_exact,
)

# 1. three points on a line, only neighbours within range
coords = np.array([[0.0, 0.0], [0.3, 0.0], [0.6, 0.0]])
res = solve_exact(coords, k=1, d=0.35)
print("collinear, k=1:", "components", res.components, "edges", res.edge_count)
print(res.adjacency)

# with k=2 the middle node may take both links and everything connects
print("collinear, k=2:", solve_exact(coords, k=2, d=0.35).objective)

# 2. a random 16-node instance at the default parameters
coords = sample_coords(16, 0)
edges = feasibility_graph(coords, 0.4)
c_feas, _ = connected_components(feasibility_adjacency(coords, 0.4))
t0 = time.perf_counter()
res = solve_exact(coords, 3, 0.4)
print(f"\nn=16: {len(edges)} feasible pairs, feasibility graph has {c_feas} component(s)")
print(f"solved in {time.perf_counter() - t0:.3f}s -> {res.components} component(s), {res.edge_count} links")
print("degrees:", res.node_stats)

# 3. cross-check against exhaustive enumeration on small instances
rng = np.random.default_rng(1)
checked = 0
while checked < 25:
    pts = rng.random((6, 2))
    if len(feasibility_graph(pts, 0.5)) > 20:
        continue
    assert solve_exact(pts, 2, 0.5).objective == brute_force_oracle(pts, 2, 0.5).objective
    checked += 1
print(f"\nbranch and bound agreed with brute force on {checked} instances")
