"""Standard FEM runs: homogeneous / random / imported starts, restarts, circles."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ..energy import Energy, MagicFamily
from .assembly import DEFAULT_CIRCLES, FemProblem, MaterialMap
from .mesh import TriMesh, build_mesh
from .trust_region import TrustRegionResult, trust_region_minimize


def stretch(a: float) -> np.ndarray:
    """F0 = diag(√a, 1/√a)."""
    return np.diag([math.sqrt(a), 1 / math.sqrt(a)])


def random_field(problem: FemProblem, amplitude: float, rng) -> np.ndarray:
    """Feasible random nodal perturbation; the amplitude is halved until det > 0."""
    u = problem.zero_field()
    noise = rng.uniform(-1, 1, size=int(problem.free.sum()))
    amp = float(amplitude)
    for _ in range(60):
        u[problem.free] = amp * noise
        if np.isfinite(problem.total_energy(u)):
            return u
        amp *= 0.5
    raise ValueError("could not find a feasible random field")


def save_nodal(path, mesh: TriMesh, u) -> None:
    u = np.asarray(u).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "x1", "x2", "theta1", "theta2"])
        for i, (x, t) in enumerate(zip(mesh.vertices, u)):
            w.writerow([i, *(f"{v:.17g}" for v in (*x, *t))])


def load_nodal(path, mesh: TriMesh) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != mesh.n_vertices:
        raise ValueError(f"field has {len(rows)} vertices, mesh has {mesh.n_vertices}")
    return np.array([[float(r["theta1"]), float(r["theta2"])] for r in rows]).ravel()


def initial_field(problem: FemProblem, init="homogeneous", seed: int = 0) -> np.ndarray:
    """init is 'homogeneous', 'random:<amp>', a file path or an array."""
    if isinstance(init, np.ndarray):
        return init.astype(float).copy()
    if init == "homogeneous":
        return problem.zero_field()
    if init.startswith("random"):
        _, _, amp = init.partition(":")
        return random_field(problem, float(amp or 0.01), np.random.default_rng(seed))
    return load_nodal(init, problem.mesh)


@dataclass
class FemOutcome:
    problem: FemProblem
    result: TrustRegionResult
    homogeneous: float

    @property
    def gap(self) -> float:
        return self.result.energy - self.homogeneous

    def summary(self) -> dict:
        inside, outside = self.problem.split_energy(self.result.u)
        return {"energy": self.result.energy, "homogeneous": self.homogeneous, "gap": self.gap,
                "iterations": self.result.iterations, "converged": self.result.converged,
                "stuck": self.result.stuck, "radius": self.result.radius,
                "energy_inside": inside, "energy_outside": outside}

    def write_fields(self, path) -> None:
        write_element_csv(self.problem, self.result.u, path)


def write_element_csv(problem: FemProblem, u, path) -> None:
    rep = problem.element_report(u)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "x1", "x2", "det", "distortion", "energy_density"])
        for e in range(len(rep["det"])):
            vals = (*rep["centroid"][e], rep["det"][e], rep["distortion"][e], rep["density"][e])
            w.writerow([e, *(f"{v:.17g}" for v in vals)])


def minimize(domain="square", levels=4, energy: Energy | None = None, a=2.0, init="homogeneous",
             seed=0, material: MaterialMap | None = None, mesh: TriMesh | None = None,
             **solver) -> FemOutcome:
    mesh = build_mesh(domain, levels) if mesh is None else mesh
    problem = FemProblem(mesh, stretch(a), energy, material)
    u0 = initial_field(problem, init, seed)
    res = trust_region_minimize(problem, u0, **solver)
    return FemOutcome(problem, res, problem.homogeneous_energy())


def restart(outcome: FemOutcome, energy: Energy, **solver) -> FemOutcome:
    """Minimize a different energy from the final field of a previous run."""
    p = outcome.problem
    problem = FemProblem(p.mesh, p.F0, energy)
    res = trust_region_minimize(problem, outcome.result.u, **solver)
    return FemOutcome(problem, res, problem.homogeneous_energy())


def circles_experiment(c_star: float, a=2.0, levels=4, circles=DEFAULT_CIRCLES, init="homogeneous",
                       seed=0, **solver) -> FemOutcome:
    """Disc with c = c_star inside the circles and c = 1 elsewhere."""
    return minimize("disc", levels, None, a, init, seed, MaterialMap(c_star, tuple(circles)), **solver)


def radial_contraction(outcome: FemOutcome, circles=DEFAULT_CIRCLES) -> list[float]:
    """Mean radial displacement ϑ·(x−x_i)/|x−x_i| over vertices inside each circle.

    Negative values mean the circle contracts toward its center.
    """
    mesh = outcome.problem.mesh
    u = outcome.result.u.reshape(-1, 2)
    out = []
    for center, r in circles:
        d = mesh.vertices - np.asarray(center)
        dist = np.linalg.norm(d, axis=1)
        sel = (dist < r) & (dist > 0.2 * r)
        out.append(float(np.mean(np.sum(u[sel] * d[sel], axis=1) / dist[sel])))
    return out


__all__ = ["FemOutcome", "MagicFamily", "circles_experiment", "initial_field", "load_nodal",
           "minimize", "radial_contraction", "random_field", "restart", "save_nodal", "stretch",
           "write_element_csv"]
