"""Command line entry points.

Exit codes: 0 success, 2 scene/schema problems, 3 solver blow-up
(non-finite state).
"""

import json
import sys
from pathlib import Path

import click
import numpy as np

from ._backend import backend_name
from .errors import NonFiniteState, SchemaError, VbdError
from .harness import parse_scene, run_convergence, run_simulation
from .mesh import greedy_color, incidence_from_elements, load_node_ele


def _load_scene(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        click.echo(f"error: cannot read scene: {e}", err=True)
        sys.exit(2)
    try:
        return parse_scene(text)
    except (SchemaError, ValueError) as e:
        click.echo(f"error: invalid scene: {e}", err=True)
        sys.exit(2)


@click.group()
def main():
    """Elastic body dynamics by parallel per-vertex block descent."""


@main.command()
@click.option("--scene", required=True, help="Scene JSON path.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--threads", type=int, default=None,
              help="Worker threads (overrides VBD_THREADS; 0 = all cores).")
@click.option("--frames", type=int, default=None,
              help="Override the scene's frame count.")
def simulate(scene, out, threads, frames):
    """Run a scene, writing frames and a metrics CSV."""
    config = _load_scene(scene)
    try:
        summary = run_simulation(config, out, threads=threads, frames=frames)
    except NonFiniteState as e:
        click.echo(f"error: solver diverged: {e} "
                   f"(step {e.step}, iteration {e.iteration}, vertex {e.vertex})",
                   err=True)
        sys.exit(3)
    except (ValueError, VbdError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    click.echo(json.dumps(summary, indent=2))


@main.command()
@click.option("--scene", required=True, help="Scene JSON path.")
@click.option("--solvers", default="vbd,vbd-cheb,jacobi,gd,newton",
              help="Comma-separated solver list.")
@click.option("--iters", type=int, default=100, help="Iterations per solver.")
@click.option("--out", "out_csv", required=True, help="Trace CSV path.")
@click.option("--threads", type=int, default=None)
def converge(scene, solvers, iters, out_csv, threads):
    """Record per-iteration G traces for several solvers on one step."""
    config = _load_scene(scene)
    names = [s.strip() for s in solvers.split(",") if s.strip()]
    known = {"vbd", "vbd-cheb", "jacobi", "gd", "newton"}
    bad = [n for n in names if n not in known]
    if bad or not names:
        click.echo(f"error: unknown solvers {bad}", err=True)
        sys.exit(2)
    try:
        result = run_convergence(config, names, iters, out_csv=out_csv,
                                 threads=threads)
    except NonFiniteState as e:
        click.echo(f"error: solver diverged: {e}", err=True)
        sys.exit(3)
    except (ValueError, VbdError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)
    click.echo(json.dumps({
        "g_star": result["g_star"],
        "final_G": {k: float(t.g[-1]) for k, t in result["traces"].items()},
        "out": str(out_csv),
        "backend": backend_name(),
    }, indent=2))


@main.command()
@click.option("--nodes", required=True, help=".node file path.")
@click.option("--eles", required=True, help=".ele file path.")
def color(nodes, eles):
    """Greedy-color a tet mesh and print the partition summary."""
    try:
        positions, tets = load_node_ele(nodes, eles)
    except (OSError, ValueError, VbdError) as e:
        click.echo(f"error: cannot load mesh: {e}", err=True)
        sys.exit(2)
    adj = incidence_from_elements(tets, len(positions))
    part = greedy_color(adj)
    sizes = [len(g) for g in part.groups]
    degrees = np.diff(adj.neighbor_offsets)
    click.echo(json.dumps({
        "vertices": len(positions),
        "tets": len(tets),
        "colors": part.num_colors,
        "group_sizes": sizes,
        "max_degree": int(degrees.max()) if len(degrees) else 0,
    }, indent=2))


if __name__ == "__main__":
    main()
