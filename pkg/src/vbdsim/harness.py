"""Scene files, procedural meshes, and the simulation/convergence runners.

A scene is one JSON document: bodies built from generators (beam, cube,
chain, file), placed by a rigid modeling transform, plus gravity, contact,
constraint, and solver blocks. Structural problems raise SchemaError with
the offending key path; value-range problems raise ValueError prefixed with
the same path.
"""

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import baselines
from ._backend import backend_name
from ._system import Body, FixedConstraint, SubspaceConstraint, \
    WorldBoxConstraint, build_system
from .errors import SchemaError
from .materials import MaterialParams
from .mesh import SpringNet, TetMesh, build_spring_net, build_tet_mesh, \
    load_node_ele
from .solver import ContactParams, SolverParams, _detect_dcd, inertia_target, \
    initialize, make_state, max_penetration, step

# 5-tet decomposition of a hex cell, alternated by cell parity so the
# diagonals of shared faces coincide. Corner index is 4*dx + 2*dy + dz.
_CELL_TETS_EVEN = ((0, 3, 5, 6), (1, 0, 3, 5), (2, 0, 3, 6),
                   (4, 0, 5, 6), (7, 3, 5, 6))
_CELL_TETS_ODD = ((1, 2, 4, 7), (0, 1, 2, 4), (3, 1, 2, 7),
                  (5, 1, 4, 7), (6, 2, 4, 7))

METRICS_HEADER = "step,iteration,G,relative_loss,contact_count,max_penetration,wall_ms"
CONVERGENCE_HEADER = "solver,iteration,G,relative_loss,wall_ms"


# ---------------------------------------------------------------------------
# procedural meshes

def generate_beam(nx: int, ny: int, nz: int, spacing: float,
                  density: float = 1000.0) -> TetMesh:
    """Axis-aligned (nx x ny x nz)-vertex grid of hex cells, each split into
    5 tets; total rest volume is exactly (nx-1)(ny-1)(nz-1) spacing^3."""
    if min(nx, ny, nz) < 2:
        raise ValueError("beam needs at least 2 vertices per axis")
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    pos = spacing * np.stack([ix, iy, iz], axis=-1).reshape(-1, 3).astype(np.float64)

    def vid(ax, ay, az):
        return (ax * ny + ay) * nz + az

    tets = []
    for cx in range(nx - 1):
        for cy in range(ny - 1):
            for cz in range(nz - 1):
                corners = [vid(cx + dx, cy + dy, cz + dz)
                           for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]
                pattern = (_CELL_TETS_EVEN if (cx + cy + cz) % 2 == 0
                           else _CELL_TETS_ODD)
                for t in pattern:
                    tets.append([corners[k] for k in t])
    return build_tet_mesh(pos, np.asarray(tets, dtype=np.int64), density)


def generate_cube(n: int, edge: float, density: float = 1000.0) -> TetMesh:
    """Cube of edge length `edge` with n vertices per axis."""
    if n < 2:
        raise ValueError("cube needs n >= 2")
    if edge <= 0.0:
        raise ValueError("edge must be positive")
    return generate_beam(n, n, n, edge / (n - 1), density)


def generate_chain(count: int, spacing: float, stiffness: float,
                   mass: float = 1.0) -> SpringNet:
    """`count` particles hanging along -y, linked by serial springs."""
    if count < 2:
        raise ValueError("chain needs at least 2 particles")
    if spacing <= 0.0 or stiffness <= 0.0 or mass <= 0.0:
        raise ValueError("spacing, stiffness and mass must be positive")
    particles = np.zeros((count, 3))
    particles[:, 1] = -spacing * np.arange(count)
    springs = [[i, i + 1, spacing, stiffness] for i in range(count - 1)]
    return build_spring_net(particles, springs, np.full(count, mass))


# ---------------------------------------------------------------------------
# scene schema

@dataclass
class ObjectConfig:
    generator: dict
    material: MaterialParams
    density: float
    translate: tuple
    rotate_deg: tuple
    scale: tuple
    velocity: tuple
    initial_stretch: tuple


@dataclass
class OutputConfig:
    format: str = "bin"
    every: int = 1


@dataclass
class SceneConfig:
    objects: list
    constraints: list
    solver: SolverParams
    frames: int
    output: OutputConfig


def _require(cond, path, message):
    if not cond:
        raise SchemaError(path, message)


def _check_keys(d, allowed, path):
    _require(isinstance(d, dict), path, "expected an object")
    for k in d:
        _require(k in allowed, f"{path}.{k}", "unknown key")


def _number(d, key, path, default=None, required=False):
    if key not in d:
        _require(not required, f"{path}.{key}", "missing required key")
        return default
    v = d[key]
    _require(isinstance(v, (int, float)) and not isinstance(v, bool),
             f"{path}.{key}", "expected a number")
    return float(v)


def _integer(d, key, path, default=None, required=False):
    if key not in d:
        _require(not required, f"{path}.{key}", "missing required key")
        return default
    v = d[key]
    _require(isinstance(v, int) and not isinstance(v, bool),
             f"{path}.{key}", "expected an integer")
    return int(v)


def _positive(value, path):
    if value is not None and value <= 0.0:
        raise ValueError(f"{path}: must be positive")
    return value


def _nonnegative(value, path):
    if value is not None and value < 0.0:
        raise ValueError(f"{path}: must be >= 0")
    return value


def _vec3(d, key, path, default):
    if key not in d:
        return tuple(float(v) for v in default)
    v = d[key]
    _require(isinstance(v, (list, tuple)) and len(v) == 3,
             f"{path}.{key}", "expected [x, y, z]")
    for c in v:
        _require(isinstance(c, (int, float)) and not isinstance(c, bool),
                 f"{path}.{key}", "expected numeric components")
    return tuple(float(c) for c in v)


def _parse_material(d, path):
    _check_keys(d, {"mu", "lambda", "k_d"}, path)
    mu = _positive(_number(d, "mu", path, required=True), f"{path}.mu")
    lam = _positive(_number(d, "lambda", path, required=True), f"{path}.lambda")
    k_d = _nonnegative(_number(d, "k_d", path, default=0.0), f"{path}.k_d")
    return MaterialParams(mu=mu, lam=lam, k_d=k_d)


_GENERATOR_KEYS = {
    "beam": {"kind", "nx", "ny", "nz", "spacing"},
    "cube": {"kind", "n", "edge"},
    "chain": {"kind", "count", "spacing", "stiffness", "mass"},
    "file": {"kind", "node", "ele"},
}


def _parse_generator(d, path):
    _require(isinstance(d, dict), path, "expected an object")
    kind = d.get("kind")
    _require(kind in _GENERATOR_KEYS, f"{path}.kind",
             f"expected one of {sorted(_GENERATOR_KEYS)}")
    _check_keys(d, _GENERATOR_KEYS[kind], path)
    out = {"kind": kind}
    if kind == "beam":
        for key in ("nx", "ny", "nz"):
            out[key] = _integer(d, key, path, required=True)
            if out[key] < 2:
                raise ValueError(f"{path}.{key}: must be >= 2")
        out["spacing"] = _positive(_number(d, "spacing", path, required=True),
                                   f"{path}.spacing")
    elif kind == "cube":
        out["n"] = _integer(d, "n", path, required=True)
        if out["n"] < 2:
            raise ValueError(f"{path}.n: must be >= 2")
        out["edge"] = _positive(_number(d, "edge", path, required=True),
                                f"{path}.edge")
    elif kind == "chain":
        out["count"] = _integer(d, "count", path, required=True)
        if out["count"] < 2:
            raise ValueError(f"{path}.count: must be >= 2")
        for key in ("spacing", "stiffness"):
            out[key] = _positive(_number(d, key, path, required=True),
                                 f"{path}.{key}")
        out["mass"] = _positive(_number(d, "mass", path, default=1.0),
                                f"{path}.mass")
    else:
        for key in ("node", "ele"):
            v = d.get(key)
            _require(isinstance(v, str), f"{path}.{key}", "expected a path string")
            out[key] = v
    return out


def _parse_object(d, idx):
    path = f"objects[{idx}]"
    _check_keys(d, {"generator", "material", "density", "translate",
                    "rotate_deg", "scale", "velocity", "initial_stretch"}, path)
    _require("generator" in d, f"{path}.generator", "missing required key")
    gen = _parse_generator(d["generator"], f"{path}.generator")
    material = None
    if "material" in d:
        material = _parse_material(d["material"], f"{path}.material")
    if gen["kind"] != "chain" and material is None:
        raise SchemaError(f"{path}.material", "missing required key")
    density = _positive(_number(d, "density", path, default=1000.0),
                        f"{path}.density")
    scale = d.get("scale", 1.0)
    if isinstance(scale, (int, float)) and not isinstance(scale, bool):
        scale = (float(scale),) * 3
    else:
        scale = _vec3(d, "scale", path, (1.0, 1.0, 1.0))
    for c in scale:
        _positive(c, f"{path}.scale")
    stretch = None
    if "initial_stretch" in d:
        stretch = _vec3(d, "initial_stretch", path, (1.0, 1.0, 1.0))
        for c in stretch:
            _positive(c, f"{path}.initial_stretch")
    return ObjectConfig(
        generator=gen,
        material=material,
        density=density,
        translate=_vec3(d, "translate", path, (0.0, 0.0, 0.0)),
        rotate_deg=_vec3(d, "rotate_deg", path, (0.0, 0.0, 0.0)),
        scale=tuple(scale),
        velocity=_vec3(d, "velocity", path, (0.0, 0.0, 0.0)),
        initial_stretch=stretch,
    )


_CONSTRAINT_KEYS = {
    "fixed": {"kind", "object", "vertices", "box"},
    "subspace": {"kind", "object", "vertex", "basis", "anchor"},
    "world_box": {"kind", "object", "lo", "hi", "k_b"},
}


def _parse_constraint(d, idx, num_objects):
    path = f"constraints[{idx}]"
    _require(isinstance(d, dict), path, "expected an object")
    kind = d.get("kind")
    _require(kind in _CONSTRAINT_KEYS, f"{path}.kind",
             f"expected one of {sorted(_CONSTRAINT_KEYS)}")
    _check_keys(d, _CONSTRAINT_KEYS[kind], path)
    out = {"kind": kind}
    obj = d.get("object", "all" if kind == "world_box" else None)
    if kind != "world_box" or obj != "all":
        _require(isinstance(obj, int) and not isinstance(obj, bool),
                 f"{path}.object", "expected an object index")
        _require(0 <= obj < num_objects, f"{path}.object",
                 f"object index out of range [0,{num_objects})")
    out["object"] = obj
    if kind == "fixed":
        _require(("vertices" in d) != ("box" in d), path,
                 "exactly one of vertices/box required")
        if "vertices" in d:
            v = d["vertices"]
            _require(isinstance(v, list) and
                     all(isinstance(i, int) and not isinstance(i, bool)
                         for i in v), f"{path}.vertices",
                     "expected a list of vertex indices")
            out["vertices"] = [int(i) for i in v]
        else:
            b = d["box"]
            _require(isinstance(b, list) and len(b) == 2, f"{path}.box",
                     "expected [lo, hi]")
            out["box"] = (_vec3({"lo": b[0]}, "lo", f"{path}.box", None),
                          _vec3({"hi": b[1]}, "hi", f"{path}.box", None))
    elif kind == "subspace":
        out["vertex"] = _integer(d, "vertex", path, required=True)
        basis = d.get("basis")
        _require(isinstance(basis, list) and len(basis) in (1, 2),
                 f"{path}.basis", "expected 1 or 2 direction rows")
        cols = []
        for r in basis:
            _require(isinstance(r, list) and len(r) == 3, f"{path}.basis",
                     "expected 3-vectors")
            cols.append([float(c) for c in r])
        out["basis"] = np.asarray(cols, dtype=np.float64).T  # (3, L)
        out["anchor"] = (_vec3(d, "anchor", path, (0, 0, 0))
                         if "anchor" in d else None)
    else:
        for key in ("lo", "hi"):
            _require(key in d, f"{path}.{key}", "missing required key")
            out[key] = _vec3(d, key, path, None)
        out["k_b"] = _positive(_number(d, "k_b", path, required=True),
                               f"{path}.k_b")
    return out


def _parse_contact(d):
    path = "contact"
    _check_keys(d, {"k_c", "mu_c", "eps_v", "dcd_radius", "max_depth"}, path)
    k_c = _positive(_number(d, "k_c", path, required=True), f"{path}.k_c")
    mu_c = _nonnegative(_number(d, "mu_c", path, default=0.0), f"{path}.mu_c")
    eps_v = _positive(_number(d, "eps_v", path, default=1e-2), f"{path}.eps_v")
    radius = _nonnegative(_number(d, "dcd_radius", path, default=1e-3),
                          f"{path}.dcd_radius")
    depth = _positive(_number(d, "max_depth", path, default=None),
                      f"{path}.max_depth")
    return ContactParams(k_c=k_c, mu_c=mu_c, eps_v=eps_v, dcd_radius=radius,
                         max_depth=depth)


def _parse_solver(d, gravity, contact):
    path = "solver"
    _check_keys(d, {"h", "S", "n_max", "n_col", "rho", "eps_det",
                    "line_search", "init_mode", "threads"}, path)
    substeps = _integer(d, "S", path, default=1)
    if substeps < 1:
        raise ValueError(f"{path}.S: must be >= 1")
    h = _number(d, "h", path, default=1.0 / (60.0 * substeps))
    _positive(h, f"{path}.h")
    n_max = _integer(d, "n_max", path, default=10)
    if n_max < 1:
        raise ValueError(f"{path}.n_max: must be >= 1")
    n_col = _integer(d, "n_col", path, default=4)
    if n_col < 1:
        raise ValueError(f"{path}.n_col: must be >= 1")
    rho = _number(d, "rho", path, default=0.0)
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"{path}.rho: must be in [0, 1)")
    eps_det = _number(d, "eps_det", path, default=1e-10)
    _nonnegative(eps_det, f"{path}.eps_det")
    ls = d.get("line_search", "off")
    _require(ls in ("off", "local_backtracking"), f"{path}.line_search",
             "expected 'off' or 'local_backtracking'")
    init_mode = d.get("init_mode", "adaptive")
    _require(init_mode in ("prev_pos", "inertia", "inertia_accel", "adaptive"),
             f"{path}.init_mode", "unknown warm start mode")
    threads = _integer(d, "threads", path, default=0)
    if threads < 0:
        raise ValueError(f"{path}.threads: must be >= 0")
    return SolverParams(h=h, substeps=substeps, n_max=n_max, n_col=n_col,
                        rho=rho, eps_det=eps_det,
                        line_search=(ls == "local_backtracking"),
                        init_mode=init_mode, a_ext=gravity, threads=threads,
                        contact=contact)


def parse_scene(text: str) -> SceneConfig:
    """Parse and validate a scene JSON document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError("$", f"invalid JSON ({e})") from None
    _check_keys(data, {"objects", "gravity", "constraints", "contact",
                       "solver", "frames", "output"}, "$")
    objs = data.get("objects")
    _require(isinstance(objs, list) and len(objs) > 0, "$.objects",
             "expected a non-empty list")
    objects = [_parse_object(o, i) for i, o in enumerate(objs)]

    gravity = _vec3(data, "gravity", "$", (0.0, 0.0, 0.0))
    contact = _parse_contact(data["contact"]) if "contact" in data else None
    solver = _parse_solver(data.get("solver", {}), gravity, contact)

    cons_raw = data.get("constraints", [])
    _require(isinstance(cons_raw, list), "$.constraints", "expected a list")
    constraints = [_parse_constraint(c, i, len(objects))
                   for i, c in enumerate(cons_raw)]

    frames = _integer(data, "frames", "$", default=60)
    if frames < 0:
        raise ValueError("$.frames: must be >= 0")

    out_raw = data.get("output", {})
    _check_keys(out_raw, {"format", "every"}, "output")
    fmt = out_raw.get("format", "bin")
    _require(fmt in ("bin", "obj"), "output.format", "expected 'bin' or 'obj'")
    every = _integer(out_raw, "every", "output", default=1)
    if every < 1:
        raise ValueError("output.every: must be >= 1")

    return SceneConfig(objects=objects, constraints=constraints, solver=solver,
                       frames=frames, output=OutputConfig(fmt, every))


def serialize_scene(config: SceneConfig) -> str:
    """Inverse of parse_scene (up to key order and default filling)."""
    p = config.solver
    doc = {
        "objects": [],
        "gravity": list(p.a_ext),
        "constraints": [],
        "solver": {
            "h": p.h, "S": p.substeps, "n_max": p.n_max, "n_col": p.n_col,
            "rho": p.rho, "eps_det": p.eps_det,
            "line_search": "local_backtracking" if p.line_search else "off",
            "init_mode": p.init_mode, "threads": p.threads,
        },
        "frames": config.frames,
        "output": {"format": config.output.format, "every": config.output.every},
    }
    if p.contact is not None:
        c = {"k_c": p.contact.k_c, "mu_c": p.contact.mu_c,
             "eps_v": p.contact.eps_v, "dcd_radius": p.contact.dcd_radius}
        if p.contact.max_depth is not None:
            c["max_depth"] = p.contact.max_depth
        doc["contact"] = c
    for o in config.objects:
        od = {"generator": dict(o.generator), "density": o.density,
              "translate": list(o.translate), "rotate_deg": list(o.rotate_deg),
              "scale": list(o.scale), "velocity": list(o.velocity)}
        if o.material is not None:
            od["material"] = {"mu": o.material.mu, "lambda": o.material.lam,
                              "k_d": o.material.k_d}
        if o.initial_stretch is not None:
            od["initial_stretch"] = list(o.initial_stretch)
        doc["objects"].append(od)
    for c in config.constraints:
        cd = {"kind": c["kind"], "object": c["object"]}
        if c["kind"] == "fixed":
            if "vertices" in c:
                cd["vertices"] = list(c["vertices"])
            else:
                cd["box"] = [list(c["box"][0]), list(c["box"][1])]
        elif c["kind"] == "subspace":
            cd["vertex"] = c["vertex"]
            cd["basis"] = np.asarray(c["basis"]).T.tolist()
            if c["anchor"] is not None:
                cd["anchor"] = list(c["anchor"])
        else:
            cd["lo"] = list(c["lo"])
            cd["hi"] = list(c["hi"])
            cd["k_b"] = c["k_b"]
        doc["constraints"].append(cd)
    return json.dumps(doc, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# scene -> solver objects

def _rotation_matrix(rot_deg) -> np.ndarray:
    rx, ry, rz = np.radians(rot_deg)
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def _object_geometry(o: ObjectConfig):
    g = o.generator
    if g["kind"] == "beam":
        base = generate_beam(g["nx"], g["ny"], g["nz"], g["spacing"], o.density)
    elif g["kind"] == "cube":
        base = generate_cube(g["n"], g["edge"], o.density)
    elif g["kind"] == "file":
        pos, tets = load_node_ele(g["node"], g["ele"])
        base = build_tet_mesh(pos, tets, o.density)
    else:
        base = generate_chain(g["count"], g["spacing"], g["stiffness"],
                              g["mass"])

    rot = _rotation_matrix(o.rotate_deg)
    scale = np.asarray(o.scale)

    def put(points):
        return (np.asarray(points) * scale) @ rot.T + np.asarray(o.translate)

    if isinstance(base, TetMesh):
        geometry = build_tet_mesh(put(base.rest_positions), base.tets,
                                  o.density)
        rest = geometry.rest_positions
    else:
        particles = put(base.particles)
        springs = np.concatenate(
            [base.indices.astype(np.float64),
             (base.rest_length * np.mean(scale))[:, None],
             base.stiffness[:, None]], axis=1)
        geometry = build_spring_net(particles, springs, base.masses)
        rest = geometry.particles

    x0 = np.array(rest)
    if o.initial_stretch is not None:
        centroid = rest.mean(axis=0)
        x0 = centroid + (x0 - centroid) * np.asarray(o.initial_stretch)
    v0 = np.tile(np.asarray(o.velocity), (len(rest), 1))
    return geometry, x0, v0


def scene_build(config: SceneConfig):
    """Compile a parsed scene: returns (system, state, params)."""
    bodies, x0_parts, v0_parts, rests = [], [], [], []
    offsets = [0]
    for o in config.objects:
        geometry, x0, v0 = _object_geometry(o)
        bodies.append(Body(geometry, o.material))
        x0_parts.append(x0)
        v0_parts.append(v0)
        rests.append(np.asarray(geometry.rest_positions
                                if isinstance(geometry, TetMesh)
                                else geometry.particles))
        offsets.append(offsets[-1] + len(x0))

    constraints = []
    for c in config.constraints:
        kind = c["kind"]
        if kind == "world_box":
            targets = (range(offsets[-1]) if c["object"] == "all"
                       else range(offsets[c["object"]], offsets[c["object"] + 1]))
            for v in targets:
                constraints.append(WorldBoxConstraint(v, c["lo"], c["hi"],
                                                      c["k_b"]))
            continue
        off = offsets[c["object"]]
        n_local = offsets[c["object"] + 1] - off
        if kind == "fixed":
            if "vertices" in c:
                verts = c["vertices"]
                for v in verts:
                    if not 0 <= v < n_local:
                        raise ValueError(
                            f"constraints: vertex {v} outside object "
                            f"{c['object']} with {n_local} vertices")
            else:
                lo = np.asarray(c["box"][0])
                hi = np.asarray(c["box"][1])
                rest = rests[c["object"]]
                inside = np.all((rest >= lo) & (rest <= hi), axis=1)
                verts = np.flatnonzero(inside).tolist()
            constraints.extend(FixedConstraint(off + v) for v in verts)
        else:
            v = c["vertex"]
            if not 0 <= v < n_local:
                raise ValueError(
                    f"constraints: vertex {v} outside object {c['object']}")
            anchor = (c["anchor"] if c["anchor"] is not None
                      else rests[c["object"]][v])
            constraints.append(SubspaceConstraint(off + v, c["basis"], anchor))

    system = build_system(bodies, constraints)
    state = make_state(system, np.concatenate(x0_parts),
                       np.concatenate(v0_parts))
    return system, state, config.solver


# ---------------------------------------------------------------------------
# frame export

def export_frame(positions, faces, path) -> None:
    """Write one frame; format from the suffix: .obj (1-based text) or .bin
    (little endian: u32 nv, u32 nf, nv*3 f64 positions, nf*3 u32 faces)."""
    path = Path(path)
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    fac = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if path.suffix == ".obj":
        lines = [f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}"
                 for p in pos]
        lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in fac]
        path.write_text("\n".join(lines) + "\n")
    elif path.suffix == ".bin":
        with open(path, "wb") as fh:
            np.asarray([len(pos), len(fac)], dtype="<u4").tofile(fh)
            pos.astype("<f8").tofile(fh)
            fac.astype("<u4").tofile(fh)
    else:
        raise ValueError(f"unknown frame format {path.suffix!r}")


def load_frame(path):
    """Read a frame written by export_frame; returns (positions, faces)."""
    path = Path(path)
    if path.suffix == ".obj":
        pos, fac = [], []
        for line in path.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                pos.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                fac.append([int(c.split("/")[0]) - 1 for c in parts[1:4]])
        return (np.asarray(pos, dtype=np.float64).reshape(-1, 3),
                np.asarray(fac, dtype=np.int64).reshape(-1, 3))
    if path.suffix == ".bin":
        with open(path, "rb") as fh:
            nv, nf = np.fromfile(fh, dtype="<u4", count=2)
            pos = np.fromfile(fh, dtype="<f8", count=int(nv) * 3).reshape(-1, 3)
            fac = np.fromfile(fh, dtype="<u4", count=int(nf) * 3).reshape(-1, 3)
        return pos, fac.astype(np.int64)
    raise ValueError(f"unknown frame format {path.suffix!r}")


# ---------------------------------------------------------------------------
# runners

def _surface_faces(system) -> np.ndarray:
    if system.collision_mesh is None:
        return np.zeros((0, 3), dtype=np.int64)
    return system.collision_map[system.collision_mesh.surface_tris]


def _format_g(v: float) -> str:
    return repr(float(v))


def run_simulation(config: SceneConfig, out_dir, threads=None, frames=None):
    """Step the scene and write frame files plus a per-iteration metrics CSV.

    relative_loss in the metrics is within-step: (G_n - G_last)/(G_1 - G_last)
    against the first and last recorded iterations of that step (0 when the
    step made no progress). Returns a summary dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    system, state, params = scene_build(config)
    if threads is not None:
        params = replace(params, threads=threads)
    n_frames = config.frames if frames is None else frames
    faces = _surface_faces(system)
    fmt = config.output.format
    t_start = time.perf_counter()

    metrics_path = out / "metrics.csv"
    export_frame(state.x, faces, out / f"frame_00000.{fmt}")
    written = 1
    with open(metrics_path, "w") as mf:
        mf.write(METRICS_HEADER + "\n")
        for frame in range(n_frames):
            for _ in range(params.substeps):
                rows = []
                t0 = time.perf_counter()

                def record(st, n):
                    rows.append([
                        st.step_index, n, baselines.energy(st, params),
                        len(st.contact_set) if st.contact_set else 0,
                        max_penetration(st),
                        (time.perf_counter() - t0) * 1e3,
                    ])

                step(state, params, on_iteration=record)
                denom = rows[0][2] - rows[-1][2]
                for r in rows:
                    loss = (r[2] - rows[-1][2]) / denom if denom > 0 else 0.0
                    mf.write(f"{r[0]},{r[1]},{_format_g(r[2])},"
                             f"{_format_g(loss)},{r[3]},{_format_g(r[4])},"
                             f"{r[5]:.3f}\n")
            if (frame + 1) % config.output.every == 0 or frame == n_frames - 1:
                export_frame(state.x, faces,
                             out / f"frame_{frame + 1:05d}.{fmt}")
                written += 1

    return {
        "frames": n_frames,
        "steps": state.step_index,
        "frame_files": written,
        "backend": backend_name(),
        "metrics": str(metrics_path),
        "wall_s": round(time.perf_counter() - t_start, 3),
    }


def _clone_state(state):
    import copy
    dup = copy.copy(state)
    for name in ("x_t", "v_t", "v_prev", "x", "y"):
        setattr(dup, name, getattr(state, name).copy())
    return dup


def run_convergence(config: SceneConfig, solvers, n_iters: int, out_csv=None,
                    threads=None):
    """Convergence study on the frozen first-step objective.

    Builds the scene, runs detection and the warm start once, computes the
    reference optimum G* by Newton (gradient infinity norm < 1e-10), then
    records a G trace per requested solver from the same start. Writes
    solver,iteration,G,relative_loss,wall_ms rows when out_csv is given.
    """
    system, state, params = scene_build(config)
    if threads is not None:
        params = replace(params, threads=threads)
    state.y = inertia_target(state.x_t, state.v_t, params.a_ext_vec, params.h)
    _detect_dcd(state, params)
    initialize(state, params)
    base = _clone_state(state)

    ref = _clone_state(base)
    g_star, _ = baselines.minimize_newton(ref, params, tol=1e-10)

    traces, losses = {}, {}
    for name in solvers:
        st = _clone_state(base)
        p = params
        if name == "vbd-cheb" and p.rho == 0.0:
            p = replace(p, rho=0.95)
        traces[name] = baselines.descend(st, p, name, n_iters)
        try:
            losses[name] = baselines.relative_loss(traces[name].g, g_star)
        except Exception:
            losses[name] = np.zeros_like(traces[name].g)

    if out_csv is not None:
        with open(out_csv, "w") as fh:
            fh.write(CONVERGENCE_HEADER + "\n")
            for name in solvers:
                tr = traces[name]
                for k in range(len(tr.g)):
                    fh.write(f"{name},{k},{_format_g(tr.g[k])},"
                             f"{_format_g(losses[name][k])},"
                             f"{tr.wall_ms[k]:.3f}\n")
    return {"g_star": g_star, "traces": traces, "relative_loss": losses}
