"""Command-line runner.

Each subcommand reads a JSON job file::

    {"version": "koopmatch-job/1", "subcommand": "edmdm", "seed": 0, "payload": {...}}

validates it (unknown fields are rejected), runs the owning module and
writes ``report.json`` plus CSV tables into ``--out``. ``reproduce <name>``
runs a pinned configuration and compares it with golden values.

Exit codes: 0 success, 2 validation or domain error, 3 numerical failure
or golden mismatch.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from typing import Any, Callable, Dict, Optional

import numpy as np

from . import dictlearn, dynsys, edmd, edmdm, keig, laplace, matching
from .experiments import SUITE, reproduce

JOB_VERSION = "koopmatch-job/1"
REPORT_VERSION = "koopmatch-report/1"

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("koopmatch")


class ConfigError(ValueError):
    """Malformed or inconsistent job configuration."""


class GoldenMismatch(RuntimeError):
    """A reproduction disagrees with its golden values."""


NUMERICAL_ERRORS = (
    np.linalg.LinAlgError,
    FloatingPointError,
    dynsys.IntegrationError,
    edmd.SpectrumError,
    edmdm.ReconstructionError,
    keig.CharacteristicError,
    keig.SingularPathError,
    laplace.ContinuationError,
    laplace.LaplaceError,
    matching.MatchError,
    GoldenMismatch,
)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

REQUIRED = object()


def _validate(obj: Any, schema: Dict[str, Any], where: str) -> dict:
    """Fill defaults and reject unknown or missing fields."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(obj) - set(schema))
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {unknown}; allowed: {sorted(schema)}")
    out = {}
    for key, default in schema.items():
        if key in obj:
            out[key] = obj[key]
        elif default is REQUIRED:
            raise ConfigError(f"missing required field {where}.{key}")
        else:
            out[key] = default
    return out


def _number(v, where) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number")
    return float(v)


def _integer(v, where) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where} must be an integer")
    return v


def _complex(v, where) -> complex:
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(_number(v[0], where), _number(v[1], where))
    return complex(_number(v, where))


def _vector(v, where, dim: Optional[int] = None) -> np.ndarray:
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(f"{where} must be a nonempty list of numbers")
    arr = np.array([_number(x, where) for x in v])
    if dim is not None and arr.size != dim:
        raise ConfigError(f"{where} must have {dim} entries")
    return arr


def _system(name, params, where):
    if not isinstance(name, str):
        raise ConfigError(f"{where}.system must be a string")
    if not isinstance(params, dict):
        raise ConfigError(f"{where}.params must be an object")
    try:
        return dynsys.get_system(name, params)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def load_job(path: str, subcommand: str, seed_override: Optional[int]) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    job = _validate(
        doc,
        {"version": REQUIRED, "subcommand": REQUIRED, "seed": REQUIRED, "payload": REQUIRED},
        "job",
    )
    if job["version"] != JOB_VERSION:
        raise ConfigError(
            f"unsupported config version {job['version']!r}; this build reads {JOB_VERSION!r}"
        )
    if job["subcommand"] != subcommand:
        raise ConfigError(f"config is for {job['subcommand']!r}, not {subcommand!r}")
    job["seed"] = _integer(job["seed"], "job.seed")
    if seed_override is not None:
        job["seed"] = seed_override
    return job


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(rows):
            w.writerow([repr(float(v)) for v in row])


class Run:
    """Collects artifacts and metrics of one job."""

    def __init__(self, out: str):
        self.out = out
        self.artifacts = []
        self.metrics: Dict[str, Any] = {}

    def path(self, name):
        os.makedirs(self.out, exist_ok=True)
        self.artifacts.append(name)
        return os.path.join(self.out, name)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)

    def json(self, name, obj):
        write_json(self.path(name), obj)


def _grid_spec(spec, dim, where):
    s = _validate(spec, {"lo": REQUIRED, "hi": REQUIRED, "n_side": 21}, where)
    lo, hi = _vector(s["lo"], f"{where}.lo", dim), _vector(s["hi"], f"{where}.hi", dim)
    n = _integer(s["n_side"], f"{where}.n_side")
    if n < 1 or np.any(hi < lo):
        raise ConfigError(f"{where} needs n_side >= 1 and hi >= lo")
    return keig.grid(lo, hi, n)


def _complex_cols(Z):
    Z = np.asarray(Z, dtype=complex)
    cols = []
    for j in range(Z.shape[1]):
        cols += [Z[:, j].real, Z[:, j].imag]
    return cols


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

STACK_SCHEMA = {"system": REQUIRED, "params": {}, "lambdas": None, "q": "id", "variant": "complete"}


def _stack(spec, where):
    s = _validate(spec, STACK_SCHEMA, where)
    _system(s["system"], s["params"], where)
    lambdas = None if s["lambdas"] is None else [_number(v, f"{where}.lambdas") for v in s["lambdas"]]
    try:
        st = keig.catalog_eigenstack(s["system"], s["params"] or None, lambdas, s["q"], s["variant"])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    return st, dynsys.get_system(s["system"], s["params"])


def cmd_keig(payload, seed, run: Run):
    p = _validate(
        payload,
        {
            "system": REQUIRED, "params": {}, "method": "catalog",
            "lambdas": None, "q": "id", "variant": "complete",
            "lam": None, "x_ref": None, "grid": None, "surface": None, "t_max": 50.0,
        },
        "payload",
    )
    sys_ = _system(p["system"], p["params"], "payload")
    method = p["method"]
    if method == "catalog":
        st, _ = _stack({k: p[k] for k in STACK_SCHEMA}, "payload")
        P = _grid_spec(p["grid"], sys_.dim, "payload.grid") if p["grid"] else st.probe_points(10)
        vals = np.stack([np.asarray(g(P), dtype=complex) for g in st.entries], axis=1)
        res = [keig.keig_residual(sys_, g, st.probe_points(10)) for g in st.entries]
        run.metrics.update(eigenvalues=[[z.real, z.imag] for z in st.eigenvalues], max_residual=max(res))
    elif method == "quadrature":
        if sys_.dim != 1:
            raise ConfigError("quadrature method needs a one-dimensional system")
        if p["lam"] is None or p["x_ref"] is None or p["grid"] is None:
            raise ConfigError("quadrature method needs lam, x_ref and grid")
        lam = _complex(p["lam"], "payload.lam")
        P = _grid_spec(p["grid"], 1, "payload.grid")
        x_ref = _number(p["x_ref"], "payload.x_ref")
        vals = np.array([[keig.keig_1d_quadrature(sys_, lam, x_ref, float(x))] for x in P[:, 0]])
        run.metrics.update(lam=[lam.real, lam.imag], x_ref=x_ref)
    elif method == "characteristics":
        if p["lam"] is None or p["surface"] is None or p["grid"] is None:
            raise ConfigError("characteristics method needs lam, surface and grid")
        lam = _complex(p["lam"], "payload.lam")
        surface = _surface(p["surface"], sys_.dim)
        P = _grid_spec(p["grid"], sys_.dim, "payload.grid")
        t_max = _number(p["t_max"], "payload.t_max")
        vals = np.array([[keig.keig_characteristics(sys_, lam, surface, x, t_max)] for x in P])
        run.metrics.update(lam=[lam.real, lam.imag])
    else:
        raise ConfigError("payload.method must be catalog, quadrature or characteristics")
    xs = [f"x{i + 1}" for i in range(sys_.dim)]
    gs = []
    for j in range(vals.shape[1]):
        gs += [f"re_g{j + 1}", f"im_g{j + 1}"] if vals.shape[1] > 1 else ["re_g", "im_g"]
    run.csv("keig.csv", xs + gs, np.column_stack([P] + _complex_cols(vals)))
    run.metrics["points"] = len(P)


def _surface(spec, dim):
    s = _validate(
        spec,
        {"kind": REQUIRED, "point": None, "normal": None, "path": None, "closed": True, "g0": 1.0},
        "payload.surface",
    )
    g0 = _complex(s["g0"], "payload.surface.g0")
    if s["kind"] == "plane":
        if s["point"] is None or s["normal"] is None:
            raise ConfigError("a plane surface needs point and normal")
        x0 = _vector(s["point"], "payload.surface.point", dim)
        nrm = _vector(s["normal"], "payload.surface.normal", dim)
        return keig.InitialSurface(
            dim, lambda X: (np.asarray(X) - x0) @ nrm, lambda X: np.full(np.shape(X)[:-1], g0)
        )
    if s["kind"] == "levelset":
        if s["path"] is None:
            raise ConfigError("a levelset surface needs path")
        try:
            pts = np.loadtxt(s["path"], delimiter=",", skiprows=1, ndmin=2)
        except OSError as exc:
            raise ConfigError(f"cannot read level set {s['path']}: {exc}") from None
        ls = laplace.LevelSet(pts, 1.0, bool(s["closed"]))
        return laplace.surface_from_levelset(ls, np.full(len(pts), g0))
    raise ConfigError("payload.surface.kind must be plane or levelset")


def cmd_match(payload, seed, run: Run):
    p = _validate(payload, {"stack1": REQUIRED, "stack2": REQUIRED, "n_side": 11}, "payload")
    g1, _ = _stack(p["stack1"], "payload.stack1")
    g2, _ = _stack(p["stack2"], "payload.stack2")
    h = matching.build_match(g1, g2)
    P = g1.probe_points(_integer(p["n_side"], "payload.n_side"))
    H = h.evaluate(P)
    ok = np.all(np.isfinite(H), axis=1)
    run.metrics.update(
        points=len(P),
        in_domain=int(ok.sum()),
        roundtrip_error=h.roundtrip_error(P[ok]) if h.inverse is not None and ok.any() else None,
    )
    d = P.shape[1]
    run.csv("h.csv", [f"x{i + 1}" for i in range(d)] + [f"h{i + 1}" for i in range(d)], np.column_stack([P, H]))


DICT_SCHEMA = {"kind": "multinomial", "max_index": 2, "exponents": None}


def _dictionary(spec):
    s = _validate(spec, DICT_SCHEMA, "payload.dictionary")
    if s["kind"] == "multinomial":
        return edmd.multinomial_dictionary(2, _integer(s["max_index"], "payload.dictionary.max_index"))
    if s["kind"] == "monomial":
        if not s["exponents"]:
            raise ConfigError("a monomial dictionary needs exponents")
        return edmd.monomial_dictionary([tuple(int(e) for e in row) for row in s["exponents"]], "monomial")
    raise ConfigError("payload.dictionary.kind must be multinomial or monomial")


def _koopman(sys_, d, mode, truncate, data, ridge, seed, where):
    if mode == "generator":
        return edmd.project_generator(sys_, d, truncate=bool(truncate))
    if mode == "data":
        s = _validate(data or {}, {"box": REQUIRED, "n": 1000, "dt": 0.1}, f"{where}.data")
        box = _vector(s["box"], f"{where}.data.box", 2)
        lo, hi = [box[0]] * sys_.dim, [box[1]] * sys_.dim
        pairs = dynsys.sample_pairs(sys_, (lo, hi), _integer(s["n"], "n"), _number(s["dt"], "dt"), seed)
        return edmd.edmd_fit(pairs, d, _number(ridge, "ridge"))
    raise ConfigError("mode must be generator or data")


def cmd_edmd(payload, seed, run: Run):
    p = _validate(
        payload,
        {"system": REQUIRED, "params": {}, "dictionary": {}, "mode": "generator", "truncate": False, "data": None, "ridge": 1e-8},
        "payload",
    )
    sys_ = _system(p["system"], p["params"], "payload")
    d = _dictionary(p["dictionary"])
    K = _koopman(sys_, d, p["mode"], p["truncate"], p["data"], p["ridge"], seed, "payload")
    s = edmd.left_eigens(K, normalize="unit")
    run.json("koopman.json", K.to_json())
    run.csv("eigenvalues.csv", ["re", "im"], np.column_stack([s.eigenvalues.real, s.eigenvalues.imag]))
    run.metrics.update(n=d.n, distinct=s.distinct, min_gap=s.min_gap, eig_residual=s.residual(K.k))


def cmd_edmdm(payload, seed, run: Run):
    p = _validate(
        payload,
        {
            "system1": REQUIRED, "params1": {}, "system2": REQUIRED, "params2": {},
            "dictionary": {}, "mode": "generator", "truncate": False, "data1": None, "data2": None,
            "ridge": 1e-8, "matching_point": REQUIRED, "allow_degenerate": False,
            "normalize": "unit", "pair_tol": 1e-8, "grid": None,
        },
        "payload",
    )
    s1 = _system(p["system1"], p["params1"], "payload.system1")
    s2 = _system(p["system2"], p["params2"], "payload.system2")
    d = _dictionary(p["dictionary"])
    k1 = _koopman(s1, d, p["mode"], p["truncate"], p["data1"], p["ridge"], seed, "payload")
    k2 = _koopman(s2, d, p["mode"], p["truncate"], p["data2"], p["ridge"], seed + 1, "payload")
    mp = _validate(p["matching_point"], {"z1": REQUIRED, "z2": REQUIRED}, "payload.matching_point")
    mp = edmdm.MatchingPoint(_vector(mp["z1"], "z1", d.dim), _vector(mp["z2"], "z2", d.dim))
    if p["normalize"] not in ("unit", "max"):
        raise ConfigError("payload.normalize must be unit or max")
    res = edmdm.edmdm_pipeline(
        k1, k2, d, mp, _number(p["pair_tol"], "pair_tol"), bool(p["allow_degenerate"]), normalize=p["normalize"]
    )
    run.json("match.json", res.to_json())
    run.metrics.update(
        h_matrix=res.h_matrix.real, d_diag=res.d_diag.real,
        similarity_residual=res.similarity_residual, imag_residue=res.imag_residue,
    )
    if p["grid"]:
        G = _grid_spec(p["grid"], d.dim, "payload.grid")
        run.csv("h_grid.csv", ["x1", "x2", "h1", "h2"], np.column_stack([G, res.h_map(G)]))


def cmd_train(payload, seed, run: Run):
    p = _validate(
        payload,
        {
            "system1": "vdp", "params1": {}, "box1": [-0.5, 0.5],
            "system2": "tvdp", "params2": {}, "box2": None,
            "n": 1000, "dt": 0.1, "config": {},
        },
        "payload",
    )
    s1 = _system(p["system1"], p["params1"], "payload.system1")
    s2 = _system(p["system2"], p["params2"], "payload.system2")
    b1 = _vector(p["box1"], "payload.box1", 2)
    if p["box2"] is None:
        if s2.id != "tvdp":
            raise ConfigError("payload.box2 is required unless system2 is tvdp")
        b2 = np.sort(dynsys.vdp_transform(b1, s2.params["a"], s2.params["b"]))
    else:
        b2 = _vector(p["box2"], "payload.box2", 2)
    n, dt = _integer(p["n"], "payload.n"), _number(p["dt"], "payload.dt")
    d1 = dynsys.sample_pairs(s1, ([b1[0]] * 2, [b1[1]] * 2), n, dt, seed)
    d2 = dynsys.sample_pairs(s2, ([b2[0]] * 2, [b2[1]] * 2), n, dt, seed + 1)
    cfg_fields = set(dictlearn.TrainConfig.__dataclass_fields__) - {"seed"}
    cfg = _validate(p["config"], {k: dictlearn.TrainConfig.__dataclass_fields__[k].default for k in cfg_fields}, "payload.config")
    tc = dictlearn.TrainConfig(seed=seed, **cfg)
    net, k1, k2, hist = dictlearn.train(d1, d2, tc)
    dictlearn.save_checkpoint(run.path("checkpoint.json"), net, k1, k2, tc)
    hist.to_csv(run.path("history.csv"))
    st = hist.last_state
    run.metrics.update(
        iterations=len(hist.J), final_loss=hist.J[-1] if hist.J else None, aborted=hist.aborted,
        spectrum_gap=dictlearn.spectrum_gap(k1, k2),
        p_condition=None if st is None else st.cond,
        similarity_residual=None if st is None else st.residual,
    )


def cmd_levelset(payload, seed, run: Run):
    p = _validate(
        payload,
        {
            "system": "vdp", "params": {"mu": 0.5}, "observable": "x1", "lam": "principal",
            "fixed_point": [0.0, 0.0], "T": 100.0, "step": 0.1, "direction": None,
            "x0": REQUIRED, "cont_step": None, "max_points": 2000,
        },
        "payload",
    )
    sys_ = _system(p["system"], p["params"], "payload")
    if sys_.dim != 2:
        raise ConfigError("level sets are traced for planar systems")
    obs = {"x1": 0, "x2": 1}.get(p["observable"])
    if obs is None:
        raise ConfigError("payload.observable must be x1 or x2")
    if p["lam"] == "principal":
        lam = complex(laplace.linearization_eigenvalues(sys_, _vector(p["fixed_point"], "fixed_point", 2))[0])
    else:
        lam = _complex(p["lam"], "payload.lam")
    cfg = laplace.LaplaceConfig(
        laplace.coordinate_observable(obs), lam, _number(p["T"], "T"), p["direction"], _number(p["step"], "step")
    )
    step = None if p["cont_step"] is None else _number(p["cont_step"], "cont_step")
    ls = laplace.levelset_continuation(cfg, sys_, _vector(p["x0"], "x0", 2), step, _integer(p["max_points"], "max_points"))
    ls.to_csv(run.path("levelset.csv"))
    v = np.abs(laplace.laplace_average(cfg, sys_, ls.points))
    run.metrics.update(
        lam=[lam.real, lam.imag], direction=cfg.direction, c=ls.c, closed=ls.closed,
        vertices=len(ls), max_level_error=float(np.max(np.abs(v - ls.c)) / ls.c),
    )


def cmd_defect(payload, seed, run: Run):
    p = _validate(
        payload,
        {
            "system1": REQUIRED, "params1": {}, "system2": REQUIRED, "params2": {},
            "map": "identity", "samples": REQUIRED, "horizon": 1.0, "steps": 10,
        },
        "payload",
    )
    s1 = _system(p["system1"], p["params1"], "payload.system1")
    s2 = _system(p["system2"], p["params2"], "payload.system2")
    if p["map"] == "identity":
        if s1.dim != s2.dim:
            raise ConfigError("identity map needs systems of equal dimension")
        h = matching.identity_map(s1.dim)
    else:
        m = _validate(p["map"], {"stack1": REQUIRED, "stack2": REQUIRED}, "payload.map")
        h = matching.build_match(_stack(m["stack1"], "payload.map.stack1")[0], _stack(m["stack2"], "payload.map.stack2")[0])
    smp = _validate(p["samples"], {"lo": REQUIRED, "hi": REQUIRED, "n": 100}, "payload.samples")
    lo, hi = _vector(smp["lo"], "samples.lo", s1.dim), _vector(smp["hi"], "samples.hi", s1.dim)
    X = np.random.default_rng(seed).uniform(lo, hi, (_integer(smp["n"], "samples.n"), s1.dim))
    rpt = matching.defect_report(h, s1, s2, X, _number(p["horizon"], "horizon"), _integer(p["steps"], "steps"))
    run.csv("defect.csv", [f"x{i + 1}" for i in range(s1.dim)] + ["defect"], np.column_stack([X, rpt.per_sample]))
    run.metrics.update(defect=rpt.defect, retained=rpt.retained, skipped=rpt.skipped)


COMMANDS: Dict[str, Callable] = {
    "keig": cmd_keig,
    "match": cmd_match,
    "edmd": cmd_edmd,
    "edmdm": cmd_edmdm,
    "train": cmd_train,
    "levelset": cmd_levelset,
    "defect": cmd_defect,
}


# --------------------------------------------------------------------------
# entry points
# --------------------------------------------------------------------------


def run_job(subcommand: str, job: dict, out: str) -> dict:
    """Execute a validated job; returns the report written to ``out/report.json``."""
    run = Run(out)
    COMMANDS[subcommand](job["payload"], job["seed"], run)
    report = {
        "version": REPORT_VERSION,
        "config": job,
        "artifacts": sorted(run.artifacts) + ["report.json"],
        "metrics": run.metrics,
        "status": "ok",
    }
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "report.json"), report)
    return report


def run_reproduce(name: str, out: str, seed: Optional[int]) -> dict:
    rep = reproduce(name, seed)
    os.makedirs(out, exist_ok=True)
    files = []
    for fname, (header, rows) in sorted(rep.tables.items()):
        write_csv(os.path.join(out, fname), header, rows)
        files.append(fname)
    report = {
        "version": REPORT_VERSION,
        "config": {"reproduce": name, "seed": seed},
        "artifacts": sorted(files) + ["report.json"],
        **rep.to_json(),
    }
    write_json(os.path.join(out, "report.json"), report)
    for c in rep.checks:
        print(c.line())
    print(f"{name}: {'pass' if rep.passed else 'MISMATCH'} ({rep.wall_time:.2f} s)", file=sys.stderr)
    if not rep.passed:
        failed = "; ".join(c.line() for c in rep.checks if not c.passed)
        raise GoldenMismatch(f"{name} differs from its golden values: {failed}")
    return report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="koopmatch", description="Koopman eigenfunction matching experiments")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run a {name} job from a JSON config")
        sp.add_argument("--config", required=True, help="path to the JSON job file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    rp = sub.add_parser("reproduce", help="run a pinned reproduction and compare with golden values")
    rp.add_argument("name", choices=sorted(SUITE))
    rp.add_argument("--out", required=True, help="output directory")
    rp.add_argument("--seed", type=int, default=None, help="override the pinned seed")
    rp.add_argument("--config", default=None, help=argparse.SUPPRESS)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        if args.command == "reproduce":
            run_reproduce(args.name, args.out, args.seed)
        else:
            job = load_job(args.config, args.command, args.seed)
            report = run_job(args.command, job, args.out)
            print(json.dumps(_jsonable(report["metrics"]), sort_keys=True))
    except NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"done in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
