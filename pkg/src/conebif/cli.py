"""Command-line front end.

Usage::

    conebif <command> [--config cfg.json] [--input file] [--out dir] [--seed n] [--threads n]

Commands: ``mesh``, ``eig``, ``dlambda``, ``bubble-spec``, ``tune-alpha``,
``continue``, ``verify``.  Settings come from built-in defaults, then the
JSON config file, then ``CONEBIF_<KEY>`` environment variables (nested keys
joined by ``__``, e.g. ``CONEBIF_STEP_POLICY__DS_MAX``), then flags.
Exit status: 0 on success, 2 on validation errors, 3 on solver failures;
failures also write ``error.json`` to the output directory.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cylinder import StepPolicy
from .errors import ConebifError, SolverError, ValidationError

log = logging.getLogger("conebif")

SCHEMA_VERSION = 1
COMMANDS = ("mesh", "eig", "dlambda", "bubble-spec", "tune-alpha", "continue", "verify")
ENV_PREFIX = "CONEBIF_"

STEP_POLICY_DEFAULTS = {f.name: f.default for f in dataclasses.fields(StepPolicy)}
STEP_POLICY_DEFAULTS["ds_max"] = 0.025
STEP_POLICY_DEFAULTS["max_points"] = 40

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "input_path": None,
    "output_dir": "conebif-out",
    "seed": 12345,
    "threads": 1,
    "mesh_h": 0.02,
    "alpha": 1.0,
    "k": 6,
    "tol": 1e-10,
    "delta": 1e-3,
    "N": 3,
    "lambda1": None,
    "tune_target": 1.0,
    "T": 12.0,
    "dt": 0.05,
    "continuation_h": 0.08,
    "bifurcation_window": [0.98, 1.02],
    "step_policy": STEP_POLICY_DEFAULTS,
    "dump_fields": False,
    "suite": {},
}

POSITIVE = ("mesh_h", "tol", "delta", "T", "dt", "continuation_h", "tune_target", "threads", "k")


# ---------------------------------------------------------------------------
# configuration


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(base: dict, update: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ValidationError(f"unknown config field in {where}", field=key)
        if isinstance(base[key], dict) and base[key] and not isinstance(value, dict):
            raise ValidationError("config field must be an object", field=key)
        if isinstance(base[key], dict) and base[key]:
            out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def _env_overrides(environ) -> dict:
    out: dict = {}
    for name, text in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__")]
        # keys are matched case-insensitively against the defaults
        node, ref = out, DEFAULTS
        for i, part in enumerate(path):
            match = next((k for k in ref if k.lower() == part), None) if isinstance(ref, dict) else None
            if match is None:
                if isinstance(ref, dict) and ref == {} and i > 0:
                    match = part
                else:
                    raise ValidationError("unknown config field in environment", variable=name)
            if i == len(path) - 1:
                node[match] = _coerce(text)
            else:
                node = node.setdefault(match, {})
                ref = ref[match] if isinstance(ref, dict) and match in ref else {}
    return out


def build_config(args, environ=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError("cannot read config file", path=args.config, cause=str(exc)) from exc
        if not isinstance(data, dict):
            raise ValidationError("config file must hold a JSON object")
        if data.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValidationError("unsupported config schema version",
                                  schema_version=data.get("schema_version"))
        cfg = _merge(cfg, data, "config file")
    cfg = _merge(cfg, _env_overrides(os.environ if environ is None else environ), "environment")
    flags = {"input_path": args.input, "output_dir": args.out, "seed": args.seed,
             "threads": args.threads}
    cfg.update({k: v for k, v in flags.items() if v is not None})
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    for key in POSITIVE:
        value = cfg[key]
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
            raise ValidationError("config value must be a positive number", field=key, value=value)
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or not 0 <= cfg["seed"] < 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer", seed=cfg["seed"])
    StepPolicy(**cfg["step_policy"]).validate()
    if isinstance(cfg["bifurcation_window"], list) and len(cfg["bifurcation_window"]) == 2:
        a, b = cfg["bifurcation_window"]
        if not 0 < a < b:
            raise ValidationError("bifurcation window must satisfy 0 < a < b", window=[a, b])
    else:
        raise ValidationError("bifurcation window must be a pair", window=cfg["bifurcation_window"])
    out = Path(cfg["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError("output directory is not writable", path=str(out)) from exc
    if not os.access(out, os.W_OK):
        raise ValidationError("output directory is not writable", path=str(out))


def _require_input(cfg) -> str:
    path = cfg["input_path"]
    if not path:
        raise ValidationError("this command needs an input file (--input or input_path)")
    if not Path(path).is_file():
        raise ValidationError("input file not found", path=str(path))
    return path


# ---------------------------------------------------------------------------
# output helpers


def _write_json(path: Path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def write_branch_svg(path: Path, branches, title: str = "bifurcation diagram"):
    """Deterministic SVG of ``alpha`` against the signed asymmetry."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "conebif"
    fig, ax = plt.subplots(figsize=(5, 4))
    for br in branches:
        pts = [br.origin] + list(br.points)
        a = [p.alpha_s for p in pts]
        y = [br.direction * p.asymmetry for p in pts]
        ax.plot(a, y, "o-", ms=3, label=f"direction {br.direction:+d}")
    ax.axhline(0.0, color="0.5", lw=0.8, label="radial branch")
    ax.set_xlabel("alpha")
    ax.set_ylabel("signed asymmetry")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(cfg, out: Path) -> dict:
    from .geometry import load_domain, mesh

    D, raw = load_domain(_require_input(cfg))
    h = float(raw.get("target_h", cfg["mesh_h"]))
    m = mesh(D, h)
    _write_json(out / "mesh.json", m.to_dict())
    summary = {"domain": D.to_dict(), "h": h, "vertices": m.n_vertices, "elements": len(m.elements),
               "area": m.area(1.0), "reflections": sorted(m.reflections)}
    _write_json(out / "mesh_summary.json", summary)
    return summary


def cmd_eig(cfg, out: Path) -> dict:
    from .geometry import load_domain, mesh
    from .neumann import cap_values, domain_spectrum

    D, raw = load_domain(_require_input(cfg))
    h = float(raw.get("target_h", cfg["mesh_h"]))
    m = mesh(D, h)
    spec = domain_spectrum(D, m, float(cfg["alpha"]), int(cfg["k"]), float(cfg["tol"]))
    oracle = None
    if D.kind == "cap" and float(cfg["alpha"]) == 1.0:
        oracle = cap_values(D.params, D.parameters["t"] * D.scale, int(cfg["k"])).tolist()
    rows = []
    for j, lam in enumerate(spec.eigenvalues):
        rows.append([j, float(lam), float(spec.residuals[j]),
                     "" if oracle is None or j >= len(oracle) else oracle[j]])
    _write_csv(out / "spectrum.csv", ["index", "lambda", "residual", "oracle"], rows)
    data = spec.to_dict()
    data.update({"domain": D.to_dict(), "h": h, "oracle": oracle})
    _write_json(out / "spectrum.json", data)
    return {"lambda": spec.eigenvalues.tolist(), "oracle": oracle}


def cmd_dlambda(cfg, out: Path) -> dict:
    from .derivative import derivative_report
    from .geometry import load_domain, mesh

    D, raw = load_domain(_require_input(cfg))
    h = float(raw.get("target_h", cfg["mesh_h"]))
    rep = derivative_report(D, mesh(D, h), float(cfg["delta"]))
    data = rep.to_dict()
    data["h"] = h
    _write_json(out / "dlambda.json", data)
    return data


def cmd_bubble_spec(cfg, out: Path) -> dict:
    from .bubble import beta_of, linearized_spectrum, shoot_spectrum
    from .geometry import ProblemParams

    P = ProblemParams(int(cfg["N"]))
    lam1 = P.lambda_threshold if cfg["lambda1"] is None else float(cfg["lambda1"])
    modes, m, boundary = linearized_spectrum(P, lam1)
    rows = []
    for i, mode in enumerate(modes, start=1):
        kinds = "+".join(f"{o[0]}:{o[1]}" for o in mode.origins)
        lam = 0.0 if mode.origins[0][0] == "radial" else lam1
        rows.append([i, mode.mu, 1.0 - P.p / mode.mu, float(beta_of(P, lam)), kinds, mode.degeneracy])
    shots = shoot_spectrum(P, lam1, 1, mu_max=max(2 * modes[-1].mu, 10.0))
    rows_shoot = {"angular_shooting": shots[0]}
    _write_csv(out / "bubble_spectrum.csv", ["index", "mu", "crossing_number", "beta", "modes",
                                             "degeneracy"], rows)
    data = {"N": P.N, "lambda1": lam1, "m": m, "boundary": boundary, "p": P.p,
            "modes": [{"mu": r[1], "crossing_number": r[2], "beta": r[3], "origin": r[4],
                       "degeneracy": r[5]} for r in rows], **rows_shoot}
    _write_json(out / "bubble_spectrum.json", data)
    return data


def cmd_tune_alpha(cfg, out: Path) -> dict:
    from .geometry import load_domain, mesh
    from .zoo import find_crossing_alpha, sweep_is_monotone, tune_dumbbell_channel

    D, raw = load_domain(_require_input(cfg))
    h = float(raw.get("target_h", cfg["mesh_h"]))
    sweep = None
    if D.kind == "dumbbell" and "tune_target" in raw:
        D, sweep = tune_dumbbell_channel(D.params, D.parameters, float(raw["tune_target"]), h=h)
    fam = find_crossing_alpha(D, h=h, base_mesh=mesh(D, h))
    fam.save(out / "family.json")
    fam.write_curve_csv(out / "lambda1_curve.csv")
    data = fam.to_dict()
    if sweep is not None:
        data["sweep"] = [list(x) for x in sweep]
        data["sweep_monotone"] = sweep_is_monotone(sweep)
        _write_csv(out / "tuning_sweep.csv", ["channel_halfwidth", "lambda1"], sweep)
    return data


def cmd_continue(cfg, out: Path) -> dict:
    from . import cylinder
    from .geometry import mesh
    from .zoo import TunedFamily

    path = _require_input(cfg)
    try:
        fam = TunedFamily.load(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError("input is not a tuned family file", path=path) from exc
    D1 = fam.domain(1.0)
    prob = cylinder.CylinderProblem(D1.params, mesh(D1, float(cfg["continuation_h"])),
                                    T=float(cfg["T"]), dt=float(cfg["dt"]), seed=int(cfg["seed"]))
    bif = cylinder.detect_bifurcation(prob, tuple(cfg["bifurcation_window"]))
    policy = cylinder.StepPolicy(**cfg["step_policy"])
    branches = cylinder.trace_branch(prob, bif, policy, alpha_star=fam.alpha_star)
    header = ["direction", "s", "alpha", "distance", "asymmetry", "quotient",
              "smallest_even_eigenvalue", "residual", "sup_ratio", "positivity", "kelvin_defect"]
    rows = []
    for br in branches:
        for i, r in enumerate(br.rows(include_origin=True)):
            if i == 0 and br is not branches[0]:
                continue
            rows.append([0 if r["s"] == 0 else br.direction] + [r[k] for k in header[1:]])
    rows.sort(key=lambda r: r[1])
    _write_csv(out / "branch.csv", header, rows)
    write_branch_svg(out / "branch.svg", branches)
    if cfg["dump_fields"]:
        fields = {f"dir{br.direction:+d}_{i:03d}": p.v_s for br in branches for i, p in enumerate(br.points)}
        fields["radial"] = prob.trivial()
        np.savez(out / "fields.npz", t=prob.t, vertices=prob.mesh.vertices, **fields)
    data = {
        "bifurcation": bif.summary(),
        "unknowns": prob.n_unknowns,
        "branches": [{"direction": br.direction, "points": len(br.points), "termination": br.termination,
                      "alternative": br.alternative, "first_tangent_overlap": br.first_tangent_overlap}
                     for br in branches],
    }
    _write_json(out / "continuation.json", data)
    return data


def cmd_verify(cfg, out: Path) -> dict:
    from .acceptance import SuiteConfig, run_suite, summary, table

    known = {f.name for f in dataclasses.fields(SuiteConfig)}
    extra = set(cfg["suite"]) - known
    if extra:
        raise ValidationError("unknown suite settings", fields=sorted(extra))
    settings = dict(cfg["suite"])
    settings.setdefault("seed", int(cfg["seed"]))
    suite_cfg = SuiteConfig(**settings)
    results = run_suite(suite_cfg, log=print)
    data = summary(results)
    _write_json(out / "verification.json", data)
    _write_json(out / "verification_table.json", table(results))
    _write_csv(out / "verification.csv", ["criterion", "title", "passed"],
               [[r.number, r.title, r.passed] for r in results])
    if not data["passed"]:
        failed = [r.number for r in results if not r.passed]
        raise AcceptanceFailure("acceptance criteria failed", failed=failed)
    return {"passed": True}


class AcceptanceFailure(SolverError):
    code = "acceptance-failure"


HANDLERS = {
    "mesh": cmd_mesh,
    "eig": cmd_eig,
    "dlambda": cmd_dlambda,
    "bubble-spec": cmd_bubble_spec,
    "tune-alpha": cmd_tune_alpha,
    "continue": cmd_continue,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conebif", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--input", help="input file (domain or tuned family)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="seed for randomized start vectors")
    ap.add_argument("--threads", type=int, help="BLAS thread limit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(cfg: dict, command: str) -> int:
    from threadpoolctl import threadpool_limits

    out = Path(cfg["output_dir"])
    with threadpool_limits(limits=int(cfg["threads"])):
        result = HANDLERS[command](cfg, out)
    _write_json(out / "run.json", {"command": command, "config": cfg, "version": __version__})
    log.info("%s finished: %s", command, json.dumps(result, default=_json_default)[:500])
    return 0


def _fail(exc: ConebifError, out_dir) -> int:
    record = exc.record()
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            _write_json(Path(out_dir) / "error.json", record)
        except OSError:
            pass
    return exc.exit_code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = args.out
    try:
        cfg = build_config(args)
        out_dir = cfg["output_dir"]
        return run(cfg, args.command)
    except ConebifError as exc:
        return _fail(exc, out_dir)


if __name__ == "__main__":
    sys.exit(main())
