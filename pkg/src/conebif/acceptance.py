"""The acceptance suite: every numerical claim checked end to end at desk scale.

``run_suite`` returns one :class:`CriterionResult` per criterion.  The
result table (``table``) holds only deterministic quantities so that two
runs with the same configuration can be compared exactly.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bubble, cylinder, zoo
from .derivative import derivative_report
from .geometry import HALF_PI, ProblemParams, make_cap, mesh, sphere_mesh
from .neumann import cap_eigenvalue_shooting, mesh_spectrum

SPHERE_EXACT = [0.0] + [2.0] * 3 + [6.0] * 5


@dataclass
class SuiteConfig:
    seed: int = 12345
    sphere_h: float = 0.05
    cap_h: float = 0.02
    cap_radii: tuple = (0.3, 0.6, 0.9, 1.2)
    hemisphere_dims: tuple = (3, 4, 5, 7)
    dumbbell_seed: dict = field(default_factory=lambda: {"r0": 0.5, "cap_radius": 0.45,
                                                          "channel_halfwidth": 0.02})
    tune_target: float = 1.0
    tune_h: float = 0.02
    derivative_delta: float = 1e-3
    sandwich_alphas: tuple = (0.5, 0.25, 0.125)
    cylinder_h: float = 0.08
    T: float = 12.0
    dt: float = 0.05
    bifurcation_window: tuple = (0.98, 1.02)
    ds_max: float = 0.025
    max_points: int = 40
    repeats: int = 2


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    values: dict
    runtime: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} [{status}] {self.title} ({self.runtime:.1f}s)"


def _rel(a, b) -> float:
    return abs(a - b) / abs(b) if b != 0 else abs(a)


def _clean(obj):
    """Plain-Python copy of a nested result (numpy scalars and arrays converted)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class Suite:
    """Shared state between criteria (the tuned family and the branch are reused)."""

    def __init__(self, config: SuiteConfig | None = None, log=None):
        self.config = config or SuiteConfig()
        self.log = log or (lambda msg: None)
        self.params = ProblemParams(3)
        self._family = None
        self._tuned_mesh = None
        self._continuation = None

    # -- shared pieces -----------------------------------------------------------
    def family(self):
        if self._family is None:
            cfg = self.config
            D, sweep = zoo.tune_dumbbell_channel(self.params, cfg.dumbbell_seed, cfg.tune_target,
                                                 h=cfg.tune_h)
            m = mesh(D, cfg.tune_h)
            fam = zoo.find_crossing_alpha(D, h=cfg.tune_h, base_mesh=m)
            self._family = (fam, sweep, m)
        return self._family

    def tuned_mesh(self):
        if self._tuned_mesh is None:
            fam, _, m = self.family()
            self._tuned_mesh = (fam.domain(1.0), m.dilated(fam.alpha_hat))
        return self._tuned_mesh

    def continuation(self):
        if self._continuation is None:
            cfg = self.config
            fam, _, _ = self.family()
            D1 = fam.domain(1.0)
            start = time.perf_counter()
            prob = cylinder.CylinderProblem(self.params, mesh(D1, cfg.cylinder_h), T=cfg.T, dt=cfg.dt,
                                            seed=cfg.seed)
            bif = cylinder.detect_bifurcation(prob, cfg.bifurcation_window)
            fred = cylinder.fredholm_check(prob, bif)
            policy = cylinder.StepPolicy(ds_max=cfg.ds_max, max_points=cfg.max_points)
            branches = cylinder.trace_branch(prob, bif, policy, alpha_star=fam.alpha_star)
            trunc = cylinder.truncation_check(prob, bif, branches[0])
            runtime = time.perf_counter() - start
            self._continuation = dict(problem=prob, bif=bif, fredholm=fred, branches=branches,
                                      truncation=trunc, runtime=runtime)
        return self._continuation

    # -- criteria -----------------------------------------------------------------
    def criterion_1(self):
        cfg = self.config
        sph = mesh_spectrum(sphere_mesh(cfg.sphere_h), 1.0, 8)
        errs = [abs(v - e) if e == 0 else _rel(v, e) for v, e in zip(sph.eigenvalues, SPHERE_EXACT)]
        caps = {}
        ok = max(errs) <= 1e-2
        for t in cfg.cap_radii:
            spec = mesh_spectrum(mesh(make_cap(self.params, t), cfg.cap_h), 1.0, 6)
            lam = spec.eigenvalues
            oracle = {
                "l0k1": cap_eigenvalue_shooting(self.params, t, 0, 1),
                "l1k1": cap_eigenvalue_shooting(self.params, t, 1, 1),
                "l0k2": cap_eigenvalue_shooting(self.params, t, 0, 2),
            }
            e0 = abs(lam[0] - oracle["l0k1"])
            e1 = max(_rel(lam[1], oracle["l1k1"]), _rel(lam[2], oracle["l1k1"]))
            e2 = min(_rel(x, oracle["l0k2"]) for x in lam[3:])
            caps[str(t)] = {"oracle": oracle, "fem": lam.tolist(), "err_l0k1_abs": e0,
                            "err_l1k1": e1, "err_l0k2": e2}
            ok = ok and e0 <= 5e-3 and e1 <= 5e-3 and e2 <= 5e-3
        return ok, {"sphere": sph.eigenvalues.tolist(), "sphere_errors": errs, "caps": caps}

    def criterion_2(self):
        out = {}
        ok = True
        for N in self.config.hemisphere_dims:
            P = ProblemParams(N)
            lam = cap_eigenvalue_shooting(P, HALF_PI, 1, 1)
            err = abs(lam - (N - 1))
            out[str(N)] = {"lambda": lam, "abs_err": err}
            ok = ok and err <= 1e-8
        return ok, out

    def criterion_3(self):
        D1, m1 = self.tuned_mesh()
        rep = derivative_report(D1, m1, self.config.derivative_delta, richardson=False)
        ok = rep.rel_err <= 1e-2 and rep.value_formula < 0 and rep.value_fd < 0 and rep.criterion_met
        return ok, rep.to_dict()

    def criterion_4(self):
        D1, m1 = self.tuned_mesh()
        rows = zoo.lambda1_curve(D1, m1, self.config.sandwich_alphas)
        lam_ref = mesh_spectrum(m1, 1.0, 2).lambda1
        lam = [lam_ref] + [r["lambda1"] for r in rows]
        alphas = [1.0] + list(self.config.sandwich_alphas)
        increasing = all(b > a for a, b in zip(lam[:-1], lam[1:]))
        ok = all(r["sandwich"] for r in rows) and increasing
        return ok, {"rows": rows, "alphas": alphas, "lambda1": lam, "increasing": increasing}

    def criterion_5(self):
        P = self.params
        radial = bubble.shoot_spectrum(P, 0.0, 3, mu_max=15.0)
        exact = [1.0, 5.0, 35.0 / 3.0]
        radial_err = [_rel(a, b) for a, b in zip(radial, exact)]
        angular = {}
        for lam in (2.0, 6.0):
            shot = bubble.shoot_spectrum(P, lam, 1, mu_max=15.0)[0]
            closed = bubble.mu_angular_closed(P, lam)[0]
            angular[str(lam)] = {"shooting": shot, "closed": closed, "rel_err": _rel(shot, closed)}
        identity = abs(bubble.mu_angular_closed(P, P.lambda_threshold)[0] - P.p)
        ok = max(radial_err) <= 1e-6 and all(v["rel_err"] <= 1e-6 for v in angular.values()) \
            and identity <= 1e-12
        return ok, {"radial": radial, "radial_rel_err": radial_err, "angular": angular,
                    "identity_err": identity}

    def criterion_6(self):
        fam, sweep, _ = self.family()
        a, lam = zip(*fam.lambda1_curve)
        rep = bubble.crossing_eigenvalues(self.params, a, lam)
        beta1_neg = rep.beta1 < 0
        cont = self.continuation()
        alpha_c = cont["bif"].alpha_c
        ok = abs(rep.crossing_alpha - 1.0) <= 1e-3 and beta1_neg and rep.odd_crossing \
            and abs(alpha_c - 1.0) <= 2e-2
        return ok, {"closed_form_crossing": rep.crossing_alpha, "beta1": rep.beta1,
                    "beta2": rep.beta2_samples, "direction": rep.direction,
                    "odd_crossing": rep.odd_crossing, "discrete_alpha_c": alpha_c,
                    "alpha_hat": fam.alpha_hat, "tuned_halfwidth": fam.base.parameters["channel_halfwidth"],
                    "sweep": sweep, "sweep_monotone": zoo.sweep_is_monotone(sweep)}

    def criterion_7(self):
        cont = self.continuation()
        bif, fred, branches = cont["bif"], cont["fredholm"], cont["branches"]
        p = self.params.p
        simple = fred["kernel_dimension"] == 1 and abs(bif.mu[2] - p) > 1e-3 * p \
            and abs(bif.mu[0] - p) > 1e-3 * p
        tangents = [b.first_tangent_overlap for b in branches]
        dads = cylinder.dalpha_ds_at_origin(branches)
        ok = simple and bif.kernel_overlap >= 0.99 and all(t is not None and t >= 0.99 for t in tangents) \
            and abs(dads) <= 1e-2
        return ok, {"mu": bif.mu.tolist(), "kernel_dimension": fred["kernel_dimension"],
                    "kernel_overlap": bif.kernel_overlap, "tangent_overlaps": tangents,
                    "dalpha_ds": dads, "dmu2_dalpha": bif.dmu2_dalpha,
                    "fredholm": fred}

    def criterion_8(self):
        cont = self.continuation()
        branches, trunc = cont["branches"], cont["truncation"]
        per = {}
        ok = True
        for b in branches:
            pts = b.points
            asym = [b.origin.asymmetry] + [q.asymmetry for q in pts]
            info = {
                "points": len(pts),
                "termination": b.termination,
                "alternative": b.alternative,
                "max_residual": max(q.residual for q in pts),
                "max_kelvin_defect": max(q.kelvin_defect for q in pts),
                "positivity": all(q.positivity for q in pts),
                "asymmetry_increasing": bool(np.all(np.diff(asym) > 0)),
                "alpha_range": [min(q.alpha_s for q in pts), max(q.alpha_s for q in pts)],
                "max_sup_ratio": max(q.sup_ratio for q in pts),
            }
            per[str(b.direction)] = info
            ok = ok and info["points"] >= 20 and info["max_residual"] <= 1e-8 \
                and info["max_kelvin_defect"] <= 1e-10 and info["positivity"] \
                and info["asymmetry_increasing"]
        shifts = [trunc["alpha_c_shift"]] + [
            r[key] for r in trunc["points"]
            for key in ("alpha_shift", "norm_shift", "distance_shift", "deviation_shift")
        ]
        ok = ok and max(shifts) <= 1e-3 and cont["runtime"] <= 1800.0
        return ok, {"branches": per, "truncation": trunc, "unknowns": cont["problem"].n_unknowns,
                    "runtime": cont["runtime"]}

    def run(self, numbers=range(1, 9)):
        results = []
        for n in numbers:
            start = time.perf_counter()
            ok, values = getattr(self, f"criterion_{n}")()
            res = CriterionResult(n, TITLES[n], bool(ok), _clean(values), time.perf_counter() - start)
            self.log(res.line())
            results.append(res)
        return results


TITLES = {
    1: "exact spectra: sphere and caps against the shooting oracle",
    2: "hemisphere identity lambda = N-1",
    3: "derivative formula against finite differences, negative sign",
    4: "quasi-isometry sandwich and monotonicity in alpha",
    5: "linearized bubble spectrum by shooting against closed forms",
    6: "threshold crossing: closed form and discrete cylinder linearization",
    7: "one-dimensional kernel, kernel profile and branch tangent",
    8: "branch validity and truncation robustness",
    9: "determinism of repeated runs",
}


def _strip_runtime(obj):
    if isinstance(obj, dict):
        return {k: _strip_runtime(v) for k, v in obj.items() if k != "runtime"}
    if isinstance(obj, list):
        return [_strip_runtime(v) for v in obj]
    return obj


def table(results) -> list:
    """Deterministic part of a run: criterion numbers, verdicts and values (runtimes removed)."""
    return [{"criterion": r.number, "passed": r.passed, "values": _strip_runtime(r.values)}
            for r in results]


def run_suite(config: SuiteConfig | None = None, log=None):
    """Run criteria 1-8, then repeat the run and compare the tables for criterion 9."""
    config = config or SuiteConfig()
    log = log or (lambda msg: None)
    results = Suite(config, log).run()
    first = table(results)
    start = time.perf_counter()
    identical = True
    for _ in range(max(config.repeats, 2) - 1):
        again = table(Suite(config).run())
        identical = identical and again == first
    res9 = CriterionResult(9, TITLES[9], identical, {"repeats": max(config.repeats, 2)},
                           time.perf_counter() - start)
    log(res9.line())
    results.append(res9)
    return results


def summary(results) -> dict:
    return {
        "passed": all(r.passed for r in results),
        "criteria": [asdict(r) for r in results],
    }
