"""Command-line driver for the verification campaigns.

    ymhlab <subcommand> [--config PATH] [--out DIR] [--verbose]

Subcommands: verify-identities, verify-heatball, selfsimilar, flow,
monotonicity.  Configuration is a plain ``key=value`` file (``#`` comments);
unknown keys are an error.  Exit codes: 0 pass, 1 usage/config error,
2 verification failure, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import analytic, flow, heatball, monotone
from .algebra import StructureData, adjoint_representation, su2
from .fields import GaugeField, LatticeGeometry, Potential, ScalarFieldV

log = logging.getLogger("ymhlab")

CSV_VERSION = "v1"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class Config:
    n: int = 5
    N: int = 16
    h: float = 1.0
    group: str = "su2"  # "su2" or a path to a structure-constant table
    representation: str = "adjoint"
    potential: str = "quartic"
    lam: float = 1.0
    v: float = 1.0
    seed: int = 1
    amplitude: float = 0.3
    sigma: float = 3.0
    higgs_amplitude: float = 0.3
    c_cfl: float = 0.5
    t_end: float = 5.0
    k_snap: int = 1000
    X: tuple = ()
    T: float = float("nan")  # heat-ball apex; defaults to t_end
    r_list: tuple = ()  # defaults to six radii spread over the admissible range
    J_time: int = 60
    q: float = 0.85
    M_ball: int = 1024
    identity_order_tol: float = 0.4
    ftc_tol: float = 0.05
    hong_tol: float = 0.05
    hong_offset: float = 1.0  # Hong apex placed this far past the run end
    selfsim_tol: float = 0.02
    heatball_tol: float = 1e-3
    ibp_tol: float = 1e-2

    # --- derived ----------------------------------------------------------
    @property
    def geometry(self) -> LatticeGeometry:
        return LatticeGeometry(self.n, self.N, self.h)

    @property
    def structure(self) -> StructureData:
        return su2() if self.group == "su2" else StructureData.from_table(Path(self.group))

    @property
    def rep(self):
        return adjoint_representation(self.structure)

    @property
    def W(self) -> Potential:
        return Potential(self.potential, self.lam, self.v)

    @property
    def apex(self) -> np.ndarray:
        return np.zeros(self.n) if not self.X else np.asarray(self.X, dtype=float)

    @property
    def T_local(self) -> float:
        return self.t_end if math.isnan(self.T) else self.T

    @property
    def radii(self) -> list:
        if self.r_list:
            return list(self.r_list)
        rmax = math.sqrt(4 * math.pi * self.t_end)
        return list(np.linspace(0.3 * rmax, 0.98 * rmax, 6))

    @property
    def quadrature(self) -> heatball.QuadratureSpec:
        return heatball.QuadratureSpec(J_time=self.J_time, q=self.q, M_ball=self.M_ball)

    def validate(self) -> "Config":
        if self.n <= 4:
            raise ConfigError(f"n must exceed 4 (got {self.n})")
        if self.N < 8 or self.h <= 0:
            raise ConfigError("need N >= 8 and h > 0")
        if self.representation != "adjoint":
            raise ConfigError(f"unsupported representation {self.representation!r}")
        if self.group != "su2" and not Path(self.group).exists():
            raise ConfigError(f"structure table {self.group!r} not found")
        if self.potential not in ("zero", "quartic"):
            raise ConfigError(f"unknown potential kind {self.potential!r}")
        if not 0 < self.c_cfl <= 1:
            raise ConfigError("c_cfl must lie in ]0, 1]")
        if self.t_end <= 0 or self.k_snap < 1:
            raise ConfigError("need t_end > 0 and k_snap >= 1")
        if self.X and len(self.X) != self.n:
            raise ConfigError(f"X needs {self.n} components")
        if self.T_local > self.t_end + 1e-12:
            raise ConfigError("the heat-ball apex T must not exceed t_end")
        radii = self.radii
        if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ConfigError("r_list must be positive and increasing")
        r0 = math.sqrt(4 * math.pi * self.T_local)
        if radii[-1] >= r0:
            raise ConfigError(f"r_list exceeds the hypothesis radius sqrt(4 pi (T - a)) = {r0:.6g}")
        try:
            self.quadrature
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @classmethod
    def parse(cls, text: str) -> "Config":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            typ = types[key]
            try:
                if typ == "int":
                    kw[key] = int(val)
                elif typ == "float":
                    kw[key] = float(val)
                elif typ == "tuple":
                    kw[key] = _floats(val)
                else:
                    kw[key] = val
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        return cls(**kw).validate()

    @classmethod
    def load(cls, path) -> "Config":
        if path is None:
            return cls().validate()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        return cls.parse(text)

    def dump(self) -> str:
        out = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(repr(float(x)) for x in val)
            out.append(f"{f.name}={val}")
        return "\n".join(out) + "\n"


class VerificationFailure(RuntimeError):
    pass


def _write(out: Path, name: str, header: str, rows) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# ymhlab {name} {CSV_VERSION}", header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    p = out / f"{name}.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "pass" if v else "fail"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _check(ok: bool, what: str, failures: list):
    log.info("%s: %s", "pass" if ok else "FAIL", what)
    if not ok:
        failures.append(what)


# --- campaigns ----------------------------------------------------------------

def cmd_verify_identities(cfg: Config, out: Path) -> list:
    failures = []
    s, rep = cfg.structure, cfg.rep
    rows = []
    for k, val in {**s.invariant_residuals(), **rep.invariant_residuals()}.items():
        rows.append(("algebra", k, val, "", ""))
        _check(val <= 1e-12, f"algebra invariant {k} = {val:.3g}", failures)
    rng = np.random.default_rng(cfg.seed)
    x = rng.normal(size=s.dim)
    u1, u2 = rng.normal(size=rep.dim), rng.normal(size=rep.dim)
    adj = abs(float(s.inner(x, rep.odot(u1, u2))) - float(rep.inner(rep.act(x, u1), u2)))
    rows.append(("algebra", "odot_adjointness", adj, "", ""))
    _check(adj <= 1e-12, f"odot adjointness {adj:.3g}", failures)

    L = cfg.N * cfg.h
    pair = analytic.band_limited_pair(cfg.n, s, rep, L, seed=cfg.seed, amplitude=0.5)
    other = analytic.band_limited_pair(cfg.n, s, rep, L, seed=cfg.seed + 1, amplitude=0.5)
    conv = analytic.identity_convergence(pair, other, np.zeros(cfg.n), cfg.h)
    for name, d in conv.items():
        rows.append(("identity", name, d["coarse"], d["fine"], d["order"]))
        ok = abs(d["order"] - 2.0) <= cfg.identity_order_tol
        _check(ok, f"identity {name} order {d['order']:.3f}", failures)
    _write(out, "identities", "kind,name,residual_h,residual_h2,order", rows)
    return failures


def cmd_verify_heatball(cfg: Config, out: Path) -> list:
    failures = []
    n = cfg.n
    X = cfg.apex
    T = 0.0
    spec = cfg.quadrature
    rows = []
    ball = heatball.HeatBall(tuple(X), T, 1.0)
    taus = -np.linspace(1e-6, ball.depth * (1 - 1e-6), 20001)
    rmax = float(ball.radius(taus).max())
    rows.append(("radius_max", 1.0, rmax, ball.max_radius, abs(rmax - ball.max_radius)))
    _check(abs(rmax - ball.max_radius) <= 1e-6, "radius maximum equals c_n r", failures)

    rng = np.random.default_rng(cfg.seed)
    x = rng.normal(size=(10_000, n))
    t = T - rng.uniform(0.01, 2.0, size=10_000)
    phi = heatball.phi_kernel(X, T, x, t)
    gam = heatball.gamma_kernel(X, T, x, t)
    dev = float(np.max(np.abs(phi - (4 * math.pi * (T - t)) ** 2 * gam) / phi))
    rows.append(("phi_gamma", "", dev, 0.0, dev))
    _check(dev <= 1e-14, "Phi = (4 pi (T-t))^2 Gamma", failures)

    f = lambda p, s_: np.full(p.shape[0], (T - s_) ** -2.0)
    target = (4 * math.pi) ** 2
    lhs_vals = []
    for r in (0.5, 1.0, 2.0):
        lhs, rhs, err = heatball.scaling_check(f, X, T, -0.3, r, spec)
        lhs_vals.append(lhs)
        rel = abs(rhs / target - 1)
        rows.append(("scaling", r, lhs, rhs, rel))
        _check(rel <= cfg.heatball_tol, f"scaling identity r={r}: rel {rel:.3g}", failures)
    lhs2 = heatball.gaussian_weighted_integral(f, X, T, -2.0)
    rel_t = abs(lhs2 / lhs_vals[0] - 1)
    rows.append(("scaling_t_independence", "", lhs_vals[0], lhs2, rel_t))
    _check(rel_t <= cfg.heatball_tol, "scaling lhs independent of t", failures)

    cases = {
        "x-X": (lambda p, s_: (p - X).T, lambda p, s_: np.full(p.shape[0], float(n))),
        "(T-t)(x-X)": (lambda p, s_: (T - s_) * (p - X).T, lambda p, s_: np.full(p.shape[0], n * (T - s_))),
    }
    for name, (xi, div) in cases.items():
        lhs, rhs, err = heatball.ibp_check(xi, X, T, 1.0, spec)
        rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
        rows.append(("ibp " + name, 1.0, lhs, rhs, rel))
        _check(rel <= cfg.ibp_tol, f"integration by parts {name}: rel {rel:.3g}", failures)
    _write(out, "heatball", "check,r,lhs,rhs,defect", rows)
    return failures


def cmd_selfsimilar(cfg: Config, out: Path) -> list:
    failures = []
    s, rep, n = cfg.structure, cfg.rep, cfg.n
    X, T = np.zeros(n), 0.0
    prof = analytic.BumpProfile.random(n, s.dim, seed=cfg.seed, rho=1.0, amplitude=0.5)
    pair = analytic.make_self_similar(prof, X, T, s, rep)
    rg = analytic.radial_gauge(pair, X)
    rng = np.random.default_rng(cfg.seed)
    pts = rng.uniform(-0.4, 0.4, size=(16, n))
    t = -0.5
    rows = []
    for r in (0.5, 1.0, 2.0):
        d = float(np.abs(analytic.rescale_pair(pair, r, X, T).eval_A(pts, t) - pair.eval_A(pts, t)).max())
        rows.append(("fixed_point", r, d))
        _check(d <= 1e-10, f"rescaling fixed point r={r}", failures)
    rA, ru = analytic.selfsimilar_residual(pair, pts, t, X, T)
    rows.append(("characterization", "", float(np.abs(rA).max())))
    S0, _ = flow.selfsim_residuals(pair, X, T, t=t, points=pts)
    S1, _ = flow.selfsim_residuals(rg, X, T, t=t, points=pts[:4])
    rows.append(("S_before_gauge", "", float(np.abs(S0).max())))
    rows.append(("S_radial_gauge", "", float(np.abs(S1).max())))
    _check(float(np.abs(S1).max()) <= 1e-6, "S vanishes in radial gauge", failures)

    glob = heatball.gaussian_weighted_integral(lambda p, s_: pair.evaluate(p, s_).e, X, T, t)
    rows.append(("global", "", glob))
    # self-similar data concentrates at X: grade the ball points toward the centre and use
    # four times the points, which keeps the QMC scatter well under the 2% tolerance
    spec = replace(cfg.quadrature, radial_grading=3.0, M_ball=4 * cfg.quadrature.M_ball)
    Ms = []
    for r in (0.6, 1.0, 1.4):
        smp = monotone.sample(rg, X, T, r, spec)
        Ms.append(smp.M)
        rel = abs(smp.M / glob - 1)
        rows.append(("local", r, smp.M))
        rows.append(("dissipation", r, smp.D))
        _check(rel <= cfg.selfsim_tol, f"local = global at r={r}: rel {rel:.3g}", failures)
    spread = (max(Ms) - min(Ms)) / abs(np.mean(Ms))
    _check(spread <= cfg.selfsim_tol, "local quantity independent of r", failures)
    _write(out, "selfsimilar", "check,r,value", rows)
    return failures


def _initial(cfg: Config):
    return flow.gaussian_packets(cfg.geometry, cfg.rep, seed=cfg.seed, amplitude=cfg.amplitude, sigma=cfg.sigma,
                                 W=cfg.W, higgs_amplitude=cfg.higgs_amplitude if cfg.potential == "quartic" else 0.0)


def _run(cfg: Config, with_recorder: bool):
    init = _initial(cfg)
    obs = []
    hong = monotone.HongTrace(cfg.geometry, cfg.apex, cfg.t_end + cfg.hong_offset)
    obs.append(hong)
    rec = None
    if with_recorder:
        rmax = cfg.radii[-1]
        T = cfg.T_local
        rec = monotone.SpacetimeRecorder.for_radius(cfg.geometry, cfg.rep, cfg.apex, rmax,
                                                   t_from=T - rmax ** 2 / (4 * math.pi) - 1.0)
        obs.append(rec)
    run = flow.evolve(init, cfg.W, cfg.t_end, k_snap=cfg.k_snap, c_cfl=cfg.c_cfl, observers=obs, seed=cfg.seed)
    return run, hong, rec


def cmd_flow(cfg: Config, out: Path) -> list:
    failures = []
    run, hong, _ = _run(cfg, False)
    _write(out, "energy", "step,t,E_total,max_e", [(int(r[0]), r[1], r[2], r[3]) for r in run.energy_trace])
    (out / "hong.csv").write_text(hong.csv())
    ok, worst = run.energy_nonincreasing(1e-10)
    _check(ok, f"energy nonincreasing (worst relative increase {worst:.3g})", failures)
    cons = hong.consistency()
    worst_h = float(cons[:, 3].max()) if len(cons) else 0.0
    _write(out, "hong_consistency", "t,dvalue_dt,rhs,relative_defect", cons)
    _check(worst_h <= cfg.hong_tol, f"Hong consistency (worst {worst_h:.3g})", failures)
    return failures


def cmd_monotonicity(cfg: Config, out: Path) -> list:
    failures = []
    run, hong, rec = _run(cfg, True)
    sf = rec.field()
    X, T, spec = cfg.apex, cfg.T_local, cfg.quadrature
    scan = monotone.monotonicity_scan(sf, X, T, cfg.radii, spec, rel_tol=cfg.ftc_tol)
    (out / "scan.csv").write_text(scan.csv())
    _check(all(scan.verdict_a), "M nondecreasing up to error estimates", failures)
    _check(all(scan.verdict_b), "M(r2) - M(r1) matches the integral of D", failures)

    consts = monotone.derive_constants(cfg.n)
    (out / "constants.txt").write_text(consts.report())
    _check(all(math.isfinite(v) and v > 0 for v in (consts.const_n, consts.c_tilde, consts.gamma)),
           "constants finite and positive", failures)
    rows = []
    for r in (cfg.radii[0], cfg.radii[len(cfg.radii) // 2]):
        est = monotone.cutoff_estimates(sf, X, T, r, spec=spec, constants=consts)
        rows.append(("scale_bound", r, est.dissipation, est.dissipation_bound))
        for tt, v in zip(est.ratio_times, est.ratios):
            rows.append((f"energy_ratio t={tt!r}", r, v, est.ratio_bound))
        _check(est.holds, f"cutoff estimates at r={r:.4g}", failures)
        lhs, rhs = monotone.summability_bound(sf, X, T, r, spec=spec, constants=consts)
        rows.append(("summability", r, lhs, rhs))
        _check(lhs <= rhs, f"summability bound at r={r:.4g}", failures)
    _write(out, "bounds", "bound,r,lhs,rhs", rows)

    g = cfg.geometry
    s, rep = cfg.structure, cfg.rep
    st_rows = []
    trivial = {
        "zero": (GaugeField.zeros(g, s), ScalarFieldV.zeros(g, rep), Potential("zero")),
        "vacuum": (GaugeField.zeros(g, s), flow.FlowState.vacuum(g, rep, cfg.W).u, cfg.W),
    }
    for name, (A, u, W) in trivial.items():
        rep_s = monotone.static_monotonicity(A, u, W, np.zeros(cfg.n), [2.0, 3.0], spec=spec)
        for r, a, b in zip(rep_s.r, rep_s.lhs, rep_s.rhs):
            st_rows.append((name, r, a, b))
        _check(max(map(abs, rep_s.lhs + rep_s.rhs)) <= 1e-10, f"static formula on {name} pair", failures)
    _write(out, "static", "pair,r,lhs,rhs", st_rows)
    return failures


COMMANDS = {
    "verify-identities": cmd_verify_identities,
    "verify-heatball": cmd_verify_heatball,
    "selfsimilar": cmd_selfsimilar,
    "flow": cmd_flow,
    "monotonicity": cmd_monotonicity,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ymhlab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="key=value configuration file")
    parser.add_argument("--out", default="ymhlab_out", help="output directory")
    parser.add_argument("--verbose", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = Config.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dump())
    try:
        failures = COMMANDS[args.command](cfg, out)
    except (flow.FlowAbort, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except (flow.CFLViolation, monotone.TrustRegionError, ValueError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return 2
    if failures:
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return 2
    print(f"{args.command}: all checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
