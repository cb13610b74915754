"""Command-line interface: ``shellhomog <verb> --config cfg.toml``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .assembly import BendingInput, SurfaceQuadrature, assemble
from .cell_solver import CellDiscretization, RegimeSpec, effective_form, gamma_limit_study
from .charts import make_chart, make_displacement, random_polynomial, rigid
from .convex_shell import (ConvexityCertificate, FourierField, convex_effective_form, curlcurl_check,
                           reconstruction_residual, solve_modes)
from .errors import ConfigParse, ShellHomogError
from .geometry import TangentForm, frame_at, identity_residuals
from .material import MicrostructureSpec, reduce_q2, sample_cell

log = logging.getLogger("shellhomog")

VERBS = ("geom-check", "qhat", "sweep", "assemble", "convex-solve", "convex-qhat")


# builders ----------------------------------------------------------------------

def build_chart(cfg):
    g = cfg.geometry
    params = dict(g.get("params") or {})
    if "domain" in g:
        params["domain"] = g["domain"]
    return make_chart(g["chart"], **params)


def build_material(cfg) -> MicrostructureSpec:
    m = cfg.material
    phases = tuple(p if isinstance(p, dict) else np.asarray(p, dtype=float) for p in m["phases"])
    return MicrostructureSpec(family=m["family"], phases=phases, direction=int(m["direction"]),
                              theta=float(m["theta"]), t_dependence=m["t_dependence"],
                              t_slope=float(m["t_slope"])).validate()


def build_disc(cfg) -> CellDiscretization:
    c = cfg.cell
    kw = {"N": int(c["N"]), "P": int(c["P"]), "solver": c["solver"]}
    if "cg_tol" in c:
        kw["cg_tol"] = float(c["cg_tol"])
    if "cg_maxit" in c:
        kw["cg_maxit"] = int(c["cg_maxit"])
    return CellDiscretization(**kw)


def build_grid(cfg, disc):
    grid = cfg.material.get("grid")
    return tuple(int(v) for v in grid) if grid else disc.default_grid()


def build_regime(cfg, point=None) -> RegimeSpec:
    c = cfg.cell
    kind = c["regime"]
    if kind == "gamma":
        return RegimeSpec.finite_gamma(float(c["gamma"]))
    if kind == "infinity":
        return RegimeSpec.infinity()
    if kind == "zero-super":
        return RegimeSpec.zero_super()
    if kind == "zero-critical":
        g1 = float(c.get("gamma1", c["gamma"]))
        return RegimeSpec("zero-critical", g1, None if point is None else _ortho(point.weingarten_ortho))
    if kind == "convex":
        return RegimeSpec("convex", None, None if point is None else _ortho(point.weingarten_ortho))
    return RegimeSpec(kind)


def _ortho(A):
    return TangentForm(A, "orthonormal")


def _point(cfg, chart):
    xi = cfg.geometry.get("point")
    if xi is None:
        xi = [0.5 * (a + b) for a, b in chart.domain]
    return frame_at(chart, np.asarray(xi, dtype=float))


def _parse_floats(text: str, name: str):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigParse(f"--{name}: expected comma-separated numbers, got {text!r}") from None


# commands ----------------------------------------------------------------------

def cmd_geom_check(cfg):
    chart = build_chart(cfg)
    rng = np.random.default_rng(int(cfg.run["seed"]))
    n = int(cfg.geometry["samples"])
    (a1, b1), (a2, b2) = chart.domain
    worst: dict = {}
    for _ in range(n):
        xi = np.array([rng.uniform(a1, b1), rng.uniform(a2, b2)])
        for V, bend in ((random_polynomial(rng), False), (rigid(chart, rng.normal(size=3), rng.normal(size=3)), True)):
            for k, v in identity_residuals(chart, xi, V, bending=bend).items():
                worst[k] = max(worst.get(k, 0.0), v)
    tol = chart.tolerance
    ok = all(v <= tol for v in worst.values())
    return {"chart": chart.name, "samples": n, "tolerance": tol, "residuals": worst, "passed": ok}, (0 if ok else 1)


def _density(cfg, disc):
    return sample_cell(build_material(cfg), grid=build_grid(cfg, disc))


def _form_payload(form, Q):
    out = form.to_dict()
    out["quadrature"] = {"t_nodes": Q.t_nodes.tolist(), "t_weights": Q.t_weights.tolist(),
                         "grid": list(Q.grid)}
    out["alpha"] = Q.alpha
    out["beta"] = Q.beta
    out["eigenvalues"] = np.linalg.eigvalsh(form.qhat).tolist()
    return out


def cmd_qhat(cfg):
    disc = build_disc(cfg)
    Q = _density(cfg, disc)
    point = None
    if cfg.cell["regime"] in ("zero-critical", "convex"):
        point = _point(cfg, build_chart(cfg))
    regime = build_regime(cfg, point)
    if regime.kind == "convex":
        A = regime.weingarten_at_x.coeffs
        A = A if np.trace(A) >= 0 else -A
        form = convex_effective_form(reduce_q2(Q), disc, weingarten=A, eliminate_g=bool(cfg.cell["eliminate_g"]))
    else:
        form = effective_form(Q, regime, disc, eliminate_g=bool(cfg.cell["eliminate_g"]))
    return _form_payload(form, Q), 0


def cmd_convex_qhat(cfg):
    cfg.cell["regime"] = "convex"
    return cmd_qhat(cfg)


def cmd_sweep(cfg):
    disc = build_disc(cfg)
    Q = _density(cfg, disc)
    gammas = sorted(float(g) for g in cfg.run["gammas"])
    study = gamma_limit_study(Q, disc, gammas, tol=float(cfg.run["tolerance"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gamma", "load_id", "value", "N", "P", "cond_estimate"])
    rows = [(repr(r["gamma"]), r["qhat"], r["cond_estimate"]) for r in study["rows"]]
    rows.append(("inf", study["anchors"]["infinity"], study["anchors"]["infinity_cond"]))
    rows.append(("0", study["anchors"]["zero"], study["anchors"]["zero_cond"]))
    for g, qh, cond in rows:
        for i in range(6):
            w.writerow([g, i, repr(float(qh[i, i])), disc.N, disc.P, repr(float(cond))])
    if study["rows"]:
        log.info("gap_high=%.3e gap_low=%.3e psd_monotone=%s", study["gap_high"], study["gap_low"],
                 study["psd_monotone"])
    return buf.getvalue(), 0


def build_bending_input(cfg, chart):
    r = cfg.run
    V = make_displacement(chart, r.get("displacement"))
    bw = r.get("bw")
    cancel = bw == "cancel"
    if isinstance(bw, str) and not cancel:
        raise ConfigParse(f"run.bw must be a 2x2 matrix or 'cancel', got {bw!r}")
    return BendingInput(V, None if cancel or bw is None else np.asarray(bw, dtype=float),
                        r.get("bending_tolerance"), cancel)


def cmd_assemble(cfg):
    chart = build_chart(cfg)
    disc = build_disc(cfg)
    quad = SurfaceQuadrature.from_chart(chart, int(cfg.geometry["order"]))
    inp = build_bending_input(cfg, chart)
    report = assemble(chart, quad, inp, build_regime(cfg), disc, build_material(cfg),
                      grid=build_grid(cfg, disc), threads=int(cfg.run["threads"]),
                      eliminate_g=bool(cfg.cell["eliminate_g"]))
    log.info("assembled in %.3fs on %d threads", report.timing["seconds"], report.timing["threads"])
    return report.to_dict(), 0


def cmd_convex_solve(cfg):
    r = cfg.run
    A = r.get("A")
    if A is None:
        A = _point(cfg, build_chart(cfg)).weingarten_ortho
        A = A if np.trace(A) >= 0 else -A
    A = np.asarray(A, dtype=float)
    N = int(cfg.cell["N"])
    if r.get("B"):
        try:
            B = FourierField.loads(Path(r["B"]).read_text())
        except OSError as exc:
            raise ConfigParse(f"cannot read B field {r['B']}: {exc.strerror}") from None
    else:
        B = FourierField.random(N, np.random.default_rng(int(r["seed"])))
    cert = ConvexityCertificate.from_matrix(A)
    sol = solve_modes(A, B, cert)
    out = sol.to_dict()
    out["c_min"] = cert.c_min
    out["reconstruction_residual"] = reconstruction_residual(A, B, sol)
    out["curlcurl_residual"] = curlcurl_check(A, B, sol)
    return out, 0


COMMANDS = {"geom-check": cmd_geom_check, "qhat": cmd_qhat, "sweep": cmd_sweep, "assemble": cmd_assemble,
            "convex-solve": cmd_convex_solve, "convex-qhat": cmd_convex_qhat}


# output ------------------------------------------------------------------------

def render(payload) -> str:
    if isinstance(payload, str):
        return payload
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def execute(cfg, command: str | None = None):
    """Run ``command`` (default ``run.command``); returns ``(exit_code, text)``."""
    command = command or cfg.run["command"]
    if command not in COMMANDS:
        raise ConfigParse(f"unknown command {command!r}; choose from {VERBS}")
    payload, code = COMMANDS[command](cfg)
    text = render(payload)
    out = cfg.run.get("out")
    if out:
        write_atomic(out, text)
    return code, text


def run_config(path, command: str | None = None) -> int:
    """Execute a configuration file; domain errors map to their exit codes."""
    try:
        cfg = cfgmod.load(path)
        code, text = execute(cfg, command)
    except ShellHomogError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    if not cfg.run.get("out"):
        sys.stdout.write(text)
    return code


def _apply_overrides(cfg, ns):
    if ns.out:
        cfg.run["out"] = ns.out
    if ns.threads is not None:
        cfg.run["threads"] = ns.threads
    if ns.seed is not None:
        cfg.run["seed"] = ns.seed
    if ns.regime:
        cfg.cell["regime"] = ns.regime
    if ns.gamma is not None:
        cfg.cell["gamma"] = ns.gamma
        cfg.cell["gamma1"] = ns.gamma
    if ns.N is not None:
        cfg.cell["N"] = ns.N
    if ns.P is not None:
        cfg.cell["P"] = ns.P
    if ns.gammas:
        cfg.run["gammas"] = _parse_floats(ns.gammas, "gammas")
    if ns.A:
        a = _parse_floats(ns.A, "A")
        if len(a) not in (3, 4):
            raise ConfigParse("--A expects 'A11,A12,A22' or four entries")
        cfg.run["A"] = [[a[0], a[1]], [a[1], a[2]]] if len(a) == 3 else [a[:2], a[2:]]
    if ns.B:
        cfg.run["B"] = ns.B
    return cfg


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shellhomog", description="Effective shell energies from periodic cell problems.")
    p.add_argument("--version", action="version", version=f"shellhomog {__version__}")
    p.add_argument("verb", choices=VERBS + ("run",), help="command to execute ('run' uses run.command)")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--out", help="output path (JSON, or CSV for sweep); stdout if omitted")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--regime", choices=("gamma", "infinity", "zero-super", "zero-critical", "convex"))
    p.add_argument("--gamma", type=float, help="gamma, or gamma1 for zero-critical")
    p.add_argument("--N", type=int, help="Fourier order")
    p.add_argument("--P", type=int, help="Legendre order")
    p.add_argument("--gammas", help="comma-separated gamma values for sweep")
    p.add_argument("--A", help="Weingarten map 'A11,A12,A22' for convex-solve")
    p.add_argument("--B", help="JSON Fourier field for convex-solve")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SHELLHOMOG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    ns = make_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(ns.config) if ns.config else cfgmod.defaults()
        cfg = _apply_overrides(cfg, ns)
        code, text = execute(cfg, None if ns.verb == "run" else ns.verb)
    except ShellHomogError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    if not cfg.run.get("out"):
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
