"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 numerical failure,
3 test failure, 4 inconclusive.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .bridge import sample_random_bridge
from .conditional import (
    Observation,
    predictive_law,
    survival_given_state,
    tau_posterior,
    z_posterior_expectation,
)
from .config import ConfigError, ExperimentConfig, load_config
from .errors import NumericalFailure, PreconditionError, ZeroEvidence
from .kernels import bridge_transition_density, marginal_density

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_TEST, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4

_FMT = "{:.17g}".format


def function_from_name(desc):
    """``"identity"``, ``"square"``, ``"one"`` or ``{"indicator_le": c}``."""
    if desc is None or desc == "identity":
        return lambda y: np.asarray(y, dtype=float)
    if desc == "square":
        return lambda y: np.asarray(y, dtype=float) ** 2
    if desc == "one":
        return lambda y: np.ones(np.shape(y))
    if isinstance(desc, dict) and "indicator_le" in desc:
        c = float(desc["indicator_le"])
        return lambda y: (np.asarray(y, dtype=float) <= c).astype(float)
    raise ConfigError(f"unknown function {desc!r}")


class Run:
    """Output directory plus the provenance stamped into every artifact."""

    def __init__(self, cfg: ExperimentConfig, out, threads):
        self.cfg = cfg
        self.out = Path(out)
        self.threads = threads
        self.meta = {"config_hash": cfg.hash(), "seed": cfg.seed}

    def path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def write_json(self, name, payload):
        doc = {"schema": "levybridge/1", **self.meta, **payload}
        with open(self.path(name), "w", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_text(self, name, text):
        with open(self.path(name), "w", newline="\n") as fh:
            fh.write(f"# config_hash={self.meta['config_hash']} seed={self.meta['seed']}\n")
            fh.write(text + "\n")

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"# config_hash={self.meta['config_hash']} seed={self.meta['seed']}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_FMT(v) if isinstance(v, (float, np.floating)) else v for v in row])

    def report(self, stem, rep: dg.ExperimentReport):
        self.write_json(f"{stem}.json", {"report": rep.to_dict()})
        self.write_text(f"{stem}.txt", rep.to_text())
        for name, rows in rep.tables.items():
            if rows:
                keys = list(rows[0])
                self.write_csv(f"{stem}_{name}.csv", keys, [[r[k] for k in keys] for r in rows])
        print(rep.to_text())
        return {dg.PASS: EXIT_OK, dg.FAIL: EXIT_TEST, dg.INCONCLUSIVE: EXIT_INCONCLUSIVE}[rep.status]


def _state_grid(p, default):
    g = p.get("state_grid", default)
    if isinstance(g, dict):
        return np.linspace(float(g["lo"]), float(g["hi"]), int(g["n"]))
    return np.asarray(g, dtype=float)


def _observation(p, cfg):
    t, x = float(p["t"]), float(p["x"])
    if "in_support" in p:
        return Observation(t, x, bool(p["in_support"]))
    return Observation.at(t, x, cfg.pinning)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(run: Run):
    rep = run.cfg.validate()
    run.write_json("validate.json", {"validation": rep.to_dict()})
    print("valid" if rep.ok else "invalid:\n  " + "\n  ".join(rep.violations))
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_density(run: Run):
    cfg, p = run.cfg, run.cfg.params
    times = [float(t) for t in p.get("times", cfg.grid.grid())]
    xs = _state_grid(p, {"lo": -5, "hi": 5, "n": 101})
    bridge = p.get("bridge")
    header = ["time", "x", "marginal"] + (["bridge"] if bridge else [])
    rows = []
    for t in times:
        f = np.atleast_1d(marginal_density(cfg.model, t, xs))
        b = None
        if bridge and float(bridge["s"]) < t < float(bridge["r"]):
            b = np.atleast_1d(bridge_transition_density(
                cfg.model, float(bridge["s"]), t, float(bridge["r"]), float(bridge.get("x_s", 0.0)),
                xs, float(bridge["z"])))
        for i, x in enumerate(xs):
            row = [t, float(x), float(f[i])]
            if bridge:
                row.append(float(b[i]) if b is not None else "")
            rows.append(row)
    run.write_csv("density.csv", header, rows)
    print(f"wrote {len(rows)} rows to {run.path('density.csv')}")
    return EXIT_OK


def cmd_sample(run: Run):
    cfg = run.cfg
    batch = sample_random_bridge(cfg.model, cfg.length, cfg.pinning, cfg.grid, cfg.n_paths,
                                 cfg.seed, cfg.method, run.threads, validate=False)
    with open(run.path("paths.csv"), "w", newline="") as fh:
        batch.to_csv(fh, meta=run.meta)
    print(f"wrote {len(batch)} paths to {run.path('paths.csv')}")
    return EXIT_OK


def cmd_posterior(run: Run):
    cfg, p = run.cfg, run.cfg.params
    obs = _observation(p, cfg)
    target = p.get("target", "tau")
    if target == "tau":
        law = tau_posterior(obs, cfg.model, cfg.length, cfg.pinning)
        grid = p.get("r_grid")
        payload = {"target": "tau", "observation": {"t": obs.t, "x": obs.x,
                                                     "in_support": bool(obs.in_support)},
                   "survival": survival_given_state(obs, cfg.model, cfg.length, cfg.pinning),
                   "law": law.to_dict(None if grid is None else _state_grid({"state_grid": grid}, None))}
    elif target == "z":
        g = function_from_name(p.get("g"))
        payload = {"target": "z", "observation": {"t": obs.t, "x": obs.x,
                                                   "in_support": bool(obs.in_support)},
                   "g": p.get("g", "identity"),
                   "expectation": z_posterior_expectation(g, obs, cfg.model, cfg.length, cfg.pinning)}
    else:
        raise ConfigError("posterior target must be 'tau' or 'z'")
    run.write_json("posterior.json", payload)
    print(json.dumps({k: v for k, v in payload.items() if k != "law"}, indent=2))
    return EXIT_OK


def cmd_predict(run: Run):
    cfg, p = run.cfg, run.cfg.params
    obs = _observation(p, cfg)
    u = float(p["u"])
    law = predictive_law(obs, u, cfg.model, cfg.length, cfg.pinning)
    grid = _state_grid(p, {"lo": obs.x - 5, "hi": obs.x + 5, "n": 201})
    run.write_json("predict.json", {"observation": {"t": obs.t, "x": obs.x,
                                                    "in_support": bool(obs.in_support)},
                                    "u": u, "law": law.to_dict(grid)})
    dens = law.density(grid)
    run.write_csv("predict_grid.csv", ["state", "density"], [[float(a), float(b)] for a, b in zip(grid, dens)])
    print(f"total mass {law.total_mass():.12g}; atoms {len(law.atoms)}")
    return EXIT_OK


def cmd_stopping(run: Run):
    cfg = run.cfg
    rep = dg.stopping_time_test(cfg.model, cfg.length, cfg.pinning, cfg.grid, cfg.n_paths,
                                cfg.seed, cfg.method, run.threads)
    return run.report("stopping_test", rep)


def cmd_measurability(run: Run):
    cfg, p = run.cfg, run.cfg.params
    rep = dg.measurability_test(cfg.model, cfg.length, cfg.pinning, float(p["t"]), cfg.n_paths,
                                cfg.seed, cfg.method, run.threads)
    return run.report("measurability_test", rep)


def cmd_markov(run: Run):
    cfg, p = run.cfg, run.cfg.params
    rep = dg.markov_mc_test(cfg.model, cfg.length, cfg.pinning, float(p["t1"]), float(p["t2"]),
                            float(p["u"]), tuple(p.get("bins", (8, 8))), cfg.n_paths, cfg.seed,
                            g=function_from_name(p.get("g")), alpha=float(p.get("alpha", 0.01)),
                            power_guard=bool(p.get("power_guard", False)),
                            pilot_paths=int(p.get("pilot_paths", 20_000)), method=cfg.method,
                            threads=run.threads)
    expect = p.get("expect")
    if rep.status == dg.PASS and expect is not None:
        detected = rep.estimates["non_markov_detected"]["value"] > 0
        if expect not in ("markov", "non_markov"):
            raise ConfigError("params.expect must be 'markov' or 'non_markov'")
        if detected != (expect == "non_markov"):
            rep.status = dg.FAIL
            rep.notes.append(f"expected {expect}")
    return run.report("markov_test", rep)


def cmd_ck(run: Run):
    cfg, p = run.cfg, run.cfg.params
    grid = p.get("state_grid")
    rep = dg.chapman_kolmogorov_check(cfg.model, cfg.length, cfg.pinning, float(p["t"]),
                                      float(p["u"]), float(p["v"]), float(p["x"]),
                                      None if grid is None else _state_grid(p, None),
                                      tol=float(p.get("tol", 1e-4)))
    rep.seed = cfg.seed
    return run.report("ck_check", rep)


COMMANDS = {
    "density": cmd_density,
    "sample": cmd_sample,
    "posterior": cmd_posterior,
    "predict": cmd_predict,
    "stopping-test": cmd_stopping,
    "measurability-test": cmd_measurability,
    "markov-test": cmd_markov,
    "ck-check": cmd_ck,
    "validate": cmd_validate,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="levybridge",
                                 description="Levy bridges with random length and pinning point")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, default=None, help="override mc.seed (u64)")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: $LEVYBRIDGE_THREADS or 1)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config entry, e.g. --set mc.n_paths=1000")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    run = Run(cfg, args.out, args.threads)
    if args.command != "validate":
        rep = cfg.validate()
        if not rep.ok:
            print("invalid configuration:\n  " + "\n  ".join(rep.violations), file=sys.stderr)
            run.write_json("validate.json", {"validation": rep.to_dict()})
            return EXIT_INVALID
    try:
        return COMMANDS[args.command](run)
    except (ConfigError, PreconditionError, KeyError) as exc:
        print(f"invalid request: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailure, ZeroEvidence) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
