"""Command-line entry points: solve, convergence, train, compare,
mesh-gen.

Every command reads structured JSON configs and/or flags and emits
machine-readable artifacts (metrics CSV per step, JSON summaries with
cumulative metrics, binary network checkpoints, mesh text files).  Exit
codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .assembly import get_discretization, l2_error
from .basis import build_basis
from .losses import METRIC_NAMES, LossConfig, evaluate_metrics
from .mesh import build_structured_tri_2d, build_uniform_1d, save_mesh
from .network import AdamWOptimizer, init_network, load_checkpoint, \
    save_checkpoint
from .problems import TEST_CASE_IDS, make_ic, test_case, \
    training_problem_1d
from .reference import build_reference
from .timeloop import BlowUpError, run
from .training import TrainConfig, multistep_pretrain, train
from .viscosity import EvConfig, make_viscosity_model

__all__ = ["main"]


class ConfigError(ValueError):
    pass


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON in {path}: {err}") from err


def _viscosity_from_config(cfg, case_defaults=None, dimension=1):
    model = cfg.get("model", "none")
    if model == "none":
        return make_viscosity_model("none")
    if model == "ev":
        base = case_defaults["ev"] if case_defaults else EvConfig()
        ev = EvConfig(c_k=cfg.get("c_k", base.c_k),
                      c_max=cfg.get("c_max", base.c_max),
                      eps_den=cfg.get("eps_den", base.eps_den))
        return make_viscosity_model("ev", ev=ev)
    if model == "nn":
        ckpt = cfg.get("checkpoint")
        if not ckpt:
            raise ConfigError("viscosity model 'nn' needs a checkpoint path")
        if not Path(ckpt).exists():
            raise ConfigError(f"checkpoint not found: {ckpt}")
        net, _ = load_checkpoint(ckpt, expect_dimension=dimension)
        return make_viscosity_model("nn", net=net,
                                    c_max=cfg.get("c_max", 1.0))
    raise ConfigError(f"unknown viscosity model {model!r}")


def _problem_from_config(cfg):
    if "case" in cfg:
        ident = cfg["case"]
        if ident not in TEST_CASE_IDS:
            raise ConfigError(f"unknown test case {ident!r}; known: "
                              f"{', '.join(TEST_CASE_IDS)}")
        ov = cfg.get("overrides", {})
        problem, defaults = test_case(
            ident, k=cfg.get("k"), n_cells=ov.get("n_cells"),
            cfl=ov.get("cfl"), integrator=ov.get("integrator"),
            final_time=ov.get("final_time"))
        if "tau" in ov:
            problem = replace(problem, tau=float(ov["tau"]))
        return problem, defaults
    if "problem" in cfg:
        p = cfg["problem"]
        kind = p.get("kind", "uniform1d")
        if kind == "uniform1d":
            mesh = build_uniform_1d(tuple(p.get("domain", (0.0, 1.0))),
                                    int(p["n_cells"]),
                                    periodic=p.get("periodic", True))
            source = ("uniform1d", tuple(p.get("domain", (0.0, 1.0))),
                      int(p["n_cells"]), p.get("periodic", True))
        elif kind == "structured2d":
            dom = p.get("domain", ((0.0, 1.0), (0.0, 1.0)))
            dom = (tuple(dom[0]), tuple(dom[1]))
            mesh = build_structured_tri_2d(dom, int(p["nx"]), int(p["ny"]),
                                           periodic=p.get("periodic", True))
            source = ("structured2d", dom, int(p["nx"]), int(p["ny"]),
                      p.get("periodic", True))
        elif kind == "file":
            from .mesh import load_mesh
            path = Path(p["path"])
            if not path.exists():
                raise ConfigError(f"mesh file not found: {path}")
            mesh = load_mesh(path)
            source = None
        else:
            raise ConfigError(f"unknown mesh kind {kind!r}")
        from .fluxes import make_flux
        from .assembly import BoundarySpec
        from .timeloop import Problem, TimeControls
        flux = make_flux(p["flux"], beta=p.get("beta"))
        ic_cfg = p["ic"]
        ic = make_ic(ic_cfg["id"], **{k: v for k, v in ic_cfg.items()
                                      if k != "id"})
        controls = TimeControls(
            mode=p.get("time_mode", "cfl"), cfl=p.get("cfl", 0.2),
            dt=p.get("dt"), final_time=p.get("final_time"),
            n_steps=p.get("n_steps"),
            integrator=p.get("integrator", "auto"),
            viscosity_every=p.get("viscosity_every", 1))
        problem = Problem(mesh=mesh, k=int(p.get("k", 1)), flux=flux,
                          ic=ic, bc=BoundarySpec.periodic(),
                          controls=controls, tau=p.get("tau", 2.0),
                          name=cfg.get("name", "custom"),
                          mesh_source=source)
        return problem, {"ev": EvConfig(), "analytic": False,
                         "description": "custom problem"}
    raise ConfigError("config needs a 'case' or a 'problem' section")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_metrics_csv(path):
    """Round-trip reader for the metric time series."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(tok) for tok in row] for row in reader]
    return header, rows


def _state_rows(disc, state):
    x = disc.x_nodes
    rows = []
    for c in range(disc.n_cells):
        for nloc in range(disc.nn):
            coords = [repr(float(v)) for v in x[c, nloc]]
            vals = [repr(float(np.asarray(v)[c, nloc])) for v in state.u]
            rows.append([c, nloc] + coords + vals)
    return rows


def cmd_solve(args):
    cfg = _load_json(args.config)
    out = Path(args.out or cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    problem, defaults = _problem_from_config(cfg)
    visc = _viscosity_from_config(cfg.get("viscosity", {}), defaults,
                                  problem.mesh.dimension)
    want_ref = cfg.get("reference", "default") != "none" \
        and problem.reference is not None
    reference = build_reference(problem) if want_ref else None
    basis = build_basis(problem.mesh.dimension, problem.k)
    disc = get_discretization(problem.mesh, basis)
    loss_cfg = LossConfig(q=cfg.get("q", 1))

    snapshot_every = int(cfg.get("snapshot_every", 0))
    metric_rows = []
    visc_rows = []
    snap_rows = []

    from .losses import compute_metrics
    from . import autodiff as ad

    def on_step(i, state, visc_field, dt):
        entry = {"step": i + 1, "t": state.t, "dt": dt}
        if reference is not None:
            ref_n = reference.at(state.t)
            terms = compute_metrics(state.u, ref_n, visc_field,
                                    state.u_prev, loss_cfg.q, disc,
                                    problem.flux)
            for name in METRIC_NAMES:
                entry[name] = float(np.asarray(ad.value_of(terms[name])))
        metric_rows.append(entry)
        mu = np.asarray(ad.value_of(visc_field.raw))
        for c in range(len(mu)):
            visc_rows.append([i + 1, repr(state.t), c, repr(float(mu[c]))])
        if snapshot_every and (i + 1) % snapshot_every == 0:
            for row in _state_rows(disc, state):
                snap_rows.append([i + 1, repr(state.t)] + row)

    t0 = time.time()
    traj = run(problem, visc, on_step=on_step)
    wall = time.time() - t0

    metric_names = ["step", "t", "dt"] + ([*METRIC_NAMES]
                                          if reference is not None else [])
    _write_csv(out / "metrics.csv", metric_names,
               [[row.get(k, "") for k in metric_names]
                for row in metric_rows])
    _write_csv(out / "viscosity.csv", ["step", "t", "cell", "mu"],
               visc_rows)
    coord_names = ["x"] if problem.mesh.dimension == 1 else ["x", "y"]
    var_names = [f"u{i}" for i in range(problem.flux.n_vars)]
    _write_csv(out / "final_state.csv",
               ["cell", "node"] + coord_names + var_names,
               _state_rows(disc, traj.final_state))
    if snap_rows:
        _write_csv(out / "snapshots.csv",
                   ["step", "t", "cell", "node"] + coord_names + var_names,
                   snap_rows)

    summary = {
        "config": cfg,
        "n_steps": traj.n_steps,
        "final_time": traj.final_state.t,
        "max_courant": max(traj.courants) if traj.courants else None,
        "initial_mass": [float(v) for v in traj.initial_mass],
        "mass_drift": _mass_drift(disc, traj),
    }
    if reference is not None:
        cumulative = {name: 0.0 for name in METRIC_NAMES}
        for row in metric_rows:
            for name in METRIC_NAMES:
                cumulative[name] += row[name]
        summary["cumulative_metrics"] = cumulative
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"solve finished: {traj.n_steps} steps in {wall:.1f}s -> {out}")
    if reference is not None:
        for name in METRIC_NAMES:
            print(f"  {name:>9}: {summary['cumulative_metrics'][name]:.6e}")
    return 0


def _mass_drift(disc, traj):
    from .assembly import integrate_state
    final = integrate_state(disc, traj.final_state.u)
    return [abs(float(np.asarray(f)) - float(m))
            for f, m in zip(final, traj.initial_mass)]


def cmd_convergence(args):
    degrees = [int(t) for t in args.degrees.split(",")]
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    case = args.case
    if case not in ("tc1", "tc2"):
        raise ConfigError("convergence study needs a smooth case with an "
                          "analytic solution (tc1 or tc2)")
    model = make_viscosity_model("none") if args.model == "none" else None
    if model is None:
        raise ConfigError("only the zero-viscosity model is wired into "
                          "the convergence command")
    rows = []
    slopes = {}

    def one(k, ref_i):
        problem, defaults = test_case(case, k=k)
        src = problem.mesh_source
        if src[0] == "uniform1d":
            n = args.base_n * 2 ** ref_i
            problem, _ = test_case(case, k=k, n_cells=n)
            h = (src[1][1] - src[1][0]) / n
        else:
            n = args.base_n * 2 ** ref_i
            problem, _ = test_case(case, k=k, n_cells=n)
            h = problem.mesh.h
        traj = run(problem, model)
        disc = get_discretization(problem.mesh,
                                  build_basis(problem.mesh.dimension, k))
        exact = problem.reference[1]
        err = l2_error(disc, traj.final_state.u, exact,
                       traj.final_state.t)
        return h, err

    for k in degrees:
        errs = []
        for i in range(args.refinements):
            h, err = one(k, i)
            errs.append((h, err))
            rows.append([k, repr(h), repr(err)])
        if len(errs) >= 2:
            hs = np.log([e[0] for e in errs])
            es = np.log([e[1] for e in errs])
            slope = float(np.polyfit(hs, es, 1)[0])
            slopes[k] = slope
        else:
            slopes[k] = None
    _write_csv(out / "convergence.csv", ["k", "h", "l2_error"], rows)
    with open(out / "convergence_rates.json", "w") as fh:
        json.dump({str(k): v for k, v in slopes.items()}, fh, indent=2,
                  sort_keys=True)
    for k in degrees:
        val = slopes[k]
        print(f"k={k}: slope "
              f"{'undefined (single refinement)' if val is None else f'{val:.3f}'}")
    return 0


def _environment_from_config(env):
    dim = env.get("dimension", 1)
    if dim != 1:
        raise ConfigError("the training driver covers 1D environments; "
                          "2D problems can be trained through the API")
    problems = []
    for flux_id in env.get("fluxes", ["advection1d", "burgers1d"]):
        for h in env.get("h", [0.05]):
            n_cells = int(round(1.0 / h))
            for k in env.get("k", [1]):
                for ic_entry in env.get("ics", ["gaussian"]):
                    if isinstance(ic_entry, str):
                        ic_id, params = ic_entry, {}
                    else:
                        ic_id = ic_entry["id"]
                        params = {kk: v for kk, v in ic_entry.items()
                                  if kk != "id"}
                    problems.append(training_problem_1d(
                        flux_id, ic_id, n_cells, k,
                        n_steps=env.get("n_steps", 50),
                        cfl=env.get("cfl", 0.15),
                        ic_params=params,
                        c_max=env.get("c_max", 1.0)))
    if not problems:
        raise ConfigError("training environment is empty")
    rng = np.random.default_rng(env.get("split_seed", 0))
    order = rng.permutation(len(problems))
    n_test = max(1, int(round(len(problems)
                              * env.get("test_fraction", 0.2))))
    test_ids = set(order[:n_test].tolist())
    train_probs = [p for i, p in enumerate(problems) if i not in test_ids]
    test_probs = [p for i, p in enumerate(problems) if i in test_ids]
    return train_probs, test_probs


def cmd_train(args):
    cfg = _load_json(args.config)
    out = Path(args.out or cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    train_probs, test_probs = _environment_from_config(
        cfg.get("environment", {}))
    ncfg = cfg.get("network", {})
    resume = ncfg.get("checkpoint")
    if resume:
        net, opt_loaded = load_checkpoint(resume, expect_dimension=1)
    else:
        net = init_network(1, seed=ncfg.get("seed", 0),
                           width=ncfg.get("width"),
                           depth=ncfg.get("depth"))
        opt_loaded = None
    tc = cfg.get("train", {})
    train_cfg = TrainConfig(**{k: v for k, v in tc.items()})
    lc = cfg.get("loss", {})
    loss_cfg = LossConfig(q=lc.get("q", 1), w_grad=lc.get("w_grad", 1.0),
                          regularizers=lc.get("regularizers",
                                              {"ou": 10.0, "vp": 0.1}))
    print(f"training on {len(train_probs)} problems "
          f"({len(test_probs)} held out for testing)")
    t0 = time.time()
    net, opt, sched, tlog = multistep_pretrain(
        train_probs, test_probs, net, train_cfg, loss_cfg)
    if opt_loaded is not None:
        opt = opt_loaded
    net, opt, sched, tlog = train(train_probs, test_probs, net, train_cfg,
                                  loss_cfg, optimizer=opt, scheduler=sched,
                                  tlog=tlog)
    ckpt_path = out / "model.ckpt"
    save_checkpoint(net, opt, ckpt_path)
    header = ["epoch", "lr", "train_loss", "test_loss", "n_steps", "wall"]
    _write_csv(out / "training_log.csv", header,
               [[row.get(k, "") for k in header] for row in tlog.rows])
    summary = {
        "epoch0_loss": tlog.epoch0_loss,
        "best_test_loss": tlog.best_loss,
        "restarts": tlog.restarts,
        "epochs_run": len(tlog.rows),
        "n_parameters": net.n_params,
    }
    with open(out / "training_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"training finished in {time.time() - t0:.0f}s; best test loss "
          f"{tlog.best_loss:.4e}; checkpoint -> {ckpt_path}")
    return 0


def _parse_model_spec(spec, defaults, dimension):
    parts = spec.split(":")
    if parts[0] == "none":
        return "none", make_viscosity_model("none")
    if parts[0] == "ev":
        if len(parts) >= 3:
            ev = EvConfig(c_k=float(parts[1]), c_max=float(parts[2]))
        else:
            ev = defaults["ev"]
        return f"ev(c_k={ev.c_k},c_max={ev.c_max})", \
            make_viscosity_model("ev", ev=ev)
    if parts[0] == "nn":
        if len(parts) < 2:
            raise ConfigError("nn model spec needs a checkpoint: "
                              "nn:<path>[:c_max]")
        path = parts[1]
        if not Path(path).exists():
            raise ConfigError(f"checkpoint not found: {path}")
        net, _ = load_checkpoint(path, expect_dimension=dimension)
        c_max = float(parts[2]) if len(parts) > 2 else 1.0
        return f"nn({Path(path).name})", \
            make_viscosity_model("nn", net=net, c_max=c_max)
    raise ConfigError(f"unknown model spec {spec!r}")


def cmd_compare(args):
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    problem, defaults = test_case(args.case, k=args.k)
    reference = build_reference(problem)
    if reference is None:
        raise ConfigError(f"case {args.case} has no reference to compare "
                          "against")
    loss_cfg = LossConfig()
    models = [_parse_model_spec(s, defaults, problem.mesh.dimension)
              for s in args.models]

    def evaluate(item):
        name, model = item
        problem_i, _ = test_case(args.case, k=args.k)
        ref_i = build_reference(problem_i)
        bd = evaluate_metrics(problem_i, model, loss_cfg, ref_i)
        return name, bd

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(evaluate, models))
    else:
        results = [evaluate(m) for m in models]

    rows = []
    for name, bd in results:
        row = {"model": name, "blown": bd.blown}
        row.update({k: bd.cumulative[k] for k in METRIC_NAMES})
        rows.append(row)
    winners = {}
    for name in METRIC_NAMES:
        valid = [r for r in rows if not r["blown"]]
        if valid:
            winners[name] = min(valid, key=lambda r: r[name])["model"]
    header = ["model", "blown"] + list(METRIC_NAMES)
    _write_csv(out / "comparison.csv", header,
               [[r[k] for k in header] for r in rows])
    with open(out / "comparison_winners.json", "w") as fh:
        json.dump(winners, fh, indent=2, sort_keys=True)
    colw = max(len(r["model"]) for r in rows) + 2
    print("model".ljust(colw) + "  ".join(f"{n:>11}" for n in METRIC_NAMES))
    for r in rows:
        if r["blown"]:
            print(r["model"].ljust(colw) + "blow-up")
        else:
            print(r["model"].ljust(colw)
                  + "  ".join(f"{r[n]:11.4e}" for n in METRIC_NAMES))
    print("winners:", json.dumps(winners, sort_keys=True))
    return 0


def cmd_mesh_gen(args):
    if args.kind == "uniform1d":
        dom = tuple(float(t) for t in args.domain.split(","))
        mesh = build_uniform_1d(dom, args.n, periodic=args.periodic)
    elif args.kind == "structured2d":
        vals = [float(t) for t in args.domain.split(",")]
        if len(vals) != 4:
            raise ConfigError("2D domain is x0,x1,y0,y1")
        mesh = build_structured_tri_2d(((vals[0], vals[1]),
                                        (vals[2], vals[3])),
                                       args.n, args.ny or args.n,
                                       periodic=args.periodic)
    else:
        raise ConfigError(f"unknown mesh kind {args.kind!r}")
    save_mesh(mesh, args.out)
    print(f"wrote {mesh.n_cells} cells to {args.out}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dgvisc",
        description="DG solver for conservation laws with trainable "
                    "artificial viscosity")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one problem and emit metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("convergence", help="mesh-refinement error study")
    p.add_argument("--case", required=True)
    p.add_argument("--degrees", default="1,2,3")
    p.add_argument("--refinements", type=int, default=4)
    p.add_argument("--base-n", type=int, default=10)
    p.add_argument("--model", default="none")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_convergence)

    p = sub.add_parser("train", help="train the viscosity network")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compare", help="run several models on one case")
    p.add_argument("--case", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("mesh-gen", help="write a mesh text file")
    p.add_argument("--kind", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--ny", type=int)
    p.add_argument("--periodic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_mesh_gen)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    np.random.seed(args.seed)
    try:
        return args.fn(args)
    except (ConfigError, KeyError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except BlowUpError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
