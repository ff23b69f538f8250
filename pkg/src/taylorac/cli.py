"""Command-line entry point: ``taylorac {converge,lambda-sweep,rt,energy-audit}``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench_io as bio
from .errors import InvalidArgument, SolverError


COMMANDS = {
    "converge": "converge",
    "lambda-sweep": "lambda_sweep",
    "rt": "rt",
    "energy-audit": "energy_audit",
}


def build_parser():
    p = argparse.ArgumentParser(prog="taylorac", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mesh-levels", type=int, help="number of meshes in the convergence study")
    p.add_argument("--lambda", dest="lam", type=float, help="grad-div parameter")
    p.add_argument("--init", choices=bio.INIT_MODES, help="initialization of the time derivatives")
    p.add_argument("--first-order", action="store_true", default=None,
                   help="also run the first-order scheme (rt)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_config(args):
    """RunConfig from the config file, the command and the flag overrides."""
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = bio.parse_config_text(fh.read())
    values["case"] = COMMANDS[args.command]
    if args.command == "rt" and "init" not in values and args.init is None:
        values["init"] = "richardson"
    flags = {"out": args.out, "mesh_levels": args.mesh_levels, "lam": args.lam,
             "init": args.init, "first_order": args.first_order}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.command == "lambda-sweep" and args.init is not None:
        values["sweep_inits"] = args.init
    return bio.RunConfig.from_mapping(values)


def _report(cmd, cfg, result):
    if cmd == "converge":
        reports, rates = result
        for var, r in rates.items():
            print(f"{var}: L2 rates " + " ".join(f"{x:.2f}" for x in r))
    elif cmd == "lambda-sweep":
        for row in result:
            print(f"{row['init']} lambda={row['lambda']:.3g} div_linf={row['div_linf']:.3e} "
                  f"u_L2={row['u_L2']:.3e} rho_L2={row['rho_L2']:.3e}")
    elif cmd == "rt":
        for r in result:
            s = r.summary()
            print(f"{s['resolution']} {s['mode']}: steps={s['steps']} rho in "
                  f"[{s['rho_min']:.3f}, {s['rho_max']:.3f}] max |rho3|={s['rho3_linf_max']:.3e}")
    else:
        worst = max(max(r.density_residual, r.momentum_residual) for r in result)
        print(f"{len(result)} steps, worst relative identity residual {worst:.3e}")
    print(f"output written to {cfg.out}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = make_config(args)
        fn = {"converge": bio.cmd_converge, "lambda-sweep": bio.cmd_lambda_sweep,
              "rt": bio.cmd_rt, "energy-audit": bio.cmd_energy_audit}[args.command]
        result = fn(cfg)
    except (InvalidArgument, SolverError, OSError) as err:
        print(f"taylorac: error: {err}", file=sys.stderr)
        return 2
    _report(args.command, cfg, result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
