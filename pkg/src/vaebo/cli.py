"""Command-line front end.

Subcommands: ``train-vae``, ``sweep``, ``optimize``, ``resume``, ``export-latent``.
Every successful command prints one JSON summary as its final stdout line.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 simulator failure.
``VAEBO_OUTPUT_DIR`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import bo, persistence
from . import vae as vaelib
from .design_space import DesignSpaceError, builtin_config, load_space
from .simulators import MOCK_MODELS, ExternalSimulator

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SIMULATOR = 0, 1, 2, 3
OUTPUT_ENV = "VAEBO_OUTPUT_DIR"

log = logging.getLogger("vaebo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, ".")) / name


def _space_arg(value: str):
    path = Path(value)
    if not path.exists() and not value.endswith((".cfg", ".yaml", ".yml")):
        path = builtin_config(value)  # e.g. "reactor"
    return load_space(path)


def _dims(text: str) -> list[int]:
    try:
        dims = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad dimension list {text!r}") from None
    if not dims or min(dims) < 1:
        raise UsageError("dimensions must be positive integers")
    return dims


def make_simulator(spec: str, arity: int | None, timeout: float = 60.0):
    """Simulator from a CLI spec: a built-in name or ``external:<command>``."""
    if spec.startswith("external:"):
        cmd = spec[len("external:"):].strip()
        if not cmd:
            raise UsageError("external simulator needs a command")
        return ExternalSimulator(cmd, arity or 1, timeout), arity or 1
    if spec not in MOCK_MODELS:
        raise UsageError(f"unknown simulator {spec!r}; choose from {sorted(MOCK_MODELS)} or external:<cmd>")
    sim = MOCK_MODELS[spec]
    native = getattr(sim, "arity", 2)
    if arity is not None and arity != native:
        raise UsageError(f"simulator {spec!r} returns {native} objectives, not {arity}")
    return sim, native


def _summary(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))
    sys.stdout.flush()


def _hyper(args) -> dict:
    return {"beta": args.beta, "epochs": args.epochs, "batch_size": args.batch_size,
            "learning_rate": args.learning_rate}


# -- subcommands -----------------------------------------------------------

def cmd_train_vae(args) -> int:
    space = _space_arg(args.space)
    data = vaelib.default_training_set(space, seed=args.seed)
    if args.sweep:
        return _sweep(space, data, _dims(args.sweep), args, args.out or _default_out("sweep.csv"))
    out = Path(args.out or _default_out("vae.npz"))
    report_path = Path(args.report) if args.report else out.with_suffix(".report.csv")
    model, report = vaelib.train(space, data, latent_dim=args.latent_dim, seed=args.seed, **_hyper(args))
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    vaelib.save_model(model, tmp)
    report.to_csv(report_path)
    os.replace(tmp, out)
    _summary({"checkpoint": str(out), "report": str(report_path), "latent_dim": args.latent_dim,
              "loss_total": report.loss_total[-1] if report.loss_total else None,
              "reconstruction_rate": report.reconstruction_rate, "training_points": int(len(data))})
    return EXIT_OK


def _sweep(space, data, dims, args, out) -> int:
    rows = vaelib.latent_dim_sweep(space, data, dims, seed=args.seed, **_hyper(args))
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    vaelib.write_sweep_csv(rows, tmp)
    os.replace(tmp, out)
    _summary({"sweep": str(out), "rows": len(rows),
              "loss_total": {str(r["latent_dim"]): r["loss_total"] for r in rows}})
    return EXIT_OK


def cmd_sweep(args) -> int:
    space = _space_arg(args.space)
    data = vaelib.default_training_set(space, seed=args.seed)
    return _sweep(space, data, _dims(args.dims), args, args.out or _default_out("sweep.csv"))


_CONFIG_FLAGS = ("init_count", "budget", "candidates", "seed", "arity", "latent_dim", "beta", "epochs",
                 "batch_size", "learning_rate", "max_retries")


def _campaign_config(args) -> tuple[bo.CampaignConfig, str]:
    doc = {}
    if args.config:
        doc = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        if not isinstance(doc, dict):
            raise UsageError("campaign config must be a mapping")
    simulator = args.simulator or doc.pop("simulator", None)
    doc.pop("simulator", None)
    if simulator is None:
        raise UsageError("no simulator given (--simulator or 'simulator' in --config)")
    for key in _CONFIG_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    _, arity = make_simulator(simulator, doc.get("arity"))
    doc["arity"] = arity
    try:
        return bo.CampaignConfig.from_dict(doc), simulator
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _run_and_flush(out, spec, body):
    """Run ``body(flush)``; on a simulator abort flush what was evaluated and re-raise."""
    def flush(state, vae=None):
        persistence.write_campaign(out, state, spec, vae)

    try:
        return body(flush)
    except bo.CampaignAborted as exc:
        persistence.write_campaign(out, exc.state, spec)
        raise


def _final_summary(state: bo.CampaignState, out: Path) -> None:
    doc = {"out": str(out), "evaluations": len(state.records), "iteration": state.iteration,
           "failures": len(state.failures)}
    if state.config.arity == 1:
        best = state.incumbent()
        doc["best"] = best.objectives[0]
        doc["best_point"] = state.space.assignment(state.space.point(best.indices))
    else:
        doc["pareto_size"] = len(persistence.pareto_rows(state))
    _summary(doc)


def cmd_optimize(args) -> int:
    space = _space_arg(args.space)
    config, spec = _campaign_config(args)
    simulator, _ = make_simulator(spec, config.arity, args.timeout)
    out = Path(args.out or _default_out("campaign"))
    vae = vaelib.load_model(args.checkpoint) if args.checkpoint else None
    if vae is not None and vae.space != space:
        raise UsageError("checkpoint was trained on a different design space")

    def run(flush):
        state, model = bo.initialize(space, simulator, config, vae)
        flush(state, model)
        bo.extend(state, model, simulator, config.budget, callback=flush)
        return state

    state = _run_and_flush(out, spec, run)
    _final_summary(state, out)
    return EXIT_OK


def cmd_resume(args) -> int:
    state, vae, spec, out = persistence.load_campaign(args.manifest)
    simulator, _ = make_simulator(spec, state.config.arity, args.timeout)
    extra = args.extra_budget
    if extra < 0:
        raise UsageError("--extra-budget must be >= 0")
    state.config.budget += extra

    def run(flush):
        return bo.extend(state, vae, simulator, extra, callback=flush)

    state = _run_and_flush(out, spec, run)
    persistence.write_campaign(out, state, spec)
    _final_summary(state, out)
    return EXIT_OK


def cmd_export_latent(args) -> int:
    model = vaelib.load_model(args.checkpoint)
    space = model.space
    if args.manifest:
        state, _, _, _ = persistence.load_campaign(args.manifest)
        idx = space.index_array(space.point(r.indices) for r in state.records)
    else:
        idx = vaelib.default_training_set(space, seed=args.seed)
    mu, log_var = vaelib.encode_batch(model, idx)
    header = [*space.names, *(f"z{j}" for j in range(model.latent_dim)),
              *(f"log_var{j}" for j in range(model.latent_dim))]
    rows = []
    for row, m, lv in zip(idx, mu, log_var):
        vals = [persistence._fmt(v) for v in space.point(row).values]
        rows.append([*vals, *(repr(float(x)) for x in m), *(repr(float(x)) for x in lv)])
    out = Path(args.out or _default_out("latent_points.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    persistence.atomic_write_text(out, persistence._csv_text(header, rows))
    _summary({"latent": str(out), "points": len(rows), "latent_dim": model.latent_dim})
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _add_hyper(p, defaults: bool = True):
    p.add_argument("--beta", type=float, default=0.05 if defaults else None)
    p.add_argument("--epochs", type=int, default=2000 if defaults else None)
    p.add_argument("--batch-size", type=int, default=64 if defaults else None)
    p.add_argument("--learning-rate", type=float, default=1e-3 if defaults else None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vaebo", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-vae", help="train a VAE on a design space")
    p.add_argument("--space", required=True, help="config path or built-in name (reactor, caprylic, dwc)")
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--report", help="training-loss CSV (default: <out>.report.csv)")
    p.add_argument("--sweep", help="comma-separated latent dims; writes a sweep CSV to --out instead")
    _add_hyper(p)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("sweep", help="final losses for several latent dimensions")
    p.add_argument("--space", required=True)
    p.add_argument("--dims", default="2,4,8,16")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_hyper(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("optimize", help="run a BO campaign")
    p.add_argument("--space", required=True)
    p.add_argument("--simulator", help="reactor | reactor-bi | caprylic | external:<command>")
    p.add_argument("--config", help="campaign config (YAML); flags override it")
    p.add_argument("--arity", type=int, choices=(1, 2))
    p.add_argument("--init", dest="init_count", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--candidates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--checkpoint", help="use this frozen VAE instead of training one")
    p.add_argument("--timeout", type=float, default=60.0, help="per-evaluation timeout for external simulators")
    p.add_argument("--out")
    _add_hyper(p, defaults=False)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("resume", help="continue a campaign from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--extra-budget", type=int, required=True)
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("export-latent", help="write encoder means for external plotting")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="export the campaign's evaluated designs instead of the grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_latent)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except bo.CampaignAborted as exc:
        print(f"vaebo: simulator failure: {exc}", file=sys.stderr)
        return EXIT_SIMULATOR
    except UsageError as exc:
        print(f"vaebo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DesignSpaceError, persistence.CampaignFileError, vaelib.TrainingDivergedError,
            OSError, ValueError, RuntimeError) as exc:
        print(f"vaebo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
