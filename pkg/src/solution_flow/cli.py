"""Command line entry point.

Subcommands::

    train  <config> [--resume CKPT]
    sample <ckpt> --nfe N --count M [--label L] [--seed S] [--grid T,...] --out FILE.csv
    eval   <ckpt> --metric {energy,sw} --against PRESET [--count M] [--seed S] [--nfe N]
    verify <ckpt> --check {boundary,residual,global-bound,ode-error,all} [--report FILE.csv]

Exit codes:
    0  success
    2  usage error (unknown flag, bad argument)
    3  missing or unreadable input file
    4  invalid configuration or checkpoint contents
    5  numerical failure during training, sampling or verification
    6  a verification check reported FAIL

Failures print one line to stderr: ``error code=<n> kind=<kind> message=<text>``.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_INVALID, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4, 5, 6


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        self.code, self.kind = code, kind
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="solution-flow", description=__doc__.split("\n")[0],
                epilog=__doc__[__doc__.index("Exit codes"):],
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tr = sub.add_parser("train", help="train a model from a config file")
    tr.add_argument("config")
    tr.add_argument("--resume", help="continue from this checkpoint")

    sa = sub.add_parser("sample", help="draw samples from a checkpoint (EMA weights)")
    sa.add_argument("ckpt")
    sa.add_argument("--nfe", type=int, default=1)
    sa.add_argument("--count", type=int, required=True)
    sa.add_argument("--label", type=int, default=None, help="class id; omit for the empty label")
    sa.add_argument("--seed", type=int, default=0)
    sa.add_argument("--grid", default=None, help="comma-separated decreasing times starting at 1")
    sa.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="distance between model samples and a dataset preset")
    ev.add_argument("ckpt")
    ev.add_argument("--metric", choices=("energy", "sw"), default="energy")
    ev.add_argument("--against", required=True)
    ev.add_argument("--count", type=int, default=10000)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--nfe", type=int, default=1)

    ve = sub.add_parser("verify", help="run numerical identity and bound checks")
    ve.add_argument("ckpt")
    ve.add_argument("--check", choices=("boundary", "residual", "global-bound", "ode-error", "all"),
                    default="all")
    ve.add_argument("--probes", type=int, default=1024)
    ve.add_argument("--seed", type=int, default=0)
    ve.add_argument("--report", default=None, help="write per-check CSV rows here")
    return p


def _load_state(path):
    from .checkpoint import CheckpointError, load_checkpoint

    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(EXIT_MISSING, "missing-file", f"no such checkpoint: {path}") from None
    except (CheckpointError, ValueError, KeyError) as exc:
        raise CliError(EXIT_INVALID, "bad-checkpoint", str(exc)) from None


def _generate(state, count, seed, nfe, label=None, grid=None):
    from .sampler import SampleRequest, multi_step_sample, one_step_sample
    from .training import sample_labels

    cfg = state.config
    labels = sample_labels(cfg, count, seed + 1) if label is None else label
    try:
        req = SampleRequest(count, labels, nfe, seed, grid)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, "validation", str(exc)) from None
    params = state.ema.shadow
    if nfe == 1:
        pts = one_step_sample(params, cfg.solution_param(), req)
    else:
        pts = multi_step_sample(params, cfg.solution_param(), cfg.noising(), req)
    return pts, req.labels(params.config.null_label)


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .config import ConfigError, load_config
    from .training import TrainingError, train

    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        raise CliError(EXIT_MISSING, "missing-file", f"no such config: {args.config}") from None
    except ConfigError as exc:
        raise CliError(EXIT_INVALID, "config", str(exc)) from None
    state = None
    if args.resume:
        state = _load_state(args.resume)
        if state.config.content_hash() != cfg.content_hash():
            raise CliError(EXIT_INVALID, "config", "resume checkpoint was made with another config")
    try:
        state = train(cfg, state)
    except TrainingError as exc:
        raise CliError(EXIT_NUMERIC, "non-finite", str(exc)) from None
    if not cfg.checkpoint:
        save_checkpoint(state, "checkpoint.sfc")
    print(f"trained steps={state.step} checkpoint={cfg.checkpoint or 'checkpoint.sfc'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    from .sampler import write_samples_csv

    if args.count < 1:
        raise CliError(EXIT_INVALID, "validation", f"--count must be >= 1, got {args.count}")
    state = _load_state(args.ckpt)
    grid = None
    if args.grid:
        try:
            grid = tuple(float(v) for v in args.grid.split(","))
        except ValueError:
            raise CliError(EXIT_USAGE, "usage", f"bad --grid {args.grid!r}") from None
    label = args.label
    if label is not None and not 0 <= label <= state.config.network_config().null_label:
        raise CliError(EXIT_INVALID, "validation", f"label {label} out of range")
    pts, labels = _generate(state, args.count, args.seed, args.nfe, label, grid)
    write_samples_csv(args.out, pts, labels, args.seed, args.nfe)
    print(f"wrote {len(pts)} samples to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .datasets import preset, sample_data
    from .metrics import energy_distance, sliced_wasserstein

    if args.count < 2:
        raise CliError(EXIT_INVALID, "validation", "--count must be >= 2")
    state = _load_state(args.ckpt)
    try:
        gmm = preset(args.against)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, "validation", str(exc)) from None
    pts, _ = _generate(state, args.count, args.seed, args.nfe)
    data, _ = sample_data(gmm, args.count, np.random.default_rng(args.seed + 7))
    if args.metric == "energy":
        value = energy_distance(pts, data)
    else:
        value = sliced_wasserstein(pts, data, 512, args.seed)
    print("metric,against,nfe,count,seed,value")
    print(f"{args.metric},{args.against},{args.nfe},{args.count},{args.seed},{value!r}")
    return EXIT_OK


def run_checks(state, checks, probes: int = 1024, seed: int = 0):
    """Yield ``(check, passed, summary dict)`` for each requested check."""
    from . import verify
    from .datasets import sample_data
    from .training import true_velocity_fn

    cfg = state.config
    params, param, sched = state.ema.shadow, cfg.solution_param(), cfg.noising()
    gmm = cfg.dataset()
    rng = np.random.default_rng(seed)
    x0, labels = sample_data(gmm, probes, rng)
    if not cfg.conditional:
        labels = np.full(probes, gmm.num_classes)
    grid = verify.make_probe_grid(x0, labels, rng.standard_normal(x0.shape), rng, sched)
    vf = true_velocity_fn(cfg, grid.labels)
    delta = None
    for check in checks:
        if check == "boundary":
            dev = max(verify.boundary_check(params, param, grid.x, grid.t, grid.labels),
                      verify.boundary_check(params, param, grid.x, grid.s, grid.labels))
            yield check, dev <= 1e-12, {"max_deviation": dev}
        elif check == "residual":
            rep = verify.residual_report(params, param, vf, grid.x, grid.t, grid.s, grid.labels)
            delta = rep.delta_hat
            yield check, bool(np.isfinite(rep.norms).all()), {"median": rep.median,
                                                               "delta_hat": rep.delta_hat}
        elif check == "global-bound":
            x1 = rng.standard_normal((probes, gmm.dim))
            sol = verify.model_solution(params, param, grid.labels)
            rep = verify.global_error_check(sol, vf, x1)
            yield check, rep.fraction >= 0.95, {"fraction": rep.fraction,
                                                "median_error": float(np.median(rep.errors)),
                                                "slack": rep.slack}
        elif check == "ode-error":
            sol = verify.model_solution(params, param, grid.labels)
            rep = verify.ode_error_check(sol, vf, grid.x, grid.t, grid.s, delta_hat=delta)
            yield check, bool(np.isfinite(rep.errors).all()), {"median": rep.median,
                                                               "ratio_to_sqrt_delta":
                                                               rep.ratio_to_sqrt_delta}


def cmd_verify(args) -> int:
    state = _load_state(args.ckpt)
    checks = (["boundary", "residual", "global-bound", "ode-error"] if args.check == "all"
              else [args.check])
    rows, ok = [], True
    try:
        for check, passed, summary in run_checks(state, checks, args.probes, args.seed):
            ok &= passed
            detail = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in summary.items())
            print(f"{check}: {'PASS' if passed else 'FAIL'} {detail}")
            rows.append({"check": check, "result": "PASS" if passed else "FAIL", **summary})
    except FloatingPointError as exc:
        raise CliError(EXIT_NUMERIC, "non-finite", str(exc)) from None
    if args.report:
        keys = ["check", "result"] + sorted({k for r in rows for k in r} - {"check", "result"})
        with open(args.report, "w", newline="") as fh:
            w = csv.DictWriter(fh, keys)
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "verify": cmd_verify}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error code={exc.code} kind={exc.kind} message={msg}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
