"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible circuit,
3 verification or tolerance failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path


from . import __version__
from .circuit import parse_netlist
from .config import RunConfig, load_config
from .data import Dataset, find_data_dir, load_mnist_dir, synthetic_blobs
from .drn import MAGIC as DRN_MAGIC
from .drn import DrnModel, init_weights
from .ep import EpConfig, TrainMetrics, ep_gradient_check, evaluate, gradcheck_instance, train
from .errors import ConfigError, InfeasibleProblem, ModelFormatError, NetlistError, VoltaicError
from .hopfield import MAGIC as DHN_MAGIC
from .hopfield import DhnModel, init_dhn
from .solver import SolveOptions, solve
from .verify import run_suite, write_rows

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_TOLERANCE = 0, 1, 2, 3

log = logging.getLogger("voltaic")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _beta_list(text: str) -> list[float]:
    try:
        vals = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("betas must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="voltaic", description="Steady states and equilibrium-propagation training of ideal resistive networks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="steady state of a netlist by exact coordinate descent")
    s.add_argument("--netlist", required=True)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--max-sweeps", type=int, default=10000)
    s.add_argument("--order", choices=["asc", "rand"], default="asc")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace", help="write the per-sweep energy trace CSV here")
    s.add_argument("--no-escape", action="store_true", help="plain coordinate descent, no group moves at stalls")

    v = sub.add_parser("verify", help="cross-check the solver against active-set enumeration")
    v.add_argument("--random", type=int, default=100, metavar="N")
    v.add_argument("--max-nodes", type=int, default=12)
    v.add_argument("--max-diodes", type=int, default=8)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tol", type=float, default=1e-6, help="pass threshold for both the state difference and the KKT residual")
    v.add_argument("--out", help="CSV path (default: stdout)")

    t = sub.add_parser("train", help="train a DRN or DHN with equilibrium propagation")
    t.add_argument("--config", required=True, help="config file or bundled name (e.g. drn-xs)")
    t.add_argument("--data-dir")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--model", choices=["drn", "dhn"])
    t.add_argument("--synthetic", type=int, metavar="N", help="train on N synthetic samples instead of MNIST")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--no-wallclock", action="store_true", help="write 0 in the seconds column (byte-stable CSVs)")

    e = sub.add_parser("eval", help="evaluate a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--data-dir")
    e.add_argument("--T", type=int, help="inference iterations (default: from the sidecar config, else 4)")
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--synthetic", type=int, metavar="N")

    g = sub.add_parser("gradcheck", help="finite-difference check of the EP gradient identity")
    g.add_argument("--config", default="gradcheck")
    g.add_argument("--betas", type=_beta_list, default=[0.1, 0.05, 0.025])
    g.add_argument("--seed", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    limiter = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    try:
        with limiter:
            return COMMANDS[args.command](args)
    except InfeasibleProblem as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, NetlistError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VoltaicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE


def cmd_solve(args) -> int:
    graph = parse_netlist(Path(args.netlist).read_text())
    opts = SolveOptions(max_sweeps=args.max_sweeps, tol=args.tol, order=args.order, rng_seed=args.seed,
                        escape=not args.no_escape)
    state, report = solve(graph, opts)
    for node, val in enumerate(state.v):
        tag = " pinned" if state.pinned[node] else ""
        print(f"v[{node}] = {val:.12g}{tag}")
    print(f"# sweeps={report.sweeps_run} energy={report.final_energy:.12g} "
          f"converged={str(report.converged).lower()} max_delta_v={report.max_delta_v:.3e}")
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            report.write_trace(fh)
    return EXIT_OK


def cmd_verify(args) -> int:
    rows = run_suite(args.random, args.max_nodes, args.max_diodes, args.seed)
    with (open(args.out, "w", newline="") if args.out else contextlib.nullcontext(sys.stdout)) as fh:
        write_rows(rows, fh)
    bad = [r for r in rows if not (r.max_abs_diff <= args.tol and r.kkt_residual <= args.tol)]
    worst_diff = max((r.max_abs_diff for r in rows), default=0.0)
    worst_kkt = max((r.kkt_residual for r in rows), default=0.0)
    print(f"{len(rows) - len(bad)}/{len(rows)} instances agree within {args.tol:g} "
          f"(worst diff {worst_diff:.2e}, worst KKT residual {worst_kkt:.2e})", file=sys.stderr)
    for r in bad[:10]:
        print(f"  mismatch: seed {r.seed} ({r.status}) diff {r.max_abs_diff:.2e} kkt {r.kkt_residual:.2e}", file=sys.stderr)
    return EXIT_TOLERANCE if bad else EXIT_OK


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _datasets(rc: RunConfig, data_dir, synthetic: int | None) -> tuple[Dataset, Dataset]:
    if synthetic:
        d = rc.sizes[0] // 2 if rc.model == "drn" else rc.sizes[0]
        full = synthetic_blobs(synthetic + max(synthetic // 5, 1), d, rc.sizes[-1], rc.seed)
        n = synthetic
        return (Dataset(full.images[:n], full.labels[:n], full.classes),
                Dataset(full.images[n:], full.labels[n:], full.classes))
    found = find_data_dir(data_dir)
    if found is None:
        raise ConfigError("MNIST IDX files not found: pass --data-dir or set VOLTAIC_DATA_DIR")
    train_set = load_mnist_dir(found, "train").subset(rc.train_subset or None)
    test_set = load_mnist_dir(found, "test").subset(rc.test_subset or None)
    return train_set, test_set


def _new_model(rc: RunConfig):
    if rc.model == "drn":
        return init_weights(rc.sizes, rc.seed, rc.A, rc.gains or None)
    return init_dhn(rc.sizes, rc.seed)


def load_any_model(path):
    head = Path(path).read_bytes()[:4]
    if head == DRN_MAGIC:
        return DrnModel.load(path)
    if head == DHN_MAGIC:
        return DhnModel.load(path)
    raise ModelFormatError(f"{path}: unrecognised model magic {head!r}")


def cmd_train(args) -> int:
    overrides = _overrides(args.set)
    if args.model:
        overrides["model"] = args.model
    rc = load_config(args.config, overrides)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, metrics_path, echo = out / "checkpoint.bin", out / "metrics.csv", out / "config.cfg"
    train_set, test_set = _datasets(rc, args.data_dir, args.synthetic)
    expected_in = rc.sizes[0] // 2 if rc.model == "drn" else rc.sizes[0]
    if train_set.dim != expected_in:
        raise ConfigError(f"data has {train_set.dim} features but the config expects {expected_in}")

    metrics = TrainMetrics()
    if ckpt.exists() and metrics_path.exists():
        model = load_any_model(ckpt)
        metrics = TrainMetrics.read_csv(metrics_path)
        log.info("resuming after epoch %d", len(metrics.rows))
    else:
        model = _new_model(rc)
    echo.write_text(rc.to_text())

    def checkpoint(m, met, epochs_done):
        m.save(ckpt)
        if args.no_wallclock:
            for r in met.rows:
                r["seconds"] = 0.0
        with open(metrics_path, "w", newline="") as fh:
            met.write_csv(fh)

    cfg = EpConfig.from_run_config(rc)
    train(model, train_set, cfg, test_set, start_epoch=len(metrics.rows), metrics=metrics,
          checkpoint=checkpoint, progress=print)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_any_model(args.model)
    T = args.T
    sidecar = Path(args.model).with_name("config.cfg")
    rc = load_config(sidecar) if sidecar.exists() else None
    if T is None:
        T = rc.T if rc else 4
    amplitude = rc.target_amplitude if rc else 1.0
    if args.synthetic:
        if rc is None:
            raise ConfigError("--synthetic evaluation needs the sidecar config.cfg next to the model")
        train_set, test_set = _datasets(rc, None, args.synthetic)
        ds = test_set if args.split == "test" else train_set
    else:
        found = find_data_dir(args.data_dir)
        if found is None:
            raise ConfigError("MNIST IDX files not found: pass --data-dir or set VOLTAIC_DATA_DIR")
        ds = load_mnist_dir(found, args.split)
        if rc is not None:
            ds = ds.subset((rc.test_subset if args.split == "test" else rc.train_subset) or None)
    loss, err = evaluate(model, ds, T, amplitude)
    print(f"loss={loss!r} error={err!r}%")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rc = load_config(args.config)
    if rc.model != "drn":
        raise ConfigError("gradcheck runs on DRN configs")
    seed = rc.seed if args.seed is None else args.seed
    model, x, Y = gradcheck_instance(rc.sizes, seed, rc.A, rc.target_amplitude)
    report = ep_gradient_check(model, x, Y, args.betas)
    for line in report.lines():
        print(line)
    print(f"identity {'ok' if report.identity_ok else 'FAIL'}; ratios {'ok' if report.ratios_ok else 'FAIL'}; "
          f"bounds {'ok' if report.bounds_ok else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_TOLERANCE


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


if __name__ == "__main__":
    sys.exit(main())
