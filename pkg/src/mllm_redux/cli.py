"""Command-line entry point.

Exit codes: 0 ok, 1 oracle failure, 2 usage or config error, 3 runtime error.
"""

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from dataclasses import replace

from . import oracle
from .config import load_config
from .errors import ConfigError
from .pipeline import run_pipeline
from .weights import init_weights, load_weights, save_weights

log = logging.getLogger("mllm_redux")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
SWEEP_AXES = ("gamma_max", "keep_ratio", "spd_factor")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(path, seed):
    cfg = load_config(path)
    if seed is not None:
        cfg = cfg.with_seed(seed).validate()
    return cfg


def _weights_for(cfg, path):
    if path is None:
        return init_weights(cfg)
    weights = load_weights(path)
    weights.check(cfg)
    return weights


def cmd_run(config_path, seed=None, report_path=None, weights_path=None):
    try:
        cfg = _load(config_path, seed)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = run_pipeline(cfg, weights=_weights_for(cfg, weights_path))
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = report.to_json()
    if report_path:
        write_atomic(report_path, text)
    else:
        sys.stdout.write(text)
    print(f"run finished in {report.duration_s:.3f}s", file=sys.stderr)
    return EXIT_OK


def _value_label(v):
    return format(v, "g")


def _apply_axis(cfg, axis, value):
    if axis == "gamma_max":
        return replace(cfg, cmai=replace(cfg.cmai, gamma_max=float(value)))
    if axis == "keep_ratio":
        mode = cfg.compression if cfg.compression in ("vmtc", "llp") else "vmtc"
        return replace(cfg, compression=mode, vmtc=replace(cfg.vmtc, target_keep_ratio=float(value)))
    if float(value) != int(value):
        raise ConfigError("spd_factor", f"expected an integer, got {value}")
    return replace(cfg, compression="spd", spd_factor=int(value))


def cmd_sweep(config_path, axis, values, out_dir):
    if axis not in SWEEP_AXES:
        print(f"unknown axis {axis!r}; expected one of {SWEEP_AXES}", file=sys.stderr)
        return EXIT_USAGE
    if not values:
        print("sweep needs at least one value", file=sys.stderr)
        return EXIT_USAGE
    try:
        base = load_config(config_path)
        configs = [_apply_axis(base, axis, v).validate() for v in values]
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    rows = []
    try:
        reports = [run_pipeline(cfg) for cfg in configs]
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for value, report in zip(values, reports):
        write_atomic(os.path.join(out_dir, f"report_{axis}_{_value_label(value)}.json"), report.to_json())
        counts = [c for layer in report.layers for c_str, n in layer["inhibited_count_histogram"].items()
                  for c in [int(c_str)] * n]
        rows.append({
            "axis": axis,
            "value": _value_label(value),
            "final_visual_token_count": report.final_visual_token_count,
            "mean_inhibited_count": format(sum(counts) / len(counts), ".6f") if counts else "0.000000",
            "max_inhibited_count": max(counts) if counts else 0,
            "logits_digest": report.logits_digest,
        })
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    write_atomic(os.path.join(out_dir, "summary.csv"), buf.getvalue())
    return EXIT_OK


def cmd_oracle(suite):
    if suite != "all" and suite not in oracle.SUITES:
        print(f"unknown suite {suite!r}", file=sys.stderr)
        return EXIT_USAGE
    results = oracle.run_suites(suite)
    print(oracle.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_weights(action, path, config_path=None, seed=None):
    if action == "init":
        try:
            cfg = _load(config_path, seed) if config_path else None
        except (ConfigError, OSError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if cfg is None:
            from .config import ModelConfig
            cfg = ModelConfig() if seed is None else ModelConfig(seed=seed)
        save_weights(init_weights(cfg), path)
        return EXIT_OK
    try:
        weights = load_weights(path)
    except (OSError, ValueError) as exc:
        print(f"cannot read weights: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, arr in weights.tensors().items():
        print(f"{name}\t{'x'.join(map(str, arr.shape)) or 'scalar'}")
    return EXIT_OK


def _parse_values(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser():
    p = _Parser(prog="mllm-redux", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the pipeline once and write a report")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--report")
    run.add_argument("--weights")

    sweep = sub.add_parser("sweep", help="one run per value along an axis")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True)
    sweep.add_argument("--values", required=True, type=_parse_values)
    sweep.add_argument("--out", required=True)

    orc = sub.add_parser("oracle", help="run oracle agreement suites")
    orc.add_argument("--suite", default="all")

    w = sub.add_parser("weights", help="create or inspect a weights file")
    w.add_argument("action", choices=("init", "inspect"))
    w.add_argument("path")
    w.add_argument("--config")
    w.add_argument("--seed", type=int)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.seed, args.report, args.weights)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.axis, args.values, args.out)
    if args.command == "oracle":
        return cmd_oracle(args.suite)
    return cmd_weights(args.action, args.path, args.config, args.seed)


if __name__ == "__main__":
    sys.exit(main())
