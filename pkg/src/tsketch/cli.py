"""Command-line interface.

Subcommands: gen, sketch, recover, eval, experiment. Each takes a JSON config
(--config) merged over built-in defaults, with a few flags (--seed, --rank,
--two-pass, --threads) overriding the merged values; --print-config shows the
result and exits. Tensor-bearing inputs arrive either as a whole-tensor TNSR
file (--input) or a TSKC slab stream (--chunks); recover --two-pass and eval
accept either format through --chunks. Failures exit nonzero with one JSON
line on stderr: {"error": {"category": ..., "message": ...}}.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from .ensembles import derive_seed, materialize
from .errors import EXIT_CODES, ConfigError, IOFormatError, TsketchError
from .evaluate import (
    add_noise_snr,
    bound_rhs,
    gen_lowrank,
    gen_superdiag_exp,
    gen_superdiag_poly,
    max_principal_angle,
    relative_error,
    snr_db,
    tail_baseline,
    tail_energy,
)
from .formats import (
    read_bundle,
    read_chunk_shape,
    read_chunks,
    read_chunks_dense,
    read_factorization,
    read_tensor,
    write_bundle,
    write_chunks,
    write_factorization,
    write_tensor,
)
from .recover import (
    TuckerFactorization,
    one_pass,
    reconstruct,
    recover_core_onepass,
    recover_factors,
    two_pass,
)
from .sketch import SketchAccumulator, make_plan, sketch, slab_chunks
from .tensor import norm

__all__ = ["main"]

CSV_HEADER_COMMENT = "# tsketch-csv v1"

CSV_COLUMNS = [
    "variant",
    "loo_kind",
    "family",
    "n",
    "d",
    "r_true",
    "r_fit",
    "snr_db_target",
    "m",
    "m_c",
    "trial",
    "seed",
    "rel_err_onepass",
    "rel_err_twopass",
    "rel_err_onepass_input",
    "snr_db",
    "angle_max_deg",
    "angles_deg",
    "storage_loo_entries",
    "storage_core_entries",
    "storage_total_entries",
    "bound_rhs",
    "tail_baseline",
    "wall_sketch_s",
    "wall_factor_s",
    "wall_core_s",
]

_GEN_DEFAULTS = {
    "generator": "lowrank",
    "n": 40,
    "d": 3,
    "r_true": 5,
    "snr_db": None,
    "slabs": None,
    "seed": 0,
}

_SKETCH_DEFAULTS = {
    "loo_kind": "kronecker",
    "m": 15,
    "m_c": 15,
    "loo_family": "gaussian",
    "core_family": None,
    "diag_family": "identity",
    "seed": 0,
}

_RECOVER_DEFAULTS = {
    "rank": None,
    "two_pass": False,
}

_EVAL_DEFAULTS = {
    "clean": None,
}

_EXPERIMENT_DEFAULTS = {
    "generator": "lowrank",
    "input": None,
    "n": 40,
    "d": 3,
    "r_true": 5,
    "r_fit": 5,
    "snr_db": None,
    "loo_kind": "kronecker",
    "loo_family": "gaussian",
    "core_family": None,
    "diag_family": "identity",
    "variants": None,
    "m": [15],
    "m_c": [15],
    "trials": 1,
    "two_pass": False,
    "bound_eps": 0.99,
    "seed": 0,
    "threads": 1,
}

_DEFAULTS = {
    "gen": _GEN_DEFAULTS,
    "sketch": _SKETCH_DEFAULTS,
    "recover": _RECOVER_DEFAULTS,
    "eval": _EVAL_DEFAULTS,
    "experiment": _EXPERIMENT_DEFAULTS,
}

# Variant entries in an experiment config may override only these.
_VARIANT_KEYS = {"loo_kind", "loo_family", "core_family", "diag_family", "m", "m_c"}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="tsketch",
        description="Sketch large dense tensors in one pass and recover "
        "low Tucker-rank factorizations from the sketches.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, flags):
        p = sub.add_parser(name, help=help_)
        if "config" in flags:
            p.add_argument("--config", metavar="PATH", help="JSON config file")
        if "input" in flags:
            p.add_argument("--input", metavar="PATH", help=flags["input"])
        if "output" in flags:
            p.add_argument("--output", metavar="PATH", help=flags["output"])
        if "rank" in flags:
            p.add_argument("--rank", type=int, metavar="R", help="target Tucker rank")
        if "two_pass" in flags:
            p.add_argument(
                "--two-pass",
                action="store_true",
                dest="two_pass",
                help="recompute the core from the data (needs --chunks)",
            )
        if "chunks" in flags:
            p.add_argument("--chunks", metavar="PATH", help=flags["chunks"])
        if "seed" in flags:
            p.add_argument("--seed", type=int, metavar="U64", help="override config seed")
        if "threads" in flags:
            p.add_argument("--threads", type=int, metavar="N", help="worker threads")
        p.add_argument(
            "--print-config",
            action="store_true",
            dest="print_config",
            help="print the merged config as JSON and exit",
        )
        return p

    add("gen", "synthesize a test tensor", {
        "config": True,
        "output": "tensor file to write (TNSR, or TSKC when config slabs is set)",
        "seed": True,
    })
    add("sketch", "sketch a tensor into a bundle", {
        "config": True,
        "input": "whole tensor to sketch (TNSR)",
        "chunks": "slab stream to sketch (TSKC), streamed chunk by chunk",
        "output": "bundle file to write (TSKB)",
        "seed": True,
    })
    add("recover", "recover a factorization from a bundle", {
        "config": True,
        "input": "bundle file (TSKB)",
        "output": "factorization file to write (TUCK)",
        "rank": True,
        "two_pass": True,
        "chunks": "tensor for the second pass (TNSR or TSKC)",
    })
    add("eval", "score a factorization against a tensor", {
        "config": True,
        "input": "factorization file (TUCK)",
        "chunks": "tensor it was fit to (TNSR or TSKC)",
        "output": "JSON report path (default: stdout)",
    })
    add("experiment", "run a sweep and write one CSV row per trial", {
        "config": True,
        "output": "CSV file to write",
        "seed": True,
        "threads": True,
    })
    return parser


def _load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise IOFormatError(f"cannot open config {path}: {e}")
    try:
        loaded = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(loaded, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return loaded


def _merge_config(command, args):
    cfg = dict(_DEFAULTS[command])
    if getattr(args, "config", None):
        loaded = _load_config_file(args.config)
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "rank", None) is not None:
        cfg["rank"] = args.rank
    if getattr(args, "two_pass", False):
        cfg["two_pass"] = True
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    return cfg


def _print_config(cfg):
    print(json.dumps(cfg, indent=2, sort_keys=True))


def _require(value, flag):
    if not value:
        raise ConfigError(f"{flag} is required")
    return value


def _sniff_magic(path):
    try:
        with open(path, "rb") as f:
            return f.read(4)
    except OSError as e:
        raise IOFormatError(f"cannot open {path}: {e}")


def _load_tensor_any(path):
    """Read a tensor from either a TNSR file or a TSKC slab stream."""
    magic = _sniff_magic(path)
    if magic == b"TNSR":
        return read_tensor(path)
    if magic == b"TSKC":
        return read_chunks_dense(path)
    raise IOFormatError(f"{path}: expected a TNSR or TSKC file, found magic {magic!r}")


# -- gen -----------------------------------------------------------------


def _generate_clean(cfg, seed):
    gen = cfg["generator"]
    n, d, r = cfg["n"], cfg["d"], cfg["r_true"]
    if gen == "lowrank":
        x0, factors = gen_lowrank(n, d, r, seed=seed)
        return x0, factors
    if gen == "superdiag_exp":
        return gen_superdiag_exp(n, d, r), None
    if gen == "superdiag_poly":
        return gen_superdiag_poly(n, d, r), None
    raise ConfigError(f"unknown generator {gen!r}")


def cmd_gen(args):
    cfg = _merge_config("gen", args)
    if args.print_config:
        _print_config(cfg)
        return 0
    output = _require(args.output, "--output")
    x0, _ = _generate_clean(cfg, cfg["seed"])
    x = x0 if cfg["snr_db"] is None else add_noise_snr(x0, cfg["snr_db"], seed=cfg["seed"])
    slabs = cfg["slabs"]
    if slabs is None:
        write_tensor(output, x)
    else:
        if not isinstance(slabs, int) or slabs < 1:
            raise ConfigError(f"slabs must be a positive integer, got {slabs!r}")
        write_chunks(output, x.shape, slab_chunks(x, slabs))
    return 0


# -- sketch --------------------------------------------------------------


def _plan_from_config(cfg, shape):
    return make_plan(
        shape,
        cfg["loo_kind"],
        cfg["m"],
        cfg["m_c"],
        loo_family=cfg["loo_family"],
        core_family=cfg["core_family"],
        diag_family=cfg["diag_family"],
        seed=cfg["seed"],
    )


def cmd_sketch(args):
    cfg = _merge_config("sketch", args)
    if args.print_config:
        _print_config(cfg)
        return 0
    output = _require(args.output, "--output")
    if bool(args.input) == bool(args.chunks):
        raise ConfigError("exactly one of --input and --chunks is required")
    if args.input:
        x = read_tensor(args.input)
        bundle = sketch(x, _plan_from_config(cfg, x.shape))
    else:
        shape = read_chunk_shape(args.chunks)
        acc = SketchAccumulator(_plan_from_config(cfg, shape))
        for chunk in read_chunks(args.chunks):
            acc.update(chunk)
        bundle = acc.finalize()
    write_bundle(output, bundle)
    return 0


# -- recover -------------------------------------------------------------


def cmd_recover(args):
    cfg = _merge_config("recover", args)
    if args.print_config:
        _print_config(cfg)
        return 0
    bundle_path = _require(args.input, "--input")
    output = _require(args.output, "--output")
    rank = cfg["rank"]
    if rank is None:
        raise ConfigError("--rank is required")
    bundle = read_bundle(bundle_path)
    if cfg["two_pass"]:
        if not args.chunks:
            raise ConfigError("--two-pass needs the tensor via --chunks")
        # TODO: stream the second-pass core update slab by slab instead of
        # assembling the full tensor.
        x = _load_tensor_any(args.chunks)
        t = two_pass(bundle, x, rank)
    else:
        t = one_pass(bundle, rank)
    write_factorization(output, t)
    return 0


# -- eval ----------------------------------------------------------------


def cmd_eval(args):
    cfg = _merge_config("eval", args)
    if args.print_config:
        _print_config(cfg)
        return 0
    t = read_factorization(_require(args.input, "--input"))
    x = _load_tensor_any(_require(args.chunks, "--chunks"))
    x_hat = reconstruct(t)
    if x_hat.shape != x.shape:
        raise ConfigError(
            f"factorization reconstructs to {x_hat.shape}, tensor has shape {x.shape}"
        )
    report = {
        "shape": list(x.shape),
        "rank": t.rank,
        "relative_error": relative_error(x_hat, x),
    }
    if cfg["clean"] is not None:
        x0 = _load_tensor_any(cfg["clean"])
        report["relative_error_clean"] = relative_error(x_hat, x0)
        report["snr_db"] = snr_db(x, x0)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


# -- experiment ----------------------------------------------------------


def _as_sweep(value, key):
    if isinstance(value, int):
        value = [value]
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{key} must be a positive integer or non-empty list")
    for v in value:
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"{key} entries must be positive integers, got {v!r}")
    return list(value)


def _experiment_tasks(cfg):
    """Expand (variant, m, m_c, trial) cross product into per-row task dicts."""
    variants = cfg["variants"]
    if variants is None:
        variants = [{}]
    if not isinstance(variants, list) or not all(isinstance(v, dict) for v in variants):
        raise ConfigError("variants must be a list of config-override objects")
    if cfg["trials"] < 1:
        raise ConfigError("trials must be >= 1")
    tasks = []
    for v_idx, overrides in enumerate(variants):
        unknown = sorted(set(overrides) - _VARIANT_KEYS)
        if unknown:
            raise ConfigError(f"variant {v_idx} overrides unknown keys: {', '.join(unknown)}")
        row_cfg = dict(cfg)
        row_cfg.update(overrides)
        for m in _as_sweep(row_cfg["m"], "m"):
            for m_c in _as_sweep(row_cfg["m_c"], "m_c"):
                for trial in range(cfg["trials"]):
                    tasks.append(
                        {
                            "cfg": row_cfg,
                            "variant": v_idx,
                            "m": m,
                            "m_c": m_c,
                            "trial": trial,
                            "seed": derive_seed(cfg["seed"], "trial", v_idx, m, m_c, trial),
                        }
                    )
    return tasks


def _load_experiment_input(cfg):
    if cfg["generator"] == "file":
        path = cfg["input"]
        if not path:
            raise ConfigError('generator "file" needs an input tensor path in the config')
        return _load_tensor_any(path)
    return None


def _run_trial(task, file_tensor, shared):
    cfg = task["cfg"]
    seed = task["seed"]
    n, d, r_fit = cfg["n"], cfg["d"], cfg["r_fit"]

    factors_true = None
    if cfg["generator"] == "file":
        x0 = file_tensor
        n, d = x0.shape[0], x0.ndim
    elif cfg["generator"] == "lowrank":
        x0, factors_true = gen_lowrank(n, d, cfg["r_true"], seed=seed)
    elif cfg["generator"] == "superdiag_exp":
        x0 = shared["superdiag"]
    elif cfg["generator"] == "superdiag_poly":
        x0 = shared["superdiag"]
    else:
        raise ConfigError(f"unknown generator {cfg['generator']!r}")
    x = x0 if cfg["snr_db"] is None else add_noise_snr(x0, cfg["snr_db"], seed=seed)

    plan = make_plan(
        x.shape,
        cfg["loo_kind"],
        task["m"],
        task["m_c"],
        loo_family=cfg["loo_family"],
        core_family=cfg["core_family"],
        diag_family=cfg["diag_family"],
        seed=seed,
    )

    t0 = time.perf_counter()
    bundle = sketch(x, plan)
    t_sketch = time.perf_counter() - t0

    t0 = time.perf_counter()
    qs = recover_factors(bundle, r_fit)
    t_factor = time.perf_counter() - t0

    t0 = time.perf_counter()
    phis = [materialize(plan.core_spec(i)) for i in range(1, plan.d + 1)]
    core = recover_core_onepass(bundle.core, phis, qs)
    t_core = time.perf_counter() - t0

    x_hat = reconstruct(TuckerFactorization(core=core, factors=qs))
    rel_err_twopass = None
    if cfg["two_pass"]:
        x_hat2 = reconstruct(two_pass(bundle, x, r_fit))
        rel_err_twopass = relative_error(x_hat2, x, x0)

    if "deltas" in shared:
        deltas = shared["deltas"]
    else:
        deltas = [tail_energy(x, r_fit, j) for j in range(1, x.ndim + 1)]

    angles = None
    if factors_true is not None:
        angles = [max_principal_angle(q, u) for q, u in zip(qs, factors_true)]

    measured_snr = snr_db(x, x0)
    return {
        "variant": task["variant"],
        "loo_kind": cfg["loo_kind"],
        "family": cfg["loo_family"],
        "n": n,
        "d": d,
        "r_true": cfg["r_true"],
        "r_fit": r_fit,
        "snr_db_target": cfg["snr_db"],
        "m": task["m"],
        "m_c": task["m_c"],
        "trial": task["trial"],
        "seed": seed,
        # residual against the observed tensor, normalized by the clean norm
        "rel_err_onepass": relative_error(x_hat, x, x0),
        "rel_err_twopass": rel_err_twopass,
        # same residual normalized by the observed norm (pairs with bound_rhs)
        "rel_err_onepass_input": relative_error(x_hat, x),
        "snr_db": None if math.isinf(measured_snr) else measured_snr,
        "angle_max_deg": max(angles) if angles else None,
        "angles_deg": ";".join(repr(a) for a in angles) if angles else None,
        "storage_loo_entries": plan.loo_entry_count(),
        "storage_core_entries": plan.core_entry_count(),
        "storage_total_entries": plan.loo_entry_count() + plan.core_entry_count(),
        "bound_rhs": bound_rhs(cfg["bound_eps"], deltas) / norm(x),
        "tail_baseline": (
            tail_baseline(x0, r_fit) if cfg["generator"].startswith("superdiag") else None
        ),
        "wall_sketch_s": t_sketch,
        "wall_factor_s": t_factor,
        "wall_core_s": t_core,
    }


def _shared_state(task, file_tensor, cache):
    """Deterministic per-config work hoisted out of the trial loop.

    Super-diagonal inputs do not depend on the trial seed, so the tensor and
    (when noiseless) its per-mode tail energies are computed once per
    (generator, n, d, r) combination instead of once per row.
    """
    cfg = task["cfg"]
    if not cfg["generator"].startswith("superdiag"):
        return {}
    key = (cfg["generator"], cfg["n"], cfg["d"], cfg["r_true"], cfg["r_fit"], cfg["snr_db"])
    if key not in cache:
        gen = gen_superdiag_exp if cfg["generator"] == "superdiag_exp" else gen_superdiag_poly
        x0 = gen(cfg["n"], cfg["d"], cfg["r_true"])
        shared = {"superdiag": x0}
        if cfg["snr_db"] is None:
            shared["deltas"] = [tail_energy(x0, cfg["r_fit"], j) for j in range(1, x0.ndim + 1)]
        cache[key] = shared
    return cache[key]


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_experiment(cfg):
    tasks = _experiment_tasks(cfg)
    file_tensor = _load_experiment_input(cfg)
    cache = {}
    shared = [_shared_state(t, file_tensor, cache) for t in tasks]
    threads = cfg["threads"]
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError(f"threads must be a positive integer, got {threads!r}")
    if threads == 1:
        rows = [_run_trial(t, file_tensor, s) for t, s in zip(tasks, shared)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_trial, tasks, [file_tensor] * len(tasks), shared))
    rows.sort(key=lambda r: (r["variant"], r["m"], r["m_c"], r["trial"]))
    return rows


def write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(CSV_HEADER_COMMENT + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_csv_cell(row[col]) for col in CSV_COLUMNS])


def cmd_experiment(args):
    cfg = _merge_config("experiment", args)
    if args.print_config:
        _print_config(cfg)
        return 0
    output = _require(args.output, "--output")
    rows = run_experiment(cfg)
    write_csv(output, rows)
    return 0


# -- entry point -----------------------------------------------------------


_COMMANDS = {
    "gen": cmd_gen,
    "sketch": cmd_sketch,
    "recover": cmd_recover,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TsketchError as e:
        line = json.dumps({"error": {"category": e.category, "message": str(e)}})
        sys.stderr.write(line + "\n")
        return EXIT_CODES[e.category]


if __name__ == "__main__":
    sys.exit(main())
