"""``redox-sim`` command line.

Exit status: 0 on success, 1 when an invariant is violated, 2 on a
configuration or usage error. Config precedence is flags, then the
``--config``/``--manifest`` file, then built-in defaults.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .engine import Cluster
from .errors import ConfigError, ProtocolViolation, RedoxError, RemoteError, StorageError
from .harness import (SimConfig, build_sim_layout, check_epoch, chunk_size_sweep, config_from_dict,
                      config_to_dict, default_config, load_config, parse_delivery_log,
                      run_ablation, run_epochs, verify_exactly_once)
from .layout import EpochTrace, Layout
from .local import POLICIES
from .randomness import compute_bound, enumerate_reachable, position_uniformity
from .storage import (DirectoryChunkStore, DirectorySource, SyntheticSource, chunk_path,
                      pack_chunks, unpack_chunk)

log = logging.getLogger("redox_sim")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
MANIFEST_SCHEMA = "redox-manifest v1"
MANIFEST_NAME = "manifest.json"


class UsageError(ConfigError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, argv: list[str], config: dict, seeds: dict,
                   outputs: list[Path], extra: dict | None = None) -> Path:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "tool": "redox-sim",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seeds": seeds,
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
    if data.get("schema") != MANIFEST_SCHEMA:
        raise ConfigError(f"{path} is not a redox-sim manifest")
    return data


def _on_off(value: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {value!r}")


def _resolve_config(args) -> SimConfig:
    if getattr(args, "manifest", None) and args.config:
        raise UsageError("give either --config or --manifest, not both")
    if getattr(args, "manifest", None):
        config = config_from_dict(read_manifest(args.manifest)["config"])
    elif args.config:
        config = load_config(args.config)
    else:
        config = default_config()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "prefetch", None) is not None:
        changes["prefetch"] = args.prefetch
    if getattr(args, "refill", None) is not None:
        changes["refill_policy"] = args.refill
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "batching", None) is not None:
        changes["batching"] = args.batching
    if getattr(args, "schedule", None) is not None:
        changes["schedule"] = args.schedule
    if getattr(args, "chunk_size", None) is not None:
        lc = config.layout
        memory = lc.K * lc.M
        if memory % args.chunk_size:
            raise ConfigError(f"--chunk-size {args.chunk_size} does not divide VC memory K*M={memory}")
        changes["layout"] = lc.replace(K=args.chunk_size, M=memory // args.chunk_size)
    return replace(config, **changes) if changes else config


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# subcommands -------------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    config = _resolve_config(args)
    out = _out_dir(args)
    layout = build_sim_layout(config)
    kwargs = {}
    if args.chunks:
        kwargs["store"] = DirectoryChunkStore(layout, args.chunks, config.cost)
    results = run_epochs(config, layout, backend=args.backend, check=False, **kwargs)
    outputs = []
    violation = None
    for epoch, res in enumerate(results):
        path = out / f"metrics-epoch{epoch}.json"
        path.write_text(res.metrics.to_json() + "\n")
        outputs.append(path)
        print(f"epoch {epoch}: time={res.metrics.simulated_epoch_time:.6f}s "
              f"misses={res.metrics.memory_misses} remote={res.metrics.remote_on_demand_requests} "
              f"digest={res.metrics.digest()}")
        if args.emit_trace:
            tr = out / f"trace-epoch{epoch}.txt"
            tr.write_text(EpochTrace(config.trace_seed(epoch), res.requested, res.requesters).to_text())
            dl = out / f"delivery-epoch{epoch}.txt"
            dl.write_text(res.delivery_log_text(epoch))
            outputs += [tr, dl]
        try:
            check_epoch(res, layout)
        except ProtocolViolation as exc:
            violation = violation or f"epoch {epoch}: {exc}"
    if args.emit_trace:
        lp = out / "layout.txt"
        layout.write(lp)
        outputs.append(lp)
    write_manifest(out, "simulate", argv, config_to_dict(config), config.resolved_seeds(), outputs)
    if violation:
        print(f"invariant violation: {violation}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_ablate(args, argv) -> int:
    config = _resolve_config(args)
    out = _out_dir(args)
    if args.sweep:
        table = chunk_size_sweep(config, args.chunk_sizes, backend=args.backend)
        name = "chunk-size-sweep.csv"
    else:
        table = run_ablation(config, backend=args.backend)
        name = "ablation.csv"
    text = table.to_csv()
    path = out / name
    path.write_text(text)
    sys.stdout.write(text)
    write_manifest(out, "ablate", argv, config_to_dict(config), config.resolved_seeds(), [path])
    return EXIT_OK


def cmd_randomness(args, argv) -> int:
    bound = compute_bound(args.F, args.M, args.K)
    report = {"params": {"F": args.F, "M": args.M, "K": args.K, "G": bound.G},
              "bound": bound.to_dict()}
    if args.enumerate:
        report["enumeration"] = {"policy": "first",
                                 "count": enumerate_reachable(args.K, bound.G, backend=args.backend)}
    if args.trials:
        seed = 0 if args.seed is None else args.seed
        report["diagnostics"] = position_uniformity(args.K, bound.G, args.trials, args.alpha,
                                                    seed=seed, backend=args.backend).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True, default=str) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = _out_dir(args)
        path = out / "randomness.json"
        path.write_text(text)
        write_manifest(out, "randomness", argv, report["params"], {"seed": args.seed}, [path])
    return EXIT_OK


def cmd_pack(args, argv) -> int:
    if args.layout:
        layout = Layout.read(args.layout)
        config_dict = layout.config.to_dict()
    else:
        config = _resolve_config(args)
        layout = build_sim_layout(config)
        config_dict = config_to_dict(config)
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    if args.source == "synthetic":
        source = SyntheticSource(layout, seed)
    else:
        if not Path(args.source).is_dir():
            raise ConfigError(f"--source must be 'synthetic' or a directory, got {args.source!r}")
        source = DirectorySource(args.source)
    written = pack_chunks(layout, source, out)
    bad = 0
    if args.verify:
        for pc, path in enumerate(written):
            ids, payloads = unpack_chunk(path.read_bytes())
            if ids != list(layout.pc_files(pc)) or any(p != source(f) for f, p in zip(ids, payloads)):
                bad += 1
                print(f"round-trip mismatch in {path.name}", file=sys.stderr)
    lp = out / "layout.txt"
    layout.write(lp)
    write_manifest(out, "pack", argv, config_dict, {"payload_seed": seed}, [lp],
                   extra={"chunks": len(written), "chunk_name": chunk_path(".", 0).name})
    print(f"packed {layout.F} files into {len(written)} chunks under {out}")
    return EXIT_VIOLATION if bad else EXIT_OK


def cmd_verify(args, argv) -> int:
    layout = Layout.read(args.layout)
    try:
        text = Path(args.trace).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read trace {args.trace}: {exc.strerror}") from exc
    head = text.split(None, 1)[0] if text.strip() else ""
    if head == "redox-delivery":
        _, entries = parse_delivery_log(text)
        report = verify_exactly_once([entries], layout.F, layout)
    else:
        # An input trace: replay it through the protocol and check what comes out.
        trace = EpochTrace.from_text(text)
        files = np.sort(trace.files)
        if len(files) != layout.F or not np.array_equal(files, np.arange(layout.F)):
            print("FAILED: trace is not a permutation of the layout's file ids")
            return EXIT_VIOLATION
        config = SimConfig(layout=layout.config, seed=0 if args.seed is None else args.seed)
        cl = Cluster(layout, trace, prefetch=True if args.prefetch is None else args.prefetch,
                     policy=args.refill or "greedy", tie_seed=config.tie_seed(0))
        cl.run(args.backend)
        res = cl.result()
        report = verify_exactly_once([[(sn, int(r), int(d)) for sn, (r, d)
                                       in enumerate(zip(res.requested, res.delivered))]],
                                     layout.F, layout)
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_VIOLATION


# parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redox-sim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"redox-sim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, help="base seed (overrides the config file)")
        sp.add_argument("--backend", choices=["auto", *_backend.available()], default=None)
        if config:
            sp.add_argument("--config", help="JSON SimConfig file")

    s = sub.add_parser("simulate", help="run epochs and write a MetricsReport per epoch")
    common(s)
    s.add_argument("--manifest", help="rerun with the config recorded in a manifest")
    s.add_argument("--prefetch", type=_on_off, metavar="on|off")
    s.add_argument("--refill", choices=POLICIES)
    s.add_argument("--chunk-size", type=int, metavar="K", help="files per chunk; VC memory K*M is kept")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batching", type=_on_off, metavar="on|off")
    s.add_argument("--schedule", choices=["round_robin", "jitter"])
    s.add_argument("--chunks", help="read payloads from a packed chunk directory")
    s.add_argument("--emit-trace", action="store_true", help="also write traces, delivery logs, layout")
    s.add_argument("--out", default="redox-out")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("ablate", help="breakdown table or chunk-size sweep as CSV")
    common(a)
    a.add_argument("--sweep", action="store_true", help="chunk-size sweep instead of the breakdown")
    a.add_argument("--chunk-sizes", type=lambda s: [int(x) for x in s.split(",")],
                   default=[2, 4, 8, 16, 32, 64, 128, 256])
    a.add_argument("--out", default="redox-out")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("randomness", help="delivery-order randomness bound and diagnostics")
    common(r, config=False)
    r.add_argument("--F", type=int, required=True)
    r.add_argument("--M", type=int, required=True)
    r.add_argument("--K", type=int, required=True)
    r.add_argument("--enumerate", action="store_true", help="count reachable sequences exhaustively")
    r.add_argument("--trials", type=int, default=0, help="chi-square diagnostic trials (>= 1000)")
    r.add_argument("--alpha", type=float, default=0.001)
    r.add_argument("--out")
    r.set_defaults(func=cmd_randomness)

    k = sub.add_parser("pack", help="pack files into chunk containers")
    common(k)
    k.add_argument("--layout", help="layout text file (otherwise built from --config)")
    k.add_argument("--source", default="synthetic", help="'synthetic' or a directory of files")
    k.add_argument("--out", required=True)
    k.add_argument("--verify", action="store_true", help="read every chunk back and compare")
    k.set_defaults(func=cmd_pack)

    v = sub.add_parser("verify", help="check exactly-once delivery for a trace or delivery log")
    common(v, config=False)
    v.add_argument("--trace", required=True)
    v.add_argument("--layout", required=True)
    v.add_argument("--prefetch", type=_on_off, metavar="on|off")
    v.add_argument("--refill", choices=POLICIES)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (StorageError, RemoteError, RedoxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
