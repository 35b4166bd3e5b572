"""Operator entry point: reproducible experiments from the command line.

    castle genmap   --n 1600 --out arena.castlemap
    castle transfer --file article.bin --seed 7 --report json
    castle sweep    --file chunk.bin --k 25,50,100,200 --delay-ms 0,100
    castle analyze  --trace a.trace --trace b.trace
    castle proxy    --port 35701 --password pw --store a=doc.txt
    castle fetch    --request doc:a --store a=doc.txt   (in-process demo)

All experiment commands are deterministic given --seed; runtime failures
exit 1 with a diagnostic, usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace

from . import trafficlab
from .mapgen import generate_map, load_map, save_map
from .netsim import crypto, wire
from .pipeline import (
    DEFAULT_PASSWORD,
    LoopbackPeer,
    RunConfig,
    run_transfer,
    sweep,
)
from .session import (
    CovertPeer,
    ProxyService,
    document_store_resolver,
    fetch_document,
    proxy_serve,
)


def _add_channel_args(p: argparse.ArgumentParser, with_k: bool = True) -> None:
    p.add_argument("--map", help=".castlemap file (otherwise generated)")
    p.add_argument("--mode", choices=["comb", "byte"], default="comb")
    p.add_argument("--n", type=int, default=1600, help="selectable objects")
    if with_k:
        p.add_argument("--k", type=int, default=200,
                       help="max objects per command")
    p.add_argument("--region-bits", type=int, default=16)
    p.add_argument("--m-bits", type=int, default=8)


def _add_run_args(p: argparse.ArgumentParser) -> None:
    _add_channel_args(p)
    p.add_argument("--per-event-ms", type=float, default=None,
                   help="time per click (default: derived from --command-ms)")
    p.add_argument("--command-ms", type=float, default=325.0,
                   help="target mean command duration")
    p.add_argument("--delay-ms", type=float, default=0.0,
                   help="added delay between commands")
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--reorder", type=float, default=0.0)
    p.add_argument("--duplicate", type=float, default=0.0)
    p.add_argument("--tick-ms", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--password", default=DEFAULT_PASSWORD)
    p.add_argument("--knock", action="store_true",
                   help="require the password knock before covert service")
    p.add_argument("--kdf-cost", type=int, default=crypto.DEFAULT_KDF_COST)
    p.add_argument("--transport", choices=["inprocess", "loopback"],
                   default="inprocess")
    p.add_argument("--port", type=int, default=wire.DEFAULT_PORT)
    p.add_argument("--trace-out", help="write the wire trace here")
    p.add_argument("--report", choices=["text", "json"], default="text")


def _run_config(args) -> RunConfig:
    return RunConfig(
        mode=args.mode,
        n=args.n,
        k=args.k,
        region_bits=args.region_bits,
        m_bits=args.m_bits,
        map_path=args.map,
        per_event_ms=args.per_event_ms,
        command_ms=args.command_ms,
        delay_ms=args.delay_ms,
        jitter_ms=args.jitter_ms,
        drop=args.drop,
        reorder=args.reorder,
        duplicate=args.duplicate,
        tick_ms=args.tick_ms,
        password=args.password,
        require_knock=args.knock,
        kdf_cost=args.kdf_cost,
        seed=args.seed,
        transport=args.transport,
        port=args.port,
    )


def _parse_store(items) -> dict[str, bytes]:
    store = {}
    for item in items or []:
        key, _, path = item.partition("=")
        if not path:
            raise SystemExit(f"--store needs key=path, got {item!r}")
        with open(path, "rb") as fh:
            store[key] = fh.read()
    return store


def cmd_genmap(args) -> int:
    grid = None
    if args.grid:
        w, _, h = args.grid.partition("x")
        grid = (int(w), int(h))
    else:
        import math

        grid = (64, max(1, math.ceil(args.n / 64)))
    spec = generate_map(args.n, grid, args.region_bits, kind=args.kind)
    save_map(spec, args.out)
    print(f"wrote {args.out}: {spec.n} {args.kind}s on {spec.width}x{spec.height}, "
          f"region {spec.rally_region.x_max}x{spec.rally_region.y_max}")
    return 0


def cmd_transfer(args) -> int:
    run = _run_config(args)
    with open(args.file, "rb") as fh:
        payload = fh.read()
    report = run_transfer(run, payload, trace_out=args.trace_out)
    if args.report == "json":
        print(json.dumps(report.to_dict(), indent=2, default=str))
    else:
        print(report.to_text())
    return 0 if report.ok else 1


def cmd_sweep(args) -> int:
    run = _run_config(args)
    with open(args.file, "rb") as fh:
        payload = fh.read()
    k_values = [int(v) for v in args.k_list.split(",")]
    delay_values = [float(v) for v in args.delay_list.split(",")]
    cells = sweep(run, payload, k_values, delay_values)
    if args.report == "json":
        print(json.dumps([c.__dict__ for c in cells], indent=2))
        return 0
    print(f"{'k':>5} {'delay_ms':>9} {'goodput_Bps':>12} {'predicted':>10} "
          f"{'sim_s':>8} {'KS_size':>8}")
    for c in cells:
        print(f"{c.k:>5} {c.delay_ms:>9.0f} {c.goodput_bps:>12.1f} "
              f"{c.predicted_bps:>10.1f} {c.sim_seconds:>8.1f} "
              f"{c.ks_size_vs_baseline:>8.3f}")
    return 0


def cmd_analyze(args) -> int:
    traces = [trafficlab.load_trace(path) for path in args.trace]
    out = {}
    for trace in traces:
        sizes, times = trafficlab.feature_histograms(trace)
        out[trace.label] = {
            "packets": len(trace),
            "duration_s": trace.duration_ms / 1000.0,
            "size_bins": {str(k * trafficlab.SIZE_BIN_BYTES): v
                          for k, v in sorted(sizes.counts.items())},
            "time_bins_ms": {f"{k * trafficlab.TIME_BIN_MS:.0f}": v
                             for k, v in sorted(times.counts.items())},
        }
    pairs = []
    base = traces[0]
    for other in traces[1:]:
        pairs.append({
            "a": base.label,
            "b": other.label,
            "ks_sizes": trafficlab.ks_statistic(base.sizes(), other.sizes()),
            "ks_times": (trafficlab.ks_statistic(base.inter_packet_ms(),
                                                 other.inter_packet_ms())
                         if len(base) > 1 and len(other) > 1 else None),
        })
    report = {"traces": out, "ks": pairs}
    if args.report == "json":
        print(json.dumps(report, indent=2))
    else:
        for label, info in out.items():
            print(f"{label}: {info['packets']} packets over "
                  f"{info['duration_s']:.1f} s")
        for pair in pairs:
            line = f"KS sizes {pair['a']} vs {pair['b']}: {pair['ks_sizes']:.4f}"
            if pair["ks_times"] is not None:
                line += f"; inter-packet times: {pair['ks_times']:.4f}"
            print(line)
    return 0


def cmd_proxy(args) -> int:
    run = replace(_run_config(args), transport="loopback")
    store = _parse_store(args.store)
    peer = LoopbackPeer("host", run, bind_port=args.port)
    print(f"proxy listening on udp/{peer.transport.addr[1]}")
    try:
        served = proxy_serve(peer.peer, document_store_resolver(store),
                             max_requests=args.max_requests,
                             timeout_ms=args.timeout_s * 1000.0)
        print(f"served {served} requests")
        return 0
    finally:
        peer.close()


def cmd_fetch(args) -> int:
    if args.transport == "inprocess":
        return _fetch_inprocess(args)
    run = replace(_run_config(args), transport="loopback")
    peer = LoopbackPeer("client", run, bind_port=0, host_port=args.port)
    try:
        if not peer.wait_joined(args.timeout_s * 1000.0):
            print("join failed", file=sys.stderr)
            return 1
        if run.require_knock:
            peer.peer.send_knock(run.password,
                                 run.session_config().salt, run.kdf_cost)
        if not peer.wait_clear(args.timeout_s * 1000.0):
            print("session never went covert-clear", file=sys.stderr)
            return 1
        status, body = fetch_document(peer.peer, args.request.encode(),
                                      timeout_ms=args.timeout_s * 1000.0)
        return _emit_fetch(args, status, body)
    finally:
        peer.close()


def _fetch_inprocess(args) -> int:
    """Self-contained demo: proxy and client in one simulated session."""
    from .netsim import CovertContext, LockstepNetwork, knock_verify

    run = _run_config(args)
    store = _parse_store(args.store)
    map_spec = run.map_spec()
    channel = run.channel_config(map_spec)
    covert = CovertContext(channel, map_spec)
    net = LockstepNetwork(run.session_config(), seed=run.seed, covert=covert)
    client_handle = net.join(1, run.password)
    profile = run.timing_profile(channel)
    proxy_peer = CovertPeer(net.host, covert, profile, net.loop, seed=run.seed)
    client_peer = CovertPeer(client_handle, covert, profile, net.loop,
                             seed=run.seed + 1)
    if run.require_knock:
        client_peer.send_knock(run.password, net.cfg.salt, run.kdf_cost)
        knock_verify(net, 1)
    ProxyService(proxy_peer, document_store_resolver(store))
    status, body = fetch_document(client_peer, args.request.encode(),
                                  timeout_ms=args.timeout_s * 1000.0)
    client_peer.close()
    proxy_peer.handle.close()
    return _emit_fetch(args, status, body)


def _emit_fetch(args, status: int, body: bytes) -> int:
    if args.out and args.out != "-":
        with open(args.out, "wb") as fh:
            fh.write(body)
        print(f"status {status}, {len(body)} bytes -> {args.out}")
    else:
        sys.stdout.buffer.write(body)
        sys.stdout.buffer.flush()
        if status != 0:
            print(f"\n[status {status}]", file=sys.stderr)
    return 0 if status == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="castle",
        description="covert byte transport over a simulated RTS session",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genmap", help="generate a .castlemap file")
    p.add_argument("--n", type=int, default=1600)
    p.add_argument("--grid", help="object grid as WxH (default 64 wide)")
    p.add_argument("--region-bits", type=int, default=16)
    p.add_argument("--kind", choices=["unit", "building"], default="building")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_genmap)

    p = sub.add_parser("transfer", help="send a file through the channel")
    p.add_argument("--file", required=True)
    _add_run_args(p)
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("sweep", help="parameter grid: goodput and KS table")
    p.add_argument("--file", required=True)
    p.add_argument("--k", dest="k_list", default="25,50,100,200",
                   help="comma-separated k values")
    p.add_argument("--delay-ms", dest="delay_list", default="100",
                   help="comma-separated inter-command delays")
    _add_channel_args(p, with_k=False)
    p.add_argument("--per-event-ms", type=float, default=None)
    p.add_argument("--command-ms", type=float, default=325.0)
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--reorder", type=float, default=0.0)
    p.add_argument("--duplicate", type=float, default=0.0)
    p.add_argument("--tick-ms", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--password", default=DEFAULT_PASSWORD)
    p.add_argument("--kdf-cost", type=int, default=crypto.DEFAULT_KDF_COST)
    p.add_argument("--report", choices=["text", "json"], default="text")
    p.set_defaults(fn=cmd_sweep, k=200, knock=False, transport="inprocess",
                   port=wire.DEFAULT_PORT, trace_out=None, delay_ms=0.0)

    p = sub.add_parser("analyze", help="KS and histogram report for traces")
    p.add_argument("--trace", action="append", required=True)
    p.add_argument("--report", choices=["text", "json"], default="text")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("proxy", help="serve documents over a loopback session")
    _add_run_args(p)
    p.add_argument("--store", action="append", metavar="KEY=PATH")
    p.add_argument("--max-requests", type=int, default=None)
    p.add_argument("--timeout-s", type=float, default=300.0)
    p.set_defaults(fn=cmd_proxy)

    p = sub.add_parser("fetch", help="fetch a document through a proxy")
    _add_run_args(p)
    p.add_argument("--request", required=True, help="e.g. doc:<key>")
    p.add_argument("--store", action="append", metavar="KEY=PATH",
                   help="for --transport inprocess: serve these locally")
    p.add_argument("--out", default="-")
    p.add_argument("--timeout-s", type=float, default=120.0)
    p.set_defaults(fn=cmd_fetch)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except BrokenPipeError:
        return 0
    except Exception as exc:  # runtime failure: diagnostic, exit 1
        print(f"castle: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
