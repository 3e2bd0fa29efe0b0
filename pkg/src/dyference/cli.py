"""``dyference`` command line: generate synthetic data, infer, evaluate.

Every random draw comes from one ``--seed`` split into named streams
(``generation``, ``extraction``, ``gibbs``); stream ``i`` is seeded with
``SeedSequence([seed, i])``, so a rerun of any single command with the
same seed reproduces its outputs.

Exit codes: 0 success, 1 unreadable or malformed input / write failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .evalkit import (BINARIZE_MODES, InvalidArgumentError, MetricsReport, binarize, chronological_split,
                      map_hits_at_k, precision_recall_f1, prediction_events, rank_next_infections)
from .formats import (FormatError, dump_network, dump_rates, read_cascades, read_network, read_snapshots,
                      write_cascades, write_snapshot_rows)
from .graph import CascadeSet, DirectedEdge, EmptyInputError, GroundTruthNetwork, initial_weights, usable_cascades
from .inference import OBS_MODES, InferenceConfig, InvalidConfigError, dyference, named_streams
from .synthgen import (CORE_PERIPHERY, PATTERN_KINDS, TRANSMISSION_ALIASES, ForestFireParams,
                       InvalidParamsError, KroneckerParams, TransmissionModel, evolve_rates, forest_fire,
                       kronecker_graph, planted_blocks, simulate_dynamic)
from .tree_dist import GraphDisconnectedError, TreeDistribution, edge_marginals

log = logging.getLogger("dyference")

EXIT_OK, EXIT_IO, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flag values or combinations; maps to exit code 2."""


class AlignmentError(UsageError):
    pass


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


# -- generate -----------------------------------------------------------

def cmd_generate_network(args) -> int:
    rng = named_streams(args.seed)["generation"]
    if args.model == "kronecker":
        seed = args.seed_matrix or [x for row in CORE_PERIPHERY for x in row]
        side = int(round(math.sqrt(len(seed))))
        if side * side != len(seed) or side < 2:
            raise UsageError("--seed-matrix needs a square number (>= 4) of entries, row-major")
        if args.power is None:
            raise UsageError("kronecker needs --power")
        matrix = tuple(tuple(seed[i * side:(i + 1) * side]) for i in range(side))
        net = kronecker_graph(KroneckerParams(matrix, args.power, args.edges), rng)
    elif args.model == "forestfire":
        if args.n is None:
            raise UsageError("forestfire needs --n")
        net = forest_fire(ForestFireParams(args.n, args.fwd, args.bwd), rng)
    else:
        if args.n is None or args.edges is None:
            raise UsageError("blocks needs --n and --edges")
        net = planted_blocks(args.n, args.blocks, args.edges, args.within, rng)
    _write_text(Path(args.out), dump_network(net))
    print(f"wrote {args.out}: {net.n_nodes} nodes, {len(net.edges(None))} edges ({args.model})")
    return EXIT_OK


def cmd_generate_rates(args) -> int:
    rng = named_streams(args.seed)["generation"]
    net = read_network(args.network)
    kinds = args.kinds or list(PATTERN_KINDS)
    bad = [k for k in kinds if k not in PATTERN_KINDS]
    if bad:
        raise UsageError(f"unknown pattern kind(s) {bad}; choose from {PATTERN_KINDS}")
    dyn, _ = evolve_rates(net, args.steps, rng, kinds=kinds)
    n = dyn.n_nodes if dyn.n_nodes is not None else 1 + max((max(e) for e in net.edges(None)), default=-1)
    _write_text(Path(args.out), dump_rates(dyn.snapshots, n))
    live = sum(len(v) for v in dyn.snapshots.values())
    print(f"wrote {args.out}: {args.steps} steps, {live} live edge-steps")
    return EXIT_OK


def cmd_generate_cascades(args) -> int:
    if (args.network is None) == (args.rates is None):
        raise UsageError("give exactly one of --network or --rates")
    rng = named_streams(args.seed)["generation"]
    kind = TRANSMISSION_ALIASES.get(args.transmission, args.transmission)
    tm = TransmissionModel(kind, exponent=args.exponent, min_delay=args.min_delay)
    if args.network is not None:
        net = read_network(args.network)
        if not net.is_static:
            raise UsageError("--network expects a static network; use --rates for a dynamic one")
        rate = args.default_rate
        live = {e: (rate if r is None else r) for e, r in net.snapshots[None].items()}
        net = GroundTruthNetwork({None: live}, n_nodes=net.n_nodes)
        steps = list(range(args.steps or 1))
    else:
        net = read_network(args.rates)
        windows = [w for w in net.windows() if w is not None]
        steps = list(range(args.steps)) if args.steps else list(range(max(windows, default=-1) + 1))
    if not any(net.edges(w) for w in net.windows()):
        raise UsageError("network has no edges")
    cs = simulate_dynamic(net, tm, args.per_step, args.horizon, rng, steps=steps, retries=args.retries)
    write_cascades(cs, args.out)
    print(f"wrote {args.out}: {len(cs)} cascades over {len(steps)} step(s), {len(cs.node_table)} nodes")
    return EXIT_OK


# -- infer --------------------------------------------------------------

INFER_FLAGS = {
    # flag dest -> config field
    "window": "window", "q": "q", "q_ratio": "q_ratio", "temperature": "temperature",
    "iterations": "outer_iterations", "sweeps": "sweeps", "burn_in": "burn_in", "thin": "thin",
    "tol": "tol", "seed": "seed", "obs_mode": "obs_mode", "alpha": "alpha", "tau": "tau",
    "gamma": "gamma", "literal_pe": "literal_pe", "literal_weights": "literal_weights",
    "literal_pc": "literal_pc", "resample_edges": "resample_edges",
    "exact_dpp_sample": "exact_dpp_sample", "threads": "threads",
}


def _load_config_file(path: str) -> Dict[str, Any]:
    """A JSON config, or a run manifest (its ``config`` block is used)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return doc


def resolve_config(args) -> tuple:
    doc: Dict[str, Any] = {}
    if args.config:
        doc = _load_config_file(args.config)
    base = dict(doc.get("config", doc))
    extras = {k: base.pop(k) for k in ("min_prob",) if k in base}
    for dest, name in INFER_FLAGS.items():
        val = getattr(args, dest)
        if val is not None:
            base[name] = val
    try:
        cfg = InferenceConfig.from_dict(base).validate()
    except TypeError as exc:
        raise InvalidConfigError(str(exc)) from None
    min_prob = args.min_prob if args.min_prob is not None else extras.get("min_prob", 1e-6)
    if not min_prob >= 0:
        raise UsageError("--min-prob must be >= 0")
    return cfg, float(min_prob), doc


def cmd_infer(args) -> int:
    cfg, min_prob, doc = resolve_config(args)
    cascades = args.cascades
    if cascades is None:
        cascades = doc.get("inputs", {}).get("cascades", {}).get("path")
        if cascades is None:
            raise UsageError("--cascades is required")
    src = Path(cascades)
    cs = read_cascades(src)
    if not usable_cascades(cs):
        raise EmptyInputError(f"{src}: no cascade has two distinct infection times")
    out = Path(args.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    streams = named_streams(cfg.seed)
    rows: List[tuple] = []
    windows: List[Dict[str, Any]] = []
    timing: List[Dict[str, Any]] = []
    clock = [time.perf_counter()]

    def on_window(wr):
        name = f"window_{len(windows):04d}.json"
        _write_text(out / "checkpoints" / name, wr.checkpoint)
        rows.extend(wr.snapshot.rows(min_prob))
        windows.append({
            "window_start": wr.start,
            "checkpoint": f"checkpoints/{name}",
            "observations": wr.n_observations,
            "outer_iterations": wr.outer_iterations,
            "sweeps": wr.sweeps,
            "deltas": wr.deltas,
        })
        now = time.perf_counter()
        timing.append({"window_start": wr.start, "seconds": now - clock[0]})
        clock[0] = now
        log.info("window %s: %d observations, %d outer iterations", wr.start, wr.n_observations,
                 wr.outer_iterations)

    t0 = time.perf_counter()
    dyference(cs, cfg, streams["gibbs"], on_window=on_window, extract_rng=streams["extraction"])
    write_snapshot_rows(rows, out / "snapshots.csv")
    manifest = {
        "tool": "dyference",
        "version": __version__,
        "command": "infer",
        "seed": cfg.seed,
        "streams": {"names": ["generation", "extraction", "gibbs"],
                    "derivation": "numpy SeedSequence([seed, index of name])"},
        "config": {**cfg.to_dict(), "min_prob": min_prob},
        "inputs": {"cascades": {"path": str(src), "sha256": _sha256(src)}},
        "outputs": {"snapshots": {"path": "snapshots.csv", "sha256": _sha256(out / "snapshots.csv")}},
        "windows": windows,
    }
    _write_text(out / "manifest.json", _json(manifest))
    _write_text(out / "timing.json", _json({"total_seconds": time.perf_counter() - t0, "windows": timing}))
    print(f"wrote {out}: {len(windows)} window(s), {len(rows)} snapshot rows")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------

def _truth_for(truth: GroundTruthNetwork, starts: Sequence[float]) -> Dict[float, set]:
    if truth.is_static:
        edges = truth.edges(None)
        return {s: edges for s in starts}
    keys = [w for w in truth.windows() if w is not None]
    lo, hi = min(keys), max(keys)
    bad = [s for s in starts if not (float(s).is_integer() and lo <= s <= hi)]
    if bad:
        shown = ", ".join(repr(s) for s in bad[:10]) + (", ..." if len(bad) > 10 else "")
        raise AlignmentError(f"snapshot windows without a truth step in [{lo}, {hi}]: {shown}")
    return {s: truth.edges(int(s)) for s in starts}


def _to_matrix(probs: Dict[DirectedEdge, float], n: int) -> np.ndarray:
    P = np.zeros((n, n))
    for e, p in probs.items():
        P[e.src, e.dst] = p
    return P


def cmd_evaluate(args) -> int:
    snaps = read_snapshots(args.snapshots)
    truth = read_network(args.truth)
    metrics = args.metrics
    unknown = set(metrics) - {"f1", "map", "hits"}
    if unknown:
        raise UsageError(f"unknown metric(s) {sorted(unknown)}; choose from f1, map, hits")
    ranking = bool({"map", "hits"} & set(metrics))
    if ranking and args.cascades is None:
        raise UsageError("map/hits need --cascades")
    if args.mode == "threshold" and args.threshold is None:
        raise UsageError("--mode threshold needs --threshold")
    starts = sorted(snaps)
    if not starts:
        raise UsageError(f"{args.snapshots} holds no snapshot rows")
    truth_at = _truth_for(truth, starts)
    cs: Optional[CascadeSet] = read_cascades(args.cascades) if ranking else None
    width = args.window
    if width is None:
        width = min(np.diff(starts)) if len(starts) > 1 else math.inf
    after = -math.inf
    if cs is not None and args.train_share is not None:
        times = [t for c in cs for t in c.infections.values()]
        after = chronological_split(min(times), max(times), args.train_share)
    n = 1 + max([max(e) for p in snaps.values() for e in p] + [max(e) for s in truth_at.values() for e in s]
                + ([len(cs.node_table) - 1] if cs is not None else []), default=0)
    events = list(prediction_events(cs, after)) if cs is not None else []
    reports: List[MetricsReport] = []
    audit: List[tuple] = []
    for i, s in enumerate(starts):
        tr = truth_at[s]
        pred = binarize(snaps[s], args.mode, truth=tr, m=args.m, threshold=args.threshold)
        p, r, f = precision_recall_f1(pred, tr)
        rep = MetricsReport(s, p, r, f, len(pred), len(tr))
        if ranking:
            P = _to_matrix(snaps[s], n)
            end = s + width
            mine = [(pre, nxt) for pre, nxt, t in events if s <= t < end]
            ranks = []
            for ev, (pre, nxt) in enumerate(mine):
                order = rank_next_infections(P, pre, score=args.score)
                ranks.append([v for v, _ in order])
                for pos, (v, sc) in enumerate(order[:max(args.k)], 1):
                    audit.append((s, ev, pos, v, sc, int(v in nxt)))
            maps, hits = map_hits_at_k(ranks, [nxt for _, nxt in mine], args.k)
            if "map" in metrics:
                rep.map_at_k = maps
            if "hits" in metrics:
                rep.hits_at_k = hits
        reports.append(rep)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keep_f1 = "f1" in metrics
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh, \
            open(out / "metrics_long.csv", "w", newline="", encoding="utf-8") as lf:
        w = csv.writer(fh, lineterminator="\n")
        lw = csv.writer(lf, lineterminator="\n")
        w.writerow(("window_start", "metric", "k", "value"))
        lw.writerow(("window", "metric", "value"))
        for rep in reports:
            for start, metric, k, value in rep.rows():
                if metric in ("precision", "recall", "f1", "n_predicted", "n_true") and not keep_f1:
                    continue
                w.writerow((repr(float(start)), metric, k, repr(float(value))))
                lw.writerow((repr(float(start)), f"{metric}@{k}" if k != "" else metric, repr(float(value))))
    if ranking:
        with open(out / "rankings.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("window_start", "event", "rank", "node", "score", "relevant"))
            for row in audit:
                w.writerow((repr(float(row[0])), row[1], row[2], row[3], repr(float(row[4])), row[5]))
    mean_f1 = float(np.mean([r.f1 for r in reports]))
    print(f"wrote {out}/metrics.csv: {len(reports)} window(s), mean F1 {mean_f1:.4f}")
    return EXIT_OK


# -- debug --------------------------------------------------------------

def cmd_debug_marginals(args) -> int:
    cs = read_cascades(args.cascades)
    keep = usable_cascades(cs)
    if not keep:
        raise EmptyInputError(f"{args.cascades}: no cascade has two distinct infection times")
    if args.cascade is None:
        c = cs.cascades[keep[0]]
    else:
        found = [x for x in cs.cascades if x.id == args.cascade]
        if not found:
            raise UsageError(f"no cascade with id {args.cascade!r}")
        c = found[0]
    if not args.temperature > 0:
        raise UsageError("--temperature must be > 0")
    td = TreeDistribution.from_cascade(c, initial_weights(cs), args.temperature)
    marg = edge_marginals(td)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("src", "dst", "marginal"))
        for e in sorted(marg):
            w.writerow((e.src, e.dst, repr(float(marg[e]))))
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


# -- parser -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyference", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="synthetic networks, rate trajectories and cascades")
    gsub = gen.add_subparsers(dest="what", required=True)

    g = gsub.add_parser("network", help="static ground-truth network")
    g.add_argument("--model", choices=("kronecker", "forestfire", "blocks"), required=True)
    g.add_argument("--seed-matrix", type=_floats, help="Kronecker seed, row-major (default 0.9,0.5,0.5,0.3)")
    g.add_argument("--power", type=int, help="Kronecker power (nodes = side**power)")
    g.add_argument("--edges", type=int, help="target edge count (kronecker: expected; blocks: exact)")
    g.add_argument("--n", type=int, help="node count (forestfire, blocks)")
    g.add_argument("--fwd", type=float, default=0.2, help="forward burning probability")
    g.add_argument("--bwd", type=float, default=0.17, help="backward burning probability")
    g.add_argument("--blocks", type=int, default=2, help="number of planted blocks")
    g.add_argument("--within", type=float, default=0.9, help="share of edges inside blocks")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_network)

    g = gsub.add_parser("rates", help="per-step rate trajectories for a static network")
    g.add_argument("--network", required=True)
    g.add_argument("--steps", type=int, required=True)
    g.add_argument("--kinds", type=lambda s: [x for x in s.split(",") if x],
                   help=f"pattern kinds to draw from (default all of {','.join(PATTERN_KINDS)})")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_rates)

    g = gsub.add_parser("cascades", help="continuous-time independent cascades")
    g.add_argument("--network", help="static network (edges without a rate use --default-rate)")
    g.add_argument("--rates", help="per-step rates file from 'generate rates'")
    g.add_argument("--per-step", type=int, required=True, help="cascades started at each step")
    g.add_argument("--steps", type=int, help="number of steps (default: all steps in --rates, else 1)")
    g.add_argument("--transmission", choices=sorted(TRANSMISSION_ALIASES), default="exp")
    g.add_argument("--horizon", type=float, default=10.0, help="drop infections later than this after the root")
    g.add_argument("--retries", type=int, default=10, help="redraws for cascades that stay at the root")
    g.add_argument("--default-rate", type=float, default=1.0)
    g.add_argument("--exponent", type=float, default=2.0, help="power-law exponent")
    g.add_argument("--min-delay", type=float, default=0.01, help="power-law minimum delay")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_cascades)

    inf = sub.add_parser("infer", help="windowed network inference",
                         description="Flags override values from --config (a JSON config or run manifest).")
    inf.add_argument("--cascades", help="cascade file (default: the one named in a --config manifest)")
    inf.add_argument("--out", required=True, help="output directory")
    inf.add_argument("--config", help="JSON config with InferenceConfig fields, or a manifest.json")
    inf.add_argument("--window", type=float, help="window width (default 1)")
    inf.add_argument("--seed", type=int, help="master seed (default 0)")
    inf.add_argument("--q", type=int, help="edges sampled per cascade (default |E_c|-1)")
    inf.add_argument("--q-ratio", type=float, help="edges sampled per cascade as a share of |E_c|")
    inf.add_argument("--temperature", type=float, help="tree distribution temperature (default 1)")
    inf.add_argument("--iterations", type=int, help="outer iterations per window (default 10)")
    inf.add_argument("--sweeps", type=int, help="Gibbs sweeps per outer iteration (default 200)")
    inf.add_argument("--burn-in", type=int, help="discarded sweeps (default 50)")
    inf.add_argument("--thin", type=int, help="keep every n-th sweep after burn-in (default 5)")
    inf.add_argument("--tol", type=float, help="stop when mean |change| in edge probability < tol (default 1e-3)")
    inf.add_argument("--obs-mode", choices=OBS_MODES, help="observation extraction (default dpp-marginal)")
    inf.add_argument("--alpha", type=float)
    inf.add_argument("--tau", type=float)
    inf.add_argument("--gamma", type=float)
    flag = dict(action="store_const", const=True, default=None)
    inf.add_argument("--literal-pe", help="use the unnormalized edge predictive", **flag)
    inf.add_argument("--literal-pc", help="use the unnormalized cluster conditional", **flag)
    inf.add_argument("--literal-weights", help="feed probabilities back as edge weights unchanged", **flag)
    inf.add_argument("--resample-edges", help="also resample each instance's edge among its cascade's candidates",
                     **flag)
    inf.add_argument("--exact-dpp-sample", help="extract edges of one exact spanning-tree sample", **flag)
    inf.add_argument("--threads", type=int, help="extraction workers (default: DYNET_THREADS, else all cores)")
    inf.add_argument("--min-prob", type=float, help="omit snapshot rows at or below this (default 1e-6)")
    inf.set_defaults(func=cmd_infer)

    ev = sub.add_parser("evaluate", help="score snapshots against a ground truth")
    ev.add_argument("--snapshots", required=True)
    ev.add_argument("--truth", required=True, help="static network or per-step rates file")
    ev.add_argument("--mode", choices=BINARIZE_MODES, default="top-m")
    ev.add_argument("--m", type=int, help="edges kept by top-m (default: true edge count)")
    ev.add_argument("--threshold", type=float)
    ev.add_argument("--metrics", type=lambda s: [x for x in s.split(",") if x], default=["f1"],
                    help="comma list of f1, map, hits")
    ev.add_argument("--k", type=_ints, default=[10, 50, 100])
    ev.add_argument("--cascades", help="cascades whose next infections are ranked (map/hits)")
    ev.add_argument("--score", choices=("noisy-or", "max"), default="noisy-or")
    ev.add_argument("--window", type=float, help="window width for ranking events (default: snapshot spacing)")
    ev.add_argument("--train-share", type=float, help="rank only events after this share of the time span")
    ev.add_argument("--out", required=True, help="output directory")
    ev.set_defaults(func=cmd_evaluate)

    dbg = sub.add_parser("debug", help="diagnostics")
    dsub = dbg.add_subparsers(dest="what", required=True)
    d = dsub.add_parser("marginals", help="tree-distribution edge marginals of one cascade")
    d.add_argument("--cascades", required=True)
    d.add_argument("--cascade", help="cascade id (default: first usable)")
    d.add_argument("--temperature", type=float, default=1.0)
    d.add_argument("--out", help="CSV path (default stdout)")
    d.set_defaults(func=cmd_debug_marginals)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidConfigError, InvalidParamsError, InvalidArgumentError) as exc:
        print(f"dyference: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, EmptyInputError, GraphDisconnectedError, json.JSONDecodeError,
            UnicodeDecodeError) as exc:
        print(f"dyference: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
