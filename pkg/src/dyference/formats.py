"""Text file formats for cascades, networks, rates and snapshots.

Cascade file::

    0,alice
    1,bob

    c0;0:0.0,1:1.5

Network file: one ``<window>;<src>,<dst>[,<rate>]`` line per edge; the
``<window>;`` prefix is omitted for a static network. The dynamic rates
file uses the same layout with ``step`` in place of ``window``. An
optional ``# nodes=<N>`` header records the node count, so isolated nodes
survive a round trip; other ``#`` lines are comments.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .graph import Cascade, CascadeSet, DirectedEdge, GroundTruthNetwork, NodeTable, edge

PathLike = Union[str, Path]


class FormatError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")


def _fmt_time(t: float) -> str:
    return repr(float(t))


def dump_cascades(cs: CascadeSet) -> str:
    buf = io.StringIO()
    for i, lab in enumerate(cs.node_table.labels):
        buf.write(f"{i},{lab}\n")
    buf.write("\n")
    for c in cs.cascades:
        body = ",".join(f"{u}:{_fmt_time(t)}" for u, t in c.ordered())
        buf.write(f"{c.id};{body}\n")
    return buf.getvalue()


def write_cascades(cs: CascadeSet, path: PathLike) -> None:
    Path(path).write_text(dump_cascades(cs), encoding="utf-8")


def parse_cascades(text: str, path: str = "<string>") -> CascadeSet:
    lines = text.splitlines()
    labels: List[str] = []
    i = 0
    while i < len(lines) and lines[i].strip():
        idx_s, _, lab = lines[i].partition(",")
        try:
            idx = int(idx_s)
        except ValueError:
            raise FormatError(path, i + 1, f"bad node index {idx_s!r}") from None
        if idx != len(labels):
            raise FormatError(path, i + 1, f"node indices must be dense, expected {len(labels)}")
        labels.append(lab.strip() or str(idx))
        i += 1
    try:
        table = NodeTable(labels)
    except ValueError as exc:
        raise FormatError(path, i, str(exc)) from None
    cascades = []
    for lineno in range(i + 1, len(lines)):
        line = lines[lineno].strip()
        if not line:
            continue
        cid, sep, body = line.partition(";")
        if not sep:
            raise FormatError(path, lineno + 1, "expected '<id>;<node>:<time>,...'")
        times: Dict[int, float] = {}
        for item in filter(None, body.split(",")):
            u_s, _, t_s = item.partition(":")
            try:
                u, t = int(u_s), float(t_s)
            except ValueError:
                raise FormatError(path, lineno + 1, f"bad infection {item!r}") from None
            if u in times:
                raise FormatError(path, lineno + 1, f"node {u} infected twice")
            if not 0 <= u < len(table):
                raise FormatError(path, lineno + 1, f"unknown node {u}")
            times[u] = t
        try:
            cascades.append(Cascade(cid, times))
        except ValueError as exc:
            raise FormatError(path, lineno + 1, str(exc)) from None
    return CascadeSet(tuple(cascades), table)


def read_cascades(path: PathLike) -> CascadeSet:
    return parse_cascades(Path(path).read_text(encoding="utf-8"), str(path))


def dump_network(net: GroundTruthNetwork) -> str:
    buf = io.StringIO()
    if net.n_nodes is not None:
        buf.write(f"# nodes={net.n_nodes}\n")
    for w in net.windows():
        prefix = "" if w is None else f"{w};"
        for e in sorted(net.snapshots[w]):
            rate = net.snapshots[w][e]
            tail = "" if rate is None else f",{repr(float(rate))}"
            buf.write(f"{prefix}{e.src},{e.dst}{tail}\n")
    return buf.getvalue()


def write_network(net: GroundTruthNetwork, path: PathLike) -> None:
    Path(path).write_text(dump_network(net), encoding="utf-8")


def parse_network(text: str, path: str = "<string>") -> GroundTruthNetwork:
    snaps: Dict[Optional[int], Dict[DirectedEdge, Optional[float]]] = {}
    n_nodes: Optional[int] = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if line.startswith("# nodes="):
            try:
                n_nodes = int(line[len("# nodes="):])
            except ValueError:
                raise FormatError(path, lineno, f"bad node count {line!r}") from None
            continue
        if not line or line.startswith("#"):
            continue
        window: Optional[int] = None
        if ";" in line:
            w_s, _, line = line.partition(";")
            try:
                window = int(w_s)
            except ValueError:
                raise FormatError(path, lineno, f"bad window index {w_s!r}") from None
        parts = line.split(",")
        if len(parts) not in (2, 3):
            raise FormatError(path, lineno, "expected '<src>,<dst>[,<rate>]'")
        try:
            e = edge(int(parts[0]), int(parts[1]))
            rate = float(parts[2]) if len(parts) == 3 else None
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from None
        if rate is not None and not rate > 0:
            raise FormatError(path, lineno, f"rate must be positive, got {rate}")
        snaps.setdefault(window, {})[e] = rate
    if None in snaps and len(snaps) > 1:
        raise FormatError(path, 0, "mixes static and windowed lines")
    if n_nodes is not None:
        top = max((max(e) for edges in snaps.values() for e in edges), default=-1)
        if top >= n_nodes:
            raise FormatError(path, 0, f"edge endpoint {top} exceeds node count {n_nodes}")
    if not snaps:
        snaps[None] = {}
    return GroundTruthNetwork(snaps, n_nodes=n_nodes)


def read_network(path: PathLike) -> GroundTruthNetwork:
    return parse_network(Path(path).read_text(encoding="utf-8"), str(path))


def dump_rates(rates: Dict[int, Dict[DirectedEdge, float]], n_nodes: Optional[int] = None) -> str:
    """Dynamic rate trajectories; zero rates are omitted."""
    buf = io.StringIO()
    if n_nodes is not None:
        buf.write(f"# nodes={n_nodes}\n")
    for step in sorted(rates):
        for e in sorted(rates[step]):
            r = rates[step][e]
            if r > 0:
                buf.write(f"{step};{e.src},{e.dst},{repr(float(r))}\n")
    return buf.getvalue()


SNAPSHOT_HEADER = ("window_start", "src", "dst", "probability")


def write_snapshot_rows(rows: Iterable[Tuple[float, int, int, float]], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SNAPSHOT_HEADER)
        for start, u, v, p in rows:
            w.writerow((repr(float(start)), u, v, repr(float(p))))


def read_snapshots(path: PathLike) -> Dict[float, Dict[DirectedEdge, float]]:
    out: Dict[float, Dict[DirectedEdge, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != SNAPSHOT_HEADER:
            raise FormatError(path, 1, f"expected header {','.join(SNAPSHOT_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            try:
                start, u, v, p = float(row[0]), int(row[1]), int(row[2]), float(row[3])
            except (ValueError, IndexError):
                raise FormatError(path, lineno, f"bad row {row!r}") from None
            out.setdefault(start, {})[DirectedEdge(u, v)] = p
    return out
