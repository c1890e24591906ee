"""Command-line interface: ``stablemeld <command> ...``.

Exit codes: 0 success, 2 bad input or arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .combiners import PValueFamily, UnsupportedMethodError, combine, parse_method
from .multilevel import closed_test, default_subsets, smallest_rejected_groups
from .robustness import dominance_classifier, worst_case_inflation
from .simulate import (
    DEFAULT_RHO_GRID,
    HEADLINE_METHODS,
    MULTILEVEL_SIM_METHODS,
    Scenario,
    SimulationConfig,
    run_headline,
    run_multilevel,
)
from .stable import NumericalError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    """Bad input file or argument value (exit code 2)."""


# ---------------------------------------------------------------------------
# Input parsing


def _open_text(path: str):
    if path == "-":
        return sys.stdin
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None


def _rows(handle):
    """Yield ``(line_number, row)`` skipping blank and ``#`` lines."""
    for lineno, line in enumerate(handle, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, next(csv.reader([line]))


def read_family(path: str) -> PValueFamily:
    """Read ``id,p[,weight]`` rows (header required) into a family."""
    handle = _open_text(path)
    try:
        rows = _rows(handle)
        try:
            lineno, header = next(rows)
        except StopIteration:
            raise InputError(f"{path}: empty input") from None
        header = [h.strip().lower() for h in header]
        if "p" not in header:
            raise InputError(f"{path}:{lineno}: header must contain a 'p' column")
        ip = header.index("p")
        iid = header.index("id") if "id" in header else None
        iw = header.index("weight") if "weight" in header else None
        ids, ps, ws = [], [], []
        for lineno, row in rows:
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                p = float(row[ip])
                w = float(row[iw]) if iw is not None else 1.0
            except ValueError:
                raise InputError(f"{path}:{lineno}: not a number") from None
            if not (0.0 <= p <= 1.0):
                raise InputError(f"{path}:{lineno}: p-value {row[ip].strip()} outside [0, 1]")
            if not (w > 0.0 and math.isfinite(w)):
                raise InputError(f"{path}:{lineno}: weight must be positive")
            ident = row[iid].strip() if iid is not None else str(len(ids) + 1)
            if ident in ids:
                raise InputError(f"{path}:{lineno}: duplicate id {ident!r}")
            ids.append(ident)
            ps.append(p)
            ws.append(w)
    finally:
        if handle is not sys.stdin:
            handle.close()
    if not ps:
        raise InputError(f"{path}: no data rows")
    return PValueFamily(ps, ws, ids)


def read_groups(path: str, family: PValueFamily) -> list[tuple[str, tuple[int, ...]]]:
    """Read long-format ``group,id`` rows; groups keep first-appearance order."""
    handle = _open_text(path)
    groups: dict[str, list[int]] = {}
    pos = {k: i for i, k in enumerate(family.ids)}
    try:
        rows = _rows(handle)
        try:
            lineno, header = next(rows)
        except StopIteration:
            raise InputError(f"{path}: empty groups file") from None
        header = [h.strip().lower() for h in header]
        if header[:2] != ["group", "id"]:
            raise InputError(f"{path}:{lineno}: header must be 'group,id'")
        for lineno, row in rows:
            if len(row) < 2:
                raise InputError(f"{path}:{lineno}: expected group,id")
            g, ident = row[0].strip(), row[1].strip()
            if ident not in pos:
                raise InputError(f"{path}:{lineno}: unknown id {ident!r}")
            members = groups.setdefault(g, [])
            if pos[ident] in members:
                raise InputError(f"{path}:{lineno}: id {ident!r} repeated in group {g!r}")
            members.append(pos[ident])
    finally:
        if handle is not sys.stdin:
            handle.close()
    if not groups:
        raise InputError(f"{path}: no groups")
    return [(g, tuple(sorted(m))) for g, m in groups.items()]


def parse_grid(text: str, name: str, lo: float, hi: float) -> list[float]:
    """``"0.3"``, ``"0,0.2,0.4"`` or ``"start:stop:step"`` (inclusive)."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            vals = [round(start + k * step, 12) for k in range(n)]
        else:
            vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"invalid {name} grid {text!r}") from None
    if not vals or any(not (lo <= v <= hi) for v in vals):
        raise InputError(f"{name} values must lie in [{lo}, {hi}]")
    return vals


# ---------------------------------------------------------------------------
# Output helpers


def _fmt(x, precision: int) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.{precision}g}"


def _round(x, precision: int):
    if isinstance(x, float) and math.isfinite(x):
        return float(f"{x:.{precision}g}")
    if isinstance(x, float):
        return str(x)  # JSON has no infinities
    return x


def _dump_json(obj, precision: int) -> str:
    def walk(v):
        if isinstance(v, dict):
            return {k: walk(u) for k, u in v.items()}
        if isinstance(v, (list, tuple)):
            return [walk(u) for u in v]
        return _round(v, precision)

    return json.dumps(walk(obj), indent=2)


def _emit_pairs(pairs, precision, out):
    for k, v in pairs:
        if isinstance(v, (list, tuple)):
            v = ";".join(str(u) for u in v)
        else:
            v = _fmt(v, precision)
        out.write(f"{k}: {v}\n")


def _write(text: str, path: str | None):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands


def cmd_combine(args) -> int:
    family = read_family(args.input)
    tag, _ = parse_method(args.method)
    subset = None
    if args.subset:
        if tag in ("cct", "fisher"):
            raise UnsupportedMethodError(
                f"{tag} does not support --subset: it has no strong-sense FWER (ssFWER) adjustment"
            )
        labels = [s.strip() for s in args.subset.split(",") if s.strip()]
        try:
            subset = family.indices_of(labels)
        except (KeyError, ValueError) as e:
            raise InputError(str(e).strip("'\"")) from None
    res = combine(family, args.method, args.alpha, subset)
    d = res.as_dict()
    d["subset"] = None if res.subset is None else [family.ids[i] for i in res.subset]
    if args.json:
        sys.stdout.write(_dump_json(d, args.precision) + "\n")
    else:
        _emit_pairs(d.items(), args.precision, sys.stdout)
    return EXIT_OK


def cmd_multilevel(args) -> int:
    family = read_family(args.input)
    if args.groups:
        named = read_groups(args.groups, family)
    else:
        named = []
        for s in default_subsets(family.size):
            label = family.ids[s[0]] if len(s) == 1 else "ALL"
            named.append((label, s))
    report = closed_test(family, [s for _, s in named], args.method, args.alpha)
    smallest = smallest_rejected_groups(family, args.method, args.alpha) if args.smallest else None
    ids = family.ids
    if args.json:
        d = report.as_dict(ids)
        for row, (label, _) in zip(d["decisions"], named):
            row["group"] = label
        if smallest is not None:
            d["smallest"] = [[ids[i] for i in s] for s in smallest]
        sys.stdout.write(_dump_json(d, args.precision) + "\n")
        return EXIT_OK
    out = io.StringIO()
    out.write(f"# method: {report.method}\n# alpha: {_fmt(report.alpha, args.precision)}\n")
    out.write(f"# full_set_reject: {_fmt(report.full_set_reject, args.precision)}\n")
    out.write(f"# rejected_singletons: {';'.join(ids[i] for i in report.rejected_singletons)}\n")
    for note in report.notes:
        out.write(f"# note: {note}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["group", "members", "p_adjusted", "reject"])
    for (label, _), dec in zip(named, report.decisions):
        w.writerow(
            [label, ";".join(ids[i] for i in dec.subset), _fmt(dec.p_adjusted, args.precision), _fmt(dec.reject, 0)]
        )
    if smallest is not None:
        out.write("# smallest: " + " | ".join(";".join(ids[i] for i in s) for s in smallest) + "\n")
    sys.stdout.write(out.getvalue())
    return EXIT_OK


def cmd_simulate(args) -> int:
    rho = DEFAULT_RHO_GRID if args.rho == "grid" else parse_grid(args.rho, "rho", 0.0, 1.0)
    multilevel = args.group_sizes is not None
    default_methods = MULTILEVEL_SIM_METHODS if multilevel else HEADLINE_METHODS
    methods = [m.strip() for m in args.methods.split(",")] if args.methods else list(default_methods)
    for m in methods:
        parse_method(m)
    if args.L < 1 or args.reps < 1:
        raise InputError("--L and --reps must be positive")
    scenario = Scenario.named(args.scenario, args.L)
    config = SimulationConfig(scenario, args.model, tuple(rho), args.reps, args.seed, args.alpha, tuple(methods))
    if multilevel:
        try:
            sizes = [int(v) for v in args.group_sizes.split(",")]
        except ValueError:
            raise InputError(f"invalid group sizes {args.group_sizes!r}") from None
        mixtures = parse_grid(args.mixtures, "mixture", 0.0, 1.0)
        table = run_multilevel(config, sizes, mixtures)
    else:
        table = run_headline(config)
    csv_text = table.to_csv(args.precision)
    json_text = table.to_json(args.precision) + "\n"
    if args.output and args.output != "-":
        _write(json_text if args.json else csv_text, args.output)
        if not args.json:
            # metadata sidecar
            _write(json_text, str(Path(args.output).with_suffix(".json")))
    else:
        _write(json_text if args.json else csv_text, None)
    if args.plot:
        Path(args.plot).write_text(bar_chart_svg(table.rows, title=f"{scenario.name} ({args.model})"), encoding="utf-8")
    return EXIT_OK


def cmd_bound(args) -> int:
    res = worst_case_inflation(args.alpha, args.L)
    d = res.as_dict()
    if args.json:
        sys.stdout.write(_dump_json(d, args.precision) + "\n")
    else:
        _emit_pairs(d.items(), args.precision, sys.stdout)
    return EXIT_OK


def cmd_classify(args) -> int:
    lams = parse_grid(args.lam, "lambda", 0.0, 1.0)
    if any(not (0.0 < v < 1.0) for v in lams):
        raise InputError("lambda values must lie strictly between 0 and 1")
    results = [dominance_classifier(v, args.x_max, args.grid_n, full=True).as_dict() for v in lams]
    if args.json:
        sys.stdout.write(_dump_json(results if len(results) > 1 else results[0], args.precision) + "\n")
    elif len(results) == 1:
        _emit_pairs(results[0].items(), args.precision, sys.stdout)
    else:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(list(results[0]))
        for r in results:
            w.writerow([_fmt(v, args.precision) for v in r.values()])
        sys.stdout.write(out.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# SVG


_PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f")


def bar_chart_svg(rows, title: str = "", width: int = 900, height: int = 420) -> str:
    """Grouped bar chart of ``(method, key, rate, stderr)`` rows: one group per key."""
    keys = list(dict.fromkeys(r[1] for r in rows))
    methods = list(dict.fromkeys(r[0] for r in rows))
    rate = {(r[0], r[1]): r[2] for r in rows}
    left, right, top, bottom = 60, 150, 40, 60
    pw, ph = width - left - right, height - top - bottom
    ymax = max([r[2] for r in rows] + [1e-12])
    ymax = min(1.0, math.ceil(ymax * 10.0) / 10.0) if ymax > 0.1 else math.ceil(ymax * 100.0) / 100.0
    gw = pw / max(len(keys), 1)
    bw = gw * 0.8 / max(len(methods), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(5):
        v = ymax * k / 4
        y = top + ph - ph * v / ymax
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
        parts.append(f'<line x1="{left - 3}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
    for gi, key in enumerate(keys):
        x0 = left + gi * gw + gw * 0.1
        for mi, m in enumerate(methods):
            v = rate.get((m, key), 0.0)
            h = ph * v / ymax
            parts.append(
                f'<rect x="{x0 + mi * bw:.1f}" y="{top + ph - h:.1f}" width="{bw:.1f}" height="{h:.1f}" '
                f'fill="{_PALETTE[mi % len(_PALETTE)]}"><title>{m} {key}: {v:.4g}</title></rect>'
            )
        parts.append(
            f'<text x="{left + (gi + 0.5) * gw:.1f}" y="{top + ph + 16}" text-anchor="middle">{key}</text>'
        )
    for mi, m in enumerate(methods):
        y = top + 14 * mi
        parts.append(f'<rect x="{left + pw + 15}" y="{y}" width="10" height="10" fill="{_PALETTE[mi % len(_PALETTE)]}"/>')
        parts.append(f'<text x="{left + pw + 30}" y="{y + 9}">{m}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 15}" text-anchor="middle">rejection rate by setting</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stablemeld", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true", help="emit JSON instead of text/CSV")
        p.add_argument("--precision", type=int, default=6, help="significant digits (default 6)")

    p = sub.add_parser("combine", help="combine p-values from a CSV file")
    p.add_argument("--method", required=True, help="lct, cct, hmp, sct:<lambda>, bonferroni, simes or fisher")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--input", required=True, help="CSV with header id,p[,weight]; '-' for stdin")
    p.add_argument("--subset", help="comma-separated ids to test as a group")
    common(p)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("multilevel", help="closed-testing report over groups")
    p.add_argument("--method", default="lct")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--input", required=True)
    p.add_argument("--groups", help="CSV with header group,id (one row per member)")
    p.add_argument("--smallest", action="store_true", help="also search for small rejected groups")
    common(p)
    p.set_defaults(func=cmd_multilevel)

    p = sub.add_parser("simulate", help="Monte-Carlo rejection rates")
    p.add_argument("--scenario", default="null", choices=["null", "needle", "mixture", "pervasive"])
    p.add_argument("--model", default="wmg", choices=["wmg", "mvn_z"])
    p.add_argument("--rho", default="grid", help="value, comma list, start:stop:step, or 'grid'")
    p.add_argument("--L", type=int, default=1000)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--group-sizes", help="run the multilevel study with these group sizes, e.g. 1,10,100")
    p.add_argument("--mixtures", default="0,0.5", help="alternative fractions within groups (multilevel)")
    p.add_argument("--output", help="write the table here (CSV gets a .json metadata sidecar)")
    p.add_argument("--plot", help="write a grouped bar chart SVG here")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bound", help="worst-case inflation of the LCT under dependence")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--L", type=float, required=True)
    common(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("classify", help="does the extremal Stable test dominate Bonferroni?")
    p.add_argument("--lambda", dest="lam", required=True, help="tail index or grid")
    p.add_argument("--x-max", type=float, default=8.0)
    p.add_argument("--grid-n", type=int, default=120)
    common(p)
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "precision", 6) < 1:
        parser.error("--precision must be at least 1")
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"stablemeld: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, UnsupportedMethodError, ValueError, KeyError) as e:
        msg = e.args[0] if e.args else str(e)
        print(f"stablemeld: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
