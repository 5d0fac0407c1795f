"""Render mean cumulative-regret curves from a benchmark aggregate CSV.

Reads the harness aggregate schema
    algorithm,H,d,s0,N,K,t,mean_cum_regret,reps
and writes one SVG path per (algorithm, H) series.  Styling is a pure
function of the curve label and all numbers are formatted with fixed
precision, so rerunning on the same CSV reproduces the file byte for
byte.  Output is written only after the whole CSV validates.

Usage: plot_regret.py <aggregate.csv> --out fig.svg [--png] [--title STR]
"""

import argparse
import csv
import hashlib
import sys

EXPECTED_HEADER = ["algorithm", "H", "d", "s0", "N", "K", "t",
                   "mean_cum_regret", "reps"]

WIDTH, HEIGHT = 720.0, 480.0
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70.0, 170.0, 40.0, 55.0

FAMILY_COLORS = {
    "tjap": (31, 119, 180),
    "pool": (214, 39, 40),
    "target_only": (44, 160, 44),
    "topk_pricing": (127, 127, 127),
    "clairvoyant": (148, 103, 189),
}

PALETTE = [(31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
           (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
           (188, 189, 34), (23, 190, 207)]


class SchemaError(Exception):
    pass


def curve_label(algorithm, h, multi_h):
    """Legend label; H is shown for transfer learners and whenever one
    algorithm appears under several H values."""
    if algorithm == "tjap":
        return "TJAP(H=%d)" % h
    if algorithm == "pool":
        return "Pool(H=%d)" % h
    base = {"target_only": "TargetOnly", "topk_pricing": "TopK",
            "clairvoyant": "Clairvoyant"}.get(algorithm)
    if base is None:
        return "%s(H=%d)" % (algorithm, h)
    return "%s(H=%d)" % (base, h) if multi_h else base


def curve_color(algorithm, h):
    """Deterministic stroke color: family base lightened with H."""
    base = FAMILY_COLORS.get(algorithm)
    if base is None:
        digest = hashlib.blake2b(algorithm.encode(), digest_size=4).digest()
        base = PALETTE[int.from_bytes(digest, "big") % len(PALETTE)]
    frac = 0.10 * min(h, 6)
    r, g, b = (int(round(c + (255 - c) * frac)) for c in base)
    return "#%02x%02x%02x" % (r, g, b)


def read_curves(path):
    """Parse the aggregate CSV into {(algorithm, H): (ts, values)}.

    Raises SchemaError with a column or line diagnostic on any mismatch;
    nothing is written to disk from here.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("%s: empty file (no header row)" % path)
        if header != EXPECTED_HEADER:
            for i, want in enumerate(EXPECTED_HEADER):
                got = header[i] if i < len(header) else "<missing>"
                if got != want:
                    raise SchemaError(
                        "%s: header column %d: expected %r, got %r"
                        % (path, i + 1, want, got))
            raise SchemaError("%s: header has %d extra column(s): %s"
                              % (path, len(header) - len(EXPECTED_HEADER),
                                 ",".join(header[len(EXPECTED_HEADER):])))
        curves = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(EXPECTED_HEADER):
                raise SchemaError("%s:%d: expected %d fields, got %d"
                                  % (path, lineno, len(EXPECTED_HEADER),
                                     len(row)))
            try:
                algorithm = row[0]
                h = int(row[1])
                t = int(row[6])
                value = float(row[7])
            except ValueError as exc:
                raise SchemaError("%s:%d: %s" % (path, lineno, exc))
            ts, vs = curves.setdefault((algorithm, h), ([], []))
            ts.append(t)
            vs.append(value)
    if not curves:
        raise SchemaError("%s: no data rows" % path)
    grids = {key: tuple(ts) for key, (ts, _) in curves.items()}
    reference_key = min(grids)
    for key, grid in sorted(grids.items()):
        if grid != grids[reference_key]:
            raise SchemaError(
                "%s: curve %s/%d has a different round grid than %s/%d"
                % (path, key[0], key[1], reference_key[0], reference_key[1]))
    return {key: (list(ts), list(vs))
            for key, (ts, vs) in sorted(curves.items())}


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _fmt(x):
    return "%.6g" % x


def render_svg(curves, title):
    """Build the SVG document string for a validated curve set."""
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
    all_t = next(iter(curves.values()))[0]
    t_lo, t_hi = float(min(all_t)), float(max(all_t))
    if t_hi <= t_lo:
        t_hi = t_lo + 1.0
    v_hi = max(max(vs) for _, vs in curves.values())
    v_lo = min(0.0, min(min(vs) for _, vs in curves.values()))
    if v_hi <= v_lo:
        v_hi = v_lo + 1.0

    def sx(t):
        return x0 + (t - t_lo) / (t_hi - t_lo) * (x1 - x0)

    def sy(v):
        return y0 + (v - v_lo) / (v_hi - v_lo) * (y1 - y0)

    multi_h = {algorithm: len({h for a, h in curves if a == algorithm}) > 1
               for algorithm, _ in curves}
    out = []
    out.append('<svg xmlns="http://www.w3.org/2000/svg" width="%d" '
               'height="%d" viewBox="0 0 %d %d">'
               % (WIDTH, HEIGHT, WIDTH, HEIGHT))
    out.append('<rect width="%d" height="%d" fill="white"/>'
               % (WIDTH, HEIGHT))
    if title:
        out.append('<text x="%.1f" y="24" font-family="sans-serif" '
                   'font-size="16" text-anchor="middle">%s</text>'
                   % ((x0 + x1) / 2, _escape(title)))
    # axes box and ticks
    out.append('<rect x="%.1f" y="%.1f" width="%.1f" height="%.1f" '
               'fill="none" stroke="black" stroke-width="1"/>'
               % (x0, y1, x1 - x0, y0 - y1))
    for t in _ticks(t_lo, t_hi):
        px = sx(t)
        out.append('<line x1="%.2f" y1="%.1f" x2="%.2f" y2="%.1f" '
                   'stroke="black" stroke-width="1"/>'
                   % (px, y0, px, y0 + 5))
        out.append('<text x="%.2f" y="%.1f" font-family="sans-serif" '
                   'font-size="11" text-anchor="middle">%s</text>'
                   % (px, y0 + 18, _fmt(t)))
    for v in _ticks(v_lo, v_hi):
        py = sy(v)
        out.append('<line x1="%.1f" y1="%.2f" x2="%.1f" y2="%.2f" '
                   'stroke="black" stroke-width="1"/>'
                   % (x0 - 5, py, x0, py))
        out.append('<text x="%.1f" y="%.2f" font-family="sans-serif" '
                   'font-size="11" text-anchor="end">%s</text>'
                   % (x0 - 8, py + 4, _fmt(v)))
    out.append('<text x="%.1f" y="%.1f" font-family="sans-serif" '
               'font-size="13" text-anchor="middle">round t</text>'
               % ((x0 + x1) / 2, HEIGHT - 12))
    out.append('<text x="18" y="%.1f" font-family="sans-serif" '
               'font-size="13" text-anchor="middle" '
               'transform="rotate(-90 18 %.1f)">cumulative regret</text>'
               % ((y0 + y1) / 2, (y0 + y1) / 2))
    # one path per curve, plus a right-hand legend in the same order
    legend_y = y1 + 10.0
    for (algorithm, h), (ts, vs) in curves.items():
        label = curve_label(algorithm, h, multi_h[algorithm])
        color = curve_color(algorithm, h)
        points = " L ".join("%.2f %.2f" % (sx(t), sy(v))
                            for t, v in zip(ts, vs))
        out.append('<path d="M %s" fill="none" stroke="%s" '
                   'stroke-width="1.5"/>' % (points, color))
        out.append('<line x1="%.1f" y1="%.1f" x2="%.1f" y2="%.1f" '
                   'stroke="%s" stroke-width="1.5"/>'
                   % (x1 + 12, legend_y, x1 + 34, legend_y, color))
        out.append('<text x="%.1f" y="%.1f" font-family="sans-serif" '
                   'font-size="12">%s</text>'
                   % (x1 + 40, legend_y + 4, _escape(label)))
        legend_y += 18.0
    out.append('</svg>')
    return "\n".join(out) + "\n"


def _escape(text):
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def write_png(curves, png_path, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    multi_h = {algorithm: len({h for a, h in curves if a == algorithm}) > 1
               for algorithm, _ in curves}
    fig, ax = plt.subplots(figsize=(7.2, 4.8))
    for (algorithm, h), (ts, vs) in curves.items():
        ax.plot(ts, vs, color=curve_color(algorithm, h),
                label=curve_label(algorithm, h, multi_h[algorithm]))
    ax.set_xlabel("round t")
    ax.set_ylabel("cumulative regret")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="plot_regret.py",
        description="Plot mean cumulative-regret curves from an aggregate "
                    "CSV produced by the benchmark harness.")
    parser.add_argument("aggregate_csv")
    parser.add_argument("--out", required=True,
                        help="output SVG path")
    parser.add_argument("--png", action="store_true",
                        help="also write a PNG next to the SVG")
    parser.add_argument("--title", default="",
                        help="optional figure title")
    args = parser.parse_args(argv)
    try:
        curves = read_curves(args.aggregate_csv)
    except OSError as exc:
        print("plot_regret: %s" % exc, file=sys.stderr)
        return 2
    except SchemaError as exc:
        print("plot_regret: %s" % exc, file=sys.stderr)
        return 2
    svg = render_svg(curves, args.title)
    with open(args.out, "w", newline="") as fh:
        fh.write(svg)
    if args.png:
        stem = args.out[:-4] if args.out.endswith(".svg") else args.out
        write_png(curves, stem + ".png", args.title)
    return 0


if __name__ == "__main__":
    sys.exit(main())
