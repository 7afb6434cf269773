#!/usr/bin/env python3
"""
Renders the sweep.json of a flow-size sweep as a standalone HTML report
"""
import json
import os
import sys
from datetime import datetime

from jinja2 import Environment, select_autoescape

TEMPLATE = """<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>Flow Size Sweep</title>
    <style>
        body { font-family: Arial, sans-serif; margin: 20px; }
        h1 { color: #333; }
        p { color: #666; }
        table { border-collapse: collapse; }
        th, td { border: 1px solid #ccc; padding: 4px 10px; text-align: right; }
        th { background: #f0f0f0; }
    </style>
</head>
<body>
    <h1>Flow Size Sweep</h1>
    <p>Source: {{ source }}</p>
    <p>Generated: {{ generated }}</p>
    <table>
        <tr>
            <th>Size (bytes)</th><th>Flows</th><th>Mean (s)</th><th>Median (s)</th>
            <th>p95 (s)</th><th>Max (s)</th><th>Runtime (s)</th><th>Events</th>
        </tr>
        {% for row in rows %}
        <tr>
            <td>{{ row.size_bytes }}</td><td>{{ row.flow_count }}</td>
            <td>{{ "%.6f"|format(row.mean_duration_s) }}</td><td>{{ "%.6f"|format(row.median_duration_s) }}</td>
            <td>{{ "%.6f"|format(row.p95_duration_s) }}</td><td>{{ "%.6f"|format(row.max_duration_s) }}</td>
            <td>{{ "%.3f"|format(row.wall_clock_runtime_s) }}</td><td>{{ row.events_dispatched }}</td>
        </tr>
        {% endfor %}
    </table>
    <p>Runtime spread (max/min): {{ "%.2f"|format(runtime_ratio) }}</p>
</body>
</html>
"""


def render_report(rows, source: str) -> str:
    runtimes = [row["wall_clock_runtime_s"] for row in rows]
    ratio = max(runtimes) / min(runtimes) if runtimes and min(runtimes) > 0 else float("nan")
    env = Environment(autoescape=select_autoescape(default=True))
    return env.from_string(TEMPLATE).render(
        rows=rows,
        source=source,
        generated=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        runtime_ratio=ratio,
    )


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("Usage: python generate_sweep_report.py <sweep_dir> <output_file>")
        return 1

    sweep_dir, output_file = argv
    with open(os.path.join(sweep_dir, "sweep.json"), "r", encoding="utf-8") as f:
        rows = json.load(f)

    output_dir = os.path.dirname(output_file)
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
    with open(output_file, "w", encoding="utf-8") as f:
        f.write(render_report(rows, sweep_dir))

    print(f"Sweep report generated: {output_file}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
