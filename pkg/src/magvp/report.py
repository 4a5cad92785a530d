"""Consolidated JSON and text reports for verification and stability runs."""

from __future__ import annotations

import json
from pathlib import Path

from . import __version__
from .inequalities import EnvelopeReport

REPORT_SCHEMA = "magvp.report/1"


def report_dict(reports: list[EnvelopeReport], config_hash: str, meta: dict | None = None) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "config_hash": config_hash,
        "version": __version__,
        "meta": meta or {},
        "checks": [r.to_dict() for r in reports],
    }


def write_json(path: str | Path, reports: list[EnvelopeReport], config_hash: str, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(report_dict(reports, config_hash, meta), fh, indent=2)
        fh.write("\n")


def _line(r: EnvelopeReport, indent: str = "") -> str:
    tag = r.status.upper()
    if r.informational:
        tag += " (informational)"
    margin = r.worst_relative_margin
    m = "" if margin == float("inf") else f"  worst relative margin {margin:+.3e}"
    return f"{indent}[{tag}] {r.check}: {r.anchor}{m}"


def text_lines(reports: list[EnvelopeReport]) -> list[str]:
    lines = []
    for r in reports:
        lines.append(_line(r))
        for note in r.notes:
            lines.append(f"    note: {note}")
        for part in r.parts:
            lines.append(_line(part, "    "))
            for note in part.notes:
                lines.append(f"        note: {note}")
    return lines


def write_text(path: str | Path, reports: list[EnvelopeReport], config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {REPORT_SCHEMA} config_hash={config_hash}\n")
        for line in text_lines(reports):
            fh.write(line + "\n")
