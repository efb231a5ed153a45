"""Running suites and writing deterministic CSV / JSON reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import systems as sysm
from .config import RunConfig
from .errors import BowenLabError
from .suites import RUNNERS, SuiteResult

FULL_ORDER = ("linearize", "distortion", "spectrum", "splitting")


@dataclass
class RunReport:
    config: dict
    suites: dict = field(default_factory=dict)  # name -> summary record
    verdicts: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def failed(self) -> bool:
        return any(v == "fail" for v in self.verdicts.values())

    def to_json(self) -> dict:
        return {"config": self.config, "suites": self.suites, "verdicts": self.verdicts,
                "diagnostics": self.diagnostics, "wall_time": self.wall_time}


def format_cell(v) -> str:
    """Shortest round-trip text for reals, lowercase booleans, empty for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(columns)
    for r in rows:
        w.writerow([format_cell(v) for v in r])
    return buf.getvalue()


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` (UTF-8) via a temporary file in the same directory and rename it."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def json_text(doc: dict) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def run_suite(config: RunConfig, workers=None, write: bool = True) -> RunReport:
    """Run the configured suite (all four for ``full``) and write its reports."""
    t0 = time.perf_counter()
    system = config.make_system()
    sample = sysm.sample_lambda(system, config.budget, config.seed)
    names = FULL_ORDER if config.suite == "full" else (config.suite,)
    report = RunReport(config.echo())
    outputs = []
    for name in names:
        try:
            res = RUNNERS[name](config, system, sample, workers)
        except BowenLabError as exc:
            res = SuiteResult(name, _columns(name))
            res.verdicts[f"{name}_completed"] = "fail"
            report.diagnostics[name] = f"{type(exc).__name__}: {exc}"
        report.suites[name] = res.summary
        for k, v in res.verdicts.items():
            report.verdicts[f"{name}.{k}"] = v
        outputs.append(res)
    report.wall_time = time.perf_counter() - t0
    if write:
        for res in outputs:
            atomic_write(os.path.join(config.out_dir, f"{res.name}.csv"), csv_text(res.columns, res.rows))
        atomic_write(os.path.join(config.out_dir, "report.json"), json_text(report.to_json()))
    return report


def _columns(name):
    from . import bowen, suites

    return {"linearize": suites.LINEARIZE_COLUMNS, "distortion": bowen.DISTORTION_COLUMNS,
            "spectrum": suites.SPECTRUM_COLUMNS, "splitting": suites.B1_COLUMNS}[name]
