# ==============================================================================
# Module: report.py
# Description: Experiment reports: CSV payloads written with 4 decimals and
#              a report.json (sorted keys) whose summary statistics are
#              computed from the payloads exactly as they were written.
# ==============================================================================
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict

import pandas as pd

from divlab.log import BANNER, SEPARATOR

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.4f"
REPORT_NAME = "report.json"


def write_frame(frame: pd.DataFrame, out_dir, name) -> pd.DataFrame:
    """Write `frame` as out_dir/name.csv and return the frame read back from disk."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.csv")
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    log.debug("wrote %s", path)
    if frame.empty:
        return frame
    return pd.read_csv(path)


def _clean(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        return _clean(value.item())
    return value


@dataclass
class ExperimentReport:
    kind: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    payloads: Dict[str, str] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)

    def add_payload(self, frame: pd.DataFrame, out_dir, name, root=None) -> pd.DataFrame:
        written = write_frame(frame, out_dir, name)
        path = os.path.join(out_dir, f"{name}.csv")
        self.payloads[name] = os.path.relpath(path, root or out_dir).replace(os.sep, "/")
        return written

    def to_dict(self):
        return _clean({
            "kind": self.kind,
            "parameters": self.parameters,
            "payloads": self.payloads,
            "summary": self.summary,
        })

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, REPORT_NAME)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        return path

    def print_summary(self):
        print("\n" + BANNER)
        print(f"📊 {self.kind.upper()} SUMMARY")
        print(BANNER)
        for name in sorted(self.summary):
            value = self.summary[name]
            text = f"{value:.4f}" if isinstance(value, float) else str(value)
            print(f"{name:<48}: {text}")
        print(SEPARATOR)
        print(f"CSV payloads: {len(self.payloads)}")
        print(BANNER)


def load_report(out_dir) -> ExperimentReport:
    with open(os.path.join(out_dir, REPORT_NAME), "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return ExperimentReport(data["kind"], data["parameters"], data["payloads"], data["summary"])
