import logging
import os

import numpy as np
import pandas as pd

from experiments.comparison import SCORE_COLUMNS, ExperimentReport, check_orderings, per_scenario_table
from utils.helpers import read_json, write_csv, write_json

logger = logging.getLogger(__name__)

FORMATS = ("csv", "markdown")


def markdown_table(frame, float_format="{:.4f}"):
    """GitHub-style table; NaN cells render as '-'."""
    frame = frame.reset_index() if frame.index.name is not None else frame

    def cell(value):
        if isinstance(value, (float, np.floating)):
            return "-" if np.isnan(value) else float_format.format(value)
        return str(value)

    header = "| " + " | ".join(str(c) for c in frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    body = ["| " + " | ".join(cell(v) for v in row) + " |" for row in frame.itertuples(index=False)]
    return "\n".join([header, rule] + body) + "\n"


def write_table(frame, path, fmt="csv"):
    if fmt == "csv":
        write_csv(frame.reset_index() if frame.index.name is not None else frame, path)
    elif fmt == "markdown":
        os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
        with open(path, 'w') as f:
            f.write(markdown_table(frame))
    else:
        raise ValueError(f"Unknown report format '{fmt}' (expected one of {FORMATS})")
    return path


def write_report(report, out_dir, fmt="csv"):
    """
    Long-format scores (model,task,scenario,run,rmse) plus the results table, the per-scenario
    table and the ordering verdict. Returns the written paths.
    """
    ext = "csv" if fmt == "csv" else "md"
    paths = {
        "scores": os.path.join(out_dir, "scores.csv"),
        "results": os.path.join(out_dir, f"results_table.{ext}"),
        "per_scenario": os.path.join(out_dir, f"per_scenario.{ext}"),
        "orderings": os.path.join(out_dir, "orderings.json"),
        "meta": os.path.join(out_dir, "report_meta.json"),
    }
    write_csv(report.scores[SCORE_COLUMNS], paths["scores"])
    write_table(report.results_table(), paths["results"], fmt)
    write_table(per_scenario_table(report), paths["per_scenario"], fmt)
    write_json(check_orderings(report), paths["orderings"])
    write_json(report.meta, paths["meta"])
    logger.info(f"Report written to {out_dir} ({fmt})")
    return paths


def load_report(out_dir):
    scores = pd.read_csv(os.path.join(out_dir, "scores.csv"))
    meta_path = os.path.join(out_dir, "report_meta.json")
    meta = read_json(meta_path) if os.path.exists(meta_path) else {}
    return ExperimentReport(scores, meta)
