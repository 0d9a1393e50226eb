"""
Report output: CSV, a plain-text table, and optional plotly HTML figures.
"""

from pathlib import Path
from typing import List, Sequence

import pandas as pd
import plotly.express as px
from loguru import logger

from evaluation.harness import CorrelationResult, EvalReport


def reports_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """One row per report: identity columns, one column per category, overall last"""
    rows = []
    for report in reports:
        row = {'label': report.label or '', 'suite': report.suite, 'mode': report.mode, 'n': report.n}
        row.update(report.per_category)
        row['overall'] = report.overall
        if report.preservation is not None:
            row['preservation'] = report.preservation
        rows.append(row)
    return pd.DataFrame(rows)


def format_table(reports: Sequence[EvalReport]) -> str:
    return reports_frame(reports).to_string(index=False, float_format=lambda v: f"{v:.3f}")


def write_reports(reports: Sequence[EvalReport], directory: Path, name: str) -> List[Path]:
    """
    Write `<name>.csv`, `<name>.txt` and `<name>.json` into a directory

    Returns:
        The written paths
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path, json_path = (directory / f"{name}.{ext}" for ext in ('csv', 'txt', 'json'))
    reports_frame(reports).to_csv(csv_path, index=False)
    txt_path.write_text(format_table(reports) + '\n', encoding='utf-8')
    frame = pd.DataFrame([r.model_dump(mode='json') for r in reports])
    frame.to_json(json_path, orient='records', indent=2)
    logger.info(f"Wrote {len(reports)} report(s) to {csv_path}")
    return [csv_path, txt_path, json_path]


def correlation_frame(result: CorrelationResult) -> pd.DataFrame:
    return pd.DataFrame([p.model_dump() for p in result.points])


def write_correlation(result: CorrelationResult, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / 'correlation.csv'
    correlation_frame(result).to_csv(path, index=False)
    rho = 'undefined' if result.spearman is None else f"{result.spearman:.3f}"
    (directory / 'correlation.txt').write_text(
        correlation_frame(result).to_string(index=False, float_format=lambda v: f"{v:.3f}")
        + f"\nspearman: {rho}\n", encoding='utf-8')
    return path


def plot_scores(reports: Sequence[EvalReport], path: Path) -> Path:
    """Grouped bars of per-category scores, one group per report"""
    frame = reports_frame(reports)
    categories = [c for c in frame.columns if c not in ('label', 'suite', 'mode', 'n', 'preservation')]
    frame['row'] = frame['label'].where(frame['label'] != '', frame['mode'])
    long = frame.melt(id_vars=['row'], value_vars=categories, var_name='category', value_name='score')
    fig = px.bar(long, x='category', y='score', color='row', barmode='group', range_y=[0, 1])
    fig.write_html(str(path))
    return Path(path)


def plot_correlation(result: CorrelationResult, path: Path) -> Path:
    """Edit score against refinement gain, one point per stage-1 checkpoint"""
    fig = px.scatter(correlation_frame(result), x='edit_score', y='refine_gain', text='label',
                     title=f"spearman = {result.spearman}")
    fig.write_html(str(path))
    return Path(path)
