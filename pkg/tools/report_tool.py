import os
import logging
from datetime import datetime
from typing import Dict, Any, Optional, List, Sequence

import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import inch
from reportlab.platypus import SimpleDocTemplate, Paragraph, Spacer, Table, TableStyle, Image, PageBreak
from reportlab.lib.enums import TA_CENTER

from .experiment_tool import read_results

logger = logging.getLogger(__name__)

TABLE_STYLE = TableStyle([
    ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
    ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
    ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
    ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
    ('FONTSIZE', (0, 0), (-1, -1), 8),
    ('BOTTOMPADDING', (0, 0), (-1, 0), 12),
    ('BACKGROUND', (0, 1), (-1, -1), colors.beige),
    ('GRID', (0, 0), (-1, -1), 1, colors.black)
])

SUMMARY_COLUMNS = ['experiment', 'method', 'lambda', 'xi', 'seeds', 'J_tar_mean', 'J_tar_std', 'normalized_mean']


def summarize_results(frame: pd.DataFrame) -> pd.DataFrame:
    """Per (experiment, config, method, lambda, xi) aggregates over seeds."""
    ok = frame[frame['method'] != 'error']
    keys = ['experiment', 'config_hash', 'method', 'lambda', 'xi']
    summary = (
        ok.groupby(keys, dropna=False, sort=True)
        .agg(seeds=('seed', 'nunique'),
             J_tar_mean=('J_tar', 'mean'),
             J_tar_std=('J_tar', 'std'),
             normalized_mean=('normalized_score', 'mean'),
             normalized_std=('normalized_score', 'std'),
             selected_mean=('selected_count', 'mean'))
        .reset_index()
    )
    errors = frame[frame['method'] == 'error'].groupby('config_hash').size()
    summary['aborted_seeds'] = summary['config_hash'].map(errors).fillna(0).astype(int)
    return summary


def checks_frame(checks: Dict[str, Dict[str, Any]]) -> pd.DataFrame:
    """Flatten named self-check dicts into (section, check, value) rows."""
    rows = []
    for section, values in checks.items():
        flat = pd.json_normalize(values, sep='.').to_dict('records')[0] if values else {}
        for key, value in flat.items():
            rows.append({'section': section, 'check': key, 'value': value})
    return pd.DataFrame(rows, columns=['section', 'check', 'value'])


class ReportTool:
    """Tool for merging results files and writing summary reports."""

    name = "report_generator"
    description = "Merge experiment results and write summary CSV, text, PDF and Excel reports"

    def __init__(self, output_dir: str = "reports"):
        self.output_dir = output_dir
        self.current_data: Optional[pd.DataFrame] = None
        self.summary: Optional[pd.DataFrame] = None
        self.checks: Dict[str, Dict[str, Any]] = {}
        os.makedirs(output_dir, exist_ok=True)

    def load_data(self, data: pd.DataFrame) -> Dict[str, Any]:
        """Load an in-memory results frame."""
        try:
            self.current_data = data
            self.summary = summarize_results(data)
            return {
                'success': True,
                'message': f"Loaded {len(data)} result rows over {data['config_hash'].nunique()} configurations"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def load_results(self, paths: Sequence[str]) -> Dict[str, Any]:
        """Merge one or more results CSVs."""
        try:
            if not paths:
                return {'success': False, 'error': 'No results files given'}
            frames = [read_results(p) for p in paths]
            merged = pd.concat(frames, ignore_index=True)
            merged = merged.drop_duplicates().sort_values(['experiment', 'config_hash', 'seed', 'method'],
                                                          kind='stable').reset_index(drop=True)
            result = self.load_data(merged)
            if result['success']:
                result['message'] = f"Merged {len(paths)} files into {len(merged)} rows"
            return result
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def add_checks(self, section: str, checks: Dict[str, Any]) -> Dict[str, Any]:
        """Attach a named self-check result (motivating or sweep checks)."""
        if not isinstance(checks, dict):
            return {'success': False, 'error': f'Checks for {section!r} must be a dict'}
        self.checks[section] = checks
        verdicts = {k: v for k, v in checks.items() if isinstance(v, bool)}
        logger.info("report section %s: %s", section, verdicts)
        return {
            'success': True,
            'message': f"Added {len(checks)} checks under {section}"
        }

    def generate_summary_csv(self, filename: str = "summary.csv") -> Dict[str, Any]:
        if self.summary is None:
            return {'success': False, 'error': 'No data loaded'}

        try:
            filepath = os.path.join(self.output_dir, filename)
            self.summary.to_csv(filepath, index=False, float_format="%.10g", lineterminator="\n")
            return {
                'success': True,
                'filepath': filepath,
                'filename': filename,
                'rows': len(self.summary),
                'message': f"Summary CSV generated: {filename}"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    @staticmethod
    def _table(frame: pd.DataFrame, first_width: int = 70, width: int = 55) -> Table:
        cells = [list(frame.columns)] + [[str(v) for v in row] for row in frame.itertuples(index=False)]
        table = Table(cells, colWidths=[first_width] + [width] * (len(frame.columns) - 1))
        table.setStyle(TABLE_STYLE)
        return table

    def generate_pdf_report(self, title: str = "DVDF Bench Report",
                            charts: Optional[List[str]] = None,
                            filename: str = "report.pdf") -> Dict[str, Any]:
        if self.summary is None:
            return {'success': False, 'error': 'No data loaded'}

        try:
            filepath = os.path.join(self.output_dir, filename)
            doc = SimpleDocTemplate(filepath, pagesize=letter,
                                    rightMargin=54, leftMargin=54,
                                    topMargin=72, bottomMargin=72)

            styles = getSampleStyleSheet()
            styles.add(ParagraphStyle(name='BenchTitle', parent=styles['Heading1'],
                                      fontSize=22, spaceAfter=30, alignment=TA_CENTER))
            styles.add(ParagraphStyle(name='BenchSection', parent=styles['Heading2'],
                                      fontSize=15, spaceAfter=12, spaceBefore=20))
            styles.add(ParagraphStyle(name='BenchBody', parent=styles['Normal'],
                                      fontSize=10, spaceAfter=12))

            data = self.current_data
            overview = (f"Rows: {len(data)}<br/>"
                        f"Configurations: {data['config_hash'].nunique()}<br/>"
                        f"Seeds: {data['seed'].nunique()}<br/>"
                        f"Aborted seeds: {int((data['method'] == 'error').sum())}")
            story = [
                Paragraph(title, styles['BenchTitle']),
                Paragraph(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}", styles['BenchBody']),
                Paragraph("Runs", styles['BenchSection']),
                Paragraph(overview, styles['BenchBody']),
                Paragraph("Returns by method", styles['BenchSection']),
                self._table(self.summary[SUMMARY_COLUMNS].round(4)),
            ]

            checks = checks_frame(self.checks)
            if not checks.empty:
                story.append(Paragraph("Self-checks", styles['BenchSection']))
                story.append(self._table(checks, first_width=120, width=160))

            pngs = [p for p in charts or [] if os.path.exists(p) and p.endswith('.png')]
            if pngs:
                story.append(PageBreak())
                story.append(Paragraph("Charts", styles['BenchSection']))
                for chart_path in pngs:
                    story.append(Image(chart_path, width=6 * inch, height=3.5 * inch))
                    story.append(Spacer(1, 20))

            doc.build(story)
            return {
                'success': True,
                'filepath': filepath,
                'filename': filename,
                'message': f"PDF report generated: {filename}"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def generate_excel_report(self, filename: str = "report.xlsx") -> Dict[str, Any]:
        """Workbook with Summary, Results and Checks sheets."""
        if self.current_data is None:
            return {'success': False, 'error': 'No data loaded'}

        try:
            filepath = os.path.join(self.output_dir, filename)
            with pd.ExcelWriter(filepath, engine='openpyxl') as writer:
                self.summary.to_excel(writer, sheet_name='Summary', index=False)
                self.current_data.to_excel(writer, sheet_name='Results', index=False)
                checks = checks_frame(self.checks)
                if not checks.empty:
                    checks.assign(value=checks['value'].astype(str)).to_excel(writer, sheet_name='Checks', index=False)
            return {
                'success': True,
                'filepath': filepath,
                'filename': filename,
                'message': f"Excel report generated: {filename}"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def generate_summary_report(self, filename: str = "summary.txt") -> Dict[str, Any]:
        """Plain-text returns table followed by one line per self-check."""
        if self.summary is None:
            return {'success': False, 'error': 'No data loaded'}

        try:
            filepath = os.path.join(self.output_dir, filename)
            lines = ["DVDF bench summary",
                     f"configs={self.summary['config_hash'].nunique()} "
                     f"rows={len(self.current_data)} "
                     f"aborted={int(self.summary['aborted_seeds'].sum())}",
                     "",
                     self.summary[SUMMARY_COLUMNS].to_string(index=False, float_format=lambda v: f"{v:.4f}"),
                     ""]
            for row in checks_frame(self.checks).itertuples(index=False):
                lines.append(f"[{row.section}] {row.check} = {row.value}")
            with open(filepath, 'w') as f:
                f.write("\n".join(lines) + "\n")
            return {
                'success': True,
                'filepath': filepath,
                'filename': filename,
                'message': f"Summary report generated: {filename}"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def run(self, action: str, **kwargs) -> Dict[str, Any]:
        actions = {
            'load': lambda: self.load_data(kwargs.get('data')),
            'load_results': lambda: self.load_results(kwargs.get('paths', [])),
            'checks': lambda: self.add_checks(kwargs.get('section', 'checks'), kwargs.get('checks')),
            'csv': lambda: self.generate_summary_csv(kwargs.get('filename', 'summary.csv')),
            'pdf': lambda: self.generate_pdf_report(
                kwargs.get('title', 'DVDF Bench Report'),
                kwargs.get('charts'),
                kwargs.get('filename', 'report.pdf')
            ),
            'excel': lambda: self.generate_excel_report(kwargs.get('filename', 'report.xlsx')),
            'summary': lambda: self.generate_summary_report(kwargs.get('filename', 'summary.txt')),
        }

        if action not in actions:
            return {'success': False, 'error': f'Unknown action: {action}'}

        return actions[action]()
