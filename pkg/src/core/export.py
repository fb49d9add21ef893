"""
Report export.

Writes bench and edit results as JSON, aligned text tables, CSV and a PDF
summary. Every writer is deterministic: keys are sorted, floats are
rendered with fixed precision and the PDF is built in reportlab's
invariant mode (no timestamps or random document ids).
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Image, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "{:.4f}"


class JSONExporter:
    """Sorted-key JSON, one trailing newline."""

    @staticmethod
    def dumps(payload: Dict[str, Any]) -> str:
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def export(payload: Dict[str, Any], filepath: PathLike) -> Path:
        path = Path(filepath)
        path.write_text(JSONExporter.dumps(payload), encoding="utf-8")
        logger.debug("json written", extra={"fields": {"path": str(path)}})
        return path


class CSVExporter:
    """
    Exports per-task frames to CSV.
    """

    @staticmethod
    def export(df: pd.DataFrame, filepath: PathLike, include_index: bool = False) -> Path:
        """
        Export dataframe to CSV file with a fixed float format.

        Args:
            df (pd.DataFrame): The dataframe to export.
            filepath (PathLike): The output file path.
            include_index (bool): Whether to include the index column.

        Returns:
            Path: The written file.
        """
        path = Path(filepath)
        df.to_csv(path, index=include_index, float_format="%.6f", lineterminator="\n")
        return path


def format_table(df: pd.DataFrame, title: Optional[str] = None, index: bool = True) -> str:
    """Aligned plain-text table."""
    body = df.to_string(index=index, float_format=lambda v: FLOAT_FORMAT.format(v))
    return f"{title}\n{'=' * len(title)}\n{body}\n" if title else body + "\n"


def metrics_frame(metrics: Dict[str, Dict[str, Any]]) -> pd.DataFrame:
    """Rows = sections (e.g. suites), columns = metric names."""
    frame = pd.DataFrame.from_dict(metrics, orient="index")
    return frame.reindex(sorted(frame.columns), axis=1).sort_index()


class TextReport:
    """Collects titled tables and writes them as one text file."""

    def __init__(self):
        self.sections: List[str] = []

    def add(self, title: str, df: pd.DataFrame, index: bool = True) -> None:
        self.sections.append(format_table(df, title, index))

    def add_pairs(self, title: str, pairs: Dict[str, Any]) -> None:
        frame = pd.DataFrame({"value": pd.Series(pairs, dtype=object)}).sort_index()
        self.sections.append(format_table(frame, title))

    def render(self) -> str:
        return "\n".join(self.sections)

    def export(self, filepath: PathLike) -> Path:
        path = Path(filepath)
        path.write_text(self.render(), encoding="utf-8")
        return path


class PDFReporter:
    """
    Generates the PDF summary of a bench run.

    Creates a formatted document with the run settings, one table per
    report section and the ablation charts.
    """

    def __init__(self):
        """Initialize the PDF reporter."""
        self.styles = getSampleStyleSheet()
        self._setup_custom_styles()

    def _setup_custom_styles(self):
        """Set up custom paragraph styles."""
        self.styles.add(ParagraphStyle(
            name="ReportTitle",
            parent=self.styles["Heading1"],
            fontSize=20,
            textColor=colors.HexColor("#1f77b4"),
            spaceAfter=20,
            alignment=TA_CENTER,
        ))
        self.styles.add(ParagraphStyle(
            name="SectionHeader",
            parent=self.styles["Heading2"],
            fontSize=14,
            textColor=colors.HexColor("#2c3e50"),
            spaceAfter=10,
            spaceBefore=10,
        ))

    def _table(self, df: pd.DataFrame, index: bool = True) -> Table:
        frame = df.reset_index() if index else df
        header = [str(c) for c in frame.columns]
        rows = [[FLOAT_FORMAT.format(v) if isinstance(v, float) else str(v) for v in row]
                for row in frame.itertuples(index=False)]
        table = Table([header] + rows, repeatRows=1)
        table.setStyle(TableStyle([
            ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor("#1f77b4")),
            ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
            ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
            ("FONTSIZE", (0, 0), (-1, -1), 7),
            ("ALIGN", (0, 0), (-1, -1), "CENTER"),
            ("BACKGROUND", (0, 1), (-1, -1), colors.beige),
            ("GRID", (0, 0), (-1, -1), 0.5, colors.black),
        ]))
        return table

    def generate_report(self, filepath: PathLike, title: str, settings: Dict[str, Any],
                        tables: Dict[str, pd.DataFrame], charts: Iterable[PathLike] = ()) -> Path:
        """
        Build the PDF.

        Args:
            filepath (PathLike): Output PDF path.
            title (str): Document title.
            settings (Dict[str, Any]): Flat key/value run settings.
            tables (Dict[str, pd.DataFrame]): Section title to table.
            charts (Iterable[PathLike]): PNG files appended at the end.

        Returns:
            Path: The written file.
        """
        path = Path(filepath)
        doc = SimpleDocTemplate(str(path), pagesize=A4, rightMargin=48, leftMargin=48,
                                topMargin=48, bottomMargin=36, invariant=1,
                                title=title, author="", creator="")
        elements = [Paragraph(title, self.styles["ReportTitle"]), Spacer(1, 8)]

        elements.append(Paragraph("Settings", self.styles["SectionHeader"]))
        settings_frame = pd.DataFrame({"value": [str(settings[k]) for k in sorted(settings)]},
                                      index=sorted(settings))
        elements.append(self._table(settings_frame))

        for name, frame in tables.items():
            elements.append(Paragraph(name, self.styles["SectionHeader"]))
            elements.append(self._table(frame))
            elements.append(Spacer(1, 8))

        for chart in charts:
            elements.append(Spacer(1, 12))
            elements.append(Image(str(chart), width=5.5 * inch, height=3.4 * inch))

        doc.build(elements)
        logger.debug("pdf written", extra={"fields": {"path": str(path)}})
        return path
