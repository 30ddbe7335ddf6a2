"""Trait report container and its text/CSV renderings."""

import csv
import io
from dataclasses import dataclass, field

CSV_COLUMNS = ("plant_id", "scale", "height_cm", "width1_cm", "width2_cm", "cube_edge_units",
               "cube_score")


@dataclass
class TraitReport:
    scale_factor: float
    cube_edge_measured: float
    height_cm: float
    width1_cm: float
    width2_cm: float
    plant_id: str = ""
    cube_score: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("scale_factor", "cube_edge_measured", "height_cm", "width1_cm",
                     "width2_cm", "cube_score"):
            setattr(self, name, float(getattr(self, name)))

    def csv_row(self):
        return {
            "plant_id": self.plant_id,
            "scale": repr(float(self.scale_factor)),
            "height_cm": repr(float(self.height_cm)),
            "width1_cm": repr(float(self.width1_cm)),
            "width2_cm": repr(float(self.width2_cm)),
            "cube_edge_units": repr(float(self.cube_edge_measured)),
            "cube_score": repr(float(self.cube_score)),
        }

    def to_text(self):
        """Key/value document, one plant per file."""
        lines = [
            f"plant_id: {self.plant_id}",
            f"scale_factor_cm_per_unit: {self.scale_factor!r}",
            f"cube_edge_units: {self.cube_edge_measured!r}",
            f"cube_score: {self.cube_score!r}",
            f"height_cm: {self.height_cm!r}",
            f"width1_cm: {self.width1_cm!r}",
            f"width2_cm: {self.width2_cm!r}",
        ]
        for key in sorted(self.diagnostics):
            lines.append(f"diag.{key}: {_fmt(self.diagnostics[key])}")
        return "\n".join(lines) + "\n"

    def traits(self):
        return {"height_cm": self.height_cm, "width1_cm": self.width1_cm,
                "width2_cm": self.width2_cm}


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def parse_report_text(text):
    """Inverse of :meth:`TraitReport.to_text` for the headline fields."""
    kv = {}
    for line in text.splitlines():
        if ":" in line:
            k, v = line.split(":", 1)
            kv[k.strip()] = v.strip()
    return TraitReport(
        scale_factor=float(kv["scale_factor_cm_per_unit"]),
        cube_edge_measured=float(kv["cube_edge_units"]),
        height_cm=float(kv["height_cm"]),
        width1_cm=float(kv["width1_cm"]),
        width2_cm=float(kv["width2_cm"]),
        plant_id=kv.get("plant_id", ""),
        cube_score=float(kv.get("cube_score", "nan")),
    )


def write_csv(reports, fh):
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())


def reports_to_csv(reports):
    buf = io.StringIO()
    write_csv(reports, buf)
    return buf.getvalue()
