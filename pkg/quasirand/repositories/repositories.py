"""Repository implementations for the file layer: CSV ingestion and result writers."""

import logging
import re
from csv import DictReader
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from quasirand.core.exceptions import InputError
from quasirand.models.models import GridPoint, MCSummary, ObservedData, Overlap
from quasirand.schemas.schemas import (
    ConvenienceCSVRow,
    EstimateResponse,
    GridRow,
    HistogramRow,
    ReferenceCSVRow,
    ReplicateRow,
    SummaryRow,
    ValidationError,
)
from quasirand.services.simlab import OverlapHistogram, StepComparison

logger = logging.getLogger(__name__)

COVARIATE = re.compile(r"^x(\d+)$")


class BaseRepository:
    """Base repository with common functionality."""

    def __init__(self, base_path: Path) -> None:
        """Initialize repository with its base path."""
        self.base_path = Path(base_path)


def covariate_columns(fieldnames: list[str]) -> list[str]:
    """Covariate columns x1..xp in numeric order; the numbering must be contiguous."""
    found = sorted((int(m.group(1)), name) for name in fieldnames if (m := COVARIATE.match(name)))
    numbers = [n for n, _ in found]
    if numbers != list(range(1, len(numbers) + 1)):
        raise InputError(f"covariate columns must be x1..xp without gaps, got {[name for _, name in found]}")
    return [name for _, name in found]


def _row_errors(exc: PydanticValidationError, row_num: int, row: dict, covariates: list[str]) -> list[ValidationError]:
    errors = []
    for err in exc.errors():
        loc = err.get("loc", ())
        field = None
        if loc:
            field = str(loc[0])
            if field == "covariates" and len(loc) > 1 and isinstance(loc[1], int):
                field = covariates[loc[1]]
        errors.append(ValidationError(row_number=row_num, field=field, error=err.get("msg", ""), raw_data=row))
    return errors


class ObservedDataRepository(BaseRepository):
    """Loads a convenience file and a reference file into ``ObservedData``."""

    def __init__(self, convenience_path: Path, reference_path: Path) -> None:
        super().__init__(Path(convenience_path).parent)
        self.convenience_path = Path(convenience_path)
        self.reference_path = Path(reference_path)

    def _open(self, path: Path) -> DictReader:
        if not path.is_file():
            raise InputError(f"{path}: file not found")
        # BOM tolerated
        text = path.read_text(encoding="utf-8-sig")
        reader = DictReader(text.splitlines())
        if not reader.fieldnames:
            raise InputError(f"{path}: empty CSV file")
        return reader

    def _check_headers(self, path: Path, fieldnames: list[str], required: set[str]) -> list[str]:
        covariates = covariate_columns(fieldnames)
        missing = sorted(required - set(fieldnames))
        if missing:
            raise InputError(f"{path}: missing required column(s): {', '.join(missing)}")
        extra = set(fieldnames) - required - set(covariates) - {"pi_r"}
        if extra:
            logger.warning(f"{path}: ignoring unknown column(s) {', '.join(sorted(extra))}")
        return covariates

    def read_convenience(self) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, list[str]]:
        """Parse the convenience file into (x, y, pi_r or None, covariate names)."""
        reader = self._open(self.convenience_path)
        fieldnames = list(reader.fieldnames)
        covariates = self._check_headers(self.convenience_path, fieldnames, {"y"})
        has_pi_r = "pi_r" in fieldnames

        xs: list[list[float]] = []
        ys: list[float] = []
        pis: list[float] = []
        errors: list[ValidationError] = []
        for row_num, row in enumerate(reader, start=2):  # header is row 1
            try:
                parsed = ConvenienceCSVRow(
                    y=row.get("y"),
                    covariates=[row.get(c) for c in covariates],
                    pi_r=row.get("pi_r") if has_pi_r else None,
                )
            except PydanticValidationError as e:
                errors.extend(_row_errors(e, row_num, row, covariates))
                continue
            if has_pi_r and parsed.pi_r is None:
                errors.append(ValidationError(row_number=row_num, field="pi_r", error="missing value", raw_data=row))
                continue
            xs.append(parsed.covariates)
            ys.append(parsed.y)
            if has_pi_r:
                pis.append(parsed.pi_r)

        self._raise_if_invalid(self.convenience_path, errors)
        if not ys:
            raise InputError(f"{self.convenience_path}: no data rows")
        x = np.asarray(xs, dtype=np.float64).reshape(len(ys), len(covariates))
        pi_r = np.asarray(pis, dtype=np.float64) if has_pi_r else None
        logger.info(f"Read {len(ys)} convenience rows with {len(covariates)} covariate(s)")
        return x, np.asarray(ys, dtype=np.float64), pi_r, covariates

    def read_reference(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Parse the reference file into (x, pi_r, covariate names)."""
        reader = self._open(self.reference_path)
        fieldnames = list(reader.fieldnames)
        covariates = self._check_headers(self.reference_path, fieldnames, {"pi_r"})

        xs: list[list[float]] = []
        pis: list[float] = []
        errors: list[ValidationError] = []
        for row_num, row in enumerate(reader, start=2):
            try:
                parsed = ReferenceCSVRow(covariates=[row.get(c) for c in covariates], pi_r=row.get("pi_r"))
            except PydanticValidationError as e:
                errors.extend(_row_errors(e, row_num, row, covariates))
                continue
            xs.append(parsed.covariates)
            pis.append(parsed.pi_r)

        self._raise_if_invalid(self.reference_path, errors)
        if not pis:
            raise InputError(f"{self.reference_path}: no data rows")
        logger.info(f"Read {len(pis)} reference rows")
        return np.asarray(xs, dtype=np.float64).reshape(len(pis), len(covariates)), np.asarray(pis), covariates

    @staticmethod
    def _raise_if_invalid(path: Path, errors: list[ValidationError]) -> None:
        if not errors:
            return
        for e in errors:
            logger.error(f"{path}: {e}")
        shown = "; ".join(str(e) for e in errors[:5])
        more = f" (and {len(errors) - 5} more)" if len(errors) > 5 else ""
        raise InputError(f"{path}: {len(errors)} invalid row(s): {shown}{more}", details=errors)

    def load(self) -> tuple[ObservedData, list[str]]:
        """Read both files; covariate columns must agree."""
        conv_x, conv_y, conv_pi_r, conv_cols = self.read_convenience()
        ref_x, ref_pi_r, ref_cols = self.read_reference()
        if conv_cols != ref_cols:
            raise InputError(f"covariate columns differ: convenience {conv_cols}, reference {ref_cols}")
        data = ObservedData(conv_x=conv_x, conv_y=conv_y, conv_pi_r=conv_pi_r, ref_x=ref_x, ref_pi_r=ref_pi_r)
        return data, conv_cols


class ResultRepository(BaseRepository):
    """Writes plot-ready CSV files and JSON results under an output directory."""

    def __init__(self, base_path: Path) -> None:
        super().__init__(base_path)
        self.base_path.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, rows: list[BaseModel] | list[dict], columns: list[str] | None = None) -> Path:
        path = self.base_path / name
        records = [r.model_dump(mode="json") if isinstance(r, BaseModel) else r for r in rows]
        frame = pd.DataFrame.from_records(records, columns=columns)
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_summary(self, summaries: list[MCSummary]) -> Path:
        rows = [
            SummaryRow(
                scenario=s.config.id.value,
                overlap=s.config.overlap,
                method=row.method,
                parameter=row.parameter,
                mean=row.mean,
                se=row.se,
                se_hat=row.mean_se_hat,
                coverage=row.coverage_95,
                rmse=row.rmse,
                n_flags=row.n_flags,
            )
            for s in summaries
            for row in s.rows
        ]
        return self._write("summary.csv", rows, columns=list(SummaryRow.model_fields))

    def write_replicates(self, summaries: list[MCSummary]) -> Path:
        rows: list[ReplicateRow] = []
        for s in summaries:
            truths = {"beta_c1": s.config.beta_c1, "mu": s.mu}
            for rep in s.replicates:
                for est in rep.estimates:
                    for parameter, value, se_hat in (
                        ("beta_c1", est.beta_c1, est.se_beta_c1),
                        ("mu", est.mu_hat, est.se_mu),
                    ):
                        truth = truths[parameter]
                        rows.append(
                            ReplicateRow(
                                scenario=s.config.id.value,
                                overlap=s.config.overlap,
                                method=est.method,
                                rep=rep.rep_index,
                                parameter=parameter,
                                estimate=value,
                                se_hat=se_hat,
                                rel_bias=(value - truth) / truth if truth != 0 else float("nan"),
                                converged=est.converged,
                            ),
                        )
        return self._write("replicates.csv", rows, columns=list(ReplicateRow.model_fields))

    def write_overlap_histograms(self, histograms: dict[Overlap, OverlapHistogram]) -> Path:
        rows = [
            HistogramRow(
                overlap=overlap,
                bin_low=float(h.edges[i]),
                bin_high=float(h.edges[i + 1]),
                conv_count=int(h.conv_counts[i]),
                ref_count=int(h.ref_counts[i]),
            )
            for overlap, h in histograms.items()
            for i in range(h.conv_counts.size)
        ]
        return self._write("overlap_hist.csv", rows, columns=list(HistogramRow.model_fields))

    def write_step_comparison(self, comparisons: dict[str, StepComparison], *, max_units: int = 5000) -> list[Path]:
        """Unit-level predictions (thinned to ``max_units`` per label) and the binned summary."""
        units: list[dict] = []
        bins: list[dict] = []
        for label, comp in comparisons.items():
            idx = np.arange(comp.true_pi_c.size)
            if idx.size > max_units:
                idx = idx[:: -(-idx.size // max_units)]
            for i in idx:
                record = {"label": label, "unit": int(i), "true_pi_c": float(comp.true_pi_c[i])}
                record.update({m.value: float(v[i]) for m, v in comp.predicted.items()})
                units.append(record)
            bins.extend({"label": label, **b} for b in comp.bins)
        return [self._write("step_comparison.csv", units), self._write("step_comparison_bins.csv", bins)]

    def write_grid(self, points: list[GridPoint], name: str = "numstudy.csv") -> Path:
        rows = [
            GridRow(f_c=p.f_c, f_r=p.f_r, overlap=p.overlap, method=m, se_beta=p.se_beta[m], se_mu=p.se_mu[m])
            for p in points
            for m in p.se_beta
        ]
        return self._write(name, rows, columns=list(GridRow.model_fields))

    def write_estimate(self, response: EstimateResponse, name: str = "estimate.json") -> Path:
        path = self.base_path / name
        path.write_text(response.model_dump_json(indent=2, by_alias=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote estimates of {len(response.results)} method(s) to {path}")
        return path
