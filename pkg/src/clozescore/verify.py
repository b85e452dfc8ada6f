"""Recompute published composite totals from published group tables.

Input is a CSV with one row per model holding the per-group satisfy and
surprise cells plus the reported rank/total. Totals are recomputed under the
main scheme and compared to the reported ones.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

from .scoring import SCHEME_C1, CompositeScheme, ModelTotal, group_score, leaderboard, model_total

DEFAULT_TOLERANCE = 0.05


class TableFormatError(ValueError):
    pass


@dataclass
class ModelCheck:
    model_id: str
    reported_rank: int
    reported_total: float
    recomputed: ModelTotal

    @property
    def difference(self) -> float:
        return self.recomputed.total - self.reported_total

    def within(self, tol: float) -> bool:
        return abs(self.difference) <= tol + 1e-12


@dataclass
class PaperCheck:
    tolerance: float
    models: list[ModelCheck] = field(default_factory=list)

    @property
    def reported_order(self) -> list[str]:
        return [m.model_id for m in sorted(self.models, key=lambda m: m.reported_rank)]

    @property
    def recomputed_order(self) -> list[str]:
        return [t.model_id for t in leaderboard([m.recomputed for m in self.models])]

    @property
    def totals_ok(self) -> bool:
        return all(m.within(self.tolerance) for m in self.models)

    @property
    def rank_order_ok(self) -> bool:
        return self.reported_order == self.recomputed_order

    def discordant_pairs(self) -> list[tuple[str, str]]:
        """Model pairs (a above b in the report) that the recomputation puts the other way round."""
        pos = {m: i for i, m in enumerate(self.recomputed_order)}
        rep = self.reported_order
        return [(a, b) for i, a in enumerate(rep) for b in rep[i + 1:] if pos[a] > pos[b]]

    @property
    def passed(self) -> bool:
        return self.totals_ok and self.rank_order_ok

    def lines(self) -> list[str]:
        rec_rank = {m: i for i, m in enumerate(self.recomputed_order, 1)}
        out = [f"{'model':<26}{'reported':>10}{'recomputed':>12}{'diff':>9}  rank  status"]
        for m in sorted(self.models, key=lambda m: m.reported_rank):
            status = "PASS" if m.within(self.tolerance) else "FAIL"
            out.append(f"{m.model_id:<26}{m.reported_total:>10.2f}{m.recomputed.total:>12.4f}"
                       f"{m.difference:>+9.4f}  {m.reported_rank:>2}/{rec_rank[m.model_id]:<2} {status}")
        n_ok = sum(m.within(self.tolerance) for m in self.models)
        out.append(f"totals within ±{self.tolerance:g}: {n_ok}/{len(self.models)}")
        if self.rank_order_ok:
            out.append("rank order: identical")
        else:
            pairs = ", ".join(f"{a} / {b}" for a, b in self.discordant_pairs())
            out.append(f"rank order: differs ({pairs})")
        return out


_GROUP_COL = re.compile(r"^(satisfy|surprise)_g(\d+)$")


def read_tables(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = {"model_id", "reported_rank", "reported_total"}
        if not required <= set(header):
            raise TableFormatError(f"missing column(s): {sorted(required - set(header))}")
        s_groups = sorted(int(m.group(2)) for c in header if (m := _GROUP_COL.match(c)) and m.group(1) == "satisfy")
        u_groups = sorted(int(m.group(2)) for c in header if (m := _GROUP_COL.match(c)) and m.group(1) == "surprise")
        if not s_groups or s_groups != u_groups:
            raise TableFormatError("satisfy_gN and surprise_gN columns must cover the same groups")
        rows = []
        for line, rec in enumerate(reader, 2):
            try:
                rows.append({
                    "model_id": rec["model_id"].strip(),
                    "reported_rank": int(rec["reported_rank"]),
                    "reported_total": float(rec["reported_total"]),
                    "satisfy": {g: float(rec[f"satisfy_g{g}"]) for g in s_groups},
                    "surprise": {g: float(rec[f"surprise_g{g}"]) for g in s_groups},
                })
            except (TypeError, ValueError) as exc:
                raise TableFormatError(f"line {line}: {exc}") from exc
    if not rows:
        raise TableFormatError("no model rows")
    return rows


def verify_paper(path: str | Path, tolerance: float = DEFAULT_TOLERANCE,
                 scheme: CompositeScheme = SCHEME_C1) -> PaperCheck:
    check = PaperCheck(tolerance)
    for row in read_tables(path):
        m = row["model_id"]
        scores = [group_score(m, g, row["satisfy"][g], row["surprise"][g], scheme) for g in row["satisfy"]]
        check.models.append(ModelCheck(m, row["reported_rank"], row["reported_total"], model_total(scores)))
    return check
