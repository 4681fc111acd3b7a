"""Pipeline-coverage metrics over expected-vs-produced item manifests.

Three channels mirror how information reaches the pipeline: ``structured``
(spreadsheet parameters; usage rate), ``pdf-text`` (document extraction;
pooled recall), and ``image`` (vision-derived geometry; completeness with a
breakdown into explicitly stated vs inferred attributes). Item identity is
the declared id string; nothing is fuzzy-matched.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass

__all__ = [
    "MetricsError",
    "EmptyExpected",
    "UncategorizedItem",
    "CoverageManifest",
    "CoverageResult",
    "IMAGE_CATEGORIES",
    "load_manifest",
    "usage_rate",
    "extraction_recall",
    "image_completeness",
    "summarize",
    "MetricsSummary",
]

CHANNELS = ("structured", "pdf-text", "image")
IMAGE_CATEGORIES = ("explicit-position", "inferred-position", "inferred-length")


class MetricsError(ValueError):
    pass


class EmptyExpected(MetricsError):
    pass


class UncategorizedItem(MetricsError):
    def __init__(self, item_id: str):
        self.item_id = item_id
        super().__init__(f"produced item {item_id!r} has no category")


@dataclass(frozen=True)
class CoverageManifest:
    case_id: str
    channel: str
    expected_items: tuple[str, ...]
    produced_items: tuple[str, ...]
    image_categories: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise MetricsError(f"unknown channel {self.channel!r}")
        for label, items in (("expected", self.expected_items),
                             ("produced", self.produced_items)):
            if len(set(items)) != len(items):
                raise MetricsError(f"duplicate {label} item ids in {self.case_id}")
        if self.image_categories and self.channel != "image":
            raise MetricsError("categories are only valid on the image channel")

    def categories(self) -> dict[str, str]:
        return dict(self.image_categories)


@dataclass(frozen=True)
class CoverageResult:
    case_id: str
    used_or_recovered: int
    expected: int
    missing: tuple[str, ...]
    extras: tuple[str, ...]
    category_counts: tuple[tuple[str, int], ...] = ()

    @property
    def rate(self) -> float:
        return self.used_or_recovered / self.expected

    def counts(self) -> dict[str, int]:
        return dict(self.category_counts)


def load_manifest(path_or_text) -> CoverageManifest:
    if isinstance(path_or_text, (str, pathlib.Path)) and \
            pathlib.Path(str(path_or_text)).exists():
        doc = json.loads(pathlib.Path(path_or_text).read_text(encoding="utf-8"))
    else:
        doc = json.loads(path_or_text)
    try:
        return CoverageManifest(
            case_id=str(doc["case"]),
            channel=str(doc["channel"]),
            expected_items=tuple(str(x) for x in doc["expected_items"]),
            produced_items=tuple(str(x) for x in doc["produced_items"]),
            image_categories=tuple(sorted(
                (str(k), str(v)) for k, v in doc.get("image_categories", {}).items())),
        )
    except KeyError as exc:
        raise MetricsError(f"manifest missing field {exc}") from exc


def _intersect(manifest: CoverageManifest):
    expected = set(manifest.expected_items)
    produced = set(manifest.produced_items)
    used = expected & produced
    missing = tuple(i for i in manifest.expected_items if i not in produced)
    extras = tuple(i for i in manifest.produced_items if i not in expected)
    return used, missing, extras


def usage_rate(manifest: CoverageManifest) -> CoverageResult:
    """Structured-channel usage: produced over expected parameter ids."""
    if manifest.channel != "structured":
        raise MetricsError("usage_rate applies to the structured channel")
    if not manifest.expected_items:
        raise EmptyExpected(manifest.case_id)
    used, missing, extras = _intersect(manifest)
    return CoverageResult(case_id=manifest.case_id, used_or_recovered=len(used),
                          expected=len(manifest.expected_items),
                          missing=missing, extras=extras)


def extraction_recall(manifests: list[CoverageManifest]) -> tuple[CoverageResult, list[CoverageResult]]:
    """Pooled pdf-text recall across cases, plus the per-case breakdown."""
    if not manifests:
        raise EmptyExpected("no manifests")
    per_case = []
    pooled_used = pooled_expected = 0
    pooled_missing: list[str] = []
    for manifest in manifests:
        if manifest.channel != "pdf-text":
            raise MetricsError("extraction_recall applies to the pdf-text channel")
        if not manifest.expected_items:
            raise EmptyExpected(manifest.case_id)
        used, missing, extras = _intersect(manifest)
        per_case.append(CoverageResult(
            case_id=manifest.case_id, used_or_recovered=len(used),
            expected=len(manifest.expected_items), missing=missing, extras=extras))
        pooled_used += len(used)
        pooled_expected += len(manifest.expected_items)
        pooled_missing += [f"{manifest.case_id}:{m}" for m in missing]
    pooled = CoverageResult(case_id="pooled", used_or_recovered=pooled_used,
                            expected=pooled_expected,
                            missing=tuple(pooled_missing), extras=())
    return pooled, per_case


def image_completeness(manifest: CoverageManifest) -> CoverageResult:
    """Image-channel completeness with per-category attribute counts."""
    if manifest.channel != "image":
        raise MetricsError("image_completeness applies to the image channel")
    if not manifest.expected_items:
        raise EmptyExpected(manifest.case_id)
    categories = manifest.categories()
    used, missing, extras = _intersect(manifest)
    counts = {c: 0 for c in IMAGE_CATEGORIES}
    for item in sorted(used):
        category = categories.get(item)
        if category is None:
            raise UncategorizedItem(item)
        if category not in IMAGE_CATEGORIES:
            raise MetricsError(f"unknown category {category!r} for item {item!r}")
        counts[category] += 1
    return CoverageResult(case_id=manifest.case_id, used_or_recovered=len(used),
                          expected=len(manifest.expected_items),
                          missing=missing, extras=extras,
                          category_counts=tuple(counts.items()))


# ---------------------------------------------------------------------------
# Three-panel summary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsSummary:
    structured: tuple[CoverageResult, ...]
    pdf_pooled: CoverageResult | None
    pdf_cases: tuple[CoverageResult, ...]
    image_pooled: CoverageResult | None
    image_cases: tuple[CoverageResult, ...]

    def to_json(self) -> str:
        def result_doc(r: CoverageResult) -> dict:
            doc = {"case": r.case_id, "used_or_recovered": r.used_or_recovered,
                   "expected": r.expected, "rate": r.rate,
                   "missing": list(r.missing), "extras": list(r.extras)}
            if r.category_counts:
                doc["category_counts"] = r.counts()
            return doc

        doc = {
            "structured_usage": [result_doc(r) for r in self.structured],
            "pdf_text_recall": {
                "pooled": result_doc(self.pdf_pooled) if self.pdf_pooled else None,
                "cases": [result_doc(r) for r in self.pdf_cases],
            },
            "image_completeness": {
                "pooled": result_doc(self.image_pooled) if self.image_pooled else None,
                "cases": [result_doc(r) for r in self.image_cases],
            },
        }
        return json.dumps(doc, indent=2)

    def to_table(self) -> str:
        lines = ["channel     case      used/expected   rate",
                 "----------  --------  --------------  ------"]

        def row(channel, r: CoverageResult):
            lines.append(f"{channel:<10}  {r.case_id:<8}  "
                         f"{r.used_or_recovered:>5}/{r.expected:<8}  "
                         f"{100 * r.rate:5.1f}%")

        for r in self.structured:
            row("structured", r)
        for r in self.pdf_cases:
            row("pdf-text", r)
        if self.pdf_pooled:
            row("pdf-text", self.pdf_pooled)
        for r in self.image_cases:
            row("image", r)
        if self.image_pooled:
            row("image", self.image_pooled)
        if self.image_pooled and self.image_pooled.category_counts:
            lines.append("")
            lines.append("image attribute categories (pooled): " + ", ".join(
                f"{name}={count}" for name, count in self.image_pooled.category_counts))
        return "\n".join(lines)


def summarize(manifests: list[CoverageManifest]) -> MetricsSummary:
    """Build the three-panel summary from a mixed list of manifests."""
    structured = [usage_rate(m) for m in manifests if m.channel == "structured"]
    pdf = [m for m in manifests if m.channel == "pdf-text"]
    image = [m for m in manifests if m.channel == "image"]

    pdf_pooled, pdf_cases = (None, [])
    if pdf:
        pdf_pooled, pdf_cases = extraction_recall(pdf)

    image_cases = [image_completeness(m) for m in image]
    image_pooled = None
    if image_cases:
        counts = {c: 0 for c in IMAGE_CATEGORIES}
        for r in image_cases:
            for name, count in r.category_counts:
                counts[name] += count
        image_pooled = CoverageResult(
            case_id="pooled",
            used_or_recovered=sum(r.used_or_recovered for r in image_cases),
            expected=sum(r.expected for r in image_cases),
            missing=tuple(f"{r.case_id}:{m}" for r in image_cases for m in r.missing),
            extras=(), category_counts=tuple(counts.items()))

    return MetricsSummary(structured=tuple(structured), pdf_pooled=pdf_pooled,
                          pdf_cases=tuple(pdf_cases), image_pooled=image_pooled,
                          image_cases=tuple(image_cases))
