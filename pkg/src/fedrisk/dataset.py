"""OULAD ingestion, target definition, and feature engineering.

Reads the five standard CSV tables (studentInfo, studentVle, vle,
assessments, studentAssessment), defines the binary at-risk target
(Fail = 1, Pass/Distinction = 0, Withdrawn excluded), and builds three
feature families per (student, module, presentation) registration:

  * early academic performance: mean score and count of assessments
    submitted within the first ``window_days`` days (inclusive);
  * engagement volume: total clicks and distinct active days;
  * engagement quality: clicks split per VLE activity type.

Missing family entries are imputed with zero at assembly. A synthetic
corpus generator emits the same five tables with a class-conditional
mean shift (``signal_strength`` standard deviations) planted in scores
and click volume, for tests and desk-scale experiments.

Parsing conventions: values are trimmed, and empty strings or a literal
"?" count as missing. Rows violating intrinsic invariants (negative
sum_click, score outside [0, 100], missing key fields) are skipped and
counted in the load diagnostics; rows whose foreign keys do not resolve
are counted there too but kept, since the feature operations have
defined fallbacks for them (the "unknown" activity bucket, skipping
submissions to unknown assessments).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)

STUDENT_INFO_FILE = "studentInfo.csv"
STUDENT_VLE_FILE = "studentVle.csv"
VLE_FILE = "vle.csv"
ASSESSMENTS_FILE = "assessments.csv"
STUDENT_ASSESSMENT_FILE = "studentAssessment.csv"

OULAD_FILES = (
    STUDENT_INFO_FILE,
    STUDENT_VLE_FILE,
    VLE_FILE,
    ASSESSMENTS_FILE,
    STUDENT_ASSESSMENT_FILE,
)

KEY_COLUMNS = ["id_student", "code_module", "code_presentation"]
DEMOGRAPHIC_COLUMNS = (
    "gender",
    "region",
    "highest_education",
    "imd_band",
    "age_band",
    "disability",
)
BASE_FEATURES = (
    "average_early_score",
    "early_assessments_count",
    "total_clicks",
    "distinct_days_active",
)
UNKNOWN_ACTIVITY = "unknown"

FINAL_RESULTS = ("Pass", "Distinction", "Fail", "Withdrawn")
AT_RISK_RESULT = "Fail"
EXCLUDED_RESULT = "Withdrawn"

_REQUIRED_COLUMNS = {
    "student_info": ["code_module", "code_presentation", "id_student", "final_result"],
    "student_vle": ["code_module", "code_presentation", "id_student", "id_site", "date", "sum_click"],
    "vle": ["id_site", "activity_type"],
    "assessments": ["code_module", "code_presentation", "id_assessment", "date"],
    "student_assessment": ["id_assessment", "id_student", "date_submitted", "score"],
}


@dataclass(frozen=True, order=True)
class RegistrationKey:
    id_student: int
    code_module: str
    code_presentation: str


@dataclass
class LoadDiagnostics:
    """Counts of skipped or flagged rows, per table and reason."""

    skipped: dict = field(default_factory=dict)

    def add(self, table: str, reason: str, count: int) -> None:
        if count:
            per_table = self.skipped.setdefault(table, {})
            per_table[reason] = per_table.get(reason, 0) + int(count)

    def total(self) -> int:
        return sum(sum(reasons.values()) for reasons in self.skipped.values())


@dataclass
class RawTables:
    student_info: pd.DataFrame
    student_vle: pd.DataFrame
    vle_meta: pd.DataFrame
    assessments_meta: pd.DataFrame
    student_assessment: pd.DataFrame
    diagnostics: LoadDiagnostics = field(default_factory=LoadDiagnostics)


@dataclass
class ActivityClicks:
    """Per-registration click counts per activity type.

    ``activity_types`` is the full column universe: every type named in
    the VLE metadata plus "unknown" when unmapped clicks occurred.
    """

    per_registration: dict
    activity_types: tuple


@dataclass
class LabeledDataset:
    feature_names: list
    X: np.ndarray
    y: np.ndarray
    keys: list

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def positive_fraction(self) -> float:
        return float(np.mean(self.y == 1)) if len(self) else 0.0

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            feature_names=list(self.feature_names),
            X=self.X[indices].copy(),
            y=self.y[indices].copy(),
            keys=[self.keys[i] for i in indices],
        )


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_modules: int = 7
    students_per_module: int = 300
    fail_rate: float = 0.3
    signal_strength: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.n_modules < 1 or self.n_modules > 26:
            raise ConfigError(f"n_modules must be in [1, 26], got {self.n_modules}")
        if self.students_per_module < 10:
            raise ConfigError(
                f"students_per_module must be >= 10, got {self.students_per_module}"
            )
        if not 0 < self.fail_rate < 1:
            raise ConfigError(f"fail_rate must lie in (0, 1), got {self.fail_rate}")
        if self.signal_strength < 0:
            raise ConfigError(f"signal_strength must be >= 0, got {self.signal_strength}")


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _strip_strings(df: pd.DataFrame) -> pd.DataFrame:
    for col in df.columns:
        if df[col].dtype == object:
            stripped = df[col].str.strip()
            df[col] = stripped.mask(stripped == "")
    return df


def _read_table(directory: Path, filename: str, table: str) -> pd.DataFrame:
    path = directory / filename
    if not path.is_file():
        raise DatasetError(f"missing required file: {path}")
    df = pd.read_csv(path, na_values=["?"])
    missing = [c for c in _REQUIRED_COLUMNS[table] if c not in df.columns]
    if missing:
        raise DatasetError(f"table {filename}: missing column(s) {', '.join(missing)}")
    return _strip_strings(df)


def _coerce_numeric(df: pd.DataFrame, columns) -> pd.DataFrame:
    for col in columns:
        if not pd.api.types.is_numeric_dtype(df[col]):
            df[col] = pd.to_numeric(df[col], errors="coerce")
    return df


def _drop(df: pd.DataFrame, mask, diags: LoadDiagnostics, table: str, reason: str):
    n_bad = int(mask.sum())
    if n_bad:
        diags.add(table, reason, n_bad)
        df = df[~mask]
    return df


def load_oulad(directory) -> RawTables:
    """Load the five OULAD CSV tables from ``directory``.

    Unusable rows are skipped and tallied in the returned diagnostics;
    a missing file or a missing required column is fatal.
    """
    directory = Path(directory)
    diags = LoadDiagnostics()

    info = _read_table(directory, STUDENT_INFO_FILE, "student_info")
    info = _coerce_numeric(info, ["id_student"])
    bad_key = info["id_student"].isna() | info["code_module"].isna() | info["code_presentation"].isna()
    info = _drop(info, bad_key, diags, "student_info", "missing_key_field")
    info = _drop(info, info["final_result"].isna(), diags, "student_info", "missing_final_result")
    info = info.astype({"id_student": np.int64})
    if info.duplicated(subset=KEY_COLUMNS).any():
        dup = info[info.duplicated(subset=KEY_COLUMNS)].iloc[0]
        raise DatasetError(
            "duplicate registration in studentInfo.csv: "
            f"({dup['id_student']}, {dup['code_module']}, {dup['code_presentation']})"
        )

    vle = _read_table(directory, VLE_FILE, "vle")
    vle = _coerce_numeric(vle, ["id_site"])
    vle = _drop(
        vle,
        vle["id_site"].isna() | vle["activity_type"].isna(),
        diags,
        "vle",
        "missing_field",
    )
    dup_sites = vle.duplicated(subset=["id_site"])
    vle = _drop(vle, dup_sites, diags, "vle", "duplicate_id_site")
    vle = vle.astype({"id_site": np.int64})

    svle = _read_table(directory, STUDENT_VLE_FILE, "student_vle")
    svle = _coerce_numeric(svle, ["id_student", "id_site", "date", "sum_click"])
    bad_key = (
        svle["id_student"].isna()
        | svle["code_module"].isna()
        | svle["code_presentation"].isna()
        | svle["id_site"].isna()
    )
    svle = _drop(svle, bad_key, diags, "student_vle", "missing_key_field")
    svle = _drop(svle, svle["date"].isna(), diags, "student_vle", "invalid_date")
    svle = _drop(
        svle,
        svle["sum_click"].isna() | (svle["sum_click"] < 0),
        diags,
        "student_vle",
        "invalid_sum_click",
    )
    svle = svle.astype({"id_student": np.int64, "id_site": np.int64, "date": np.int64, "sum_click": np.int64})
    unresolved_sites = ~svle["id_site"].isin(vle["id_site"])
    diags.add("student_vle", "unresolved_id_site", int(unresolved_sites.sum()))

    assess = _read_table(directory, ASSESSMENTS_FILE, "assessments")
    assess = _coerce_numeric(assess, ["id_assessment", "date"])
    assess = _drop(
        assess,
        assess["id_assessment"].isna() | assess["code_module"].isna() | assess["code_presentation"].isna(),
        diags,
        "assessments",
        "missing_key_field",
    )
    dup_assess = assess.duplicated(subset=["id_assessment"])
    assess = _drop(assess, dup_assess, diags, "assessments", "duplicate_id_assessment")
    assess = assess.astype({"id_assessment": np.int64})

    sassess = _read_table(directory, STUDENT_ASSESSMENT_FILE, "student_assessment")
    sassess = _coerce_numeric(sassess, ["id_assessment", "id_student", "date_submitted", "score"])
    sassess = _drop(
        sassess,
        sassess["id_assessment"].isna() | sassess["id_student"].isna(),
        diags,
        "student_assessment",
        "missing_key_field",
    )
    sassess = _drop(sassess, sassess["score"].isna(), diags, "student_assessment", "missing_score")
    sassess = _drop(
        sassess,
        (sassess["score"] < 0) | (sassess["score"] > 100),
        diags,
        "student_assessment",
        "score_out_of_range",
    )
    sassess = sassess.astype({"id_assessment": np.int64, "id_student": np.int64})
    unresolved_assess = ~sassess["id_assessment"].isin(assess["id_assessment"])
    diags.add("student_assessment", "unresolved_id_assessment", int(unresolved_assess.sum()))

    if diags.total():
        logger.info("load_oulad skipped/flagged rows: %s", diags.skipped)
    return RawTables(
        student_info=info.reset_index(drop=True),
        student_vle=svle.reset_index(drop=True),
        vle_meta=vle.reset_index(drop=True),
        assessments_meta=assess.reset_index(drop=True),
        student_assessment=sassess.reset_index(drop=True),
        diagnostics=diags,
    )


def write_corpus(tables: RawTables, directory) -> None:
    """Write the five tables as canonical OULAD-format CSV files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tables.student_info.to_csv(directory / STUDENT_INFO_FILE, index=False)
    tables.student_vle.to_csv(directory / STUDENT_VLE_FILE, index=False)
    tables.vle_meta.to_csv(directory / VLE_FILE, index=False)
    tables.assessments_meta.to_csv(directory / ASSESSMENTS_FILE, index=False)
    tables.student_assessment.to_csv(directory / STUDENT_ASSESSMENT_FILE, index=False)


# ---------------------------------------------------------------------------
# target and feature families
# ---------------------------------------------------------------------------


def _keys_of(df: pd.DataFrame):
    return [
        RegistrationKey(int(s), str(m), str(p))
        for s, m, p in zip(df["id_student"], df["code_module"], df["code_presentation"])
    ]


def label_students(student_info: pd.DataFrame) -> dict:
    """Map each registration to its binary at-risk label.

    Fail maps to 1, Pass and Distinction to 0; Withdrawn registrations
    are excluded from the map entirely.
    """
    results = student_info["final_result"].astype(str).str.strip()
    unknown = ~results.isin(FINAL_RESULTS)
    if unknown.any():
        value = results[unknown].iloc[0]
        raise DatasetError(f"unknown final_result value: {value!r}")
    labels = {}
    for key, result in zip(_keys_of(student_info), results):
        if result == EXCLUDED_RESULT:
            continue
        labels[key] = 1 if result == AT_RISK_RESULT else 0
    return labels


def early_performance_features(
    assessments_meta: pd.DataFrame,
    student_assessment: pd.DataFrame,
    window_days: int = 90,
) -> dict:
    """Mean score and count of assessments submitted by day ``window_days``.

    The submission day is date_submitted, falling back to the assessment
    deadline when absent; rows with neither, or referencing an unknown
    assessment, are skipped. The boundary is inclusive. Registrations
    with no early submissions are absent (imputed later).
    """
    if window_days <= 0:
        raise ConfigError(f"window_days must be positive, got {window_days}")
    if len(student_assessment) == 0:
        return {}
    meta = assessments_meta[["id_assessment", "code_module", "code_presentation", "date"]]
    merged = student_assessment.merge(
        meta, on="id_assessment", how="inner", suffixes=("", "_deadline")
    )
    n_unknown = len(student_assessment) - len(merged)
    if n_unknown:
        logger.warning(
            "early_performance_features: skipped %d submission(s) referencing unknown assessments",
            n_unknown,
        )
    deadline = merged["date_deadline"] if "date_deadline" in merged.columns else merged["date"]
    day = merged["date_submitted"].fillna(deadline)
    n_undated = int(day.isna().sum())
    if n_undated:
        logger.warning(
            "early_performance_features: skipped %d submission(s) with no usable date",
            n_undated,
        )
    early = merged[day.notna() & (day <= window_days)]
    if len(early) == 0:
        return {}
    grouped = early.groupby(KEY_COLUMNS)["score"].agg(["mean", "size"])
    return {
        RegistrationKey(int(s), str(m), str(p)): (float(row_mean), int(row_size))
        for (s, m, p), row_mean, row_size in zip(
            grouped.index, grouped["mean"], grouped["size"]
        )
    }


def engagement_volume_features(student_vle: pd.DataFrame) -> dict:
    """Total clicks and number of distinct active days per registration."""
    if len(student_vle) == 0:
        return {}
    grouped = student_vle.groupby(KEY_COLUMNS).agg(
        total_clicks=("sum_click", "sum"), distinct_days=("date", "nunique")
    )
    return {
        RegistrationKey(int(s), str(m), str(p)): (int(total), int(days))
        for (s, m, p), total, days in zip(
            grouped.index, grouped["total_clicks"], grouped["distinct_days"]
        )
    }


def engagement_quality_features(
    student_vle: pd.DataFrame, vle_meta: pd.DataFrame
) -> ActivityClicks:
    """Clicks per activity type per registration.

    Clicks on sites absent from the VLE metadata accumulate under the
    reserved "unknown" type.
    """
    meta_types = sorted(set(vle_meta["activity_type"].dropna().astype(str)))
    if len(student_vle) == 0:
        return ActivityClicks(per_registration={}, activity_types=tuple(meta_types))
    meta = vle_meta[["id_site", "activity_type"]].drop_duplicates(subset=["id_site"])
    merged = student_vle.merge(meta, on="id_site", how="left")
    merged["activity_type"] = merged["activity_type"].fillna(UNKNOWN_ACTIVITY)
    grouped = merged.groupby(KEY_COLUMNS + ["activity_type"])["sum_click"].sum()

    per_registration: dict = {}
    saw_unknown = False
    for (s, m, p, activity), clicks in grouped.items():
        key = RegistrationKey(int(s), str(m), str(p))
        per_registration.setdefault(key, {})[str(activity)] = int(clicks)
        if activity == UNKNOWN_ACTIVITY:
            saw_unknown = True
    types = set(meta_types) | ({UNKNOWN_ACTIVITY} if saw_unknown else set())
    return ActivityClicks(per_registration=per_registration, activity_types=tuple(sorted(types)))


def _one_hot_demographics(student_info: pd.DataFrame):
    """Per-registration one-hot encodings of the demographic columns."""
    present = [c for c in DEMOGRAPHIC_COLUMNS if c in student_info.columns]
    names = []
    for col in present:
        values = student_info[col].fillna("missing").astype(str)
        names.extend(f"{col}={cat}" for cat in sorted(values.unique()))
    encoded: dict = {}
    for idx, key in enumerate(_keys_of(student_info)):
        row = {}
        for col in present:
            value = student_info[col].iloc[idx]
            cat = "missing" if pd.isna(value) else str(value)
            row[f"{col}={cat}"] = 1.0
        encoded[key] = row
    return sorted(names), encoded


def assemble_dataset(
    labels: dict,
    early_perf: dict,
    volume: dict,
    quality,
    demographics: pd.DataFrame | None = None,
) -> LabeledDataset:
    """Merge the feature families into one dense labeled matrix.

    One row per labeled registration (rows ordered by module,
    presentation, then student id); absent family entries become zero.
    Columns are the four base features followed by one
    ``clicks_on_<activity_type>`` column per activity type in
    lexicographic order, then optional demographic one-hots.
    """
    if not labels:
        raise DatasetError("labels map is empty; nothing to assemble")
    if isinstance(quality, ActivityClicks):
        per_reg = quality.per_registration
        types = set(quality.activity_types)
    else:
        per_reg = quality
        types = set()
    for row in per_reg.values():
        types.update(row)
    type_order = sorted(types)

    feature_names = list(BASE_FEATURES) + [f"clicks_on_{t}" for t in type_order]
    demo_names: list = []
    demo_rows: dict = {}
    if demographics is not None:
        demo_names, demo_rows = _one_hot_demographics(demographics)
        feature_names.extend(demo_names)

    keys = sorted(labels, key=lambda k: (k.code_module, k.code_presentation, k.id_student))
    X = np.zeros((len(keys), len(feature_names)))
    y = np.empty(len(keys), dtype=np.int64)
    for i, key in enumerate(keys):
        avg, count = early_perf.get(key, (0.0, 0))
        clicks, days = volume.get(key, (0, 0))
        X[i, 0] = avg
        X[i, 1] = count
        X[i, 2] = clicks
        X[i, 3] = days
        by_activity = per_reg.get(key)
        if by_activity:
            for j, t in enumerate(type_order):
                X[i, 4 + j] = by_activity.get(t, 0)
        if demo_names:
            row = demo_rows.get(key)
            if row:
                base = 4 + len(type_order)
                for j, name in enumerate(demo_names):
                    X[i, base + j] = row.get(name, 0.0)
        y[i] = labels[key]
    return LabeledDataset(feature_names=feature_names, X=X, y=y, keys=keys)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_ACTIVITY_CYCLE = ("forum", "homepage", "oucontent", "quiz", "resource", "subpage", "url")
_PRESENTATION = "2014J"
_DURATION_DAYS = 220
_DEADLINES = (15, 40, 65, 110, 150, 190)
_SITES_PER_MODULE = 8
_WITHDRAWN_RATE = 0.1
_SCORE_MEAN, _SCORE_STD = 68.0, 14.0
_DAYS_MEAN, _DAYS_STD = 30.0, 8.0
_SUBMIT_PROB = 0.85

_GENDERS = ("F", "M")
_AGE_BANDS = ("0-35", "35-55", "55<=")
_EDUCATIONS = ("A Level or Equivalent", "HE Qualification", "Lower Than A Level")
_REGIONS = ("East Anglian Region", "London Region", "North Region", "Scotland")
_IMD_BANDS = ("0-10%", "20-30%", "50-60%", "90-100%")
_DISABILITY = ("N", "Y")


def generate_synthetic_corpus(cfg: SyntheticCorpusConfig) -> RawTables:
    """Emit an internally consistent OULAD-shaped five-table corpus.

    At-risk students' early scores and click volume are shifted down by
    ``signal_strength`` standard deviations; ``signal_strength == 0``
    plants no class signal at all. Byte-identical for identical config.
    """
    rng = np.random.default_rng(cfg.seed)
    modules = [chr(ord("A") + i) * 3 for i in range(cfg.n_modules)]

    vle_rows = []
    assess_rows = []
    site_ids = {}
    assessment_ids = {}
    next_site, next_assessment = 20000, 30000
    for module in modules:
        sites = []
        for s in range(_SITES_PER_MODULE):
            sites.append(next_site)
            vle_rows.append(
                {
                    "id_site": next_site,
                    "code_module": module,
                    "code_presentation": _PRESENTATION,
                    "activity_type": _ACTIVITY_CYCLE[s % len(_ACTIVITY_CYCLE)],
                }
            )
            next_site += 1
        site_ids[module] = sites
        ids = []
        for deadline in _DEADLINES:
            ids.append(next_assessment)
            assess_rows.append(
                {
                    "code_module": module,
                    "code_presentation": _PRESENTATION,
                    "id_assessment": next_assessment,
                    "date": deadline,
                }
            )
            next_assessment += 1
        assessment_ids[module] = ids

    info_rows = []
    svle_rows = []
    sassess_rows = []
    student_id = 100000
    for module in modules:
        for _ in range(cfg.students_per_module):
            student_id += 1
            if rng.random() < _WITHDRAWN_RATE:
                final_result = "Withdrawn"
            elif rng.random() < cfg.fail_rate:
                final_result = "Fail"
            else:
                final_result = "Pass" if rng.random() < 0.75 else "Distinction"
            at_risk = final_result == "Fail"
            shift = cfg.signal_strength if at_risk else 0.0

            info_rows.append(
                {
                    "code_module": module,
                    "code_presentation": _PRESENTATION,
                    "id_student": student_id,
                    "gender": _GENDERS[rng.integers(len(_GENDERS))],
                    "region": _REGIONS[rng.integers(len(_REGIONS))],
                    "highest_education": _EDUCATIONS[rng.integers(len(_EDUCATIONS))],
                    "imd_band": _IMD_BANDS[rng.integers(len(_IMD_BANDS))],
                    "age_band": _AGE_BANDS[rng.integers(len(_AGE_BANDS))],
                    "disability": _DISABILITY[rng.integers(len(_DISABILITY))],
                    "final_result": final_result,
                }
            )

            score_mu = _SCORE_MEAN - shift * _SCORE_STD
            for assessment_id, deadline in zip(assessment_ids[module], _DEADLINES):
                if rng.random() < _SUBMIT_PROB:
                    sassess_rows.append(
                        {
                            "id_assessment": assessment_id,
                            "id_student": student_id,
                            "date_submitted": max(0, deadline - int(rng.integers(0, 6))),
                            "score": int(np.clip(round(rng.normal(score_mu, _SCORE_STD)), 0, 100)),
                        }
                    )

            days_mu = _DAYS_MEAN - shift * _DAYS_STD
            n_days = int(np.clip(round(rng.normal(days_mu, _DAYS_STD)), 1, _DURATION_DAYS))
            active_days = rng.choice(_DURATION_DAYS + 1, size=n_days, replace=False)
            for day in sorted(int(x) for x in active_days):
                n_sites = int(rng.integers(1, 4))
                day_sites = rng.choice(site_ids[module], size=n_sites, replace=False)
                for site in sorted(int(x) for x in day_sites):
                    svle_rows.append(
                        {
                            "code_module": module,
                            "code_presentation": _PRESENTATION,
                            "id_student": student_id,
                            "id_site": site,
                            "date": day,
                            "sum_click": 1 + int(rng.poisson(2.0)),
                        }
                    )

    return RawTables(
        student_info=pd.DataFrame(info_rows),
        student_vle=pd.DataFrame(svle_rows),
        vle_meta=pd.DataFrame(vle_rows),
        assessments_meta=pd.DataFrame(assess_rows),
        student_assessment=pd.DataFrame(sassess_rows),
        diagnostics=LoadDiagnostics(),
    )


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def summarize_demographics(student_info: pd.DataFrame) -> pd.DataFrame:
    """Counts and percentages per category for each demographic column."""
    rows = []
    present = [c for c in DEMOGRAPHIC_COLUMNS if c in student_info.columns]
    total = len(student_info)
    for col in present:
        if total == 0:
            continue
        values = student_info[col].fillna("missing").astype(str)
        counts = values.value_counts()
        for category in sorted(counts.index):
            count = int(counts[category])
            rows.append(
                {
                    "column": col,
                    "category": category,
                    "count": count,
                    "percentage": 100.0 * count / total,
                }
            )
    return pd.DataFrame(rows, columns=["column", "category", "count", "percentage"])
