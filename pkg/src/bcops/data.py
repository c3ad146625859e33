"""Data containers, deterministic fold splitting, synthetic generators and CSV I/O.

Labels are integer class ids 1..K; the id 0 is reserved for the outlier
class (written as the literal string "R" in CSV files). Outlier labels are
only legal in ground-truth test sets, never in training data.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

OUTLIER_ID = 0
OUTLIER_LABEL = "R"

_INT_RE = re.compile(r"[+-]?\d+")


class DataError(Exception):
    """Base class for data ingestion / validation errors."""


class EmptyCsvError(DataError):
    pass


class NonNumericCellError(DataError):
    pass


class MissingLabelColumnError(DataError):
    pass


def derive_seed(seed: int, *tags: int) -> int:
    """Derive a child seed from a root seed and integer tags.

    All randomness in the package flows from one root seed through this
    function, so runs are reproducible end to end.
    """
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1)[0])


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with optional class labels.

    features: (n, p) float64, all entries finite.
    labels:   optional (n,) int64 with values in {1..K} or OUTLIER_ID.
    class_count: K (>= 2 when labels are present; 0 for unlabeled data).

    n == 0 is tolerated so that class subsets of absent classes are
    representable; operations that cannot handle empty data check for it.
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    class_count: int = 0

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {feats.shape}")
        if feats.shape[1] < 1:
            raise DataError("features must have at least one column")
        if not np.all(np.isfinite(feats)):
            raise NonNumericCellError("features contain non-finite values")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labs = np.asarray(self.labels, dtype=np.int64).copy()
            if labs.shape != (feats.shape[0],):
                raise DataError("labels length does not match feature rows")
            if self.class_count < 2:
                raise DataError("labeled datasets need class_count >= 2")
            bad = (labs != OUTLIER_ID) & ((labs < 1) | (labs > self.class_count))
            if np.any(bad):
                raise DataError(f"labels outside 1..{self.class_count} (or outlier id)")
            labs.setflags(write=False)
            object.__setattr__(self, "labels", labs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def is_labeled(self) -> bool:
        return self.labels is not None

    def has_outliers(self) -> bool:
        return self.labels is not None and bool(np.any(self.labels == OUTLIER_ID))

    def classes(self) -> np.ndarray:
        """Class ids 1..K (independent of which ids actually occur)."""
        return np.arange(1, self.class_count + 1)


@dataclass(frozen=True)
class FoldSplit:
    """Assignment of every row to fold 1 or fold 2."""

    fold_of: np.ndarray
    seed: int

    def __post_init__(self):
        fo = np.asarray(self.fold_of, dtype=np.int8)
        if not np.all((fo == 1) | (fo == 2)):
            raise DataError("fold_of entries must be 1 or 2")
        if not (np.any(fo == 1) and np.any(fo == 2)):
            raise DataError("both folds must be non-empty")
        fo.setflags(write=False)
        object.__setattr__(self, "fold_of", fo)

    def indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.fold_of == fold)[0]


def split_half(dataset: Dataset, stratify: bool, seed: int) -> FoldSplit:
    """Randomly split rows ~50/50 into two folds.

    Stratified splits keep every class balanced across folds to within one
    sample and require at least two samples per occurring class.
    """
    n = dataset.n
    if n < 2:
        raise DataError("need at least 2 rows to split")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int8)
    if stratify:
        if dataset.labels is None:
            raise DataError("stratified split needs labels")
        labels = dataset.labels
        extra_to = 1
        for cls in np.unique(labels):
            rows = np.nonzero(labels == cls)[0]
            if rows.size < 2:
                raise DataError(f"class {cls} has < 2 samples, cannot stratify")
            rows = rng.permutation(rows)
            half = rows.size // 2
            n1 = half
            if rows.size % 2 == 1:
                # alternate which fold receives the odd sample
                n1 += 1 if extra_to == 1 else 0
                extra_to = 3 - extra_to
            fold_of[rows[:n1]] = 1
            fold_of[rows[n1:]] = 2
    else:
        perm = rng.permutation(n)
        n1 = n - n // 2
        fold_of[perm[:n1]] = 1
        fold_of[perm[n1:]] = 2
    return FoldSplit(fold_of=fold_of, seed=seed)


def subset(dataset: Dataset, rows: np.ndarray) -> Dataset:
    """Dataset restricted to the given row indices (order preserved)."""
    labs = dataset.labels[rows] if dataset.labels is not None else None
    return Dataset(dataset.features[rows], labs, dataset.class_count)


def class_subset(dataset: Dataset, k: int) -> Dataset:
    """Rows whose label equals k; empty result allowed."""
    if dataset.labels is None:
        raise DataError("class_subset needs a labeled dataset")
    return subset(dataset, np.nonzero(dataset.labels == k)[0])


# ---------------------------------------------------------------------------
# synthetic generators


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-mixture scenario: per-class per-dimension means and SDs,
    sample counts, and an optional outlier component present only in test."""

    class_means: tuple[tuple[float, ...], ...]
    class_sds: tuple[tuple[float, ...], ...]
    train_counts: tuple[int, ...]
    test_counts: tuple[int, ...]
    outlier_mean: tuple[float, ...] | None
    outlier_sd: tuple[float, ...] | None
    test_outlier_count: int
    seed: int

    def __post_init__(self):
        k = len(self.class_means)
        if k < 2:
            raise DataError("need at least 2 classes")
        dims = {len(m) for m in self.class_means} | {len(s) for s in self.class_sds}
        if self.outlier_mean is not None:
            dims |= {len(self.outlier_mean), len(self.outlier_sd or ())}
        if len(dims) != 1:
            raise DataError("inconsistent dimensions across components")
        if len(self.class_sds) != k or len(self.train_counts) != k or len(self.test_counts) != k:
            raise DataError("per-class fields must all have length K")
        if any(c < 0 for c in self.train_counts + self.test_counts) or self.test_outlier_count < 0:
            raise DataError("counts must be >= 0")
        all_sds = [s for sds in self.class_sds for s in sds]
        if self.outlier_sd is not None:
            all_sds += list(self.outlier_sd)
        if any(s <= 0 for s in all_sds):
            raise DataError("SDs must be > 0")

    @property
    def k(self) -> int:
        return len(self.class_means)

    @property
    def dim(self) -> int:
        return len(self.class_means[0])


def generate(spec: SyntheticSpec) -> tuple[Dataset, Dataset, np.ndarray]:
    """Draw (train, test, truth) from a SyntheticSpec.

    The test Dataset is unlabeled; truth carries its labels including
    OUTLIER_ID for outlier rows. Deterministic per spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    p = spec.dim

    def draw(count, mean, sd):
        return rng.standard_normal((count, p)) * np.asarray(sd) + np.asarray(mean)

    train_blocks, train_labels = [], []
    for k in range(spec.k):
        train_blocks.append(draw(spec.train_counts[k], spec.class_means[k], spec.class_sds[k]))
        train_labels.append(np.full(spec.train_counts[k], k + 1, dtype=np.int64))
    test_blocks, truth_parts = [], []
    for k in range(spec.k):
        test_blocks.append(draw(spec.test_counts[k], spec.class_means[k], spec.class_sds[k]))
        truth_parts.append(np.full(spec.test_counts[k], k + 1, dtype=np.int64))
    if spec.test_outlier_count:
        test_blocks.append(draw(spec.test_outlier_count, spec.outlier_mean, spec.outlier_sd))
        truth_parts.append(np.full(spec.test_outlier_count, OUTLIER_ID, dtype=np.int64))

    train = Dataset(np.vstack(train_blocks), np.concatenate(train_labels), spec.k)
    test = Dataset(np.vstack(test_blocks), None, 0)
    truth = np.concatenate(truth_parts)
    return train, test, truth


def paper_sim_spec(seed: int, class2_spread_as_variance: bool = False) -> SyntheticSpec:
    """The 10-dimensional two-class benchmark scenario.

    Class 1: x1 ~ N(0,1); class 2: x1 ~ N(3, 0.5) with 0.5 read as the SD
    (set class2_spread_as_variance for the variance reading); outliers:
    x2 ~ N(3,1); all remaining coordinates standard normal. 500 training
    samples per class; 500/500/500 test samples for class1/class2/outliers.
    """
    p = 10
    c2_sd = math.sqrt(0.5) if class2_spread_as_variance else 0.5
    mean1 = (0.0,) * p
    mean2 = (3.0,) + (0.0,) * (p - 1)
    sd1 = (1.0,) * p
    sd2 = (c2_sd,) + (1.0,) * (p - 1)
    out_mean = (0.0, 3.0) + (0.0,) * (p - 2)
    out_sd = (1.0,) * p
    return SyntheticSpec(
        class_means=(mean1, mean2),
        class_sds=(sd1, sd2),
        train_counts=(500, 500),
        test_counts=(500, 500),
        outlier_mean=out_mean,
        outlier_sd=out_sd,
        test_outlier_count=500,
        seed=seed,
    )


def generate_paper_sim(
    seed: int, class2_spread_as_variance: bool = False
) -> tuple[Dataset, Dataset, np.ndarray]:
    return generate(paper_sim_spec(seed, class2_spread_as_variance))


# ---------------------------------------------------------------------------
# CSV I/O


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCellError(f"row {row}, column {col}: non-numeric cell {text!r}") from None
    if not math.isfinite(value):
        raise NonNumericCellError(f"row {row}, column {col}: non-finite cell {text!r}")
    return value


def label_mapping(raw_labels: list[str]) -> dict[str, int]:
    """Map label strings to ids 1..K; OUTLIER_LABEL maps to OUTLIER_ID.

    Sorting is lexicographic, except that all-integer label sets sort
    numerically so that saved integer ids round-trip for K >= 10.
    """
    distinct = sorted(set(raw_labels) - {OUTLIER_LABEL})
    if distinct and all(_INT_RE.fullmatch(s) for s in distinct):
        distinct.sort(key=int)
    mapping = {s: i + 1 for i, s in enumerate(distinct)}
    mapping[OUTLIER_LABEL] = OUTLIER_ID
    return mapping


def load_csv(path: str | Path, label_column: str | None = None) -> Dataset:
    """Read a Dataset from a UTF-8 CSV with a header row.

    Lines starting with '#' are skipped (artifact files carry an embedded
    config comment). All non-label columns must be numeric; the label
    column, when named, holds class strings with "R" reserved for
    ground-truth outliers.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise EmptyCsvError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise EmptyCsvError(f"{path}: no data rows")
    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise MissingLabelColumnError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
    feat_cols = [j for j in range(len(header)) if j != label_idx]
    if not feat_cols:
        raise DataError(f"{path}: no feature columns")
    feats = np.empty((len(body), len(feat_cols)), dtype=np.float64)
    raw_labels: list[str] = []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        for jj, j in enumerate(feat_cols):
            feats[i, jj] = _parse_cell(row[j], i + 1, header[j])
        if label_idx is not None:
            raw_labels.append(row[label_idx])
    if label_idx is None:
        return Dataset(feats, None, 0)
    mapping = label_mapping(raw_labels)
    labels = np.array([mapping[s] for s in raw_labels], dtype=np.int64)
    k = len(mapping) - 1  # minus the reserved outlier entry
    if k < 2:
        raise DataError(f"{path}: need at least 2 distinct non-outlier labels, got {k}")
    return Dataset(feats, labels, k)


def save_csv(
    dataset: Dataset,
    path: str | Path,
    label_column: str = "label",
    truth: np.ndarray | None = None,
    header_comment: str | None = None,
) -> None:
    """Write a Dataset as CSV; floats use shortest round-trip repr.

    Labels (from the dataset or an explicit truth vector) are written as
    their integer ids, outliers as the literal "R", so load_csv restores
    the identical Dataset.
    """
    labels = truth if truth is not None else dataset.labels
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment is not None:
            fh.write("# " + header_comment + "\n")
        writer = csv.writer(fh)
        header = [f"x{j + 1}" for j in range(dataset.p)]
        if labels is not None:
            header.append(label_column)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            if labels is not None:
                lab = int(labels[i])
                row.append(OUTLIER_LABEL if lab == OUTLIER_ID else str(lab))
            writer.writerow(row)
