"""Benchmark protocol: comparison lists, scoring, and EER/DET computation.

Comparisons follow the session-disjoint rule: enrolment uses the first 1 or 4
genuine signatures of session 1, genuine tests come from later sessions,
skilled tests use all of the user's forgeries, and random tests take the first
session-1 genuine signature of every other user. Scores are dissimilarities
(higher = more impostor-like) for both verifiers, so one report pipeline
serves DTW and the trained scorer alike.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dtw import DEFAULT_COST_CHANNELS, apply_path, dtw_path, dtw_score
from .errors import ConfigurationError, TasignError
from .features import (
    ChannelId,
    TimeFunctionSet,
    extract_time_functions,
    normalize,
    zero_pressure_channels,
)
from .ingest import ComparisonSpec, DatasetManifest
from .network import DEFAULT_MAX_LEN, ModelParams, forward

IMPOSTOR_KINDS = ("skilled", "random")
POOLED_SECTION = "pooled"


@dataclass
class ProtocolConfig:
    train_signatures: int = 1
    impostor_kinds: tuple[str, ...] = IMPOSTOR_KINDS
    input_kind: str | None = None
    device: str | None = None
    scorer: str = "dtw_baseline"
    checkpoint: str | Path | None = None
    cost_channels: tuple[ChannelId, ...] = DEFAULT_COST_CHANNELS

    def __post_init__(self):
        if self.train_signatures not in (1, 4):
            raise ConfigurationError("train_signatures must be 1 or 4")
        if self.scorer not in ("dtw_baseline", "tarnn"):
            raise ConfigurationError(f"unknown scorer {self.scorer!r}")
        bad = [k for k in self.impostor_kinds if k not in IMPOSTOR_KINDS]
        if bad or not self.impostor_kinds:
            raise ConfigurationError(
                f"impostor kinds must be a non-empty subset of {IMPOSTOR_KINDS}"
            )

    def echo(self) -> dict:
        return {
            "scorer": self.scorer,
            "protocol": f"{self.train_signatures}vs1",
            "impostors": ",".join(self.impostor_kinds),
            "input": self.input_kind or "any",
            "device": self.device or "any",
            "cost_channels": ",".join(c.name for c in self.cost_channels),
            "checkpoint": str(self.checkpoint) if self.checkpoint else "-",
        }


class SignatureStore:
    """Lazily extracts and caches normalized time functions per path."""

    def __init__(self, manifest: DatasetManifest, zero_pressure: bool = False):
        self.manifest = manifest
        self.zero_pressure = zero_pressure
        self._cache: dict[str, TimeFunctionSet] = {}

    def timefns(self, file_path: str) -> TimeFunctionSet:
        tf = self._cache.get(file_path)
        if tf is None:
            tf = normalize(
                extract_time_functions(self.manifest.load_signature(file_path))
            )
            if self.zero_pressure:
                tf = zero_pressure_channels(tf)
            self._cache[file_path] = tf
        return tf


class DtwScorer:
    name = "dtw_baseline"

    def __init__(self, cost_channels: tuple[ChannelId, ...] = DEFAULT_COST_CHANNELS):
        self.cost_channels = cost_channels

    def score(self, tf_enrolled: TimeFunctionSet, tf_test: TimeFunctionSet) -> float:
        return dtw_score(tf_enrolled, tf_test, self.cost_channels)


class TarnnScorer:
    name = "tarnn"

    def __init__(
        self,
        params: ModelParams,
        max_len: int = DEFAULT_MAX_LEN,
        cost_channels: tuple[ChannelId, ...] = DEFAULT_COST_CHANNELS,
    ):
        self.params = params
        self.max_len = max_len
        self.cost_channels = cost_channels

    def score(self, tf_enrolled: TimeFunctionSet, tf_test: TimeFunctionSet) -> float:
        _, path = dtw_path(tf_enrolled, tf_test, self.cost_channels)
        pair = apply_path(tf_enrolled, tf_test, path)
        return forward(self.params, pair, self.max_len)


def build_comparisons(
    manifest: DatasetManifest, config: ProtocolConfig
) -> tuple[list[ComparisonSpec], list[str]]:
    """Comparison specs plus warning records for skipped users."""
    entries = [
        e
        for e in manifest.entries
        if (config.input_kind is None or e.input_kind == config.input_kind)
        and (config.device is None or e.device == config.device)
    ]
    users: list[str] = []
    for e in entries:
        if e.user_id not in users:
            users.append(e.user_id)
    if len(users) < 2:
        raise ConfigurationError("protocol needs at least 2 users after filtering")

    by_user = {u: [e for e in entries if e.user_id == u] for u in users}
    first_genuine = {}
    for u in users:
        session1 = [
            e.file_path
            for e in by_user[u]
            if e.label == "genuine" and e.session == 1
        ]
        if session1:
            first_genuine[u] = session1[0]

    specs: list[ComparisonSpec] = []
    warnings: list[str] = []
    for u in users:
        mine = by_user[u]
        session1 = [
            e.file_path for e in mine if e.label == "genuine" and e.session == 1
        ]
        if len(session1) < config.train_signatures:
            warnings.append(
                f"user {u}: only {len(session1)} session-1 genuine signatures, "
                f"need {config.train_signatures}; skipped"
            )
            continue
        enrolment = tuple(session1[: config.train_signatures])
        genuine_tests = [
            e.file_path for e in mine if e.label == "genuine" and e.session >= 2
        ]
        if not genuine_tests:
            warnings.append(f"user {u}: no genuine signatures after session 1; skipped")
            continue
        for t in genuine_tests:
            specs.append(ComparisonSpec(enrolment, t, "genuine"))
        for e in mine:
            if e.label == "skilled_forgery":
                specs.append(ComparisonSpec(enrolment, e.file_path, "skilled"))
        for w in users:
            if w != u and w in first_genuine:
                specs.append(ComparisonSpec(enrolment, first_genuine[w], "random"))
    return specs, warnings


def score_comparison(spec: ComparisonSpec, scorer, store: SignatureStore) -> float:
    """One-to-one dissimilarity, or the mean of the 4 one-to-one scores."""
    try:
        test_tf = store.timefns(spec.test_path)
        values = [
            scorer.score(store.timefns(enrol), test_tf)
            for enrol in spec.enrolment_paths
        ]
    except TasignError as exc:
        raise type(exc)(
            f"scoring {','.join(spec.enrolment_paths)} vs {spec.test_path}: {exc}"
        ) from exc
    return float(np.mean(values))


def compute_eer(genuine: np.ndarray, impostor: np.ndarray) -> tuple[float, float]:
    """Equal error rate over the pooled threshold sweep.

    Thresholds sweep the sorted union of scores; FNMR(t) is the fraction of
    genuine scores >= t and FMR(t) the fraction of impostor scores < t. The
    EER is (FNMR + FMR) / 2 at the threshold minimizing |FNMR - FMR|, with
    ties resolved toward the smallest threshold.
    """
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise ConfigurationError("compute_eer needs non-empty score lists")
    thresholds = np.unique(np.concatenate([genuine, impostor]))
    fnmr, fmr = _rates(genuine, impostor, thresholds)
    k = int(np.argmin(np.abs(fnmr - fmr)))
    return float((fnmr[k] + fmr[k]) / 2.0), float(thresholds[k])


def _rates(genuine, impostor, thresholds):
    g = np.sort(genuine)
    i = np.sort(impostor)
    fnmr = (g.size - np.searchsorted(g, thresholds, side="left")) / g.size
    fmr = np.searchsorted(i, thresholds, side="left") / i.size
    return fnmr, fmr


def det_points(genuine: np.ndarray, impostor: np.ndarray) -> np.ndarray:
    """(FMR, FNMR) pairs, one per threshold, in decreasing-threshold order.

    A sentinel threshold above the maximum score contributes the (1, 0)
    extreme, so single-valued score sets still yield both endpoints.
    """
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise ConfigurationError("det_points needs non-empty score lists")
    union = np.unique(np.concatenate([genuine, impostor]))
    thresholds = np.concatenate([[union[-1] + 1.0], union[::-1]])
    fnmr, fmr = _rates(genuine, impostor, thresholds)
    return np.column_stack([fmr, fnmr])


@dataclass
class ReportSection:
    kind: str
    eer: float
    threshold: float
    n_genuine: int
    n_impostor: int
    det: np.ndarray  # (K, 2) of (FMR, FNMR)


@dataclass
class EvaluationReport:
    config_echo: dict
    records: list[tuple[ComparisonSpec, float]]
    sections: dict[str, ReportSection]
    warnings: list[str] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for spec, _ in self.records:
            out[spec.kind] = out.get(spec.kind, 0) + 1
        return out


def sections_from_records(
    records: list[tuple[ComparisonSpec, float]],
    impostor_kinds: tuple[str, ...] = IMPOSTOR_KINDS,
) -> dict[str, ReportSection]:
    """Per-impostor-kind EER/DET sections plus the pooled-all section."""
    genuine = np.array([s for spec, s in records if spec.kind == "genuine"])
    if genuine.size == 0:
        raise ConfigurationError("no genuine comparisons to evaluate")
    sections: dict[str, ReportSection] = {}
    pooled: list[float] = []
    for kind in impostor_kinds:
        scores = np.array([s for spec, s in records if spec.kind == kind])
        if scores.size == 0:
            continue
        pooled.extend(scores.tolist())
        eer, threshold = compute_eer(genuine, scores)
        sections[kind] = ReportSection(
            kind=kind,
            eer=eer,
            threshold=threshold,
            n_genuine=int(genuine.size),
            n_impostor=int(scores.size),
            det=det_points(genuine, scores),
        )
    if not sections:
        raise ConfigurationError("no impostor comparisons to evaluate")
    pooled_arr = np.array(pooled)
    eer, threshold = compute_eer(genuine, pooled_arr)
    sections[POOLED_SECTION] = ReportSection(
        kind=POOLED_SECTION,
        eer=eer,
        threshold=threshold,
        n_genuine=int(genuine.size),
        n_impostor=int(pooled_arr.size),
        det=det_points(genuine, pooled_arr),
    )
    return sections


def make_scorer(config: ProtocolConfig):
    if config.scorer == "dtw_baseline":
        return DtwScorer(config.cost_channels)
    from .network import load_checkpoint

    if config.checkpoint is None:
        raise ConfigurationError("tarnn scorer needs a checkpoint path")
    params, ckpt_config = load_checkpoint(config.checkpoint)
    max_len = int(ckpt_config.get("max_len", DEFAULT_MAX_LEN))
    # Alignment must match training, so the checkpoint's channels win.
    channels = tuple(
        ChannelId[name] for name in ckpt_config.get("cost_channels", [])
    ) or config.cost_channels
    return TarnnScorer(params, max_len=max_len, cost_channels=channels)


def evaluate(
    manifest: DatasetManifest,
    config: ProtocolConfig,
    comparisons: list[ComparisonSpec] | None = None,
    jobs: int = 1,
) -> EvaluationReport:
    """Score every comparison and assemble the EER/DET report."""
    if comparisons is None:
        specs, warnings = build_comparisons(manifest, config)
    else:
        specs, warnings = list(comparisons), []
    if not specs:
        raise ConfigurationError("no comparisons to score")

    store = SignatureStore(manifest, zero_pressure=(config.input_kind == "finger"))
    scorer = make_scorer(config)
    for spec in specs:  # warm the cache serially; scoring itself is pure
        store.timefns(spec.test_path)
        for enrol in spec.enrolment_paths:
            store.timefns(enrol)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(lambda s: score_comparison(s, scorer, store), specs))
    else:
        scores = [score_comparison(s, scorer, store) for s in specs]

    records = list(zip(specs, scores))
    sections = sections_from_records(records, config.impostor_kinds)
    return EvaluationReport(
        config_echo=config.echo(),
        records=records,
        sections=sections,
        warnings=warnings,
    )
