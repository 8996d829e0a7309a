"""Signature file I/O, dataset manifests, comparison lists, and synthetic data.

File formats (all UTF-8, '\\n' line ends):

* Signature file: optional comment lines starting with '#', one header line
  holding the sample count T, then T body lines ``t x y p pen_down`` with five
  integer fields separated by single spaces.
* Manifest: one tab-separated line per entry,
  ``path<TAB>user<TAB>session<TAB>device<TAB>input<TAB>label``.
  Paths are relative to the manifest's directory.
* Comparison file: one line per comparison,
  ``enrol_1[,enrol_2,enrol_3,enrol_4] test kind`` with kind in
  {genuine, skilled, random}.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    ConsistencyError,
    DegenerateSignatureError,
    ManifestReferenceError,
    OrderingError,
    ParseError,
)

INPUT_KINDS = ("stylus", "finger")
LABELS = ("genuine", "skilled_forgery")
COMPARISON_KINDS = ("genuine", "skilled", "random")

SAMPLE_RATE_HZ = 100


@dataclass(frozen=True)
class PenSample:
    """One pen event: time in ms since the first sample, integer device units."""

    t: int
    x: int
    y: int
    p: int
    pen_down: bool


@dataclass
class RawSignature:
    samples: list[PenSample]
    user_id: str
    session: int
    device: str
    input_kind: str
    label: str

    @property
    def length(self) -> int:
        return len(self.samples)

    def meta(self) -> dict:
        """Copy of the identity/session metadata, without the samples."""
        return {
            "user_id": self.user_id,
            "session": self.session,
            "device": self.device,
            "input_kind": self.input_kind,
            "label": self.label,
        }


def validate_signature(sig: RawSignature) -> None:
    """Check the RawSignature invariants, raising on the first violation."""
    if sig.input_kind not in INPUT_KINDS:
        raise ParseError(f"unknown input kind {sig.input_kind!r}")
    if sig.label not in LABELS:
        raise ParseError(f"unknown label {sig.label!r}")
    if sig.session < 1:
        raise ParseError(f"session must be positive, got {sig.session}")
    pen_down_count = sum(1 for s in sig.samples if s.pen_down)
    if pen_down_count < 2:
        raise DegenerateSignatureError(
            f"need at least 2 pen-down samples, got {pen_down_count}"
        )
    prev_t = None
    for i, s in enumerate(sig.samples):
        if s.t < 0:
            raise OrderingError("negative timestamp", line=None)
        if prev_t is not None and s.t < prev_t:
            raise OrderingError(f"timestamp decreases at sample {i}")
        prev_t = s.t
        if s.p < 0:
            raise ParseError(f"negative pressure at sample {i}")
        if not s.pen_down and s.p != 0:
            raise ParseError(f"nonzero pressure on pen-up sample {i}")
        if sig.input_kind == "finger" and s.p != 0:
            raise ParseError(f"nonzero pressure in finger input at sample {i}")


@dataclass(frozen=True)
class ManifestEntry:
    file_path: str
    user_id: str
    session: int
    device: str
    input_kind: str
    label: str


@dataclass
class DatasetManifest:
    """Ordered dataset listing; file paths are resolved relative to ``root``."""

    entries: list[ManifestEntry]
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)
        seen = set()
        for e in self.entries:
            if e.file_path in seen:
                raise ConsistencyError(f"duplicate manifest path {e.file_path!r}")
            seen.add(e.file_path)
        self._by_path = {e.file_path: e for e in self.entries}

    def resolve(self, file_path: str) -> Path:
        return self.root / file_path

    def entry(self, file_path: str) -> ManifestEntry:
        try:
            return self._by_path[file_path]
        except KeyError:
            raise ManifestReferenceError(f"unknown path {file_path!r}") from None

    def __contains__(self, file_path: str) -> bool:
        return file_path in self._by_path

    def load_signature(self, file_path: str) -> RawSignature:
        entry = self.entry(file_path)
        content = self.resolve(file_path).read_text(encoding="utf-8")
        try:
            return parse_signature(content, entry)
        except ParseError as exc:
            raise type(exc)(f"{file_path}: {exc}") from exc

    def users(self) -> list[str]:
        """Distinct user ids in first-appearance order."""
        out: list[str] = []
        for e in self.entries:
            if e.user_id not in out:
                out.append(e.user_id)
        return out

    def entries_for(self, user_id: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.user_id == user_id]


@dataclass(frozen=True)
class ComparisonSpec:
    enrolment_paths: tuple[str, ...]
    test_path: str
    kind: str


def parse_signature(content: str | bytes, meta: ManifestEntry) -> RawSignature:
    """Parse signature file content using the manifest entry's metadata.

    Timestamps are re-based so the first sample has t = 0. Comment and blank
    lines are skipped; everything else must follow the format exactly.
    """
    if isinstance(content, bytes):
        content = content.decode("utf-8")
    numbered = [
        (i + 1, line.strip())
        for i, line in enumerate(content.split("\n"))
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not numbered:
        raise ParseError("empty signature file")
    header_line, header = numbered[0]
    try:
        count = int(header)
    except ValueError:
        raise ParseError(f"header is not an integer: {header!r}", header_line) from None
    body = numbered[1:]
    if len(body) != count:
        raise ParseError(
            f"header announces {count} samples but file has {len(body)} body lines"
        )

    samples: list[PenSample] = []
    prev_t = None
    for lineno, line in body:
        fields = line.split()
        if len(fields) != 5:
            raise ParseError(f"expected 5 fields, got {len(fields)}", lineno)
        try:
            t, x, y, p, pen = (int(f) for f in fields)
        except ValueError:
            raise ParseError(f"non-integer field in {line!r}", lineno) from None
        if pen not in (0, 1):
            raise ParseError(f"pen_down must be 0 or 1, got {pen}", lineno)
        if p < 0:
            raise ParseError(f"negative pressure {p}", lineno)
        if prev_t is not None and t < prev_t:
            raise OrderingError(f"timestamp {t} decreases", lineno)
        prev_t = t
        samples.append(PenSample(t=t, x=x, y=y, p=p, pen_down=bool(pen)))

    if samples:
        t0 = samples[0].t
        samples = [replace(s, t=s.t - t0) for s in samples]
    sig = RawSignature(
        samples=samples,
        user_id=meta.user_id,
        session=meta.session,
        device=meta.device,
        input_kind=meta.input_kind,
        label=meta.label,
    )
    validate_signature(sig)
    return sig


def write_signature(sig: RawSignature) -> str:
    """Serialize to the canonical text form; parse_signature inverts it exactly."""
    validate_signature(sig)
    lines = [str(len(sig.samples))]
    for s in sig.samples:
        lines.append(f"{s.t} {s.x} {s.y} {s.p} {1 if s.pen_down else 0}")
    return "\n".join(lines) + "\n"


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 6:
            raise ParseError(f"expected 6 tab-separated fields, got {len(fields)}", lineno)
        rel, user, session, device, input_kind, label = fields
        try:
            session_num = int(session)
        except ValueError:
            raise ParseError(f"session is not an integer: {session!r}", lineno) from None
        if input_kind not in INPUT_KINDS:
            raise ParseError(f"unknown input kind {input_kind!r}", lineno)
        if label not in LABELS:
            raise ParseError(f"unknown label {label!r}", lineno)
        entries.append(
            ManifestEntry(rel, user, session_num, device, input_kind, label)
        )
    manifest = DatasetManifest(entries=entries, root=path.parent)
    for e in entries:
        if not manifest.resolve(e.file_path).is_file():
            raise ManifestReferenceError(f"missing signature file {e.file_path!r}")
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [
        "\t".join(
            (e.file_path, e.user_id, str(e.session), e.device, e.input_kind, e.label)
        )
        for e in manifest.entries
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_comparisons(path: str | Path, manifest: DatasetManifest) -> list[ComparisonSpec]:
    """Read a comparison file, validating every referenced path against the manifest."""
    specs: list[ComparisonSpec] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ParseError(f"expected 3 fields, got {len(fields)}", lineno)
        enrol_field, test_path, kind = fields
        enrolment = tuple(enrol_field.split(","))
        if len(enrolment) not in (1, 4):
            raise ParseError(
                f"enrolment must list 1 or 4 paths, got {len(enrolment)}", lineno
            )
        if kind not in COMPARISON_KINDS:
            raise ParseError(f"unknown comparison kind {kind!r}", lineno)
        for p in (*enrolment, test_path):
            if p not in manifest:
                raise ManifestReferenceError(f"unknown path {p!r}", lineno)
        enrol_users = {manifest.entry(p).user_id for p in enrolment}
        if len(enrol_users) != 1:
            raise ConsistencyError(
                f"enrolment paths span users {sorted(enrol_users)}", lineno
            )
        enrol_user = next(iter(enrol_users))
        test_user = manifest.entry(test_path).user_id
        if kind == "genuine" and test_user != enrol_user:
            raise ConsistencyError(
                f"genuine comparison crosses users {enrol_user!r} -> {test_user!r}",
                lineno,
            )
        specs.append(ComparisonSpec(enrolment, test_path, kind))
    return specs


def write_comparisons(specs: list[ComparisonSpec], path: str | Path) -> None:
    lines = [
        f"{','.join(s.enrolment_paths)} {s.test_path} {s.kind}" for s in specs
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Synthetic dataset generation
# --------------------------------------------------------------------------

@dataclass
class SynthConfig:
    n_users: int = 10
    genuine_per_session: int = 4
    sessions: int = 2
    forgeries_per_user: int = 4
    seed: int = 0
    device: str = "synth"


@dataclass
class _UserBase:
    """Per-user trajectory model: sinusoid banks per axis plus a pressure bump."""

    freqs_x: np.ndarray
    amps_x: np.ndarray
    phases_x: np.ndarray
    freqs_y: np.ndarray
    amps_y: np.ndarray
    phases_y: np.ndarray
    n_samples: int
    press_freq: float
    press_phase: float
    gap: tuple[int, int] | None  # (start index, length) of a pen-up span


def _draw_user_base(rng: np.random.Generator, user_index: int) -> _UserBase:
    duration = rng.uniform(2.0, 6.0)
    n_samples = int(round(duration * SAMPLE_RATE_HZ))
    parts = {}
    for axis in ("x", "y"):
        k = int(rng.integers(3, 7))
        parts[f"freqs_{axis}"] = rng.uniform(0.3, 3.0, size=k)
        parts[f"amps_{axis}"] = rng.uniform(0.3, 1.0, size=k) / np.arange(1, k + 1)
        parts[f"phases_{axis}"] = rng.uniform(0.0, 2.0 * np.pi, size=k)
    press_freq = rng.uniform(0.5, 2.0)
    press_phase = rng.uniform(0.0, 2.0 * np.pi)
    gap = None
    if user_index % 2 == 0:
        gap_len = int(rng.integers(8, 17))
        start = int(rng.uniform(0.3, 0.7) * n_samples)
        gap = (start, gap_len)
    return _UserBase(n_samples=n_samples, press_freq=press_freq,
                     press_phase=press_phase, gap=gap, **parts)


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Moving average with reflected edges; output length equals input length."""
    half = window // 2
    padded = np.concatenate([values[half:0:-1], values, values[-2:-half - 2:-1]])
    kernel = np.full(window, 1.0 / window)
    return np.convolve(padded, kernel, mode="valid")


def _render_signature(
    base: _UserBase,
    session_offset: tuple[float, float],
    rng: np.random.Generator,
    forgery: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return (x, y, p, pen_down) arrays for one signature instance."""
    scale = 2.0 if forgery else 1.0
    warp = 1.0 + scale * rng.uniform(-0.05, 0.05)
    tau = np.arange(base.n_samples) / SAMPLE_RATE_HZ * warp

    def axis(freqs, amps, phases):
        amp_jitter = 1.0 + scale * rng.uniform(-0.05, 0.05, size=freqs.size)
        phase_jitter = scale * rng.uniform(-0.05, 0.05, size=freqs.size)
        terms = (amps * amp_jitter)[:, None] * np.sin(
            2.0 * np.pi * freqs[:, None] * tau[None, :]
            + (phases + phase_jitter)[:, None]
        )
        return terms.sum(axis=0)

    x = axis(base.freqs_x, base.amps_x, base.phases_x) + session_offset[0]
    y = axis(base.freqs_y, base.amps_y, base.phases_y) + session_offset[1]

    frac = np.arange(base.n_samples) / max(base.n_samples - 1, 1)
    envelope = np.sqrt(np.sin(np.pi * frac).clip(min=0.0))
    wobble = 0.15 * np.sin(2.0 * np.pi * base.press_freq * tau + base.press_phase)
    press = (envelope * (0.7 + wobble)) * (1.0 + scale * rng.uniform(-0.05, 0.05))

    if forgery:
        x = _smooth(x, 9)
        y = _smooth(y, 9)
        press = _smooth(press, 9)

    pen_down = np.ones(base.n_samples, dtype=bool)
    if base.gap is not None:
        start, length = base.gap
        pen_down[start : start + length] = False
    return x, y, press, pen_down


def _to_samples(x, y, press, pen_down) -> list[PenSample]:
    xi = np.round(x * 2000.0 + 8000.0).astype(np.int64)
    yi = np.round(y * 2000.0 + 8000.0).astype(np.int64)
    pi = np.clip(np.round(press * 900.0), 0, 1023).astype(np.int64)
    pi[~pen_down] = 0
    step = 1000 // SAMPLE_RATE_HZ
    return [
        PenSample(t=step * n, x=int(xi[n]), y=int(yi[n]), p=int(pi[n]),
                  pen_down=bool(pen_down[n]))
        for n in range(len(xi))
    ]


def synth_dataset(config: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write a deterministic synthetic corpus and its manifest to ``out_dir``.

    Genuine signatures jitter a per-user sinusoid base (amplitude within 5%,
    phase within 0.05 rad, global time-warp within 5%, per-session offset);
    skilled forgeries double the jitter magnitudes and smooth the trajectory.
    Identical (config, seed) produce byte-identical directory trees.
    """
    if config.n_users < 2:
        raise ConfigurationError("need at least 2 users")
    if config.genuine_per_session < 1 or config.sessions < 1:
        raise ConfigurationError("need at least 1 session with 1 genuine signature")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    user_seeds = np.random.SeedSequence(config.seed).spawn(config.n_users)
    entries: list[ManifestEntry] = []
    for u in range(config.n_users):
        rng = np.random.default_rng(user_seeds[u])
        user_id = f"u{u:03d}"
        base = _draw_user_base(rng, u)
        offsets = [
            (rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15))
            for _ in range(config.sessions)
        ]
        for session in range(1, config.sessions + 1):
            for g in range(1, config.genuine_per_session + 1):
                arrays = _render_signature(base, offsets[session - 1], rng, forgery=False)
                name = f"{user_id}_s{session}_g{g:02d}.txt"
                _write_synth_file(out / name, arrays, user_id, session, config, "genuine")
                entries.append(
                    ManifestEntry(name, user_id, session, config.device, "stylus", "genuine")
                )
        for f in range(1, config.forgeries_per_user + 1):
            session = (f - 1) % config.sessions + 1
            arrays = _render_signature(base, offsets[session - 1], rng, forgery=True)
            name = f"{user_id}_s{session}_f{f:02d}.txt"
            _write_synth_file(out / name, arrays, user_id, session, config, "skilled_forgery")
            entries.append(
                ManifestEntry(name, user_id, session, config.device, "stylus", "skilled_forgery")
            )

    manifest = DatasetManifest(entries=entries, root=out)
    write_manifest(manifest, out / "manifest.tsv")
    return manifest


def _write_synth_file(path, arrays, user_id, session, config, label) -> None:
    sig = RawSignature(
        samples=_to_samples(*arrays),
        user_id=user_id,
        session=session,
        device=config.device,
        input_kind="stylus",
        label=label,
    )
    path.write_text(write_signature(sig), encoding="utf-8")
