"""The evolving augmentation pool loop.

One iteration fits the segmenter on pool-augmented training pairs, evaluates
it on the test manifests, draws a small share of the failures and tries each
candidate augmentation on them (pseudo re-adaptation: the failures are
augmented and re-run through the *current* model, no refit). Candidates that
raise both crop and classification accuracy by more than ``epsilon`` and do
not hurt the frozen reference adapter qualify; the best one joins the pool
and the next iteration refits with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .augment import AugmentationMethod, AugmentationPool, apply, apply_pipeline, default_pool
from .classify import StubClassifier, StubClassifierConfig, fit_on_samples
from .core import Sample, derive_seed, dump_json, load_manifest, parallel_map
from .errors import AMRFError, ConfigError, PipelineError, StaleVerdicts
from .metrics import (
    CLS_SCOPES,
    EvaluationReport,
    ScreeningThresholds,
    evaluate_samples,
    load_manifest_samples,
    merge_reports,
)
from .segment import segmenter_from_json

DEFAULT_CANDIDATES = (
    AugmentationMethod("GaussianBlur", 1, 11),
    AugmentationMethod("Contrast", 0.1, 1.5),
    AugmentationMethod("Zoom", 0.5, 2.0),
)
ADMIT_MODES = ("best", "all")


# ---------------------------------------------------------------------------
# Candidates and verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateSpec:
    """A new augmentation kind, or a strictly wider range for a pooled kind."""

    method: AugmentationMethod

    @property
    def kind(self) -> str:
        return self.method.kind

    @property
    def label(self) -> str:
        return f"{self.kind}[{self.method.min:g}, {self.method.max:g}]"

    def valid_for(self, pool: AugmentationPool) -> bool:
        current = pool.get(self.kind)
        if current is None:
            return True
        return self.method.covers(current) and self.method != current

    def is_expansion(self, pool: AugmentationPool) -> bool:
        return pool.get(self.kind) is not None

    def to_json(self) -> dict:
        return self.method.to_json()


@dataclass(frozen=True)
class CandidateVerdict:
    candidate: CandidateSpec
    pool_version: int
    baseline: tuple  # (crop_acc, cls_acc) on the un-augmented selection
    with_candidate: tuple  # (crop_acc, cls_acc) over all augmented variants
    qualified: bool
    reference_baseline: float = 100.0  # reference pass rate, percent
    reference_with: float = 100.0
    reference_ok: bool = True
    variants: int = 0

    @property
    def margin(self) -> tuple:
        return (self.with_candidate[0] - self.baseline[0], self.with_candidate[1] - self.baseline[1])

    def to_json(self) -> dict:
        d_crop, d_cls = self.margin
        return {
            "candidate": self.candidate.to_json(),
            "pool_version": self.pool_version,
            "baseline": list(self.baseline),
            "with_candidate": list(self.with_candidate),
            "margin": [d_crop, d_cls],
            "reference_baseline": self.reference_baseline,
            "reference_with": self.reference_with,
            "reference_ok": self.reference_ok,
            "qualified": self.qualified,
            "variants": self.variants,
        }


def qualify(baseline: Sequence[float], with_candidate: Sequence[float], epsilon: float,
            reference_ok: bool = True) -> bool:
    """Both margins strictly above ``epsilon`` and the reference not degraded."""
    d_crop = with_candidate[0] - baseline[0]
    d_cls = with_candidate[1] - baseline[1]
    return bool(reference_ok and d_crop > epsilon and d_cls > epsilon)


def select_failures(failure_ids: Sequence[str], fraction: float, seed: int) -> tuple:
    """``ceil(fraction * n)`` ids drawn uniformly without replacement (at least one)."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    ids = sorted(set(failure_ids))
    if not ids:
        return ()
    # The small slack keeps e.g. 0.05 * 40 from rounding up to 3.
    n = min(len(ids), max(1, math.ceil(fraction * len(ids) - 1e-9)))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(ids), size=n, replace=False)
    return tuple(sorted(ids[i] for i in picks))


def candidate_variants(samples: Sequence[Sample], method: AugmentationMethod, trials: int, seed: int) -> list:
    """``trials`` augmented copies of every sample, parameters drawn from ``method``."""
    from .augment import sample_value

    out = []
    for s in samples:
        for t in range(trials):
            rng = np.random.default_rng(derive_seed(seed, f"{method.kind}:{s.id}:{t}"))
            value = sample_value(method, rng)
            image, mask = apply(method, value, s.image, s.mask)
            out.append(Sample(f"{s.id}~{method.kind}{t}", image, mask, s.factory))
    return out


def _pass_fraction(report: EvaluationReport) -> Fraction:
    return Fraction(report.total - report.fail_count, report.total)


def pseudo_readapt(selected: Sequence[Sample], candidates: Sequence, trained, reference, classifier,
                   trials_per_candidate: int = 4, seed: int = 0, *, pool_version: int = 1,
                   epsilon: float = 0.5, margin: int = 4,
                   thresholds: ScreeningThresholds = ScreeningThresholds(),
                   cls_scope: str = "all", jobs: int = 1) -> list:
    """Judge each candidate on augmented copies of the selected failures.

    The trained adapter gives the margins against its own accuracy on the
    un-augmented selection. The frozen reference adapter gives a veto: its
    pass rate on the variants must not fall below its pass rate on the
    originals.
    """
    if not selected:
        raise ValueError("pseudo re-adaptation needs at least one selected sample")
    if not candidates:
        raise ValueError("pseudo re-adaptation needs at least one candidate")
    if trials_per_candidate < 1:
        raise ValueError("trials_per_candidate must be >= 1")
    kwargs = dict(margin=margin, thresholds=thresholds, cls_scope=cls_scope, jobs=jobs,
                  pool_version=pool_version)
    base, _ = evaluate_samples(trained, classifier, selected, dataset="selected", **kwargs)
    ref_base, _ = evaluate_samples(reference, classifier, selected, dataset="selected", **kwargs)
    verdicts = []
    for cand in candidates:
        spec = cand if isinstance(cand, CandidateSpec) else CandidateSpec(cand)
        variants = candidate_variants(selected, spec.method, trials_per_candidate, seed)
        with_c, _ = evaluate_samples(trained, classifier, variants, dataset=spec.label, **kwargs)
        ref_with, _ = evaluate_samples(reference, classifier, variants, dataset=spec.label, **kwargs)
        reference_ok = _pass_fraction(ref_with) >= _pass_fraction(ref_base)
        verdicts.append(
            CandidateVerdict(
                candidate=spec,
                pool_version=pool_version,
                baseline=base.accuracies(),
                with_candidate=with_c.accuracies(),
                qualified=qualify(base.accuracies(), with_c.accuracies(), epsilon, reference_ok),
                reference_baseline=ref_base.crop_accuracy,
                reference_with=ref_with.crop_accuracy,
                reference_ok=reference_ok,
                variants=len(variants),
            )
        )
    return verdicts


def rank_qualified(verdicts: Sequence[CandidateVerdict]) -> list:
    """Qualified verdicts, best first: larger crop margin, larger cls margin, kind name."""
    qualified = [v for v in verdicts if v.qualified]
    return sorted(qualified, key=lambda v: (-v.margin[0], -v.margin[1], v.candidate.kind))


def expand_pool(pool: AugmentationPool, verdicts: Sequence[CandidateVerdict], admit: str = "best") -> AugmentationPool:
    """Add the best qualified candidate (or all of them) as one new pool version."""
    if admit not in ADMIT_MODES:
        raise ConfigError(f"admit must be one of {ADMIT_MODES}")
    for v in verdicts:
        if v.pool_version != pool.version:
            raise StaleVerdicts(f"verdict for pool v{v.pool_version}, current pool is v{pool.version}")
    ranked = rank_qualified(verdicts)
    if not ranked:
        return pool
    chosen = ranked[:1] if admit == "best" else ranked
    methods = pool
    for v in chosen:
        methods = methods.with_method(v.candidate.method)
    return AugmentationPool(pool.version + 1, methods.methods)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

def _resolve(base: Optional[Path], p) -> Path:
    p = Path(p)
    return p if p.is_absolute() or base is None else base / p


@dataclass(frozen=True)
class RunConfig:
    train: str
    test: tuple
    segmenter: dict = field(default_factory=lambda: {"adapter": "baseline"})
    reference: dict = field(default_factory=lambda: {"adapter": "oracle"})
    classifier: dict = field(default_factory=lambda: {"adapter": "stub", "fit": True})
    pool: Optional[dict] = None
    candidates: tuple = DEFAULT_CANDIDATES
    fraction: float = 0.05
    epsilon: float = 0.5
    max_iterations: int = 3
    seed: int = 0
    trials_per_candidate: int = 4
    margin: int = 4
    thresholds: ScreeningThresholds = ScreeningThresholds()
    cls_scope: str = "all"
    admit: str = "best"
    base_dir: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.test:
            raise ConfigError("at least one test manifest is required")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("fraction must lie in (0, 1]")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.trials_per_candidate < 1:
            raise ConfigError("trials_per_candidate must be >= 1")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.cls_scope not in CLS_SCOPES:
            raise ConfigError(f"cls_scope must be one of {CLS_SCOPES}")
        if self.admit not in ADMIT_MODES:
            raise ConfigError(f"admit must be one of {ADMIT_MODES}")
        kinds = [c.kind for c in self.candidates]
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"candidate menu repeats a kind: {kinds}")

    @classmethod
    def from_json(cls, obj: dict, base_dir=None) -> "RunConfig":
        known = {"train", "test", "segmenter", "reference", "classifier", "pool", "candidates", "fraction",
                 "epsilon", "max_iterations", "seed", "trials_per_candidate", "margin", "thresholds",
                 "cls_scope", "admit"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown run config keys: {sorted(extra)}")
        if "train" not in obj or "test" not in obj:
            raise ConfigError("run config needs 'train' and 'test'")
        test = obj["test"]
        test = (test,) if isinstance(test, str) else tuple(test)
        kwargs = {"train": str(obj["train"]), "test": tuple(str(t) for t in test)}
        for key in ("segmenter", "reference", "classifier", "pool"):
            if key in obj:
                kwargs[key] = obj[key]
        if "candidates" in obj:
            try:
                kwargs["candidates"] = tuple(AugmentationMethod.from_json(c) for c in obj["candidates"])
            except TypeError as exc:
                raise ConfigError(f"bad candidate entry: {exc}") from None
        for key, conv in (("fraction", float), ("epsilon", float), ("max_iterations", int), ("seed", int),
                          ("trials_per_candidate", int), ("margin", int), ("cls_scope", str), ("admit", str)):
            if key in obj:
                kwargs[key] = conv(obj[key])
        if "thresholds" in obj:
            try:
                kwargs["thresholds"] = ScreeningThresholds.from_json(obj["thresholds"])
            except TypeError as exc:
                raise ConfigError(f"bad thresholds: {exc}") from None
        return cls(**kwargs, base_dir=None if base_dir is None else str(base_dir))

    def to_json(self) -> dict:
        return {
            "train": self.train,
            "test": list(self.test),
            "segmenter": self.segmenter,
            "reference": self.reference,
            "classifier": self.classifier,
            "pool": self.pool,
            "candidates": [c.to_json() for c in self.candidates],
            "fraction": self.fraction,
            "epsilon": self.epsilon,
            "max_iterations": self.max_iterations,
            "seed": self.seed,
            "trials_per_candidate": self.trials_per_candidate,
            "margin": self.margin,
            "thresholds": self.thresholds.to_json(),
            "cls_scope": self.cls_scope,
            "admit": self.admit,
        }

    def initial_pool(self) -> AugmentationPool:
        if self.pool is None:
            return default_pool()
        if isinstance(self.pool, str):
            return AugmentationPool.loads(_resolve(self._base, self.pool).read_text())
        return AugmentationPool.from_json(self.pool)

    @property
    def _base(self) -> Optional[Path]:
        return None if self.base_dir is None else Path(self.base_dir)


# ---------------------------------------------------------------------------
# History
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    pool: AugmentationPool
    segmenter: dict
    reports: tuple
    failures: tuple  # "dataset/id", sorted
    selected: tuple = ()
    verdicts: tuple = ()
    admitted: Optional[str] = None

    def merged(self) -> EvaluationReport:
        return merge_reports(self.reports)

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "pool": self.pool.to_json(),
            "segmenter": self.segmenter,
            "reports": [r.to_json() for r in self.reports],
            "failures": list(self.failures),
            "selected": list(self.selected),
            "verdicts": [v.to_json() for v in self.verdicts],
            "admitted": self.admitted,
        }


@dataclass(frozen=True)
class EvolutionHistory:
    config: dict
    entries: tuple
    stop_reason: str
    non_improving: bool

    @property
    def status(self) -> str:
        return "NON-IMPROVING" if self.non_improving else "IMPROVING"

    @property
    def pool_versions(self) -> list:
        return [e.pool.version for e in self.entries]

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "entries": [e.to_json() for e in self.entries],
            "stop_reason": self.stop_reason,
            "status": self.status,
        }

    def dumps(self) -> str:
        return dump_json(self.to_json())

    def summary(self) -> str:
        """Fail/total per factory and dataset for every pool version."""
        lines = []
        for e in self.entries:
            kinds = ", ".join(m.kind for m in e.pool.methods) or "-"
            lines.append(f"pool v{e.pool.version}: {kinds}")
            for r in e.reports:
                lines.append("  " + r.table_row())
            if e.admitted:
                lines.append(f"  admitted {e.admitted}")
        lines.append(f"status: {self.status} ({self.stop_reason})")
        return "\n".join(lines)


def _augment_pair(args):
    pool, seed, sample = args
    image, mask, _ = apply_pipeline(pool, seed, sample.image, sample.mask)
    return image, mask


def training_pairs(pool: AugmentationPool, samples: Sequence[Sample], seed: int, jobs: int = 1) -> list:
    """One pool-augmented copy of each training sample.

    Each sample's seed depends only on the run seed and its id, and every
    kind draws from its own stream, so adding a method leaves the draws of
    the others unchanged between pool versions.
    """
    args = [(pool, derive_seed(seed, "fit:" + s.id), s) for s in samples]
    return parallel_map(_augment_pair, args, jobs)


def build_classifier(obj: dict, train: Sequence[Sample], margin: int):
    kind = obj.get("adapter", "stub")
    if kind != "stub":
        raise ConfigError(f"unknown classifier adapter {kind!r}")
    if obj.get("fit", "config" not in obj):
        cutoff = float(obj.get("dark_cutoff", StubClassifierConfig.dark_cutoff))
        return StubClassifier(fit_on_samples(train, margin, cutoff))
    return StubClassifier(StubClassifierConfig.from_json(obj["config"]))


def run_amrf(config: RunConfig, jobs: int = 1, log: Optional[Callable[[str], None]] = None) -> EvolutionHistory:
    """Run the loop; see the module docstring."""
    say = log or (lambda msg: None)
    base = config._base
    try:
        train_manifest = load_manifest(_resolve(base, config.train))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"train manifest: {exc}") from exc
    missing = [r.id for r in train_manifest if r.mask_path is None]
    if missing:
        raise ConfigError(f"train manifest records without masks: {missing[:5]}")
    test_manifests = []
    for t in config.test:
        try:
            test_manifests.append(load_manifest(_resolve(base, t)))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"test manifest {t}: {exc}") from exc
    names = [m.name for m in test_manifests]
    if len(set(names)) != len(names):
        raise ConfigError(f"test manifests must have distinct names, got {names}")

    train = load_manifest_samples(train_manifest)
    tests = [(m.name, load_manifest_samples(m)) for m in test_manifests]
    by_key = {f"{name}/{s.id}": s for name, samples in tests for s in samples}

    segmenter = segmenter_from_json(config.segmenter, base)
    reference = segmenter_from_json(config.reference, base)
    classifier = build_classifier(config.classifier, train, config.margin)
    pool = config.initial_pool()
    eval_kwargs = dict(margin=config.margin, thresholds=config.thresholds, cls_scope=config.cls_scope, jobs=jobs)

    entries = []
    stop = "max_iterations"
    for it in range(config.max_iterations + 1):
        try:
            pairs = training_pairs(pool, train, config.seed, jobs)
            trained = segmenter.fit(pairs, jobs)
            reports = tuple(
                evaluate_samples(trained, classifier, samples, dataset=name, pool_version=pool.version,
                                 **eval_kwargs)[0]
                for name, samples in tests
            )
        except AMRFError as exc:
            raise PipelineError(f"iteration {it}: {exc}", iteration=it) from exc
        failures = tuple(sorted(f"{r.dataset}/{f}" for r in reports for f in r.failures))
        say(f"iteration {it}: pool v{pool.version}, {len(failures)} failures")
        entry = HistoryEntry(it, pool, trained.describe(), reports, failures)

        candidates = [c for c in (CandidateSpec(m) for m in config.candidates) if c.valid_for(pool)]
        if not failures:
            stop = "no_failures"
        elif not candidates:
            stop = "no_candidates"
        elif it == config.max_iterations:
            stop = "max_iterations"
        else:
            selected = select_failures(failures, config.fraction, derive_seed(config.seed, f"select:{it}"))
            try:
                verdicts = pseudo_readapt(
                    [by_key[k] for k in selected], candidates, trained, reference, classifier,
                    config.trials_per_candidate, derive_seed(config.seed, f"trial:{it}"),
                    pool_version=pool.version, epsilon=config.epsilon, **eval_kwargs,
                )
            except AMRFError as exc:
                raise PipelineError(f"iteration {it}: {exc}", iteration=it) from exc
            new_pool = expand_pool(pool, verdicts, config.admit)
            admitted = None
            if new_pool.version != pool.version:
                admitted = ", ".join(v.candidate.label for v in rank_qualified(verdicts)[:1 if config.admit == "best" else None])
            entry = HistoryEntry(it, pool, trained.describe(), reports, failures, selected, tuple(verdicts), admitted)
            entries.append(entry)
            for v in verdicts:
                d_crop, d_cls = v.margin
                say(f"  {v.candidate.label}: margins ({d_crop:+.2f}, {d_cls:+.2f}), "
                    f"reference {'ok' if v.reference_ok else 'vetoed'}, {'qualified' if v.qualified else 'rejected'}")
            if admitted is None:
                stop = "no_qualified_candidate"
                break
            pool = new_pool
            continue
        entries.append(entry)
        break

    first, last = entries[0].merged(), entries[-1].merged()
    non_improving = last.crop_accuracy < first.crop_accuracy or last.cls_accuracy < first.cls_accuracy
    return EvolutionHistory(config.to_json(), tuple(entries), stop, non_improving)
