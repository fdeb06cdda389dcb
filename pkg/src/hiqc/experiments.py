"""End-to-end pipelines: data preparation, train, self-train, ablation and the weight sweep."""

from __future__ import annotations

import json
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from typing import Callable, NamedTuple, Sequence

from .config import RunConfig
from .corpus import CorpusSplit, QueryRecord, load_queries, load_truth, split, strip_labels
from .encoder import EmbeddingStore, load_embedding_store
from .errors import ConfigError
from .evaluation import EvalResult, micro_macro_f1
from .model import ModelParams, init_params, predict
from .selftrain import RoundReport, selftrain_loop
from .taxonomy import LabelGraph, Taxonomy, build_label_graph, load_taxonomy
from .trainer import TrainReport, train, validation_f1

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_label_hierarchy", "no_instance_hierarchy", "no_self_training")

# one-factor-at-a-time axes; the first value of each axis is the shared baseline
SWEEP_AXES: dict[str, tuple[float, ...]] = {
    "w_intra": (0.1, 0.3, 0.5, 0.7, 0.9, 1.0),
    "w_contrastive": (0.01, 0.1, 0.3, 0.5, 0.7, 0.9),
    "w_child": (0.1, 0.3, 0.5, 0.7, 0.9, 1.0),
}


def worker_count() -> int:
    """Worker processes allowed by ``HIQC_THREADS`` (default 1)."""
    raw = os.environ.get("HIQC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HIQC_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(n, os.cpu_count() or 1))


def _map(fn: Callable, items: Sequence) -> list:
    """Order-preserving map, in worker processes when more than one is allowed."""
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# data


class Dataset(NamedTuple):
    taxonomy: Taxonomy
    graph: LabelGraph
    records: list[QueryRecord]
    truth: dict[str, int] | None = None
    store: EmbeddingStore | None = None


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.taxonomy is None or cfg.queries is None:
        raise ConfigError("both --taxonomy and --queries are required")
    for p in (cfg.taxonomy, cfg.queries, cfg.embeddings, cfg.truth):
        if p is not None and not p.exists():
            raise ConfigError(f"no such file: {p}")
    t = load_taxonomy(cfg.taxonomy)
    records = load_queries(cfg.queries, t)
    truth = load_truth(cfg.truth, t) if cfg.truth is not None else None
    store = load_embedding_store(cfg.embeddings) if cfg.embeddings is not None else None
    return Dataset(t, build_label_graph(t), records, truth, store)


def make_split(records: Sequence[QueryRecord], cfg: RunConfig, seed: int) -> CorpusSplit:
    """Split labeled rows 80/10/10 and assemble the unlabeled pool.

    Unlabeled rows always go to the pool. In ``strip`` mode a further
    ``unlabeled_fraction`` of the labeled records is moved from train into it.
    """
    labeled = [r for r in records if r.labeled]
    s = split(labeled, seed)
    s.unlabeled_pool = [r for r in records if not r.labeled]
    if cfg.unlabeled_mode == "strip" and cfg.unlabeled_fraction > 0:
        s = strip_labels(s, cfg.unlabeled_fraction, seed)
    return s


def init_model(data: Dataset, s: CorpusSplit, cfg: RunConfig, seed: int) -> ModelParams:
    m = cfg.model
    return init_params(
        data.taxonomy,
        data.graph,
        seed=seed,
        d_q=m.d_q,
        buckets=m.buckets,
        d_h=m.d_h,
        d_g=m.d_g,
        hash_seed=m.hash_seed,
        store=data.store,
        label_records=s.train,
        use_label_hierarchy=m.use_label_hierarchy,
        mask_root_attention=m.mask_root_attention,
    )


def evaluate(params: ModelParams, g: LabelGraph, records: Sequence[QueryRecord], truth: dict[str, int] | None = None) -> EvalResult:
    """Score ``records``; unlabeled ones count only when ``truth`` covers them."""
    gold, kept = [], []
    for r in records:
        label = r.child_label if r.labeled else (truth or {}).get(r.id)
        if label is not None:
            gold.append(label)
            kept.append(r)
    return micro_macro_f1(gold, predict(params, g, kept), g.taxonomy)


# ---------------------------------------------------------------------------
# pipelines


@dataclass
class TrainOutcome:
    params: ModelParams
    report: TrainReport
    test: EvalResult


@dataclass
class SelftrainOutcome:
    params: ModelParams
    rounds: list[RoundReport]
    test: EvalResult


def run_train(data: Dataset, cfg: RunConfig, s: CorpusSplit | None = None) -> TrainOutcome:
    seed = cfg.seed
    s = s or make_split(data.records, cfg, seed)
    params, report = train(s, data.taxonomy, data.graph, init_model(data, s, cfg, seed), cfg.train)
    return TrainOutcome(params, report, evaluate(params, data.graph, s.test))


def run_selftrain(data: Dataset, cfg: RunConfig, s: CorpusSplit | None = None) -> SelftrainOutcome:
    seed = cfg.seed
    s = s or make_split(data.records, cfg, seed)
    init = init_model(data, s, cfg, seed)
    if not s.unlabeled_pool:
        # nothing to pseudo-label: self-training reduces to the initial fit
        params, report = train(s, data.taxonomy, data.graph, init, cfg.train)
        vmi, vma = validation_f1(params, data.graph, s.validation) if s.validation else (None, None)
        rounds = [RoundReport(0, [], vmi, vma, len(s.train), 0, None, report)]
    else:
        params, rounds = selftrain_loop(s, data.taxonomy, data.graph, init, cfg.train, cfg.sampler, truth=data.truth)
    return SelftrainOutcome(params, rounds, evaluate(params, data.graph, s.test))


def variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    if variant == "full":
        return cfg
    if variant == "no_label_hierarchy":
        return cfg.with_model(use_label_hierarchy=False)
    if variant == "no_instance_hierarchy":
        return cfg.with_weights(w_contrastive=0.0)
    if variant == "no_self_training":
        return cfg.with_sampler(budget_per_round=0)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    seed: int
    variant: str
    result: EvalResult
    rounds: int


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)

    def macro(self, variant: str) -> list[float]:
        return [r.result.child_macro_f1 for r in self.rows if r.variant == variant]

    def medians(self, metric: str = "child_macro_f1") -> dict[str, float]:
        out = {}
        for v in VARIANTS:
            vals = [getattr(r.result, metric) for r in self.rows if r.variant == v]
            if vals:
                out[v] = statistics.median(vals)
        return out

    def worst_counts(self) -> dict[str, int]:
        """Per variant, the number of seeds where it alone has the lowest child Macro-F1."""
        counts = {v: 0 for v in VARIANTS}
        for seed in sorted({r.seed for r in self.rows}):
            scores = {r.variant: r.result.child_macro_f1 for r in self.rows if r.seed == seed}
            low = min(scores.values())
            losers = [v for v, x in scores.items() if x == low]
            if len(losers) == 1:
                counts[losers[0]] += 1
        return counts

    def to_json(self) -> str:
        rows = [
            {"seed": r.seed, "variant": r.variant, "rounds": r.rounds, **r.result.headline()}
            for r in self.rows
        ]
        return json.dumps({"rows": rows, "median": self.medians(), "worst": self.worst_counts()}, indent=2, sort_keys=True)

    def to_tsv(self) -> str:
        """Median child metrics per variant as signed point differences from the full model."""
        med_mi = self.medians("child_micro_f1")
        med_ma = self.medians("child_macro_f1")
        lines = ["metric\t" + "\t".join(VARIANTS)]
        for name, med in (("micro_f1", med_mi), ("macro_f1", med_ma)):
            base = med.get("full")
            cells = []
            for v in VARIANTS:
                if v not in med:
                    cells.append("")
                elif v == "full" or base is None:
                    cells.append(f"{100 * med[v]:.2f}")
                else:
                    cells.append(format_delta(100 * (med[v] - base)))
            lines.append(name + "\t" + "\t".join(cells))
        return "\n".join(lines) + "\n"


def _ablation_job(args) -> AblationRow:
    s, data, cfg, seed, variant = args
    out = run_selftrain(data, variant_config(cfg.with_seed(seed), variant), s)
    return AblationRow(seed, variant, out.test, len(out.rounds))


def ablation_run(s: CorpusSplit, data: Dataset, cfg: RunConfig, seeds: Sequence[int] | None = None) -> AblationTable:
    """Run every variant under every seed on one split; each is scored on ``s.test``."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    jobs = [(s, data, cfg, seed, v) for seed in seeds for v in VARIANTS]
    return AblationTable(_map(_ablation_job, jobs))


# ---------------------------------------------------------------------------
# sweep


def format_delta(points: float) -> str:
    """Signed percentage-point difference; exactly zero prints as ``0``."""
    r = round(points, 2)
    if r == 0:
        return "0"
    return f"{r:+.2f}"


@dataclass
class SweepRow:
    parameter: str
    value: float
    micro_f1: float
    macro_f1: float
    setting: dict[str, float]


@dataclass
class SweepResult:
    rows: list[SweepRow]
    baseline: dict[str, float]
    full_grid: bool = False

    def _base(self, row: SweepRow) -> SweepRow:
        if self.full_grid:
            return next(r for r in self.rows if r.setting == self.baseline)
        return next(r for r in self.rows if r.parameter == row.parameter and r.value == SWEEP_AXES[row.parameter][0])

    def deltas(self) -> list[tuple[str, float, float, float]]:
        """(parameter, value, delta micro, delta macro) in points for one-factor runs."""
        out = []
        for r in self.rows:
            b = self._base(r)
            out.append((r.parameter, r.value, 100 * (r.micro_f1 - b.micro_f1), 100 * (r.macro_f1 - b.macro_f1)))
        return out

    def delta_table(self) -> str:
        """Point differences from the baseline, baseline rows reading 0.

        One-factor runs print ``parameter value``; full-grid runs print every weight.
        """
        if self.full_grid:
            lines = ["\t".join(SWEEP_AXES) + "\tdelta_micro_f1\tdelta_macro_f1"]
        else:
            lines = ["parameter\tvalue\tdelta_micro_f1\tdelta_macro_f1"]
        for r in self.rows:
            b = self._base(r)
            deltas = f"{format_delta(100 * (r.micro_f1 - b.micro_f1))}\t{format_delta(100 * (r.macro_f1 - b.macro_f1))}"
            if self.full_grid:
                lines.append("\t".join(f"{r.setting[k]:g}" for k in SWEEP_AXES) + "\t" + deltas)
            else:
                lines.append(f"{r.parameter}\t{r.value:g}\t{deltas}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {"baseline": self.baseline, "full_grid": self.full_grid, "rows": [asdict(r) for r in self.rows]},
            indent=2,
            sort_keys=True,
        )


def sweep_settings(full_grid: bool = False) -> list[tuple[str, float, dict[str, float]]]:
    """(parameter, value, full weight setting) for every run of the sweep."""
    baseline = {k: v[0] for k, v in SWEEP_AXES.items()}
    if full_grid:
        names = list(SWEEP_AXES)
        return [
            ("grid", 0.0, dict(zip(names, combo)))
            for combo in product(*(SWEEP_AXES[n] for n in names))
        ]
    out = []
    for name, values in SWEEP_AXES.items():
        for v in values:
            out.append((name, v, {**baseline, name: v}))
    return out


def apply_setting(cfg: RunConfig, setting: dict[str, float]) -> RunConfig:
    return cfg.with_weights(w_intra=setting["w_intra"], w_contrastive=setting["w_contrastive"]).with_sampler(
        w_child=setting["w_child"]
    )


def _sweep_job(args) -> SweepRow:
    s, data, cfg, name, value, setting = args
    out = run_selftrain(data, apply_setting(cfg, setting), s)
    return SweepRow(name, value, out.test.child_micro_f1, out.test.child_macro_f1, setting)


def sweep(data: Dataset, cfg: RunConfig, full_grid: bool | None = None, s: CorpusSplit | None = None) -> SweepResult:
    full = cfg.full_grid if full_grid is None else full_grid
    s = s or make_split(data.records, cfg, cfg.seed)
    settings = sweep_settings(full)
    rows = _map(_sweep_job, [(s, data, cfg, n, v, st) for n, v, st in settings])
    if full:
        rows = [replace(r, parameter="grid", value=0.0) for r in rows]
    return SweepResult(rows, {k: v[0] for k, v in SWEEP_AXES.items()}, full)
