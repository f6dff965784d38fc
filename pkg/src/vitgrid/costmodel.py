"""Analytic token/FLOP cost model and a desk-scale wall-clock micro-benchmark.

FLOP accounting counts one multiply-accumulate as 2 FLOPs and ignores
softmax and normalization costs. The per-block contract, evaluated with the
stage-resolved token count n at that block, is

    attention: 4*n*D^2 + 2*n^2*D
    mlp:       2*n*D*(mlp_ratio*D)*2

Added to that are the patch-embedding cost 2*N*D*(C*patch^2) and per-
compressor costs:

    avg:             n_in * D
    ca:              n_in * (6*D*H + 4*D)     (MLP on every window token,
                                               softmax and weighted sum)
    pixel_unshuffle: 2 * n_in * D^2           (4D -> D projection per window)

The LLM prefill proxy applies the same per-block formula to the LLM geometry
at the final visual token count. Absolute milliseconds are out of scope; the
model is for relative comparisons only, and it deliberately omits projector
and LLM constant overheads.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .encoder import EncoderConfig, EncoderState, CompressionPlan, forward, token_count
from .errors import ValidationError


@dataclass(frozen=True)
class LlmProxy:
    """Stand-in geometry for a 7B-class language model prefill."""

    dim: int = 3584
    depth: int = 28
    mlp_ratio: float = 5.3

    def __post_init__(self):
        if self.dim < 1 or self.depth < 1 or self.mlp_ratio <= 0:
            raise ValidationError("LlmProxy fields must be positive")


@dataclass(frozen=True)
class CostReport:
    stage_tokens: tuple
    encoder_flops: int
    prefill_flops: int
    total_flops: int
    compression_ratio: float
    wall_clock_ms: Optional[float] = None


def block_flops(n: int, dim: int, mlp_ratio: float) -> int:
    """Per-transformer-block FLOPs at sequence length n (model contract)."""
    attn = 4 * n * dim * dim + 2 * n * n * dim
    mlp = 2 * n * dim * int(round(mlp_ratio * dim)) * 2
    return attn + mlp


def embed_flops(n_tokens: int, dim: int, channels: int, patch: int) -> int:
    return 2 * n_tokens * dim * channels * patch * patch


def compressor_flops(kind: str, n_in: int, dim: int, hidden: int) -> int:
    if kind == "avg":
        return n_in * dim
    if kind == "ca":
        return n_in * (6 * dim * hidden + 4 * dim)
    if kind == "pixel_unshuffle":
        return 2 * n_in * dim * dim
    raise ValidationError(f"unknown compressor kind {kind!r}")


def tokens_per_block(config: EncoderConfig, height: int, width: int) -> list:
    """Token count seen by each block (index 0..depth-1) after preprocessing."""
    counts = token_count(config, height, width)
    n = counts[0]
    stage = {idx: counts[s + 1] for s, (idx, _) in enumerate(config.plan.entries)}
    per_block = []
    if 0 in stage:
        n = stage[0]
    for j in range(1, config.depth + 1):
        per_block.append(n)
        if j in stage:
            n = stage[j]
    return per_block


def encoder_flops(config: EncoderConfig, height: int, width: int) -> int:
    """Total encoder FLOPs for preprocessed dims height x width."""
    counts = token_count(config, height, width)
    total = embed_flops(counts[0], config.dim, config.channels, config.patch)
    for n in tokens_per_block(config, height, width):
        total += block_flops(n, config.dim, config.mlp_ratio)
    for s, (_, kind) in enumerate(config.plan.entries):
        total += compressor_flops(kind, counts[s], config.dim, config.dim)
    return total


def prefill_proxy(n_tokens: int, llm: LlmProxy = LlmProxy()) -> int:
    """LLM prefill FLOPs at sequence length n_tokens."""
    if n_tokens < 0:
        raise ValidationError(f"token count must be >= 0, got {n_tokens}")
    if n_tokens == 0:
        return 0
    return llm.depth * block_flops(n_tokens, llm.dim, llm.mlp_ratio)


def compression_ratio(report: CostReport) -> float:
    """Initial over final token count; equals 4^J for 2x2 windows."""
    return report.stage_tokens[0] / report.stage_tokens[-1]


def cost_report(
    config: EncoderConfig, height: int, width: int, llm: LlmProxy = LlmProxy()
) -> CostReport:
    counts = token_count(config, height, width)
    enc = encoder_flops(config, height, width)
    pre = prefill_proxy(counts[-1], llm)
    return CostReport(
        stage_tokens=tuple(counts),
        encoder_flops=enc,
        prefill_flops=pre,
        total_flops=enc + pre,
        compression_ratio=counts[0] / counts[-1],
    )


@dataclass(frozen=True)
class SweepRow:
    """One sweep entry: a plan's cost report plus marginal-gain columns.

    The saturation-marginal column ``marginal_encoder_flops`` is the encoder-
    FLOP reduction relative to the previous valid plan in the list (the
    encoder is the quantity the insertion plan directly reconfigures);
    ``marginal_total_flops`` is the same difference on encoder + prefill.
    """

    plan_id: str
    plan: Optional[CompressionPlan]
    report: Optional[CostReport]
    marginal_encoder_flops: Optional[int] = None
    marginal_total_flops: Optional[int] = None
    status: str = "ok"
    error: str = ""


def sweep_insertions(
    base_config: EncoderConfig,
    candidate_plans,
    height: int,
    width: int,
    llm: LlmProxy = LlmProxy(),
) -> list:
    """Evaluate (plan_id, CompressionPlan) candidates against one base geometry.

    Invalid plans produce an error row and the sweep continues. Rows come back
    in input order; marginals compare against the previous valid row.
    """
    rows = []
    prev: Optional[CostReport] = None
    for plan_id, plan in candidate_plans:
        try:
            cfg = replace(base_config, plan=plan)
            rep = cost_report(cfg, height, width, llm)
        except ValidationError as exc:
            rows.append(
                SweepRow(plan_id=str(plan_id), plan=plan, report=None,
                         status="error", error=str(exc))
            )
            continue
        row = SweepRow(
            plan_id=str(plan_id),
            plan=plan,
            report=rep,
            marginal_encoder_flops=None if prev is None
            else prev.encoder_flops - rep.encoder_flops,
            marginal_total_flops=None if prev is None
            else prev.total_flops - rep.total_flops,
        )
        rows.append(row)
        prev = rep
    return rows


SWEEP_CSV_HEADER = (
    "plan_id,J,indices,stage_tokens,encoder_flops,prefill_flops,total_flops,"
    "ratio,wall_clock_ms,marginal_encoder_flops,marginal_total_flops,status"
)


def sweep_rows_to_csv(rows) -> str:
    """Render sweep rows as CSV; list-valued cells use ';' separators."""
    lines = [SWEEP_CSV_HEADER]
    for r in rows:
        if r.report is None:
            lines.append(f"{r.plan_id},,,,,,,,,,,error:{r.error.replace(',', ';')}")
            continue
        rep = r.report
        lines.append(
            ",".join(
                [
                    r.plan_id,
                    str(r.plan.count),
                    ";".join(str(i) for i in r.plan.indices),
                    ";".join(str(t) for t in rep.stage_tokens),
                    str(rep.encoder_flops),
                    str(rep.prefill_flops),
                    str(rep.total_flops),
                    f"{rep.compression_ratio:g}",
                    "" if rep.wall_clock_ms is None else f"{rep.wall_clock_ms:.3f}",
                    "" if r.marginal_encoder_flops is None else str(r.marginal_encoder_flops),
                    "" if r.marginal_total_flops is None else str(r.marginal_total_flops),
                    r.status,
                ]
            )
        )
    return "\n".join(lines) + "\n"


def sweep_rows_to_json(rows) -> list:
    out = []
    for r in rows:
        entry = {"plan_id": r.plan_id, "status": r.status}
        if r.report is None:
            entry["error"] = r.error
        else:
            entry.update(
                J=r.plan.count,
                indices=list(r.plan.indices),
                stage_tokens=list(r.report.stage_tokens),
                encoder_flops=r.report.encoder_flops,
                prefill_flops=r.report.prefill_flops,
                total_flops=r.report.total_flops,
                ratio=r.report.compression_ratio,
                wall_clock_ms=r.report.wall_clock_ms,
                marginal_encoder_flops=r.marginal_encoder_flops,
                marginal_total_flops=r.marginal_total_flops,
            )
        out.append(entry)
    return out


@dataclass(frozen=True)
class BenchStats:
    median_ms: float
    mean_ms: float
    samples_ms: tuple


def micro_bench(
    config: EncoderConfig,
    state: EncoderState,
    image,
    repeats: int,
    dtype=np.float64,
) -> BenchStats:
    """Median/mean wall-clock of ``forward`` over ``repeats`` runs.

    One warmup run is excluded. The timed section must not share the process
    with other concurrent benchmarks.
    """
    if repeats < 1:
        raise ValidationError(f"repeats must be >= 1, got {repeats}")
    forward(image, state, config, dtype=dtype)  # warmup
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward(image, state, config, dtype=dtype)
        samples.append((time.perf_counter() - t0) * 1000.0)
    return BenchStats(
        median_ms=float(np.median(samples)),
        mean_ms=float(np.mean(samples)),
        samples_ms=tuple(samples),
    )


def benchmarked_report(
    config: EncoderConfig,
    state: EncoderState,
    image,
    repeats: int,
    llm: LlmProxy = LlmProxy(),
    dtype=np.float64,
):
    """Cost report with the measured median wall clock recorded into it."""
    from .encoder import preprocess

    pre = preprocess(image, config)
    stats = micro_bench(config, state, pre.image, repeats, dtype=dtype)
    rep = cost_report(config, pre.size[0], pre.size[1], llm)
    return replace(rep, wall_clock_ms=stats.median_ms), stats
