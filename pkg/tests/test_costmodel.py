import numpy as np
import pytest

from vitgrid import (
    EncoderConfig,
    LlmProxy,
    ValidationError,
    CompressionPlan,
    compression_ratio,
    cost_report,
    desk_config,
    encoder_flops,
    init_state,
    micro_bench,
    prefill_proxy,
    sweep_insertions,
    token_count,
)
from vitgrid.costmodel import (
    SWEEP_CSV_HEADER,
    block_flops,
    embed_flops,
    sweep_rows_to_csv,
    sweep_rows_to_json,
    tokens_per_block,
)


def cfg_patch(patch, plan=(), depth=6, dim=64, heads=4, ratio=4.0):
    return EncoderConfig(depth=depth, dim=dim, heads=heads, mlp_ratio=ratio,
                         patch=patch, plan=CompressionPlan(tuple(plan)))


class TestEncoderFlops:
    def test_hand_summed_tiny_geometry(self):
        # depth 2, n = 4 tokens (2x2 image at patch 1), D = 2, ratio = 4
        cfg = EncoderConfig(depth=2, dim=2, heads=1, mlp_ratio=4.0, patch=1,
                            channels=1, pos_encoding="none")
        n, d = 4, 2
        attn = 4 * n * d * d + 2 * n * n * d          # 64 + 64
        mlp = 2 * n * d * (4 * d) * 2                 # 256
        embed = 2 * n * d * 1 * 1 * 1                 # 16
        assert encoder_flops(cfg, 2, 2) == 2 * (attn + mlp) + embed

    def test_compression_strictly_cheaper(self):
        base = cfg_patch(8)
        comp = cfg_patch(8, plan=[(1, "avg")])
        assert encoder_flops(comp, 256, 256) < encoder_flops(base, 256, 256)

    def test_moving_insertion_earlier_reduces_flops(self):
        # 27-block geometry: single compressor at layer 4 vs layer 18
        late = cfg_patch(16, plan=[(18, "avg")], depth=27)
        early = cfg_patch(16, plan=[(4, "avg")], depth=27)
        assert encoder_flops(early, 1024, 1024) < encoder_flops(late, 1024, 1024)

    def test_tokens_per_block_stage_resolution(self):
        cfg = cfg_patch(8, plan=[(2, "avg"), (4, "avg")], depth=5)
        per = tokens_per_block(cfg, 128, 128)
        assert per == [256, 256, 64, 64, 16]

    def test_index_zero_compresses_every_block(self):
        cfg = cfg_patch(8, plan=[(0, "avg")], depth=3)
        assert tokens_per_block(cfg, 128, 128) == [64, 64, 64]


class TestPrefillProxy:
    def test_zero_tokens(self):
        assert prefill_proxy(0) == 0

    def test_superlinear_gap(self):
        llm = LlmProxy()
        assert prefill_proxy(256, llm) < prefill_proxy(1024, llm) / 3

    def test_doubling_quadratic_regime(self):
        # attention-dominated geometry: tiny dim, huge n -> ratio approaches 4
        llm = LlmProxy(dim=4, depth=1, mlp_ratio=1.0)
        r = prefill_proxy(2_000_000, llm) / prefill_proxy(1_000_000, llm)
        assert 3.8 < r <= 4.0

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            prefill_proxy(-1)


class TestCompressionRatio:
    @pytest.mark.parametrize("j,expect", [(0, 1), (1, 4), (2, 16), (3, 64)])
    def test_ratio_is_power_of_four(self, j, expect):
        plan = [(i + 1, "avg") for i in range(j)]
        cfg = cfg_patch(8, plan=plan, depth=4)
        rep = cost_report(cfg, 256, 256)
        assert compression_ratio(rep) == expect
        assert rep.compression_ratio == expect

    def test_stage_tokens_match_encoder(self):
        for patch, plan in [(8, [(1, "avg")]), (16, [(2, "ca"), (4, "avg")])]:
            cfg = cfg_patch(patch, plan=plan)
            rep = cost_report(cfg, 512, 512)
            assert list(rep.stage_tokens) == token_count(cfg, 512, 512)

    def test_stage_tokens_strictly_decreasing(self):
        cfg = cfg_patch(8, plan=[(1, "avg"), (3, "avg")])
        rep = cost_report(cfg, 256, 256)
        assert all(a > b for a, b in zip(rep.stage_tokens, rep.stage_tokens[1:]))


def earliest_plans(j_values):
    return [
        (f"j{j}", CompressionPlan(tuple((i + 1, "avg") for i in range(j))))
        for j in j_values
    ]


class TestSweep:
    def test_totals_decrease_and_encoder_marginal_saturates(self):
        base = cfg_patch(8)  # desk geometry, patch 8
        rows = sweep_insertions(base, earliest_plans([1, 2, 3, 4]), 1024, 1024)
        totals = [r.report.total_flops for r in rows]
        assert all(a > b for a, b in zip(totals, totals[1:]))
        gain_third = rows[2].marginal_encoder_flops
        gain_fourth = rows[3].marginal_encoder_flops
        assert gain_fourth < 0.10 * gain_third

    def test_single_plan_is_composition(self):
        base = cfg_patch(8)
        rows = sweep_insertions(base, earliest_plans([0]), 256, 256)
        rep = rows[0].report
        cfg = cfg_patch(8)
        assert rep.encoder_flops == encoder_flops(cfg, 256, 256)
        assert rep.total_flops == rep.encoder_flops + prefill_proxy(rep.stage_tokens[-1])

    def test_identical_plans_identical_reports(self):
        base = cfg_patch(8)
        plan = CompressionPlan(((1, "avg"),))
        rows = sweep_insertions(base, [("a", plan), ("b", plan)], 256, 256)
        assert rows[0].report == rows[1].report
        assert rows[1].marginal_total_flops == 0

    def test_invalid_plan_becomes_error_row(self):
        base = cfg_patch(8, depth=4)
        plans = [
            ("good", CompressionPlan(((1, "avg"),))),
            ("bad", CompressionPlan(((9, "avg"),))),  # exceeds depth
            ("tail", CompressionPlan(((2, "avg"),))),
        ]
        rows = sweep_insertions(base, plans, 256, 256)
        assert [r.status for r in rows] == ["ok", "error", "ok"]
        assert rows[1].report is None and "depth" in rows[1].error
        # marginal of 'tail' compares against 'good', the previous valid row
        assert rows[2].marginal_encoder_flops is not None

    def test_csv_shape(self):
        base = cfg_patch(8)
        rows = sweep_insertions(base, earliest_plans([1, 2]), 256, 256)
        text = sweep_rows_to_csv(rows)
        lines = text.strip().split("\n")
        assert lines[0] == SWEEP_CSV_HEADER
        assert len(lines) == 3
        assert lines[1].startswith("j1,1,1,")

    def test_json_shape(self):
        base = cfg_patch(8)
        docs = sweep_rows_to_json(sweep_insertions(base, earliest_plans([1]), 256, 256))
        assert docs[0]["J"] == 1 and docs[0]["status"] == "ok"


class TestMicroBench:
    def test_single_repeat_median_equals_mean(self):
        cfg = cfg_patch(8, depth=2, dim=16, heads=2)
        st = init_state(cfg, 0)
        img = np.random.default_rng(0).uniform(size=(32, 32, 3))
        stats = micro_bench(cfg, st, img, repeats=1)
        assert stats.median_ms == stats.mean_ms
        assert len(stats.samples_ms) == 1

    def test_compressed_config_is_faster(self):
        img = np.random.default_rng(1).uniform(size=(128, 128, 3))
        slow_cfg = cfg_patch(8, depth=4, dim=32, heads=2)
        fast_cfg = cfg_patch(8, plan=[(1, "avg"), (2, "avg")], depth=4, dim=32, heads=2)
        slow = micro_bench(slow_cfg, init_state(slow_cfg, 0), img, repeats=3)
        fast = micro_bench(fast_cfg, init_state(fast_cfg, 0), img, repeats=3)
        assert fast.median_ms < slow.median_ms

    def test_repeatability_loose_bound(self):
        cfg = cfg_patch(8, depth=2, dim=32, heads=2)
        st = init_state(cfg, 0)
        img = np.random.default_rng(2).uniform(size=(128, 128, 3))
        a = micro_bench(cfg, st, img, repeats=5)
        b = micro_bench(cfg, st, img, repeats=5)
        assert abs(a.median_ms - b.median_ms) <= 0.5 * max(a.median_ms, b.median_ms)

    def test_rejects_zero_repeats(self):
        cfg = cfg_patch(8, depth=1, dim=8, heads=2)
        with pytest.raises(ValidationError):
            micro_bench(cfg, init_state(cfg, 0), np.zeros((16, 16, 3)), repeats=0)

    def test_benchmarked_report_records_wall_clock(self):
        from vitgrid.costmodel import benchmarked_report

        cfg = cfg_patch(8, plan=[(1, "avg")], depth=2, dim=16, heads=2)
        img = np.random.default_rng(3).uniform(size=(32, 32, 3))
        report, stats = benchmarked_report(cfg, init_state(cfg, 0), img, repeats=2)
        assert report.wall_clock_ms == stats.median_ms
        assert report.stage_tokens == (16, 4)
