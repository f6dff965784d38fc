import numpy as np
import pytest

from vitgrid import (
    EncoderConfig,
    ValidationError,
    CompressionPlan,
    desk_config,
    forward,
    init_state,
    preprocess,
    sinusoidal_pos_2d,
    token_count,
)


def image_of(h, w, c=3, seed=0):
    return np.random.default_rng(seed).uniform(size=(h, w, c))


class TestCompressionPlan:
    def test_rejects_decreasing_indices(self):
        with pytest.raises(ValidationError, match="strictly increasing"):
            CompressionPlan(((4, "avg"), (4, "avg")))

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValidationError, match="kind"):
            CompressionPlan(((1, "maxpool"),))

    def test_rejects_index_beyond_depth(self):
        with pytest.raises(ValidationError, match="exceeds"):
            desk_config(plan=CompressionPlan(((7, "avg"),)))  # desk depth is 6

    def test_index_zero_allowed(self):
        cfg = desk_config(patch=4, plan=CompressionPlan(((0, "avg"),)))
        assert cfg.plan.indices == (0,)


class TestConfigValidation:
    def test_dim_heads_divisibility(self):
        with pytest.raises(ValidationError, match="divisible"):
            EncoderConfig(depth=2, dim=10, heads=4, mlp_ratio=4.0, patch=8)

    def test_pos_encoding_needs_dim_multiple_of_four(self):
        with pytest.raises(ValidationError, match="divisible by 4"):
            EncoderConfig(depth=2, dim=6, heads=2, mlp_ratio=4.0, patch=8)


def nearest_multiple_oracle(x, m):
    # candidate search: pick the multiple of m (>= m) minimizing |k*m - x|,
    # half-up on ties
    best, best_err = None, None
    for k in range(1, x // m + 3):
        err = abs(k * m - x)
        if best is None or err < best_err or (err == best_err and k * m > best):
            best, best_err = k * m, err
    return best


class TestPreprocess:
    def test_already_divisible_unchanged(self):
        cfg = desk_config(patch=16, plan=CompressionPlan(((1, "avg"),)))
        img = image_of(1024, 1024)
        pre = preprocess(img, cfg)
        assert pre.size == (1024, 1024) and not pre.resized
        assert pre.image.tobytes() == img.tobytes()

    def test_rounding_1000x1008(self):
        cfg = EncoderConfig(depth=4, dim=8, heads=2, mlp_ratio=2.0, patch=8,
                            plan=CompressionPlan(((1, "avg"), (2, "avg"), (3, "avg"))))
        pre = preprocess(image_of(1000, 1008), cfg)
        assert pre.size == (1024, 1024)
        assert pre.original_size == (1000, 1008)

    def test_rounding_512_patch10(self):
        cfg = EncoderConfig(depth=4, dim=8, heads=2, mlp_ratio=2.0, patch=10,
                            plan=CompressionPlan(((1, "avg"), (2, "avg"))))
        pre = preprocess(image_of(512, 512), cfg)
        assert pre.size == (520, 520)

    @pytest.mark.parametrize("h,w,patch,j", [
        (300, 500, 8, 2), (97, 211, 4, 1), (1000, 640, 16, 0), (130, 70, 10, 1),
    ])
    def test_matches_candidate_search_oracle(self, h, w, patch, j):
        plan = CompressionPlan(tuple((i + 1, "avg") for i in range(j)))
        cfg = EncoderConfig(depth=4, dim=8, heads=2, mlp_ratio=2.0, patch=patch, plan=plan)
        pre = preprocess(image_of(h, w), cfg)
        m = patch * 2 ** j
        assert pre.size == (nearest_multiple_oracle(h, m), nearest_multiple_oracle(w, m))

    def test_rejects_degenerate(self):
        cfg = desk_config(patch=4)
        with pytest.raises(ValidationError):
            preprocess(np.zeros((0, 4, 3)), cfg)


class TestTokenCount:
    def test_table_baseline(self):
        cfg = EncoderConfig(depth=27, dim=8, heads=2, mlp_ratio=2.0, patch=16,
                            plan=CompressionPlan(((27, "pixel_unshuffle"),)))
        assert token_count(cfg, 1024, 1024) == [4096, 1024]

    def test_table_two_stage(self):
        cfg = EncoderConfig(depth=27, dim=8, heads=2, mlp_ratio=2.0, patch=16,
                            plan=CompressionPlan(((4, "avg"), (18, "avg"))))
        assert token_count(cfg, 1024, 1024) == [4096, 1024, 256]

    def test_table_refined_patch(self):
        cfg = EncoderConfig(depth=27, dim=8, heads=2, mlp_ratio=2.0, patch=8,
                            plan=CompressionPlan(((4, "ca"), (18, "ca"), (27, "pixel_unshuffle"))))
        assert token_count(cfg, 1024, 1024) == [16384, 4096, 1024, 256]

    def test_vanilla_vit_geometry(self):
        cfg = EncoderConfig(depth=2, dim=8, heads=2, mlp_ratio=2.0, patch=14)
        assert token_count(cfg, 336, 336) == [576]

    def test_rejects_indivisible(self):
        cfg = desk_config(patch=16, plan=CompressionPlan(((1, "avg"),)))
        with pytest.raises(ValidationError):
            token_count(cfg, 1000, 1024)


class TestSinusoidalPos:
    def test_origin_components(self):
        dim = 16
        pe = sinusoidal_pos_2d(3, 3, dim)
        origin = pe[0]
        assert np.sum(origin == 0.0) == dim // 2  # sin banks
        assert np.sum(origin == 1.0) == dim // 2  # cos banks

    def test_deterministic(self):
        a = sinusoidal_pos_2d(5, 7, 8)
        b = sinusoidal_pos_2d(5, 7, 8)
        assert a.tobytes() == b.tobytes()

    def test_distinct_positions_distinct_codes_128(self):
        # code(r, c) = [row_code(r), col_code(c)], so grid-wide uniqueness
        # reduces to pairwise distinctness of the 128 per-axis codes
        dim = 16
        pe = sinusoidal_pos_2d(128, 1, dim)
        axis = pe[:, : dim // 2]
        diff = axis[:, None, :] - axis[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        dist[np.diag_indices(128)] = np.inf
        assert dist.min() > 1e-9

    def test_small_grid_exhaustive(self):
        pe = sinusoidal_pos_2d(12, 12, 8)
        diff = pe[:, None, :] - pe[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        dist[np.diag_indices(144)] = np.inf
        assert dist.min() > 1e-9

    def test_rejects_bad_dim(self):
        with pytest.raises(ValidationError):
            sinusoidal_pos_2d(2, 2, 6)


class TestInitState:
    def test_same_seed_bitwise_identical(self):
        cfg = desk_config(patch=4, plan=CompressionPlan(((2, "ca"), (4, "pixel_unshuffle"))))
        a = init_state(cfg, 11)
        b = init_state(cfg, 11)
        assert a.patch_weights.weight.tobytes() == b.patch_weights.weight.tobytes()
        for ba, bb in zip(a.blocks, b.blocks):
            for f in ba.__dataclass_fields__:
                assert getattr(ba, f).tobytes() == getattr(bb, f).tobytes()

    @pytest.mark.parametrize("kind", ["ca", "pixel_unshuffle"])
    def test_fresh_compressors_match_avg_in_full_forward(self, kind):
        img = image_of(32, 32, seed=3)
        plan_k = CompressionPlan(((2, kind), (4, kind)))
        plan_avg = CompressionPlan(((2, "avg"), (4, "avg")))
        cfg_k = desk_config(patch=4, plan=plan_k)
        cfg_avg = desk_config(patch=4, plan=plan_avg)
        out_k = forward(img, init_state(cfg_k, 5), cfg_k)
        out_avg = forward(img, init_state(cfg_avg, 5), cfg_avg)
        assert np.max(np.abs(out_k.tokens - out_avg.tokens)) <= 1e-10


class TestForward:
    def test_shape_identity_no_compression(self):
        cfg = EncoderConfig(depth=2, dim=8, heads=2, mlp_ratio=2.0, patch=1, channels=1)
        out = forward(image_of(2, 2, 1), init_state(cfg, 0), cfg)
        assert (out.h, out.w) == (2, 2)

    def test_deterministic_bitwise(self):
        cfg = desk_config(patch=8, plan=CompressionPlan(((3, "ca"),)))
        st = init_state(cfg, 1)
        img = image_of(64, 64, seed=2)
        a = forward(img, st, cfg)
        b = forward(img, st, cfg)
        assert a.tokens.tobytes() == b.tokens.tobytes()

    def test_index_zero_compresses_before_blocks(self):
        cfg = EncoderConfig(depth=1, dim=8, heads=2, mlp_ratio=2.0, patch=4,
                            plan=CompressionPlan(((0, "avg"),)), channels=1)
        out = forward(image_of(16, 16, 1), init_state(cfg, 0), cfg)
        assert (out.h, out.w) == (2, 2)

    @pytest.mark.parametrize("patch", [4, 8, 10, 14, 16])
    @pytest.mark.parametrize("j", [0, 1, 2, 3])
    def test_shape_law_exhaustive(self, patch, j):
        plan = CompressionPlan(tuple((i + 1, "avg") for i in range(j)))
        depth = max(j, 1) + 1
        cfg = EncoderConfig(depth=depth, dim=8, heads=2, mlp_ratio=2.0,
                            patch=patch, plan=plan)
        size = patch * 2 ** j * 2
        img = image_of(size, size, seed=patch + j)
        out = forward(img, init_state(cfg, 0), cfg)
        counts = token_count(cfg, size, size)
        assert out.tokens.shape[0] == counts[-1]
        assert (out.h, out.w) == (size // patch // 2 ** j, size // patch // 2 ** j)

    def test_shape_law_512(self):
        cfg = desk_config(patch=16, plan=CompressionPlan(((2, "avg"), (4, "ca"))), depth=4, dim=16)
        out = forward(image_of(512, 512, seed=9), init_state(cfg, 0), cfg)
        assert out.tokens.shape[0] == token_count(cfg, 512, 512)[-1] == 64

    def test_preprocess_inside_forward(self):
        cfg = desk_config(patch=8, plan=CompressionPlan(((1, "avg"),)), depth=2, dim=8, heads=2)
        out = forward(image_of(30, 34, seed=4), init_state(cfg, 0), cfg)
        # 30x34 resizes to 32x32 (nearest multiples of 16)
        assert (out.h, out.w) == (2, 2)

    def test_float32_path(self):
        cfg = desk_config(patch=8, plan=CompressionPlan(((2, "pixel_unshuffle"),)), depth=2)
        st = init_state(cfg, 3)
        img = image_of(64, 64, seed=5)
        out64 = forward(img, st, cfg)
        out32 = forward(img, st, cfg, dtype=np.float32)
        assert out32.tokens.dtype == np.float32
        assert (out32.h, out32.w) == (out64.h, out64.w)
        assert np.max(np.abs(out32.tokens - out64.tokens)) < 1e-2

    def test_rejects_state_config_mismatch(self):
        cfg = desk_config(patch=8)
        other = desk_config(patch=8, depth=3)
        with pytest.raises(ValidationError):
            forward(image_of(32, 32), init_state(other, 0), cfg)


class TestPaperGeometryShapes:
    """27-block geometry at reduced width; token counts do not depend on dim."""

    def test_patch16_single_late_compressor(self):
        cfg = EncoderConfig(depth=27, dim=4, heads=1, mlp_ratio=2.0, patch=16,
                            plan=CompressionPlan(((27, "pixel_unshuffle"),)))
        out = forward(image_of(1024, 1024, seed=6), init_state(cfg, 0), cfg,
                      dtype=np.float32)
        assert out.tokens.shape[0] == 1024

    def test_patch8_three_stage(self):
        cfg = EncoderConfig(depth=27, dim=4, heads=1, mlp_ratio=2.0, patch=8,
                            plan=CompressionPlan(((4, "ca"), (18, "ca"), (27, "pixel_unshuffle"))))
        out = forward(image_of(1024, 1024, seed=7), init_state(cfg, 0), cfg,
                      dtype=np.float32)
        assert out.tokens.shape[0] == 256
