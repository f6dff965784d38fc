import numpy as np
import pytest

from vitgrid import (
    PatchEmbedWeights,
    ValidationError,
    CompressionPlan,
    desk_config,
    forward,
    init_state,
    load_patch_weights,
    load_state,
    read_tensors,
    save_patch_weights,
    save_state,
    write_tensors,
)


class TestContainer:
    def test_f64_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "a": rng.normal(size=(3, 5)),
            "b": rng.normal(size=7),
            "scalar": np.array(np.pi),
        }
        path = tmp_path / "t.vtt"
        write_tensors(path, tensors, meta={"note": "hello world", "k": 3})
        back, meta = read_tensors(path)
        assert meta == {"note": "hello world", "k": "3"}
        for name, arr in tensors.items():
            assert back[name].dtype == np.float64
            assert back[name].tobytes() == np.ascontiguousarray(arr).tobytes()

    def test_f32_roundtrip_bit_exact(self, tmp_path):
        arr = np.random.default_rng(1).normal(size=(4, 4)).astype(np.float32)
        path = tmp_path / "t.vtt"
        write_tensors(path, {"x": arr})
        back, _ = read_tensors(path)
        assert back["x"].dtype == np.float32
        assert back["x"].tobytes() == arr.tobytes()

    def test_mixed_dtypes(self, tmp_path):
        path = tmp_path / "t.vtt"
        write_tensors(path, {
            "f32": np.ones(3, dtype=np.float32),
            "f64": np.ones(3, dtype=np.float64),
        })
        back, _ = read_tensors(path)
        assert back["f32"].dtype == np.float32 and back["f64"].dtype == np.float64

    def test_rejects_unsupported_dtype(self, tmp_path):
        with pytest.raises(ValidationError):
            write_tensors(tmp_path / "t.vtt", {"x": np.arange(3, dtype=np.int64)})

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vtt"
        path.write_bytes(b"not a tensor file\n")
        with pytest.raises(ValidationError, match="magic"):
            read_tensors(path)

    def test_rejects_truncated_payload(self, tmp_path):
        path = tmp_path / "t.vtt"
        write_tensors(path, {"x": np.ones((8, 8))})
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(ValidationError, match="payload"):
            read_tensors(path)

    def test_rejects_truncated_header(self, tmp_path):
        path = tmp_path / "t.vtt"
        path.write_bytes(b"vitgrid-tensors 1\ntensor x f64 1 3 0")
        with pytest.raises(ValidationError):
            read_tensors(path)


class TestWeightsFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        w = PatchEmbedWeights(
            weight=rng.normal(size=(6, 3 * 16)), bias=rng.normal(size=6),
            patch=4, channels=3,
        )
        path = tmp_path / "w.vtt"
        save_patch_weights(path, w)
        back = load_patch_weights(path)
        assert back.patch == 4 and back.channels == 3
        assert back.weight.tobytes() == w.weight.tobytes()
        assert back.bias.tobytes() == w.bias.tobytes()

    def test_missing_tensor_rejected(self, tmp_path):
        path = tmp_path / "w.vtt"
        write_tensors(path, {"weight": np.ones((2, 4))}, meta={"patch": 2, "channels": 1})
        with pytest.raises(ValidationError, match="bias"):
            load_patch_weights(path)


class TestStateFile:
    def test_forward_identical_after_roundtrip(self, tmp_path):
        cfg = desk_config(patch=4, plan=CompressionPlan(((1, "ca"), (3, "pixel_unshuffle"), (5, "avg"))),
                          dim=16, heads=2)
        state = init_state(cfg, 33)
        path = tmp_path / "state.vtt"
        save_state(path, cfg, state)
        cfg2, state2 = load_state(path)
        assert cfg2 == cfg
        img = np.random.default_rng(3).uniform(size=(32, 32, 3))
        a = forward(img, state, cfg)
        b = forward(img, state2, cfg2)
        assert a.tokens.tobytes() == b.tokens.tobytes()

    def test_plan_free_state(self, tmp_path):
        cfg = desk_config(patch=8, dim=8, heads=2, depth=2)
        state = init_state(cfg, 1)
        path = tmp_path / "state.vtt"
        save_state(path, cfg, state)
        cfg2, state2 = load_state(path)
        assert cfg2.plan.count == 0
        assert len(state2.blocks) == 2
