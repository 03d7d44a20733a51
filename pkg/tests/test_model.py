import numpy as np
import pytest

from tannet.autograd import Tensor, ops
from tannet.blocks import init_ta
from tannet.model import ArchConfig, ConfigError, build, forward_dense, is_temporal_param, video_score

SMALL = dict(channels=(8, 16, 16, 16), blocks_per_level=(1, 1, 1, 1), num_classes=4)


def clip(rng, T=16, size=32):
    return rng.random((T, 3, size, size)).astype(np.float32)


def randomize_temporal(model, seed=5):
    # default TA init is zero, which would hide any temporal coupling
    rng = np.random.default_rng(seed)
    cfg = model.config
    for lv in range(1, 5):
        spec = cfg.temporal_spec(lv)
        if spec is None:
            continue
        for n, t in init_ta(spec, rng, zero=False).items():
            model.params[f"{cfg._temporal_prefix(lv)}/{n}"].data[...] = t.data


def test_default_logits_shape(rng):
    m = build(ArchConfig())
    assert forward_dense(m, clip(rng)).shape == (16, 8)


def test_batched_forward_matches_single(rng):
    m = build(ArchConfig(**SMALL))
    randomize_temporal(m)
    xs = np.stack([clip(rng), clip(rng)])
    batched = m.forward(Tensor(xs)).data
    for i in range(2):
        np.testing.assert_allclose(batched[i], m.forward(Tensor(xs[i])).data, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("T", [8, 16, 24])
@pytest.mark.parametrize("variant", ["tan", "tan_plainconv", "res2d"])
def test_output_length_equals_input(rng, variant, T):
    m = build(ArchConfig(variant=variant, temporal_len=T, **SMALL))
    assert m.forward(clip(rng, T)).shape == (T, 4)


@pytest.mark.filterwarnings("ignore::tannet.autograd.DilationWarning")
def test_res3d_reduces_16_to_2(rng):
    cfg = ArchConfig(variant="res3d", **SMALL)
    m = build(cfg)
    assert cfg.output_length() == 2
    assert m.features(Tensor(clip(rng))).shape[0] == 2
    # logits are repeated back to the input rate
    assert m.forward(clip(rng)).shape == (16, 4)


def test_zero_model_scores_half(rng):
    m = build(ArchConfig(**SMALL))
    for t in m.params.values():
        t.data[...] = 0
    s = ops.sigmoid(m.forward(clip(rng))).data
    np.testing.assert_array_equal(s, 0.5)


@pytest.mark.parametrize("cfg", [dict(variant="tan", ta_enabled=(False,) * 4), dict(variant="res2d")])
def test_frames_independent_without_temporal_layers(rng, cfg):
    m = build(ArchConfig(**{**SMALL, **cfg}))
    x = clip(rng)
    base = m.forward(x).data
    x2 = x.copy()
    x2[5] = rng.random(x2[5].shape)
    out = m.forward(x2).data
    changed = np.flatnonzero(np.abs(out - base).max(axis=1) > 0)
    assert changed.tolist() == [5]


def test_temporal_modules_couple_frames(rng):
    m = build(ArchConfig(**SMALL))
    randomize_temporal(m)
    x = clip(rng)
    base = m.forward(x).data
    x2 = x.copy()
    x2[8] = rng.random(x2[8].shape)
    diff = np.abs(m.forward(x2).data - base).max(axis=1)
    assert diff[8] > 0
    assert (diff[[4, 5, 11, 12]] > 1e-7).all()


def test_plainconv_couples_fewer_frames(rng):
    x = clip(rng, 24)
    m = build(ArchConfig(variant="tan_plainconv", temporal_len=24, **SMALL))
    randomize_temporal(m)
    base = m.forward(x).data
    x2 = x.copy()
    x2[12] += 0.5
    diff = np.abs(m.forward(x2).data - base).max(axis=1)
    # four k=3 convs reach 4 frames each way
    assert (diff[8:17] > 0).all()
    assert (diff[:8] == 0).all() and (diff[17:] == 0).all()


@pytest.mark.parametrize(
    "changes,field",
    [
        (dict(channels=(8, 8, 8)), "channels"),
        (dict(input_spatial=48), "input_spatial"),
        (dict(variant="res3d", temporal_len=12), "temporal_len"),
        (dict(variant="vit"), "variant"),
        (dict(num_classes=0), "num_classes"),
        (dict(ta_dilations=(1, 1)), "distinct"),
    ],
)
def test_config_validation(changes, field):
    with pytest.raises((ConfigError, ValueError), match=field):
        ArchConfig(**changes)


def test_wrong_clip_shape_rejected():
    m = build(ArchConfig(**SMALL))
    with pytest.raises(ConfigError, match="clip"):
        m.forward(np.zeros((16, 3, 64, 64), dtype=np.float32))


def test_config_dict_round_trip():
    cfg = ArchConfig(variant="tan_plainconv", ta_enabled=(False, True, True, True))
    assert ArchConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="depth"):
        ArchConfig.from_dict({**cfg.to_dict(), "depth": 3})


@pytest.mark.parametrize("variant", ["tan", "res3d", "res2d", "tan_plainconv"])
def test_registry_matches_shapes(variant):
    cfg = ArchConfig(variant=variant)
    m = build(cfg)
    assert list(m.params) == list(cfg.param_shapes())
    assert m.num_params() == sum(int(np.prod(s)) for s in cfg.param_shapes().values())
    assert len(set(m.params)) == len(m.params)


def test_temporal_names():
    names = list(ArchConfig().param_shapes())
    temporal = [n for n in names if is_temporal_param(n)]
    assert len(temporal) == 4 * 3 * 2
    assert all("/ta/branch_d" in n for n in temporal)
    assert not any(is_temporal_param(n) for n in ArchConfig(variant="res2d").param_shapes())


def test_same_seed_same_weights():
    a, b = build(ArchConfig(**SMALL), seed=3), build(ArchConfig(**SMALL), seed=3)
    for n in a.params:
        assert a.params[n].data.tobytes() == b.params[n].data.tobytes()


def test_video_score_examples(rng):
    np.testing.assert_array_equal(video_score(np.array([[1.0, 0.0], [0.0, 1.0]])), [0.5, 0.5])
    np.testing.assert_array_equal(video_score(np.full((5, 3), 0.3)), np.full(3, 0.3))
    s = rng.random((7, 4))
    np.testing.assert_allclose(video_score(s), s.sum(axis=0) / 7, rtol=1e-15)
    with pytest.raises(ValueError):
        video_score(np.zeros((0, 3)))
