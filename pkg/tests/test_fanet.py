"""Gate geometry, gated attention, head identities, backbone contracts,
checkpoints, and quality-map records."""

import math

import numpy as np
import pytest
import torch

from fragvqa.errors import CheckpointError, ConfigurationError, ContractError
from fragvqa.fanet import (BiasTables, FANet, FanetConfig, IpNlrHead,
                           build_gate_mask, fragments_to_tensor,
                           grpb_attention, load_checkpoint, pool_quality_map,
                           predict, preset, regress_quality,
                           relative_position_index, rpb_attention,
                           save_checkpoint)
from fragvqa.fanet.gating import (shift_attn_mask, stage_gate_masks,
                                  window_origins, window_partition,
                                  window_reverse)
from fragvqa.fanet.quality import export_quality_map, read_quality_record
from fragvqa.media import VideoClip
from fragvqa.sampling import GridSpec, sample_gms


def _tiny_batch(seed=0, h=100, w=120):
    rng = np.random.Generator(np.random.PCG64(seed))
    clip = VideoClip(frames=rng.integers(0, 256, (8, h, w, 3), dtype=np.uint8))
    return sample_gms(clip, GridSpec(2, 32, 8), seed=seed)


# --- relative position index ----------------------------------------------

def test_relative_index_bijects_coordinate_differences():
    rng = np.random.Generator(np.random.PCG64(0))
    for _ in range(5):
        window = tuple(int(rng.integers(1, 5)) for _ in range(3))
        idx = relative_position_index(window)
        wt, wh, ww = window
        coords = [(t, h, w) for t in range(wt) for h in range(wh) for w in range(ww)]
        n = len(coords)
        assert idx.shape == (n, n)
        seen = {}
        for i in range(n):
            for j in range(n):
                diff = tuple(a - b for a, b in zip(coords[i], coords[j]))
                key = int(idx[i, j])
                # same difference <=> same table row, both directions
                if diff in seen:
                    assert seen[diff] == key
                else:
                    assert key not in seen.values()
                    seen[diff] = key
        assert int(idx.max()) < (2 * wt - 1) * (2 * wh - 1) * (2 * ww - 1)


# --- gate masks ------------------------------------------------------------

def test_gate_all_true_inside_one_minipatch():
    gate = build_gate_mask((0, 0, 0), (2, 4, 4), minipatch_side=8)
    assert bool(gate.all())


def test_gate_block_diagonal_straddling_two_minipatches():
    # 1-D window of 4 positions over mini-patches of side 2
    gate = build_gate_mask((0, 0, 0), (1, 1, 4), minipatch_side=2)
    expect = torch.tensor([[1, 1, 0, 0], [1, 1, 0, 0],
                           [0, 0, 1, 1], [0, 0, 1, 1]], dtype=torch.bool)
    assert torch.equal(gate, expect)


def test_gate_ignores_temporal_axis():
    # two frames, one spatial position each: always intra-patch
    gate = build_gate_mask((0, 0, 0), (2, 1, 1), minipatch_side=1)
    assert bool(gate.all())


def test_gate_partition_properties_random_geometries():
    rng = np.random.Generator(np.random.PCG64(1))
    for _ in range(1000):
        window = tuple(int(rng.integers(1, 5)) for _ in range(3))
        mp = int(rng.integers(1, 9))
        origin = tuple(int(rng.integers(0, 17)) for _ in range(3))
        shift = tuple(int(rng.integers(0, 3)) for _ in range(3))
        extent = tuple(o + wd + 8 for o, wd in zip(origin, window))
        gate = build_gate_mask(origin, window, mp, shift=shift, extent=extent)
        n = gate.shape[0]
        assert torch.equal(gate, gate.T)  # symmetric
        assert bool(gate.diagonal().all())  # reflexive
        g = gate.to(torch.float64)
        reachable = (g @ g) > 0
        assert torch.equal(reachable, gate)  # block-transitive


def test_gate_shift_wraps_to_source_coordinates():
    # origin 0, window 4, shift 2, extent 8, mp 4: rolled positions map to
    # source columns (2,3,4,5) -> cells (0,0,1,1)
    gate = build_gate_mask((0, 0, 0), (1, 1, 4), minipatch_side=4,
                           shift=(0, 0, 2), extent=(1, 1, 8))
    expect = torch.tensor([[1, 1, 0, 0], [1, 1, 0, 0],
                           [0, 0, 1, 1], [0, 0, 1, 1]], dtype=torch.bool)
    assert torch.equal(gate, expect)


def test_stage_gate_masks_order_matches_partition():
    feat, window = (2, 4, 4), (2, 2, 2)
    masks = stage_gate_masks(feat, window, minipatch_side=2)
    origins = window_origins(feat, window)
    assert masks.shape[0] == len(origins) == 4
    for m, origin in zip(masks, origins):
        assert torch.equal(m, build_gate_mask(origin, window, 2, extent=feat))


def test_window_partition_reverse_inverse():
    rng = np.random.Generator(np.random.PCG64(2))
    x = torch.tensor(rng.normal(size=(2, 4, 8, 8, 5)))
    win = (2, 4, 4)
    rebuilt = window_reverse(window_partition(x, win), win, 2, (4, 8, 8))
    assert torch.equal(rebuilt, x)


def test_shift_mask_separates_wrapped_content():
    mask = shift_attn_mask((1, 1, 8), (1, 1, 4), (0, 0, 2))
    assert mask.shape == (2, 4, 4)
    # window containing the wrap [6,7|0,1] must split into two regions
    wrapped = mask[1]
    assert bool(wrapped[0, 1] == 0) and bool(wrapped[2, 3] == 0)
    assert bool(wrapped[0, 2]) and bool(wrapped[1, 3])
    assert shift_attn_mask((1, 1, 8), (1, 1, 4), (0, 0, 0)) is None


# --- gated attention core --------------------------------------------------

def _rand_qkv(rng, heads, n, d):
    return (torch.tensor(rng.normal(size=(1, heads, n, d))),
            torch.tensor(rng.normal(size=(1, heads, n, d))),
            torch.tensor(rng.normal(size=(1, heads, n, d))))


def test_tied_tables_equal_single_table_attention():
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(10):
        window = (1, 2, int(rng.integers(1, 4)))
        heads = int(rng.integers(1, 4))
        n = window[0] * window[1] * window[2]
        tables = BiasTables(window, heads).double()
        with torch.no_grad():
            tables.real_table.normal_()
            tables.pseudo_table.copy_(tables.real_table)
        q, k, v = _rand_qkv(rng, heads, n, 4)
        gate = torch.tensor(rng.integers(0, 2, (n, n)), dtype=torch.bool)
        gate = gate | gate.T | torch.eye(n, dtype=torch.bool)
        got = grpb_attention(q, k, v, tables, gate)
        ref = rpb_attention(q, k, v, tables.real_table, tables.index_map)
        assert torch.equal(got, ref)  # tied tables select equal values bitwise


def test_zero_tables_equal_plain_attention():
    rng = np.random.Generator(np.random.PCG64(4))
    window, heads, d = (2, 2, 2), 2, 3
    n = 8
    tables = BiasTables(window, heads).double()
    q, k, v = _rand_qkv(rng, heads, n, d)
    gate = torch.ones(n, n, dtype=torch.bool)
    got = grpb_attention(q, k, v, tables, gate)
    plain = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1) @ v
    assert torch.allclose(got, plain, atol=1e-14)


def test_two_position_window_matches_hand_arithmetic():
    # window (1,1,2): relative index rows are [[1,0],[2,1]]
    tables = BiasTables((1, 1, 2), 1).double()
    with torch.no_grad():
        tables.real_table.copy_(torch.tensor([[0.3], [0.1], [-0.2]],
                                             dtype=torch.float64))
        tables.pseudo_table.copy_(torch.tensor([[0.7], [-0.4], [0.5]],
                                               dtype=torch.float64))
    q = torch.tensor([[[[1.0], [2.0]]]], dtype=torch.float64)
    k = torch.tensor([[[[0.5], [-1.0]]]], dtype=torch.float64)
    v = torch.tensor([[[[1.0], [3.0]]]], dtype=torch.float64)
    gate = torch.tensor([[True, False], [False, True]])
    got = grpb_attention(q, k, v, tables, gate)[0, 0]

    def row(s_same, s_cross, first):
        e0, e1 = math.exp(s_same if first else s_cross), \
            math.exp(s_cross if first else s_same)
        z = e0 + e1
        return (e0 * 1.0 + e1 * 3.0) / z

    # position 0: scores (q0k0 + real[1], q0k1 + pseudo[0]) / sqrt(1)
    s00, s01 = 1.0 * 0.5 + 0.1, 1.0 * -1.0 + 0.7
    expect0 = (math.exp(s00) * 1.0 + math.exp(s01) * 3.0) / (math.exp(s00) + math.exp(s01))
    # position 1: scores (q1k0 + pseudo[2], q1k1 + real[1])
    s10, s11 = 2.0 * 0.5 + 0.5, 2.0 * -1.0 + 0.1
    expect1 = (math.exp(s10) * 1.0 + math.exp(s11) * 3.0) / (math.exp(s10) + math.exp(s11))
    assert got[0, 0].item() == pytest.approx(expect0, abs=1e-12)
    assert got[1, 0].item() == pytest.approx(expect1, abs=1e-12)


def test_attention_differentiable_everywhere():
    rng = np.random.Generator(np.random.PCG64(5))
    window, heads = (1, 2, 2), 2
    n = 4
    tables = BiasTables(window, heads).double()
    q, k, v = (t.requires_grad_(True) for t in _rand_qkv(rng, heads, n, 3))
    gate = build_gate_mask((0, 0, 0), window, 1)  # mixed gate
    out = grpb_attention(q, k, v, tables, gate)
    out.square().sum().backward()
    for t in (q, k, v, tables.real_table, tables.pseudo_table):
        assert t.grad is not None and torch.all(torch.isfinite(t.grad))
    assert tables.real_table.grad.abs().sum() > 0
    assert tables.pseudo_table.grad.abs().sum() > 0


def test_attention_contract_errors():
    tables = BiasTables((1, 1, 2), 1)
    q = torch.zeros(1, 1, 2, 4)
    with pytest.raises(ContractError):
        grpb_attention(q, q, torch.zeros(1, 1, 3, 4), tables,
                       torch.ones(2, 2, dtype=torch.bool))
    with pytest.raises(ContractError):
        grpb_attention(q, q, q, tables, torch.ones(3, 3, dtype=torch.bool))
    with pytest.raises(ContractError):
        grpb_attention(torch.zeros(1, 1, 3, 4), torch.zeros(1, 1, 3, 4),
                       torch.zeros(1, 1, 3, 4), tables,
                       torch.ones(3, 3, dtype=torch.bool))


def test_untied_tables_with_mixed_gate_diverge_from_single_table():
    rng = np.random.Generator(np.random.PCG64(6))
    window, heads = (1, 1, 4), 1
    n = 4
    tables = BiasTables(window, heads).double()
    with torch.no_grad():
        tables.real_table.normal_()
        tables.pseudo_table.normal_()
    q, k, v = _rand_qkv(rng, heads, n, 2)
    mixed = build_gate_mask((0, 0, 0), window, 2)  # two blocks of two
    got = grpb_attention(q, k, v, tables, mixed)
    ref = rpb_attention(q, k, v, tables.real_table, tables.index_map)
    assert not torch.allclose(got, ref, atol=1e-6)


# --- head ------------------------------------------------------------------

def test_head_constant_field_gives_constant_map():
    head = IpNlrHead(8).double()
    feats = torch.ones(1, 2, 4, 4, 8, dtype=torch.float64)
    scores, qmap = regress_quality(head, feats, minipatch_side=2)
    c = qmap[0, 0, 0, 0]
    assert torch.equal(qmap, c.expand_as(qmap))
    assert scores[0].item() == pytest.approx(c.item(), abs=1e-15)


def test_head_exact_identities_minipatch_one():
    torch.manual_seed(0)
    head = IpNlrHead(6).double()
    feats = torch.randn(2, 3, 4, 4, 6, dtype=torch.float64)
    scores, qmap = regress_quality(head, feats, minipatch_side=1)
    pos = head.positionwise(feats)
    assert torch.equal(qmap, pos)  # map aliases positionwise field: exact
    assert torch.equal(scores, qmap.mean(dim=(1, 2, 3)))  # same reduction: exact


def test_head_two_cell_hand_computation():
    head = IpNlrHead(1, hidden=1).double()
    with torch.no_grad():
        head.fc1.weight.fill_(2.0)
        head.fc1.bias.fill_(0.5)
        head.fc2.weight.fill_(-1.0)
        head.fc2.bias.fill_(0.25)
    feats = torch.tensor([[0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.8]],
                         dtype=torch.float64).view(1, 1, 2, 4, 1)
    _, qmap = regress_quality(head, feats, minipatch_side=2)

    def gelu(x):
        return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

    def rnl(x):
        return -1.0 * gelu(2.0 * x + 0.5) + 0.25

    cell0 = (rnl(0.1) + rnl(0.2) + rnl(0.5) + rnl(0.6)) / 4.0
    cell1 = (rnl(0.3) + rnl(0.4) + rnl(0.7) + rnl(0.8)) / 4.0
    assert qmap.shape == (1, 1, 1, 2)
    assert qmap[0, 0, 0, 0].item() == pytest.approx(cell0, abs=1e-12)
    assert qmap[0, 0, 0, 1].item() == pytest.approx(cell1, abs=1e-12)


def test_head_cell_permutation_invariance():
    torch.manual_seed(1)
    head = IpNlrHead(5).double()
    feats = torch.randn(1, 2, 4, 4, 5, dtype=torch.float64)
    _, qmap = regress_quality(head, feats, minipatch_side=1)
    perm_h = torch.randperm(4)
    perm_w = torch.randperm(4)
    _, qmap_p = regress_quality(head, feats[:, :, perm_h][:, :, :, perm_w], 1)
    assert torch.equal(qmap_p, qmap[:, :, perm_h][:, :, :, perm_w])  # exact relocation
    # the pooled score is permutation-invariant in exact arithmetic
    assert math.fsum(qmap.flatten().tolist()) == math.fsum(qmap_p.flatten().tolist())


def test_head_divisibility_contract():
    head = IpNlrHead(4)
    with pytest.raises(ContractError):
        regress_quality(head, torch.zeros(1, 1, 5, 5, 4), minipatch_side=2)
    with pytest.raises(ContractError):
        pool_quality_map(torch.zeros(1, 1, 4, 4), 0)


# --- config ----------------------------------------------------------------

def test_preset_geometry():
    full = preset("full")
    assert full.input_shape == (32, 224, 224, 3)
    assert full.map_shape == (16, 7, 7)
    assert full.window == (8, 7, 7)
    mobile = preset("mobile")
    assert mobile.input_shape == (16, 128, 128, 3)
    assert mobile.window == (4, 4, 4)
    tiny = preset("tiny")
    assert tiny.input_shape == (8, 64, 64, 3)
    assert tiny.map_shape == (4, 2, 2)
    assert [tiny.minipatch_feature_side(s) for s in range(4)] == [8, 4, 2, 1]
    with pytest.raises(ConfigurationError):
        preset("huge")


def test_config_rejects_bad_geometry():
    with pytest.raises(ConfigurationError):
        FanetConfig(embed_dim=30, heads=(4, 4, 4, 4))  # 30 % 4 != 0
    with pytest.raises(ConfigurationError):
        FanetConfig(depths=(1, 1, 1))
    with pytest.raises(ConfigurationError):
        FanetConfig(patch_size=24)  # not divisible by stage-3 stride 32


def test_validate_input_lists_failures():
    cfg = preset("tiny")
    with pytest.raises(ConfigurationError, match="do not match"):
        cfg.validate_input((8, 96, 96, 3))
    with pytest.raises(ConfigurationError, match="channels"):
        cfg.validate_input((8, 64, 64, 1))


def test_config_dict_round_trip():
    cfg = preset("tiny")
    back = FanetConfig.from_dict(cfg.to_dict())
    assert back == cfg
    with pytest.raises(ConfigurationError):
        FanetConfig.from_dict({"embed_dim": 32, "bogus": 1})


# --- backbone --------------------------------------------------------------

def test_tiny_forward_shapes_and_determinism():
    cfg = preset("tiny")
    model = FANet(cfg, seed=0)
    model.eval()
    batch = _tiny_batch(seed=0)
    x = fragments_to_tensor([batch.fragments, batch.fragments])
    with torch.no_grad():
        scores, qmaps = model(x)
    assert qmaps.shape == (2,) + cfg.map_shape
    assert torch.all(torch.isfinite(scores))
    assert torch.equal(scores[0], scores[1])  # duplicate entries score equally
    with torch.no_grad():
        scores2, _ = model(x)
    assert torch.equal(scores, scores2)  # eval reruns are bitwise identical


def test_construction_is_seed_deterministic():
    cfg = preset("tiny")
    a, b = FANet(cfg, seed=3), FANet(cfg, seed=3)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)
    c = FANet(cfg, seed=4)
    assert any(not torch.equal(p, c.state_dict()[n])
               for n, p in a.state_dict().items())


def test_bias_tables_start_at_zero():
    model = FANet(preset("tiny"), seed=0)
    for name, p in model.named_parameters():
        if "real_table" in name or "pseudo_table" in name:
            assert torch.all(p == 0)


def test_forward_rejects_incompatible_input():
    model = FANet(preset("tiny"), seed=0)
    with pytest.raises(ConfigurationError):
        model(torch.zeros(1, 3, 8, 96, 96))
    with pytest.raises(ContractError):
        model(torch.zeros(3, 8, 64, 64))


def test_model_level_tied_tables_match_single_table_path():
    cfg = preset("tiny")
    model = FANet(cfg, seed=0).double()
    ref = FANet(preset("tiny", grpb_stages=(False,) * 4), seed=0).double()
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(std=0.05)
        for (_, ps), (_, pr) in zip(model.state_dict().items(), ref.state_dict().items()):
            pr.copy_(ps)
        for blocks in model.stages:
            for blk in blocks:
                blk.attn.tables.pseudo_table.copy_(blk.attn.tables.real_table)
        for blocks in ref.stages:
            for blk in blocks:
                blk.attn.tables.pseudo_table.copy_(blk.attn.tables.real_table)
    x = fragments_to_tensor([_tiny_batch(seed=1).fragments]).double()
    with torch.no_grad():
        s_gated, q_gated = model(x)
        s_plain, q_plain = ref(x)
    assert torch.allclose(q_gated, q_plain, atol=1e-10)
    assert abs(s_gated.item() - s_plain.item()) < 1e-10


def test_model_level_untied_tables_diverge():
    cfg = preset("tiny")
    model = FANet(cfg, seed=0).double()
    ref = FANet(preset("tiny", grpb_stages=(False,) * 4), seed=0).double()
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(std=0.05)
        for (_, ps), (_, pr) in zip(model.state_dict().items(), ref.state_dict().items()):
            pr.copy_(ps)
        # untie only where the gate is mixed (stages 2-3 for this preset)
        for blocks in model.stages:
            for blk in blocks:
                blk.attn.tables.pseudo_table.normal_(std=0.5)
    x = fragments_to_tensor([_tiny_batch(seed=2).fragments]).double()
    with torch.no_grad():
        s_gated, _ = model(x)
        s_plain, _ = ref(x)
    assert abs(s_gated.item() - s_plain.item()) > 1e-8


def test_pseudo_table_gradients_follow_gate_mixture():
    # stages whose windows sit inside one mini-patch never touch the
    # pseudo table; stages with straddling windows must train it
    model = FANet(preset("tiny"), seed=0)
    x = fragments_to_tensor([_tiny_batch(seed=3).fragments])
    scores, _ = model(x)
    scores.sum().backward()
    grads = [model.stages[s][0].attn.tables.pseudo_table.grad for s in range(4)]
    assert torch.all(grads[0] == 0) and torch.all(grads[1] == 0)
    assert grads[2].abs().sum() > 0 and grads[3].abs().sum() > 0


# --- checkpoints -----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = FANet(preset("tiny"), seed=0)
    x = fragments_to_tensor([_tiny_batch(seed=4).fragments])
    model.eval()
    with torch.no_grad():
        before, _ = model(x)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path, meta={"epoch": 3})
    loaded, meta = load_checkpoint(path)
    assert meta["epoch"] == 3
    loaded.eval()
    with torch.no_grad():
        after, _ = loaded(x)
    assert torch.equal(before, after)


def test_checkpoint_mismatch_names_parameters(tmp_path):
    model = FANet(preset("tiny"), seed=0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    blob = torch.load(path, weights_only=False)
    blob["state_dict"]["head.fc2.weight"] = torch.zeros(7, 7)
    del blob["state_dict"]["head.fc1.bias"]
    blob["state_dict"]["extra.weight"] = torch.zeros(1)
    bad = tmp_path / "bad.ckpt"
    torch.save(blob, bad)
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(bad)
    msg = str(err.value)
    assert "head.fc2.weight" in msg and "head.fc1.bias" in msg and "extra.weight" in msg


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.ckpt"
    torch.save({"something": 1}, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


# --- quality records -------------------------------------------------------

def test_quality_record_round_trip(tmp_path):
    model = FANet(preset("tiny"), seed=0)
    batch = _tiny_batch(seed=5)
    out = predict(model, batch)
    rec = tmp_path / "map.tsv"
    export_quality_map(out, batch.plan, batch.spec.patch_size, rec)
    score, qmap, rects = read_quality_record(rec)
    assert score == out.score
    assert np.array_equal(qmap, out.quality_map.astype(np.float64))
    assert np.array_equal(rects, batch.plan.patch_rects(32))
    assert np.array_equal(rects, out.patch_geometry)


def test_quality_export_needs_plan(tmp_path):
    model = FANet(preset("tiny"), seed=0)
    out = predict(model, _tiny_batch(seed=6))
    with pytest.raises(ContractError):
        export_quality_map(out, None, 32, tmp_path / "x.tsv")
