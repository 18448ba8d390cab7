import pytest
import torch

from conftest import random_feats, tiny_encoder
from dualasr import numerics as nx
from dualasr.encoder import (
    MIN_FRAMES,
    ConformerEncoder,
    EncoderConfig,
    TransformerBlock,
    sinusoidal_encoding,
    subsampled_length,
)


def _encoder(seed=0, **kw):
    torch.manual_seed(seed)
    enc = ConformerEncoder(tiny_encoder(**kw), vocab_size=11)
    from dualasr.model import init_parameters

    init_parameters(enc, nx.make_generator(seed))
    return enc.eval()


def test_subsampled_lengths():
    assert subsampled_length(100) == 24
    assert subsampled_length(7) == 1
    assert subsampled_length(torch.tensor([100, 7])).tolist() == [24, 1]


def test_too_short_input_names_minimum():
    enc = _encoder()
    x, lens = random_feats([6])
    with pytest.raises(ValueError, match=str(MIN_FRAMES)):
        enc(x, lens)
    x, lens = random_feats([20, 6])
    with pytest.raises(ValueError, match=str(MIN_FRAMES)):
        enc(x, lens)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(attn_dim=10, num_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(depthwise_kernel=4)
    with pytest.raises(ValueError):
        EncoderConfig(block_kind="lstm")


def test_output_shapes_and_valid_lens():
    enc = _encoder()
    x, lens = random_feats([100, 61])
    out = enc(x, lens)
    assert out.states.shape == (2, 24, 16)
    assert out.valid_lens.tolist() == [24, subsampled_length(61)]
    assert out.ctc_logprobs.shape == (2, 24, 11)


def test_ctc_logprobs_normalised_every_frame():
    out = _encoder()(*random_feats([80, 50]))
    lse = torch.logsumexp(out.ctc_logprobs, dim=-1)
    assert lse.abs().max().item() < 1e-5


@pytest.mark.parametrize("kind", ["conformer", "transformer"])
def test_padding_content_is_inert(kind):
    enc = _encoder(block_kind=kind)
    x, lens = random_feats([90, 50])
    base = enc(x, lens)
    v = int(base.valid_lens[1])
    for seed in range(3):
        y = x.clone()
        y[1, 50:] = torch.randn(40, 40, generator=torch.Generator().manual_seed(seed)) * 100
        out = enc(y, lens)
        assert (out.states[1, :v] - base.states[1, :v]).abs().max().item() < 1e-6
        assert (out.ctc_logprobs[1, :v] - base.ctc_logprobs[1, :v]).abs().max().item() < 1e-6
        assert torch.equal(out.states[0], base.states[0])


def test_padding_content_is_inert_in_training_mode():
    # masked batch norm statistics come from valid frames only
    enc = _encoder().train()
    x, lens = random_feats([90, 50])
    base = enc(x, lens)
    v = int(base.valid_lens[1])
    y = x.clone()
    y[1, 50:] = 1e3
    out = enc(y, lens)
    assert (out.states[1, :v] - base.states[1, :v]).abs().max().item() < 1e-5
    assert (out.states[0] - base.states[0]).abs().max().item() < 1e-5


def test_attention_rows_and_masked_keys():
    enc = _encoder()
    x, lens = random_feats([90, 50])
    out = enc(x, lens)
    v = int(out.valid_lens[1])
    for att in enc.attention_modules():
        w = att.weights  # [B, h, Tq, Tk]
        assert (w.sum(-1) - 1).abs().max().item() < 1e-6
        assert w[1, :, :, v:].max().item() < 1e-7


def test_batch_permutation_equivariance():
    enc = _encoder()
    x, lens = random_feats([90, 50, 70], seed=3)
    out = enc(x, lens)
    perm = torch.tensor([2, 0, 1])
    out_p = enc(x[perm], lens[perm])
    for i, j in enumerate(perm.tolist()):
        v = int(out.valid_lens[j])
        assert (out_p.states[i, :v] - out.states[j, :v]).abs().max().item() < 1e-5


def test_eval_is_deterministic():
    enc = _encoder()
    x, lens = random_feats([60, 40])
    assert torch.equal(enc(x, lens).states, enc(x, lens).states)


def test_transformer_block_is_prenorm_mhsa_plus_ffn():
    cfg = tiny_encoder(block_kind="transformer")
    blk = TransformerBlock(cfg).eval()
    x = torch.randn(2, 9, 16)
    mask = torch.ones(2, 9, dtype=torch.bool)
    h = blk.att_norm(x)
    mid = x + blk.att(h, h, key_mask=mask)
    expected = mid + blk.ff.w2(torch.relu(blk.ff.w1(blk.ff_norm(mid))))
    assert torch.allclose(blk(x, mask), expected, atol=1e-6)
    enc = _encoder(block_kind="transformer")
    assert all(isinstance(b, TransformerBlock) for b in enc.blocks)
    assert not any("conv" in n for n, _ in enc.blocks.named_parameters())


def test_sinusoidal_encoding():
    pe = sinusoidal_encoding(10, 8)
    assert torch.allclose(pe[0, 0::2], torch.zeros(4)) and torch.allclose(pe[0, 1::2], torch.ones(4))
    assert pe[3, 0].item() == pytest.approx(torch.sin(torch.tensor(3.0)).item(), abs=1e-6)


def test_encoder_gradient_check_float32():
    enc = _encoder().train()
    x, lens = random_feats([40, 30])
    params = dict(enc.named_parameters())
    rep = nx.grad_check(lambda: enc(x, lens).states.sum(), params, eps=1e-3, max_coords=6)
    assert set(rep.max_rel_error) == set(params)
    assert rep.worst_rel < 1e-3, sorted(rep.max_rel_error.items(), key=lambda kv: -kv[1])[:3]
