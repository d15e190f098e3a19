import logging
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from src.adguardian.components.ssl_model import (
    FeatureEncoder,
    GumbelVectorQuantizer,
    SslCtcModel,
    Wav2VecModel,
    contrastive_loss,
    conv_output_length,
    diversity_loss,
    receptive_field,
    sample_masks,
    sample_negatives,
)
from src.adguardian.utils.exceptions import FrontendError
from tests.conftest import TINY_SSL

KERNELS, STRIDES = (10, 8, 4, 4), (5, 4, 4, 4)


def test_frame_counts():
    assert conv_output_length(160000, KERNELS, STRIDES) == 499
    assert conv_output_length(16000, KERNELS, STRIDES) == 49
    assert receptive_field(KERNELS, STRIDES) == 345
    assert conv_output_length(345, KERNELS, STRIDES) == 1
    assert conv_output_length(5, KERNELS, STRIDES) == 0


def test_feature_encoder_shapes():
    encoder = FeatureEncoder(16, KERNELS, STRIDES)
    assert encoder(torch.randn(2, 16000)).shape == (2, 49, 16)
    with pytest.raises(FrontendError):
        encoder(torch.randn(1, 344))


def test_masks_with_zero_probability_force_one_span(rng):
    plan = sample_masks(50, 0.0, 10, rng)
    assert plan.forced
    assert plan.mask.sum() == 10
    start = int(plan.starts[0])
    assert plan.mask[start:start + 10].all()


def test_masks_without_forcing_can_be_empty(rng):
    plan = sample_masks(50, 0.0, 10, rng, force_span=False)
    assert not plan.mask.any() and not plan.forced


def test_full_probability_masks_everything(rng):
    assert sample_masks(30, 1.0, 10, rng).mask.all()


def test_spans_are_clipped_at_the_end():
    rng = np.random.default_rng(3)
    for _ in range(50):
        plan = sample_masks(12, 0.2, 10, rng)
        assert plan.mask.size == 12
        for s in plan.starts:
            assert plan.mask[s:min(s + 10, 12)].all()


def test_negatives_are_distinct_masked_others(rng):
    masked = np.array([2, 3, 4, 9, 10, 11, 12, 20])
    negatives = sample_negatives(masked, 5, rng)
    assert negatives.shape == (8, 5)
    for i, row in enumerate(negatives):
        assert len(set(row)) == 5
        assert masked[i] not in row
        assert set(row) <= set(masked)


def test_negatives_shrink_with_warning(rng, caplog):
    with caplog.at_level(logging.WARNING, logger="adguardian"):
        negatives = sample_negatives(np.array([1, 2, 3]), 100, rng)
    assert negatives.shape == (3, 2)
    assert any("reduced from 100 to 2" in m for m in caplog.messages)


def test_uniform_similarity_gives_log_k_plus_one():
    K = 5
    context = torch.randn(10, 8, dtype=torch.float64)
    quantized = torch.ones(10, 8, dtype=torch.float64)
    mask = np.zeros(10, dtype=bool)
    mask[:K + 1] = True
    loss = contrastive_loss(context, quantized, mask, K, 0.1, np.random.default_rng(0))
    assert float(loss) == pytest.approx(math.log(K + 1), abs=1e-9)


def test_perfect_prediction_drives_loss_to_zero():
    context = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    quantized = context.clone()
    mask = np.array([True, True])
    loss = contrastive_loss(context, quantized, mask, 1, 0.01, negatives=np.array([[1], [0]]))
    assert float(loss) == pytest.approx(0.0, abs=1e-12)


def test_matches_direct_computation():
    gen = torch.Generator().manual_seed(0)
    context = torch.randn(5, 4, generator=gen, dtype=torch.float64)
    quantized = torch.randn(5, 4, generator=gen, dtype=torch.float64)
    mask = np.array([True, False, True, True, True])
    negatives = np.array([[2, 3], [0, 4], [0, 2], [3, 0]])
    kappa = 0.1

    expected = 0.0
    for row, t in enumerate([0, 2, 3, 4]):
        sims = [F.cosine_similarity(context[t], quantized[j], dim=0) / kappa for j in [t, *negatives[row]]]
        sims = torch.stack(sims)
        expected += -(sims[0] - torch.logsumexp(sims, dim=0))
    expected /= 4

    got = contrastive_loss(context, quantized, mask, 2, kappa, negatives=negatives)
    assert float(got) == pytest.approx(float(expected), rel=1e-10)


def test_contrastive_gradients():
    context = torch.randn(6, 4, dtype=torch.float64, requires_grad=True)
    quantized = torch.randn(6, 4, dtype=torch.float64, requires_grad=True)
    mask = np.array([True, True, False, True, True, False])
    negatives = sample_negatives(np.flatnonzero(mask), 2, np.random.default_rng(1))
    assert torch.autograd.gradcheck(
        lambda c, q: contrastive_loss(c, q, mask, 2, 0.5, negatives=negatives), (context, quantized))


def test_empty_mask_gives_zero_with_zero_gradients():
    context = torch.randn(4, 3, requires_grad=True)
    quantized = torch.randn(4, 3, requires_grad=True)
    loss = contrastive_loss(context, quantized, np.zeros(4, dtype=bool), 3, 0.1)
    assert float(loss) == 0.0
    loss.backward()
    assert not context.grad.any() and not quantized.grad.any()


def test_diversity_loss_bounds():
    assert float(diversity_loss(torch.tensor(16.0), 16)) == 0.0
    assert float(diversity_loss(torch.tensor(2.0), 16)) == pytest.approx(14 / 16)


def test_temperature_anneals_to_floor():
    quantizer = GumbelVectorQuantizer(16, 2, 8, 16, (2.0, 0.5, 0.995))
    assert quantizer.set_num_updates(0) == 2.0
    assert quantizer.set_num_updates(100) == pytest.approx(2.0 * 0.995 ** 100)
    assert quantizer.set_num_updates(10_000) == 0.5
    assert quantizer.num_vars == 16


def test_quantizer_outputs():
    torch.manual_seed(0)
    quantizer = GumbelVectorQuantizer(16, 2, 8, 16, (2.0, 0.5, 0.995)).eval()
    out = quantizer(torch.randn(2, 7, 16))
    assert out["x"].shape == (2, 7, 16)
    assert out["targets"].shape == (2, 7, 2)
    assert 1.0 <= float(out["code_perplexity"]) <= 16.0
    assert 1.0 <= float(out["prob_perplexity"]) <= 16.0


def test_pretrain_loss_is_finite_and_differentiable(rng):
    torch.manual_seed(0)
    model = Wav2VecModel(TINY_SSL)
    wav = torch.randn(2, 8000)
    lengths = torch.tensor([8000, 6000])
    frames = model.encoder.feature_encoder.output_lengths(lengths).tolist()
    masks = [sample_masks(n, 0.2, 3, rng).mask for n in frames]
    out = model.pretrain_loss(wav, lengths, masks, num_negatives=4, temperature=0.1, diversity_weight=0.1, rng=rng)
    assert set(out) == {"loss", "contrastive", "diversity", "prob_perplexity", "code_perplexity"}
    assert torch.isfinite(out["loss"])
    out["loss"].backward()
    assert model.quantizer.weight_proj.weight.grad.abs().sum() > 0
    assert model.head.final_proj.weight.grad.abs().sum() > 0


def test_checkpoint_module_names():
    model = Wav2VecModel(TINY_SSL)
    assert sorted(model.modules_for_checkpoint()) == ["context_encoder", "contrastive_head", "feature_encoder",
                                                       "quantizer"]
    ctc = SslCtcModel(TINY_SSL, odim=5)
    assert sorted(ctc.modules_for_checkpoint()) == ["context_encoder", "feature_encoder", "projection"]


def test_ssl_ctc_model_shapes():
    torch.manual_seed(0)
    model = SslCtcModel(TINY_SSL, odim=5).eval()
    log_probs, frame_lengths = model(torch.randn(2, 16000), torch.tensor([16000, 8000]))
    assert log_probs.shape == (2, 49, 5)
    assert frame_lengths.tolist() == [49, 24]
    assert torch.allclose(log_probs.exp().sum(-1), torch.ones(2, 49), atol=1e-5)


def test_masked_fraction_matches_expected_coverage():
    n, p, span = 200, 0.065, 10
    rng = np.random.default_rng(5)
    fractions = [sample_masks(n, p, span, rng).mask.mean() for _ in range(1000)]
    # frame t is covered iff one of its min(span, t + 1) possible starts fires
    expected = np.mean([1.0 - (1.0 - p) ** min(span, t + 1) for t in range(n)])
    assert abs(np.mean(fractions) - expected) <= 0.2 * expected
    assert expected < p * span


def test_padded_frames_do_not_change_perplexity():
    torch.manual_seed(0)
    quantizer = GumbelVectorQuantizer(16, 2, 8, 16, (2.0, 0.5, 0.995)).eval()
    x = torch.randn(2, 5, 16)
    pad_mask = torch.tensor([[False] * 5, [False] * 3 + [True] * 2])
    unpadded = quantizer(torch.cat([x[0], x[1, :3]]).unsqueeze(0))

    x[1, 3:] = 50.0
    masked = quantizer(x, pad_mask)
    for key in ("code_perplexity", "prob_perplexity"):
        assert torch.allclose(masked[key], unpadded[key], atol=1e-5), key
    assert not torch.allclose(quantizer(x)["prob_perplexity"], unpadded["prob_perplexity"], atol=1e-5)


def test_straight_through_gradient_matches_relaxed_finite_difference():
    torch.manual_seed(0)
    groups, entries, dim = 2, 3, 4
    quantizer = GumbelVectorQuantizer(dim, groups, entries, dim, (2.0, 0.5, 0.995)).train()
    x = torch.randn(1, 3, dim, requires_grad=True)
    weights = torch.randn(1, 3, dim, dtype=torch.float64)

    torch.manual_seed(7)
    out = quantizer(x)
    (out["x"] * weights.float()).sum().backward()

    # replay the Gumbel noise drawn in the forward pass
    torch.manual_seed(7)
    gumbels = -torch.empty(3 * groups, entries).exponential_().log().double()
    W = quantizer.weight_proj.weight.detach().double()
    b = quantizer.weight_proj.bias.detach().double()
    codebook = quantizer.vars.detach().double()

    def relaxed(xd):
        logits = (xd.reshape(-1, dim) @ W.T + b).view(-1, entries)
        y = torch.softmax((logits + gumbels) / quantizer.curr_temp, dim=-1).view(3, -1)
        q = (y.unsqueeze(-1) * codebook).view(3, groups, entries, -1).sum(-2)
        return (q.view(1, 3, dim) * weights).sum()

    base = x.detach().double()
    eps = 1e-5
    numeric = torch.zeros_like(base)
    for idx in np.ndindex(*base.shape):
        step = torch.zeros_like(base)
        step[idx] = eps
        numeric[idx] = (relaxed(base + step) - relaxed(base - step)) / (2 * eps)
    assert torch.allclose(x.grad.double(), numeric, atol=1e-4, rtol=1e-3)

    # the forward value is the hard codevector selection
    logits = (base.reshape(-1, dim) @ W.T + b).view(-1, entries)
    chosen = (logits + gumbels).argmax(-1).view(3, groups)
    expected = torch.stack([torch.cat([codebook[0, g * entries + int(chosen[t, g])] for g in range(groups)])
                            for t in range(3)])
    assert torch.allclose(out["x"][0].double(), expected, atol=1e-5)
