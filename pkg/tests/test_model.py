import math

import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from faithlog.errors import ConfigError, ShapeError
from faithlog.losses import LossWeights, ce_loss, combine, LossTerms, consistency_loss, kl_loss, rank_loss
from faithlog.model import (
    DTYPE, Detector, FaithLogModel, ModelConfig, argmax_events, positional_encoding, remove_event,
)
from faithlog.embedding import HashEmbedding
from faithlog.log_pipeline import EventSequence, EventTemplate


def pe_oracle(i, j, d):
    mpmath.mp.dps = 40
    angle = mpmath.mpf(i) / mpmath.power(10000, mpmath.mpf(2 * j) / d)
    return float(mpmath.sin(angle)), float(mpmath.cos(angle))


def test_positional_encoding_against_high_precision_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = 2 * int(rng.integers(1, 129))
        i = int(rng.integers(0, 512))
        j = int(rng.integers(0, d // 2))
        s, c = pe_oracle(i, j, d)
        pe = positional_encoding(i, d)
        assert abs(pe[2 * j] - s) <= 1e-9 and abs(pe[2 * j + 1] - c) <= 1e-9


def test_positional_encoding_worked_values():
    pe0 = positional_encoding(0, 16)
    assert np.all(pe0[0::2] == 0) and np.all(pe0[1::2] == 1)
    pe1 = positional_encoding(1, 4)
    assert pe1[:2] == pytest.approx([0.841471, 0.540302], abs=1e-6)
    assert pe1[2:] == pytest.approx([0.0099998, 0.99995], abs=1e-6)
    with pytest.raises(ConfigError):
        positional_encoding(1, 5)


def _batch(seed=0, b=3, n=6, d=16):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(b, n, d, generator=g, dtype=DTYPE)


def _mask(b, lengths):
    n = max(lengths)
    m = torch.zeros(b, n, dtype=torch.bool)
    for i, k in enumerate(lengths):
        m[i, :k] = True
    return m


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), lengths=st.lists(st.integers(1, 7), min_size=1, max_size=4),
       negative=st.booleans())
def test_attention_rows_and_signed_score_invariants(seed, lengths, negative):
    model = FaithLogModel(ModelConfig(d_model=16, n_heads=2, n_layers=2, hidden=16, negative_pathway=negative,
                                      seed=seed % 7))
    mask = _mask(len(lengths), lengths)
    with torch.no_grad():
        out = model(_batch(seed, len(lengths), mask.shape[1]), mask)
    for w_pos, w_neg in out.attention:
        for w in (w_pos, w_neg) if negative else (w_pos,):
            rows = w.sum(-1)[mask[:, None, :].expand(-1, w.shape[1], -1)]
            assert torch.allclose(rows, torch.ones_like(rows), atol=1e-6)
    signed = out.signed.masked_fill(~mask, 0)
    assert float(signed.abs().max()) <= 1 + 1e-12
    total = signed.sum(1)
    expected = torch.zeros_like(total) if negative else torch.ones_like(total)
    assert torch.allclose(total, expected, atol=1e-6)
    dist = out.distribution.sum(1)
    assert torch.allclose(dist, torch.ones_like(dist), atol=1e-6)
    assert bool(((out.confidence > 0) & (out.confidence < 1)).all())
    loc = out.locator[mask]
    assert bool(((loc >= 0) & (loc <= 1)).all())


def test_identical_pathways_cancel():
    model = FaithLogModel(ModelConfig(d_model=16, n_heads=4, n_layers=1, hidden=16))
    attn = model.layers[0].attn
    with torch.no_grad():
        for name in ("q", "k", "v"):
            getattr(attn, f"{name}_neg").weight.copy_(getattr(attn, f"{name}_pos").weight)
    x = _batch(1, 2, 5)
    with torch.no_grad():
        a, _, _ = attn(x, torch.ones(2, 5, dtype=torch.bool))
        out = model(x)
    assert float(a.abs().max()) <= 1e-6
    assert float(out.signed.abs().max()) <= 1e-12


def test_single_event_signed_score():
    model = FaithLogModel(ModelConfig(d_model=8, n_heads=2, n_layers=1, hidden=8))
    out = model(_batch(2, 1, 1, 8))
    assert float(out.signed[0, 0]) == 0.0
    base = FaithLogModel(ModelConfig(d_model=8, n_heads=2, n_layers=1, hidden=8, negative_pathway=False))
    assert float(base(_batch(2, 1, 1, 8)).signed[0, 0]) == pytest.approx(1.0)


def test_same_seed_same_forward_bitwise():
    x = _batch(3)
    a = FaithLogModel(ModelConfig(d_model=16, n_heads=2, seed=4))(x)
    b = FaithLogModel(ModelConfig(d_model=16, n_heads=2, seed=4))(x)
    assert torch.equal(a.confidence, b.confidence) and torch.equal(a.signed, b.signed)


def test_locator_is_position_wise():
    model = FaithLogModel(ModelConfig(d_model=16, n_heads=2))
    x = _batch(5, 1, 7)
    perm = torch.randperm(7, generator=torch.Generator().manual_seed(0))
    assert torch.allclose(model.locate(x)[0, perm], model.locate(x[:, perm])[0], atol=0, rtol=0)


def test_removal_equals_surviving_event_at_original_position():
    model = FaithLogModel(ModelConfig(d_model=16, n_heads=2))
    x = _batch(6, 1, 2)
    mask = remove_event(torch.ones(1, 2, dtype=torch.bool), 0)
    removed = model(x, mask)
    alone = model(x[:, 1:], positions=torch.tensor([[1]]))
    assert torch.allclose(removed.confidence, alone.confidence, atol=1e-12)
    assert float(removed.distribution[0, mask[0]].sum()) == pytest.approx(1.0, abs=1e-6)


def test_removal_errors():
    with pytest.raises(IndexError):
        remove_event(torch.ones(1, 3, dtype=torch.bool), 3)
    with pytest.raises(ValueError):
        remove_event(torch.ones(1, 1, dtype=torch.bool), 0)


def test_argmax_breaks_ties_toward_lowest_index():
    signed = torch.tensor([[0.2, 0.5, 0.5, 0.1]], dtype=DTYPE)
    assert argmax_events(signed, torch.ones(1, 4, dtype=torch.bool)).tolist() == [1]
    assert argmax_events(signed, torch.tensor([[True, False, True, True]])).tolist() == [2]


def test_config_validation_and_shape_errors():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, n_heads=4)
    model = FaithLogModel(ModelConfig(d_model=16, n_heads=2))
    with pytest.raises(ShapeError):
        model(torch.zeros(1, 3, 8, dtype=DTYPE))
    with pytest.raises(ShapeError):
        model(torch.zeros(1, 3, 16, dtype=DTYPE), torch.zeros(1, 3, dtype=torch.bool))


def test_detector_reports_surviving_events_only():
    templates = {i: EventTemplate(i, (f"e{i}",)) for i in range(4)}
    det = Detector(FaithLogModel(ModelConfig(d_model=16, n_heads=2)), HashEmbedding(templates, 16))
    seq = EventSequence("s", (0, 1, 2, 3), 0)
    full = det.detect(seq)
    again = det.detect(seq)
    assert full.confidence == again.confidence
    res = det.detect_removed(seq, 1)
    assert res.positions.tolist() == [0, 2, 3]
    assert len(res.attention.signed_scores) == 3
    assert res.attention.distribution.sum() == pytest.approx(1.0, abs=1e-6)


# --- finite-difference check of the combined objective ----------------------


def _objective(model, emb, mask, labels, pairs, weights, frozen_target):
    """Combined loss with the KL target held at ``frozen_target``.

    The KL term treats the locator as a constant; holding it fixed while
    perturbing parameters makes the finite difference see the same function
    that autograd differentiates.
    """
    out = model(emb, mask)
    ce = ce_loss(out.confidence, labels)
    rank = torch.stack([rank_loss(out.locator[n], out.locator[a]) for n, a in pairs]).mean()
    kl = torch.stack([kl_loss(frozen_target[b], out.distribution[b]) for b in range(emb.shape[0])]).mean()
    anomalous = torch.nonzero(labels == 1).flatten()
    top = argmax_events(out.signed[anomalous], mask[anomalous])
    reduced = mask[anomalous].clone()
    reduced[torch.arange(len(anomalous)), top] = False
    cons = consistency_loss(out.confidence[anomalous], model(emb[anomalous], reduced).confidence).mean()
    return combine(LossTerms(ce, rank, kl, cons), weights)


def test_total_loss_gradient_matches_central_differences():
    torch.manual_seed(0)
    config = ModelConfig(d_model=8, n_heads=2, n_layers=1, hidden=8, seed=3)
    model = FaithLogModel(config)
    emb = torch.randn(4, 3, 8, dtype=DTYPE, generator=torch.Generator().manual_seed(9))
    mask = torch.ones(4, 3, dtype=torch.bool)
    labels = torch.tensor([0.0, 1.0, 0.0, 1.0], dtype=DTYPE)
    pairs = [(0, 1), (2, 3)]
    weights = LossWeights(1.0, 0.5, 0.5, 0.5)
    with torch.no_grad():
        target = model(emb, mask).locator.detach().clone()

    model.zero_grad()
    _objective(model, emb, mask, labels, pairs, weights, target).backward()
    step = 1e-5
    groups = {}
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1)
        numeric = torch.zeros_like(analytic)
        flat = p.data.view(-1)
        for k in range(flat.numel()):
            old = float(flat[k])
            with torch.no_grad():
                flat[k] = old + step
                up = float(_objective(model, emb, mask, labels, pairs, weights, target))
                flat[k] = old - step
                down = float(_objective(model, emb, mask, labels, pairs, weights, target))
                flat[k] = old
            numeric[k] = (up - down) / (2 * step)
        scale = max(float(analytic.norm()), float(numeric.norm()), 1e-12)
        groups[name] = float((analytic - numeric).norm()) / scale
    bad = {k: v for k, v in groups.items() if v >= 1e-4}
    assert not bad, bad
    assert len(groups) == len(list(model.parameters()))
