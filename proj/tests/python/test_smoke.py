"""Smoke tests for the python module: bindings load and the main operations
behave like their native counterparts."""

import math

import pytest

import sfi


def test_default_config_values():
    cfg = sfi.default_config()
    assert cfg.limits.n_sink == 4
    assert cfg.limits.n_recent == 256
    assert cfg.limits.k_budget == 2048
    assert cfg.trigger.t_max == 64
    assert cfg.trigger.window_prefill == 16
    assert cfg.selector.lambda_clip == pytest.approx(0.02)
    assert cfg.selector.alpha_soft == pytest.approx(0.5)
    assert cfg.selector.alpha_cross == pytest.approx(0.35)
    assert cfg.trigger.trigger_tokens == [0, 1, 2, 3, 4]


def test_config_file_roundtrip(tmp_path):
    cfg = sfi.default_config()
    cfg.selector.alpha = 1.0 / 3.0
    path = str(tmp_path / "sfi.cfg")
    sfi.save_config_file(cfg, path)
    back = sfi.load_config_file(path)
    assert back.selector.alpha == cfg.selector.alpha


def test_validate_and_normalize():
    d = sfi.ScoreDistribution([1, 2], [0.5, 0.5])
    assert sfi.validate_distribution(d)
    d2 = sfi.ScoreDistribution([1, 2], [0.7, 0.4])
    assert not sfi.validate_distribution(d2)
    n = sfi.normalize([3, 9, 10], [1.0, 1.0, 2.0])
    assert n.mass == pytest.approx([0.25, 0.25, 0.5])
    with pytest.raises(sfi.SfiError):
        sfi.normalize([1, 2], [0.0, 0.0])


def test_fuse_closed_form():
    f = sfi.ScoreDistribution([1, 2, 3], [0.5, 0.3, 0.2])
    r = sfi.ScoreDistribution([1, 2, 3], [1 / 3, 1 / 3, 1 / 3])
    cfg = sfi.SelectorConfig()
    out = sfi.fuse(f, r, cfg)
    assert out.lambda_star == pytest.approx(0.02)
    assert out.fused.mass == pytest.approx([0.4966667, 0.3006667, 0.2026667], abs=1e-6)


def test_evidence_w1_is_softmax():
    w = sfi.LogitWindow()
    w.width = 1
    w.allowed = [5, 9]
    w.values = [[0.0, math.log(2.0)]]
    cfg = sfi.SelectorConfig()
    f = sfi.evidence_from_window(w, cfg)
    assert f[0].mass == pytest.approx([1 / 3, 2 / 3])


def test_selector_pipeline_shapes():
    cfg = sfi.SelectorConfig()
    cfg.k_budget = 3
    allowed = [2, 4, 6, 8, 10]
    w = sfi.LogitWindow()
    w.width = 1
    w.allowed = allowed
    w.values = [[0.5, 0.1, 0.9, 0.3, 0.2], [0.2, 0.8, 0.1, 0.4, 0.6]]
    stats = sfi.make_cache_stats([[1.0] * 5, [1.0] * 5], allowed)
    selected = sfi.run_selector(w, stats, cfg)
    assert len(selected) == 2
    for head in selected:
        assert len(head) == 3
        assert all(p in allowed for p in head)
        assert head == sorted(head)


def test_top_k_matches_exhaustive():
    scores = [0.3, 0.9, 0.9, 0.1]
    positions = [1, 5, 7, 8]
    got = sfi.select_top_k(scores, positions, 2)
    want = sfi.oracle.exhaustive_top_k(scores, positions, 2)
    assert got == want == [5, 7]


def test_toy_model_roundtrip_and_decode(tmp_path):
    spec = sfi.ModelSpec()
    spec.n_layers = 2
    spec.n_kv_heads = 2
    spec.n_query_heads = 4
    spec.head_dim = 16
    spec.vocab_size = 64
    model = sfi.ToyModel.random(spec, 11)
    path = str(tmp_path / "toy.weights")
    model.save_weights(path)
    loaded = sfi.ToyModel.load_weights(path)
    prompt = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8]
    a = sfi.run_dense(model, prompt, 8)
    b = sfi.run_dense(loaded, prompt, 8)
    assert a.tokens == b.tokens


def test_full_retention_matches_dense():
    spec = sfi.ModelSpec()
    spec.vocab_size = 64
    model = sfi.ToyModel.random(spec, 5)
    cfg = sfi.default_config()
    cfg.limits.n_recent = 256  # larger than prompt + new tokens
    prompt = list(range(1, 33))
    sparse = sfi.run_request(model, prompt, cfg.limits, cfg.trigger, cfg.selector, 16)
    dense = sfi.run_dense(model, prompt, 16)
    assert sparse.tokens == dense.tokens
    assert sparse.log[0].slow and sparse.log[0].cause == "initial"
    assert any(not rec.slow for rec in sparse.log)


def test_sparse_run_is_deterministic_and_logged():
    spec = sfi.ModelSpec()
    spec.vocab_size = 64
    model = sfi.ToyModel.random(spec, 8)
    cfg = sfi.default_config()
    cfg.limits.n_sink = 2
    cfg.limits.n_recent = 8
    cfg.limits.k_budget = 4
    cfg.selector.k_budget = 4
    cfg.trigger.t_max = 6
    prompt = [7] * 4 + list(range(10, 40))
    a = sfi.run_request(model, prompt, cfg.limits, cfg.trigger, cfg.selector, 24)
    b = sfi.run_request(model, prompt, cfg.limits, cfg.trigger, cfg.selector, 24)
    assert a.tokens == b.tokens
    assert len(a.log) == 24
    cap = cfg.limits.n_sink + cfg.limits.n_recent + cfg.limits.k_budget
    for rec in a.log:
        if not rec.slow:
            assert 0 < rec.support_size <= cap
    assert max(t for t in range(24) if a.log[t].slow) >= 18  # t_max keeps refreshing


def test_flop_model():
    assert sfi.flop_model(16384, 262, 0.0) == pytest.approx(62.5, abs=0.1)
    assert sfi.flop_model(4096, 4096, 0.5) == pytest.approx(1.0)


def test_oracle_kl_objective():
    f = sfi.ScoreDistribution([1, 2], [1.0, 0.0])
    r = sfi.ScoreDistribution([1, 2], [0.25, 0.75])
    half = sfi.ScoreDistribution([1, 2], [0.5, 0.5])
    assert sfi.oracle.kl_objective(f, r, f, 0.0) == pytest.approx(0.0)
    assert sfi.oracle.kl_objective(f, r, half, 0.0) == pytest.approx(math.log(2.0))
