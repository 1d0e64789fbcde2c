import numpy as np
import pytest

from regione.errors import InvalidArgumentError, InvalidConfigError
from regione.models import AnalyticField, AnalyticModel, SegmentedSequence
from regione.partition import RegionMask
from regione.pipeline import RegionEConfig, gather_scatter, regione_sample, vanilla_sample
from regione.scenario import BenchScenario


def degenerate(cfg: RegionEConfig) -> RegionEConfig:
    lo, hi = cfg.t_sm, cfg.T - cfg.t_st - 1
    return RegionEConfig(
        T=cfg.T, t_st=cfg.t_st, t_sm=cfg.t_sm, forced_steps=tuple(range(hi, lo - 1, -1)), eta=1.5, delta=0.0
    )


def rags_steps(cfg):
    return cfg.T - cfg.t_st - cfg.t_sm - len(cfg.forced_steps)


@pytest.mark.parametrize(
    "cfg",
    [
        RegionEConfig(T=12, t_st=3, t_sm=2, forced_steps=(6,)),
        RegionEConfig(T=12, t_st=3, t_sm=2, forced_steps=(), delta=0.3),
        RegionEConfig(T=12, t_st=2, t_sm=3, forced_steps=(8, 5, 4), delta=0.1),
        RegionEConfig(T=12, t_st=1, t_sm=1, forced_steps=(10, 1), delta=1.0),
    ],
)
def test_accounting(toy_small, cfg):
    model, seq = toy_small.build()
    rep = regione_sample(model, seq, cfg)
    assert rep.full_forward_count == cfg.t_st + len(cfg.forced_steps) + cfg.t_sm
    assert rep.region_forward_count + rep.cached_step_count == rags_steps(cfg)
    rags = [r for r in rep.step_log if r.stage == "rags" and r.kind != "full"]
    assert sorted({r.step for r in rags}) == sorted(r.step for r in rags)
    assert len(rep.step_log) == cfg.T
    assert sorted(r.step for r in rep.step_log) == list(range(1, cfg.T + 1))
    n_full = seq.n_total
    n_region = seq.n_prompt + len(rep.mask.edited_index)
    assert rep.token_steps_actual == rep.full_forward_count * n_full + rep.region_forward_count * n_region
    assert rep.token_steps_actual == sum(r.tokens for r in rep.step_log)
    assert rep.token_steps_actual <= rep.token_steps_vanilla
    assert rep.snapshot_steps[0] == cfg.T - cfg.t_st + 1
    assert rep.snapshot_steps[1:] == [b + 1 for b in cfg.boundaries()[1:]]


def test_default_schedule_layout(toy_small):
    cfg = RegionEConfig()
    assert cfg.boundaries() == [22, 16, 1]
    assert (cfg.T, cfg.t_st, cfg.forced_steps, cfg.t_sm) == (28, 6, (16,), 2)
    assert rags_steps(cfg) == 19


def test_degenerate_config_is_vanilla(toy_small):
    model, seq = toy_small.build()
    cfg = degenerate(toy_small.config)
    base = vanilla_sample(model, seq, cfg)
    fast = regione_sample(model, seq, cfg)
    assert fast.mask.grid.all()
    assert fast.full_forward_count == cfg.T
    assert np.array_equal(fast.final_latent, base.final_latent)
    assert fast.token_steps_actual == fast.token_steps_vanilla


def test_vanilla_token_steps():
    sc = BenchScenario()
    model, seq = sc.build()
    assert seq.n_total == 520
    assert sc.config.T * seq.n_total == 14560


def test_vanilla_t1(rng):
    x0, x1 = rng.standard_normal((2, 4, 3))
    field = AnalyticField.straight(x0, x1)
    seq = SegmentedSequence(np.zeros((0, 3)), x1, x0, (2, 2))
    rep = vanilla_sample(AnalyticModel(field), seq, RegionEConfig(T=1))
    assert rep.full_forward_count == 1
    np.testing.assert_allclose(rep.final_latent, x0, atol=1e-6)


def test_vanilla_analytic_endpoint(analytic_default):
    model, seq = analytic_default.build()
    rep = vanilla_sample(model, seq, analytic_default.config)
    assert np.max(np.abs(rep.final_latent - model.field.position(0.0))) <= 2e-2


def test_analytic_unedited_fidelity(analytic_default):
    model, seq = analytic_default.build()
    cfg = analytic_default.config
    base = vanilla_sample(model, seq, cfg)
    fast = regione_sample(model, seq, cfg)
    np.testing.assert_array_equal(fast.mask.grid, analytic_default.truth_grid())
    u = fast.mask.unedited_index
    assert np.max(np.abs(fast.final_latent[u] - base.final_latent[u])) <= 1e-4
    target = model.field.position(0.0)
    err_fast = np.abs(fast.final_latent[u] - target[u]).max(axis=1)
    err_base = np.abs(base.final_latent[u] - target[u]).max(axis=1)
    assert np.all(err_fast <= err_base + 1e-6)


def test_empty_edited_set(rng):
    x0, x1 = rng.standard_normal((2, 16, 3))
    seq = SegmentedSequence(np.zeros((0, 3)), x1, x0, (4, 4))
    cfg = RegionEConfig(T=10, t_st=2, t_sm=2, forced_steps=(5,), eta=-2.0)
    rep = regione_sample(AnalyticModel(AnalyticField.straight(x0, x1)), seq, cfg)
    assert not rep.mask.grid.any()
    assert rep.region_forward_count == 0
    assert [r.kind for r in rep.step_log if r.stage == "rags" and r.kind != "full"] == ["empty"] * rags_steps(cfg)
    np.testing.assert_allclose(rep.final_latent, x0, atol=1e-5)


def test_cfg_doubles_every_call(toy_small):
    model, seq = toy_small.build()
    base_cfg = toy_small.config
    cfg = RegionEConfig(T=base_cfg.T, t_st=base_cfg.t_st, t_sm=base_cfg.t_sm, forced_steps=base_cfg.forced_steps, cfg_scale=6.0)
    van = vanilla_sample(model, seq, cfg)
    assert van.token_steps_vanilla == 2 * cfg.T * seq.n_total
    rep = regione_sample(model, seq, cfg)
    n_region = seq.n_prompt + len(rep.mask.edited_index)
    assert rep.token_steps_actual == 2 * (rep.full_forward_count * seq.n_total + rep.region_forward_count * n_region)
    assert np.all(np.isfinite(rep.final_latent))
    deg = degenerate(cfg)
    deg = RegionEConfig(**{**deg.__dict__, "cfg_scale": 6.0})
    assert np.array_equal(regione_sample(model, seq, deg).final_latent, vanilla_sample(model, seq, deg).final_latent)


def test_deterministic(toy_small):
    model, seq = toy_small.build()
    a = regione_sample(model, seq, toy_small.config)
    model2, seq2 = toy_small.build()
    b = regione_sample(model2, seq2, toy_small.config)
    assert np.array_equal(a.final_latent, b.final_latent)
    assert a.mask == b.mask
    assert [r.to_dict() for r in a.step_log] == [r.to_dict() for r in b.step_log]


@pytest.mark.parametrize(
    "kw",
    [
        dict(t_st=0),
        dict(t_sm=0),
        dict(t_st=20, t_sm=8),
        dict(forced_steps=(10, 16)),
        dict(forced_steps=(16, 16)),
        dict(forced_steps=(22,)),
        dict(forced_steps=(1,)),
        dict(delta=-0.1),
        dict(eta=float("nan")),
        dict(schedule_kind="cosine"),
    ],
)
def test_invalid_config_rejected_before_model_call(kw):
    class Boom:
        def forward(self, *a, **k):
            raise AssertionError("model called")

    cfg = RegionEConfig(**kw)
    with pytest.raises(InvalidConfigError):
        regione_sample(Boom(), None, cfg)


def test_forced_range_edges_accepted():
    RegionEConfig(forced_steps=(21, 2)).validate()


def test_gather_scatter(rng):
    x = rng.standard_normal((36, 2)).astype(np.float32)
    grid = (np.add.outer(np.arange(6), np.arange(6)) % 2).astype(bool)
    mask = RegionMask.from_grid(grid)
    e, u = mask.edited_index, mask.unedited_index
    np.testing.assert_array_equal(gather_scatter(np.zeros_like(x), x[e], x[u], mask), x)
    # independent bookkeeping of the checkerboard
    ed = rng.standard_normal((18, 2)).astype(np.float32)
    un = rng.standard_normal((18, 2)).astype(np.float32)
    out = gather_scatter(x, ed, un, mask)
    ei = ui = 0
    for r in range(6):
        for c in range(6):
            row = out[r * 6 + c]
            if (r + c) % 2:
                np.testing.assert_array_equal(row, ed[ei])
                ei += 1
            else:
                np.testing.assert_array_equal(row, un[ui])
                ui += 1
    every = RegionMask.from_grid(np.ones((6, 6), bool))
    np.testing.assert_array_equal(gather_scatter(x, ed.repeat(2, 0), np.zeros((0, 2)), every), ed.repeat(2, 0))
    with pytest.raises(InvalidArgumentError):
        gather_scatter(x, ed[:3], un, mask)
