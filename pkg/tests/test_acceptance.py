"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured values (run with `pytest tests/test_acceptance.py -v -s`).

The training-based criteria (8-10) share one desk backbone fixture; runs
are seeded and single-threaded, so every number here is reproducible.
Budget on a 2-core CPU: criteria 1-7 well under three minutes combined,
8-10 dominated by training at roughly 0.2 s/step.
"""

import math

import numpy as np
import pytest
import torch

from svbrdfgen.capture import (
    evaluate_relighting,
    generate_replicates,
    select_by_render_error,
)
from svbrdfgen.conditions import condition_stack, sample_lighting
from svbrdfgen.denoiser import NetConfig, expand_input_head, init_backbone
from svbrdfgen.diffusion import (
    SamplerConfig,
    build_schedule,
    expectations,
    gaussian_oracle_denoiser,
    make_training_pair,
    sample_eulera,
)
from svbrdfgen.forge import ForgeConfig, build_manifest, realize_record, selection_weights
from svbrdfgen.forge import RandomFeatureNet
from svbrdfgen.geometry import height_to_normals, normals_to_height
from svbrdfgen.material import MaterialMaps, decode_material, encode_material, random_material
from svbrdfgen.shading import (
    CameraModel,
    EnvironmentMap,
    PointLight,
    eval_brdf,
    ggx_distribution,
    render_env,
    render_point,
)
from svbrdfgen.training import (
    EvalPack,
    TrainConfig,
    finetune_conditional,
    make_eval_pack,
    probe_loss,
    train_backbone,
    train_conditional_scratch,
)

DESK_SEEDS = range(100, 108)
DESK_RES = 32
TRAIN_STEPS = 2000


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def desk_materials():
    return [random_material(DESK_RES, np.random.default_rng(s)) for s in DESK_SEEDS]


@pytest.fixture(scope="module")
def desk_backbone(desk_materials):
    cfg = TrainConfig(steps=TRAIN_STEPS, warmup_steps=100, seed=0)
    return train_backbone(cfg, desk_materials)


@pytest.fixture(scope="module")
def desk_conditional(desk_materials, desk_backbone):
    cfg = TrainConfig(variant="colocated", steps=TRAIN_STEPS, warmup_steps=100, seed=1)
    return finetune_conditional(desk_backbone.model, cfg, desk_materials)


def test_criterion_1_schedule_identity():
    schedule = build_schedule(1000)
    unit_dev = float(np.abs(schedule.a_table**2 + schedule.b_table**2 - 1.0).max())
    increasing = bool((np.diff(schedule.sigmas) > 0).all())
    sigma1 = float(schedule.sigma(1))
    recurrence = math.sqrt(1e-4 / (1 - 1e-4))
    ok = unit_dev < 1e-12 and increasing and abs(sigma1 - recurrence) < 1e-12 and abs(
        sigma1 - 0.010001
    ) < 1e-6
    report(1, ok, f"max|a^2+b^2-1|={unit_dev:.2e}, sigma strictly increasing={increasing}, "
                  f"sigma_1={sigma1:.9f}")


def test_criterion_2_expectation_algebra():
    schedule = build_schedule(1000)
    rng = np.random.default_rng(0)
    n_draws = 100_000
    x = rng.standard_normal(n_draws)
    t = rng.integers(1, 1001, size=n_draws)
    a, b = schedule.a(t), schedule.b(t)
    n = rng.standard_normal(n_draws)
    y = a * x + b * n
    v = a * n - b * x
    e_x, e_n = a * y - b * v, b * y + a * v
    recover = max(float(np.abs(e_x - x).max()), float(np.abs(e_n - n).max()))
    v_arbitrary = rng.standard_normal(n_draws)
    e_x2, e_n2 = a * y - b * v_arbitrary, b * y + a * v_arbitrary
    recon = float(np.abs(a * e_x2 + b * e_n2 - y).max())
    ok = recover < 1e-6 and recon < 1e-6
    report(2, ok, f"exact-target recovery err={recover:.2e}, "
                  f"reconstruction identity err={recon:.2e} over {n_draws} draws")


def test_criterion_3_sampler_oracle():
    schedule = build_schedule(1000)
    errors = {}
    moments = {}
    for steps in (5, 20, 80):
        samples = sample_eulera(
            gaussian_oracle_denoiser, (10_000,), SamplerConfig(steps=steps, seed=steps),
            schedule=schedule,
        )
        mean, var = float(samples.mean()), float(samples.var())
        moments[steps] = (mean, var)
        errors[steps] = abs(mean) + abs(var - 1.0)
    mean20, var20 = moments[20]
    ok = (
        abs(mean20) < 0.05
        and 0.9 < var20 < 1.1
        and errors[5] > errors[20] > errors[80]
    )
    report(3, ok, f"20 steps: mean={mean20:+.4f}, var={var20:.4f}; "
                  f"moment errors 5/20/80 = {errors[5]:.3f}/{errors[20]:.3f}/{errors[80]:.3f}")


def test_criterion_4_brdf_correctness():
    d_err = max(
        abs(float(ggx_distribution(1.0, a)) - 1.0 / (math.pi * a * a)) for a in (0.1, 0.5, 1.0)
    )

    rng = np.random.default_rng(1)

    def dirs(count):
        v = rng.normal(size=(count, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        v[:, 2] = np.abs(v[:, 2]) + 1e-6
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    wi, wo = dirs(10_000), dirs(10_000)
    n = np.zeros((10_000, 3))
    n[:, 2] = 1.0
    diff = rng.random((10_000, 3))
    spec = rng.random((10_000, 3))
    rough = 0.01 + 0.99 * rng.random((10_000, 1))
    recip = float(
        np.abs(
            eval_brdf(diff, spec, rough, n, wi, wo) - eval_brdf(diff, spec, rough, n, wo, wi)
        ).max()
    )

    res, rho, dist = 33, 0.63, 2.0
    flat = np.dstack([np.zeros((res, res, 2)), np.ones((res, res))])
    lamb = MaterialMaps(
        np.full((res, res, 3), rho), np.zeros((res, res, 3)), np.full((res, res, 1), 0.5), flat
    )
    img = render_point(lamb, PointLight((0, 0, dist)), CameraModel.at_distance(dist))
    point_err = abs(float(img[res // 2, res // 2, 0]) - rho / (math.pi * dist**2))

    tilted = random_material(16, np.random.default_rng(2)).normal
    furnace_m = MaterialMaps(
        np.full((16, 16, 3), 0.4), np.zeros((16, 16, 3)), np.full((16, 16, 1), 0.5), tilted
    )
    furnace = render_env(
        furnace_m, EnvironmentMap(np.ones((8, 16, 3))), 256, np.random.default_rng(3)
    )
    furnace_rel = float(np.abs(furnace[..., 0] / 0.4 - 1.0).max())

    ok = d_err < 1e-6 and recip < 1e-6 and point_err < 1e-4 and furnace_rel < 0.02
    report(4, ok, f"GGX D err={d_err:.2e}, reciprocity err={recip:.2e}, "
                  f"Lambertian point err={point_err:.2e}, furnace rel err={furnace_rel:.4f}")


def test_criterion_5_normal_integration():
    res = 64
    idx = (np.arange(res) + 0.5) / res - 0.5
    x = np.broadcast_to(idx[None, :], (res, res))
    y = np.broadcast_to(-idx[:, None], (res, res))

    sx, sy = 0.45, -0.3
    plane = sx * x + sy * y
    n_plane = np.dstack([np.full((res, res), -sx), np.full((res, res), -sy), np.ones((res, res))])
    n_plane /= np.linalg.norm(n_plane, axis=2, keepdims=True)
    h_plane = normals_to_height(n_plane, 1.0 / res)
    plane_rmse = float(np.sqrt(((h_plane - (plane - plane.mean())) ** 2).mean()))

    wave = np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    h_wave = normals_to_height(height_to_normals(wave, 1.0 / res), 1.0 / res)
    wave_rmse = float(np.sqrt(((h_wave - (wave - wave.mean())) ** 2).mean()))

    ok = plane_rmse < 1e-2 and wave_rmse < 1e-2
    report(5, ok, f"plane RMSE={plane_rmse:.2e}, sinusoid RMSE={wave_rmse:.2e} at 64x64")


def test_criterion_6_zero_init_conditioning(desk_materials):
    backbone = init_backbone(NetConfig.desk(resolution=DESK_RES), seed=9)
    with torch.no_grad():  # make the identity nontrivial
        for p in backbone.parameters():
            p.add_(torch.randn_like(p) * 0.02)
    expanded = expand_input_head(backbone, 6)
    rng = np.random.default_rng(4)
    exact = True
    for _ in range(100):
        y = torch.from_numpy(rng.standard_normal((1, 10, DESK_RES, DESK_RES))).float()
        t = torch.tensor([int(rng.integers(1, 1001))])
        cond = torch.from_numpy(5 * rng.standard_normal((1, 6, DESK_RES, DESK_RES))).float()
        if not torch.equal(backbone(y, t), expanded(y, t, cond)):
            exact = False
            break

    pack = make_eval_pack(desk_materials, "colocated", seed=5, count=16)
    base_loss = probe_loss(backbone, EvalPack(pack.y, pack.v_target, pack.t, None))
    cond_loss = probe_loss(expanded, pack)
    gap = abs(base_loss - cond_loss)
    ok = exact and gap < 1e-6
    report(6, ok, f"100 (y,t,cond) triples bit-exact={exact}, step-0 loss gap={gap:.2e}")


def test_criterion_7_forge_invariants():
    rng = np.random.default_rng(6)
    sources = {f"s{i}": random_material(96, np.random.default_rng(900 + i)) for i in range(8)}
    cfg = ForgeConfig(
        crops_per_source=120, crop_min_px=24, crop_max_px=64, out_res=32,
        mixture_count=60, test_sources=1,
    )
    manifest = build_manifest(sorted(sources), cfg, np.random.default_rng(7))
    manifest2 = build_manifest(sorted(sources), cfg, np.random.default_rng(7))
    byte_identical = manifest.to_jsonl() == manifest2.to_jsonl()

    realized = {}

    def resolve(name):
        return sources.get(name) or realized[name]

    count = 0
    for record in manifest.records:
        material = realize_record(record, cfg, resolve)
        material.validate()
        realized[record.name] = material
        count += 1
    assert count >= 1000

    onehot_ok = True
    for seed in range(20):
        srcs = [realized[manifest.records[i].name] for i in (seed, seed + 40)]
        weights = selection_weights(srcs, RandomFeatureNet(2, seed))
        if not (np.isin(weights, (0.0, 1.0)).all() and (weights.sum(axis=2) == 1.0).all()):
            onehot_ok = False

    spec_ok = True
    for seed in range(50):
        srng = np.random.default_rng(seed)
        from svbrdfgen.forge import assign_specular

        albedo = srng.random((8, 8, 3))
        flat = np.dstack([np.zeros((8, 8, 2)), np.ones((8, 8))])
        m = assign_specular(albedo, np.full((8, 8, 1), 0.5), flat, srng)
        u = float(m.specular[0, 0, 0])
        if not (0.04 <= u <= 0.08 and np.abs(m.specular - u).max() == 0.0):
            spec_ok = False

    ok = byte_identical and onehot_ok and spec_ok
    report(7, ok, f"{count} fuzzed recipes valid, one-hot weights ok={onehot_ok}, "
                  f"specular in [0.04, 0.08]={spec_ok}, manifest byte-identical={byte_identical}")


def test_criterion_8_overfit_smoke(desk_materials, desk_backbone):
    losses = desk_backbone.losses
    head = float(losses[:50].mean())
    tail = float(losses[-50:].mean())
    ratio = head / tail

    schedule = build_schedule(1000)
    samples_ok = True
    for seed in range(4):
        latent = sample_eulera(
            desk_backbone.ema_model.velocity,
            (DESK_RES, DESK_RES, 10),
            SamplerConfig(steps=20, seed=seed),
            schedule=schedule,
        )
        try:
            decode_material(latent).validate()
        except Exception:
            samples_ok = False

    ok = ratio >= 10.0 and samples_ok
    report(8, ok, f"loss {head:.4f} -> {tail:.4f} ({ratio:.1f}x over {TRAIN_STEPS} steps), "
                  f"unconditional samples valid={samples_ok}")


def test_criterion_9_conditional_desk(desk_materials, desk_conditional):
    model = desk_conditional.ema_model
    trials = 20
    wins = 0
    diffuse_rmse = []
    for trial in range(trials):
        reference = desk_materials[trial % len(desk_materials)]
        lighting = sample_lighting("colocated", np.random.default_rng(3000 + trial))
        condition = condition_stack(reference, lighting)
        seeds = range(10)
        rs = generate_replicates(model, condition, lighting, seeds, SamplerConfig(steps=20))
        best, _scores = select_by_render_error(rs)
        selected = evaluate_relighting(
            rs.by_seed(best).material, reference, light_count=128, radius=2.41, seed=trial
        )
        fixed = evaluate_relighting(
            rs.by_seed(0).material, reference, light_count=128, radius=2.41, seed=trial
        )
        wins += selected.relight_proxy <= fixed.relight_proxy
        diffuse_rmse.append(selected.rmse_diffuse)
    win_rate = wins / trials
    mean_rmse = float(np.mean(diffuse_rmse))
    ok = win_rate >= 0.6 and mean_rmse < 0.1
    report(9, ok, f"render-error selection wins {wins}/{trials} paired trials "
                  f"({win_rate:.0%}), mean diffuse RMSE={mean_rmse:.4f}")


def test_criterion_10_finetune_vs_scratch(desk_materials, desk_backbone):
    max_steps = TRAIN_STEPS
    budget = int(0.8 * max_steps)
    ratios = []
    details = []
    for seed in (11, 12, 13):
        pack = make_eval_pack(desk_materials, "colocated", seed=seed, count=32)
        scratch_cfg = TrainConfig(
            variant="colocated", steps=max_steps, warmup_steps=100, seed=seed
        )
        scratch = train_conditional_scratch(scratch_cfg, desk_materials)
        target = probe_loss(scratch.model, pack)

        crossing = {"step": None}

        def on_probe(step, model, target=target, crossing=crossing, pack=pack):
            if crossing["step"] is None and probe_loss(model, pack) <= target:
                crossing["step"] = step

        ft_cfg = TrainConfig(
            variant="colocated", steps=budget, warmup_steps=100, seed=seed
        )
        finetune_conditional(
            desk_backbone.model, ft_cfg, desk_materials,
            callback=on_probe, callback_every=25,
        )
        steps_needed = crossing["step"] if crossing["step"] is not None else np.inf
        ratios.append(steps_needed / max_steps)
        details.append(f"seed {seed}: scratch loss {target:.4f}, crossed at {steps_needed}")

    median_ratio = float(np.median(ratios))
    ok = median_ratio <= 0.8
    report(10, ok, f"median crossing ratio {median_ratio:.2f} (<= 0.8); " + "; ".join(details))
