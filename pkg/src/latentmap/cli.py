"""Command-line entry points tying the pipeline together.

Subcommands:
    train-denoiser   fit the toy denoiser on procedural images
    train-scorer     fit the CNN quality scorer on a synthetic severity ladder
    enhance          MAP-enhance one PNG in the diffusion latent space
    compare          select discriminative image pairs for two scorer models
    make-toy-study   build a synthetic study with planted model qualities
    simulate-study   run simulated observers over a study's pairs
    rank             aggregate a choice log into a global ranking
    serve-study      serve the forced-choice study over HTTP

Every command writes a manifest.json (resolved config, seed, input and output
hashes) into its output directory.  Config precedence: flags > config file >
defaults.  Exit code 0 on success; otherwise a single-line error on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np
import torch

from . import comparison, diffusion, grids, solver, study
from .errors import ConfigurationError
from .quality import (
    CalibratedScorer,
    LogisticParams,
    get_scorer,
    save_cnn_scorer,
    train_cnn_scorer,
)

__all__ = ["main"]


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command: str, config: dict, inputs: dict, outputs: list) -> str:
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        "outputs": {
            os.path.relpath(p, out_dir): _sha256(p) for p in outputs
        },
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def load_config(path, defaults: dict, flag_overrides: dict) -> dict:
    """Merge defaults < config file < explicitly passed flags."""
    cfg = dict(defaults)
    if path:
        with open(path) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in flag_overrides.items() if v is not None})
    return cfg


def _schedule_from_cfg(cfg: dict) -> diffusion.NoiseSchedule:
    family = cfg.get("schedule", "geometric")
    if family == "geometric":
        return diffusion.NoiseSchedule.geometric(cfg["T"], cfg.get("alpha_floor", 1e-4))
    if family == "linear":
        return diffusion.NoiseSchedule.linear(cfg["T"], cfg.get("alpha_floor", 1e-4))
    raise ConfigurationError(f"unknown schedule family {family!r}")


# ---------------------------------------------------------------------------
# train-denoiser
# ---------------------------------------------------------------------------

TRAIN_DENOISER_DEFAULTS = {
    "size": 32, "channels": 1, "n_images": 128, "seed": 0,
    "T": 20, "alpha_floor": 1e-4, "schedule": "geometric",
    "steps": 2500, "batch_size": 32, "lr": 2e-3, "width": 48,
}


def cmd_train_denoiser(args) -> int:
    cfg = load_config(args.config, TRAIN_DENOISER_DEFAULTS, {
        "seed": args.seed, "steps": args.steps,
    })
    os.makedirs(args.out_dir, exist_ok=True)
    schedule = _schedule_from_cfg(cfg)
    images = grids.texture_batch(cfg["n_images"], cfg["size"], cfg["channels"], seed=cfg["seed"])
    net = diffusion.train_denoiser(
        images, schedule, steps=cfg["steps"], batch_size=cfg["batch_size"],
        lr=cfg["lr"], width=cfg["width"], seed=cfg["seed"],
        log_every=max(1, cfg["steps"] // 5) if cfg["steps"] else None,
    )
    val = diffusion.denoising_loss(net, images[:32], schedule, seed=cfg["seed"] + 1)
    print(f"validation denoising loss: {val:.5f}")
    ckpt = os.path.join(args.out_dir, "denoiser.pt")
    diffusion.save_denoiser(net, schedule, ckpt)
    write_manifest(args.out_dir, "train-denoiser", cfg, {}, [ckpt])
    return 0


# ---------------------------------------------------------------------------
# train-scorer
# ---------------------------------------------------------------------------

TRAIN_SCORER_DEFAULTS = {
    "size": 32, "channels": 1, "n_clean": 24, "seed": 0,
    "steps": 800, "batch_size": 16, "lr": 2e-3,
    "severities": [0.0, 0.25, 0.5, 0.75, 1.0],
    "kinds": ["blur", "noise"],
}


def cmd_train_scorer(args) -> int:
    cfg = load_config(args.config, TRAIN_SCORER_DEFAULTS, {
        "seed": args.seed, "steps": args.steps,
    })
    os.makedirs(args.out_dir, exist_ok=True)
    images, mos = [], []
    for i in range(cfg["n_clean"]):
        clean = grids.texture_image(cfg["size"], cfg["channels"], seed=cfg["seed"] * 7919 + i)
        for kind in cfg["kinds"]:
            batch, scores = grids.severity_ladder(clean, kind, cfg["severities"], seed=i)
            images.extend(batch)
            mos.extend(scores)
    net = train_cnn_scorer(images, mos, steps=cfg["steps"], batch_size=cfg["batch_size"],
                           lr=cfg["lr"], seed=cfg["seed"])
    ckpt = os.path.join(args.out_dir, "scorer.pt")
    save_cnn_scorer(net, ckpt)
    write_manifest(args.out_dir, "train-scorer", cfg, {}, [ckpt])
    return 0


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------

ENHANCE_DEFAULTS = {
    "lam": 0.01, "lr": 2.0, "momentum": 0.9, "max_iter": 40,
    "s": 8, "fid_eps": 2.0, "p": None, "seed": 0,
    "calib_slope_scale": 3.0, "calib_severities": [0.0, 0.35, 0.7, 1.0],
    "precision": "float64",
}


def make_ladder_calibration(scorer, x_init: torch.Tensor, severities, slope_scale: float,
                            seed: int = 0) -> CalibratedScorer:
    """Calibrate the prior on a severity ladder built from the input image."""
    ladder = []
    for kind in grids.DISTORTION_KINDS[:2]:
        imgs, _ = grids.severity_ladder(x_init, kind, severities, seed=seed)
        ladder.extend(imgs)
    with torch.no_grad():
        scores = [float(scorer.score(img)) for img in ladder]
    mean = float(np.mean(scores))
    spread = float(np.std(scores))
    return CalibratedScorer(scorer, LogisticParams(xi3=mean, xi4=max(spread, 1e-6) * slope_scale))


def cmd_enhance(args) -> int:
    cfg = load_config(args.config, ENHANCE_DEFAULTS, {
        "lam": args.lam, "seed": args.seed, "max_iter": args.max_iter, "p": args.p,
    })
    os.makedirs(args.out_dir, exist_ok=True)
    dtype = torch.float64 if cfg["precision"] == "float64" else torch.float32
    net, schedule = diffusion.load_denoiser(args.denoiser)
    net = net.to(dtype)
    x_init = grids.load_png(args.image, dtype=dtype)

    raw = get_scorer(args.scorer, args.scorer_checkpoint)
    if hasattr(raw, "to"):
        raw = raw.to(dtype)
    prior = make_ladder_calibration(
        raw, x_init, cfg["calib_severities"], cfg["calib_slope_scale"], seed=cfg["seed"]
    )

    enh_cfg = solver.EnhanceConfig(
        lam=cfg["lam"], lr=cfg["lr"], momentum=cfg["momentum"], max_iter=cfg["max_iter"],
        s=cfg["s"], T=schedule.T, p=cfg["p"], fid_eps=cfg["fid_eps"], seed=cfg["seed"],
    )
    if args.mode == "latent-only":
        result = solver.maximize_latent(x_init, prior, net, enh_cfg, schedule)
    else:
        result = solver.solve_map_latent(x_init, prior, net, enh_cfg, schedule)

    out_x = os.path.join(args.out_dir, "x_star.png")
    out_y = os.path.join(args.out_dir, "y_star.png")
    out_trace = os.path.join(args.out_dir, "trace.csv")
    grids.save_png(result.x_star.clamp(-1, 1).float(), out_x)
    grids.save_png(result.y_star.clamp(-1, 1).float(), out_y)
    solver.write_trace_csv(result, out_trace)
    q0 = float(raw(x_init))
    q1 = float(raw(result.x_star))
    print(f"energy {result.initial_loss:+.6f} -> {result.final_loss:+.6f}; "
          f"scorer {q0:.4f} -> {q1:.4f}; coupled divergence {result.coupled_divergence:.4f}")
    if result.aborted:
        print(f"aborted early: {result.abort_reason}")
    write_manifest(args.out_dir, "enhance", cfg,
                   {"image": args.image, "denoiser": args.denoiser},
                   [out_x, out_y, out_trace])
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

COMPARE_DEFAULTS = {
    "k": 2, "gamma": 0.1, "seed": 0,
    "lam": 0.01, "lr": 2.0, "momentum": 0.9, "max_iter": 40,
    "s": 8, "fid_eps": 2.0, "p": None,
    "calib_slope_scale": 3.0, "calib_severities": [0.0, 0.35, 0.7, 1.0],
}


def cmd_compare(args) -> int:
    cfg = load_config(args.config, COMPARE_DEFAULTS, {
        "k": args.k, "gamma": args.gamma, "seed": args.seed, "max_iter": args.max_iter,
    })
    os.makedirs(args.out_dir, exist_ok=True)
    net, schedule = diffusion.load_denoiser(args.denoiser)
    net = net.double()

    pool = {}
    for name in sorted(os.listdir(args.pool_dir)):
        if name.endswith(".png"):
            pool[os.path.splitext(name)[0]] = grids.load_png(
                os.path.join(args.pool_dir, name), dtype=torch.float64
            )
    if cfg["k"] > len(pool):
        raise ConfigurationError(f"k={cfg['k']} exceeds the pool size {len(pool)}")

    scorer_ids = [s.strip() for s in args.scorers.split(",") if s.strip()]
    if len(scorer_ids) < 2:
        raise ConfigurationError("compare needs at least two scorers")

    enh_cfg = solver.EnhanceConfig(
        lam=cfg["lam"], lr=cfg["lr"], momentum=cfg["momentum"], max_iter=cfg["max_iter"],
        s=cfg["s"], T=schedule.T, p=cfg["p"], fid_eps=cfg["fid_eps"], seed=cfg["seed"],
    )

    def make_enhancer(scorer_id: str) -> comparison.Enhancer:
        raw = get_scorer(scorer_id, args.scorer_checkpoint)
        if hasattr(raw, "to"):
            raw = raw.to(torch.float64)

        def fn(image: torch.Tensor) -> torch.Tensor:
            prior = make_ladder_calibration(
                raw, image, cfg["calib_severities"], cfg["calib_slope_scale"], seed=cfg["seed"]
            )
            return solver.solve_map_latent(image, prior, net, enh_cfg, schedule).x_star

        return comparison.Enhancer(scorer_id, fn)

    enhancers = {sid: make_enhancer(sid) for sid in scorer_ids}
    referee = get_scorer(args.referee, args.scorer_checkpoint) if args.referee else None
    if referee is not None and hasattr(referee, "to"):
        referee = referee.to(torch.float64)

    embed = None
    if cfg["gamma"] > 0:
        if args.scorer_checkpoint is None:
            raise ConfigurationError("gamma > 0 needs --scorer-checkpoint for embeddings")
        embed_net = get_scorer("cnn", args.scorer_checkpoint).to(torch.float64)
        embed = embed_net.embed

    pairs = []
    for a_idx in range(len(scorer_ids)):
        for b_idx in range(a_idx + 1, len(scorer_ids)):
            sid_a, sid_b = scorer_ids[a_idx], scorer_ids[b_idx]
            chosen = comparison.select_discriminative_subset(
                pool, enhancers[sid_a], enhancers[sid_b], cfg["k"], cfg["gamma"], embed
            )
            for image_id in chosen:
                img_a = enhancers[sid_a].enhance(image_id, pool[image_id])
                img_b = enhancers[sid_b].enhance(image_id, pool[image_id])
                pair_id = f"{image_id}-{sid_a}-vs-{sid_b}"
                path_a = os.path.join(args.out_dir, f"{pair_id}.a.png")
                path_b = os.path.join(args.out_dir, f"{pair_id}.b.png")
                grids.save_png(img_a.clamp(-1, 1).float(), path_a)
                grids.save_png(img_b.clamp(-1, 1).float(), path_b)
                entry = {
                    "pair_id": pair_id, "image_id": image_id,
                    "model_a": sid_a, "model_b": sid_b,
                    "image_a": path_a, "image_b": path_b,
                }
                if referee is not None:
                    with torch.no_grad():
                        entry["quality_a"] = float(referee.score(img_a))
                        entry["quality_b"] = float(referee.score(img_b))
                pairs.append(entry)

    pairs_path = os.path.join(args.out_dir, "pairs.json")
    with open(pairs_path, "w") as fh:
        json.dump({"seed": cfg["seed"], "pairs": pairs}, fh, indent=2)
    outputs = [pairs_path] + [p["image_a"] for p in pairs] + [p["image_b"] for p in pairs]
    write_manifest(args.out_dir, "compare", cfg, {"denoiser": args.denoiser}, outputs)
    print(f"selected {len(pairs)} pairs -> {pairs_path}")
    return 0


# ---------------------------------------------------------------------------
# make-toy-study
# ---------------------------------------------------------------------------

TOY_STUDY_DEFAULTS = {
    "models": 4, "images": 3, "training_pairs": 2, "seed": 0,
    "size": 32, "channels": 1, "jod_gap": 1.0,
}


def cmd_make_toy_study(args) -> int:
    cfg = load_config(args.config, TOY_STUDY_DEFAULTS, {
        "models": args.models, "images": args.images, "seed": args.seed,
    })
    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    model_ids = [f"model-{chr(ord('a') + m)}" for m in range(cfg["models"])]
    # planted true qualities, evenly spaced, centred
    base = np.arange(cfg["models"], dtype=float) * cfg["jod_gap"]
    base -= base.mean()
    planted = dict(zip(model_ids, base))

    pairs, outputs = [], []
    for i in range(cfg["images"]):
        content = grids.texture_image(cfg["size"], cfg["channels"], seed=cfg["seed"] * 613 + i)
        renders = {}
        for m, mid in enumerate(model_ids):
            img = grids.distort(content, "noise", severity=0.2 + 0.1 * (m % 3), seed=m)
            path = os.path.join(args.out_dir, f"img{i}-{mid}.png")
            grids.save_png(img, path)
            renders[mid] = path
            outputs.append(path)
        for a in range(cfg["models"]):
            for b in range(a + 1, cfg["models"]):
                mid_a, mid_b = model_ids[a], model_ids[b]
                pairs.append({
                    "pair_id": f"img{i}:{mid_a}:{mid_b}",
                    "image_id": f"img{i}",
                    "model_a": mid_a, "model_b": mid_b,
                    "image_a": renders[mid_a], "image_b": renders[mid_b],
                    "quality_a": planted[mid_a] + 0.05 * rng.standard_normal(),
                    "quality_b": planted[mid_b] + 0.05 * rng.standard_normal(),
                })
    training = []
    for t in range(cfg["training_pairs"]):
        src = pairs[t % len(pairs)]
        training.append({**src, "pair_id": f"training:{t}:{src['pair_id']}"})

    payload = {
        "study_id": args.study_id,
        "seed": cfg["seed"],
        "planted": planted,
        "pairs": pairs,
        "training_pairs": training,
        "metadata": {"display_peak_cd_m2": 200, "viewing_distance_px_per_deg": 32},
    }
    pairs_path = os.path.join(args.out_dir, "pairs.json")
    with open(pairs_path, "w") as fh:
        json.dump(payload, fh, indent=2)
    outputs.append(pairs_path)
    write_manifest(args.out_dir, "make-toy-study", cfg, {}, outputs)
    print(f"toy study with {len(pairs)} scored pairs -> {pairs_path}")
    return 0


# ---------------------------------------------------------------------------
# simulate-study
# ---------------------------------------------------------------------------

SIMULATE_DEFAULTS = {"observers": 8, "sigma_obs": 1.0484, "seed": 0}


def cmd_simulate_study(args) -> int:
    cfg = load_config(args.config, SIMULATE_DEFAULTS, {
        "observers": args.observers, "sigma_obs": args.sigma_obs, "seed": args.seed,
    })
    with open(args.pairs) as fh:
        payload = json.load(fh)
    pairs = payload["pairs"]
    for pair in pairs:
        if "quality_a" not in pair or "quality_b" not in pair:
            raise ConfigurationError(f"pair {pair['pair_id']} lacks quality values for simulation")

    records = []
    rng = np.random.default_rng(cfg["seed"])
    for obs in range(cfg["observers"]):
        observer_id = f"sim-{obs:03d}"
        for trial_idx, pair in enumerate(pairs):
            left_is_a = bool(rng.integers(0, 2))
            qa, qb = pair["quality_a"], pair["quality_b"]
            q_left, q_right = (qa, qb) if left_is_a else (qb, qa)
            m_left = pair["model_a"] if left_is_a else pair["model_b"]
            m_right = pair["model_b"] if left_is_a else pair["model_a"]
            trial_seed = int(rng.integers(0, 2 ** 63 - 1))
            choice = comparison.simulate_2afc(
                (q_left, q_right), lambda q: q, cfg["sigma_obs"], seed=trial_seed
            )
            records.append(comparison.ChoiceRecord(
                trial_id=f"{observer_id}:{trial_idx}",
                pair_id=pair["pair_id"],
                left_model=m_left,
                right_model=m_right,
                chosen_side="left" if choice == 0 else "right",
                observer_id=observer_id,
                timestamp=float(trial_idx),
            ))
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    comparison.write_choice_log(records, args.out)
    write_manifest(out_dir, "simulate-study", cfg, {"pairs": args.pairs}, [args.out])
    print(f"{len(records)} simulated choices -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# rank
# ---------------------------------------------------------------------------

RANK_DEFAULTS = {"sigma": comparison.THURSTONE_SIGMA, "n_boot": 1000, "seed": 0, "level": 0.05}


def cmd_rank(args) -> int:
    cfg = load_config(args.config, RANK_DEFAULTS, {"seed": args.seed, "n_boot": args.n_boot})
    os.makedirs(args.out_dir, exist_ok=True)
    records = comparison.read_choice_log(args.choices)
    matrix = comparison.ChoiceMatrix.from_records(records)
    result = comparison.aggregate_thurstone(
        matrix, sigma=cfg["sigma"], n_boot=cfg["n_boot"], seed=cfg["seed"]
    )
    groups = comparison.significance_groups(result, level=cfg["level"])
    report = comparison.ranking_report(result)
    print(report)
    report_path = os.path.join(args.out_dir, "ranking.txt")
    with open(report_path, "w") as fh:
        fh.write(report + "\n")
    json_path = os.path.join(args.out_dir, "ranking.json")
    with open(json_path, "w") as fh:
        json.dump({
            "models": result.models,
            "scores": [float(v) for v in result.mu],
            "sigma": result.sigma,
            "groups": groups,
            "ordering": result.ordering(),
        }, fh, indent=2)
    matrix_path = os.path.join(args.out_dir, "choice_matrix.csv")
    matrix.to_csv(matrix_path)
    write_manifest(args.out_dir, "rank", cfg, {"choices": args.choices},
                   [report_path, json_path, matrix_path])
    return 0


# ---------------------------------------------------------------------------
# serve-study
# ---------------------------------------------------------------------------

def cmd_serve_study(args) -> int:
    import uvicorn

    from .service import create_app

    with open(args.study_config) as fh:
        payload = json.load(fh)
    store = study.StudyStore(args.log_dir)
    store.create_study(study.StudyConfig(
        study_id=payload.get("study_id", "study"),
        pairs=[study.PairSpec(**{k: p[k] for k in ("pair_id", "model_a", "model_b", "image_a", "image_b")})
               for p in payload["pairs"]],
        training_pairs=[study.PairSpec(**{k: p[k] for k in ("pair_id", "model_a", "model_b", "image_a", "image_b")})
                        for p in payload.get("training_pairs", [])],
        seed=payload.get("seed", 0),
        metadata=payload.get("metadata", {}),
    ))
    app = create_app(store)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except SystemExit as exc:  # uvicorn raises SystemExit(1) on bind failure
        raise ConfigurationError(f"could not serve on {args.host}:{args.port}") from exc
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentmap")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-denoiser", help="fit the toy denoiser")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.set_defaults(fn=cmd_train_denoiser)

    p = sub.add_parser("train-scorer", help="fit the CNN quality scorer")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.set_defaults(fn=cmd_train_scorer)

    p = sub.add_parser("enhance", help="MAP-enhance a PNG")
    p.add_argument("--image", required=True)
    p.add_argument("--scorer", default="sharpness")
    p.add_argument("--scorer-checkpoint")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=["map", "latent-only"], default="map")
    p.add_argument("--lam", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("compare", help="select discriminative pairs between scorers")
    p.add_argument("--pool-dir", required=True)
    p.add_argument("--scorers", required=True, help="comma-separated scorer ids")
    p.add_argument("--scorer-checkpoint")
    p.add_argument("--referee", help="scorer id used to tag pair qualities")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("make-toy-study", help="synthesise a study with planted qualities")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--study-id", default="toy-study")
    p.add_argument("--models", type=int)
    p.add_argument("--images", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_make_toy_study)

    p = sub.add_parser("simulate-study", help="simulate observers over study pairs")
    p.add_argument("--pairs", required=True, help="pairs.json from compare/make-toy-study")
    p.add_argument("--config")
    p.add_argument("--observers", type=int)
    p.add_argument("--sigma-obs", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="choice log CSV path")
    p.set_defaults(fn=cmd_simulate_study)

    p = sub.add_parser("rank", help="aggregate a choice log into a ranking")
    p.add_argument("--choices", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-boot", type=int)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("serve-study", help="serve 2AFC sessions over HTTP")
    p.add_argument("--study-config", required=True, help="pairs.json describing the study")
    p.add_argument("--log-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(fn=cmd_serve_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
