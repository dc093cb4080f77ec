"""Command-line front end: dataset generation, training, inference and the
evaluation sweeps, driven by line-oriented `key = value` config files with
`--set KEY=VALUE` overrides.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np
import torch

from . import evalharness
from .baselines import DiscriminativeConfig, train_discriminative
from .checkpoint import build_model, load_checkpoint
from .errors import ConfigError, FBBSError
from .evalharness import SweepSpec, eval_method, write_csv, write_manifest
from .model import ModelConfig
from .probing import uniform_probe_indices
from .selftest import run_selftest
from .sitegen import SiteConfig, build_dataset, generate_site, load_dataset, save_dataset
from .training import TrainConfig, train

_INT = int
_FLOAT = float


def _bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _str(text: str) -> str:
    return text


KEY_TYPES = {
    # site / dataset
    "seed": _INT, "n_antennas": _INT, "n_paths": _INT, "n_scatterers": _INT,
    "area": _float_list, "bs_position": _float_list, "los_probability": _FLOAT,
    "pathloss_exponent": _FLOAT, "path_decay": _FLOAT, "spacing_ratio": _FLOAT,
    "n_users": _INT, "train_fraction": _FLOAT, "dataset_seed": _INT,
    # model
    "embed_dim": _INT, "n_blocks": _INT, "n_heads": _INT,
    "ffn_multiplier": _FLOAT, "cond_dim": _INT,
    # training
    "max_epochs": _INT, "stage1_epochs": _INT, "batch_size": _INT,
    "learning_rate": _FLOAT, "weight_decay": _FLOAT, "p": _FLOAT, "p_full": _FLOAT,
    "budget_set": _int_list, "ema_decay": _FLOAT, "train_seed": _INT,
    "save_stage1": _bool,
    # inference / evaluation
    "steps": _INT, "brainstorm": _INT, "probe_budget": _INT, "use_ema": _bool,
    "selection_noise_snr_db": _FLOAT, "budgets": _int_list, "brainstorm_list": _int_list,
    "steps_list": _int_list, "snr_grid": _float_list, "n_test_users": _INT,
    "eval_seed": _INT, "q_grid": _int_list,
    # discriminative baseline
    "disc_epochs": _INT, "disc_learning_rate": _FLOAT, "disc_seed": _INT,
    # artifact paths
    "dataset": _str, "checkpoint": _str, "checkpoint_stage1": _str,
    "checkpoint_sparse": _str, "checkpoint_dense": _str,
}

DEFAULTS: dict = {
    "seed": 1, "n_antennas": 32, "n_paths": 5, "n_scatterers": 24,
    "area": (10.0, 110.0, -50.0, 50.0), "bs_position": (0.0, 0.0),
    "los_probability": 1.0, "pathloss_exponent": 2.0, "path_decay": 0.2,
    "spacing_ratio": 0.5,
    "n_users": 10000, "train_fraction": 0.8, "dataset_seed": 2,
    "embed_dim": 128, "n_blocks": 3, "n_heads": 4, "ffn_multiplier": 4.0,
    "cond_dim": 128,
    "max_epochs": 80, "stage1_epochs": 40, "batch_size": 16,
    "learning_rate": 1e-3, "weight_decay": 0.01, "p": 0.7, "p_full": 0.8,
    "budget_set": (9, 15, 21, 32), "ema_decay": 0.995, "train_seed": 3,
    "save_stage1": False,
    "steps": 1, "brainstorm": 8, "probe_budget": 16, "use_ema": True,
    "budgets": (4, 8, 16, 32), "brainstorm_list": (1, 4, 8),
    "steps_list": (1, 2, 3, 8, 64), "snr_grid": (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0),
    "n_test_users": 512, "eval_seed": 10, "q_grid": (8, 12, 16, 24, 32),
    "disc_epochs": 30, "disc_learning_rate": 1e-3, "disc_seed": 4,
}


def parse_config(path: str | None, overrides: list[str]) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                cfg[key] = _parse_value(key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be KEY=VALUE")
        key, value = (part.strip() for part in item.split("=", 1))
        cfg[key] = _parse_value(key, value)
    return cfg


def _parse_value(key: str, value: str):
    if key not in KEY_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEY_TYPES[key](value)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad value for {key!r}: {value!r} ({e})") from e


def _site_config(cfg: dict) -> SiteConfig:
    area = cfg["area"]
    if len(area) != 4:
        raise ConfigError("area needs 4 values: x_min,x_max,y_min,y_max")
    bs = cfg["bs_position"]
    if len(bs) != 2:
        raise ConfigError("bs_position needs 2 values")
    return SiteConfig(seed=cfg["seed"], n_antennas=cfg["n_antennas"],
                      n_paths=cfg["n_paths"], n_scatterers=cfg["n_scatterers"],
                      area=tuple(area), bs_position=tuple(bs),
                      los_probability=cfg["los_probability"],
                      pathloss_exponent=cfg["pathloss_exponent"],
                      spacing_ratio=cfg["spacing_ratio"], path_decay=cfg["path_decay"])


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(embed_dim=cfg["embed_dim"], n_blocks=cfg["n_blocks"],
                       n_heads=cfg["n_heads"], ffn_multiplier=cfg["ffn_multiplier"],
                       n_channels=2, seq_len=cfg["n_antennas"], cond_dim=cfg["cond_dim"])


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(max_epochs=cfg["max_epochs"], stage1_epochs=cfg["stage1_epochs"],
                       batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
                       weight_decay=cfg["weight_decay"], p=cfg["p"], p_full=cfg["p_full"],
                       budget_set=tuple(cfg["budget_set"]), ema_decay=cfg["ema_decay"],
                       seed=cfg["train_seed"])


def _require(cfg: dict, key: str) -> str:
    if key not in cfg:
        raise ConfigError(f"config key {key!r} is required for this command")
    return cfg[key]


def _load_model(path: str, use_ema: bool = True):
    return build_model(load_checkpoint(path), use_ema=use_ema)


def _spec(cfg: dict, budgets=None, brainstorm=None, steps=None, snr=None) -> SweepSpec:
    return SweepSpec(
        budgets=tuple(budgets if budgets is not None else cfg["budgets"]),
        brainstorm=tuple(brainstorm if brainstorm is not None else cfg["brainstorm_list"]),
        steps=tuple(steps if steps is not None else cfg["steps_list"]),
        snr_db=snr, n_test_users=cfg["n_test_users"], seed=cfg["eval_seed"],
    )


def _cmd_gen_data(cfg: dict, out: str) -> int:
    site = generate_site(_site_config(cfg))
    ds = build_dataset(site, cfg["n_users"], cfg["train_fraction"], cfg["dataset_seed"])
    save_dataset(ds, out)
    print(f"wrote dataset: {ds.n_users} users, N_t={ds.n_antennas}, "
          f"train={ds.train_count}, amp_scale={ds.amp_scale:.6g} -> {out}")
    return 0


def _cmd_train(cfg: dict, out: str) -> int:
    ds = load_dataset(_require(cfg, "dataset"))
    stage1_path = out + ".stage1" if cfg["save_stage1"] else None
    train(ds, _model_config(cfg), _train_config(cfg), out,
          loss_csv_path=out + ".loss.csv", stage1_checkpoint_path=stage1_path)
    print(f"wrote checkpoint -> {out}")
    if stage1_path:
        print(f"wrote stage-I teacher checkpoint -> {stage1_path}")
    return 0


def _cmd_infer(cfg: dict, out: str) -> int:
    ds = load_dataset(_require(cfg, "dataset"))
    model = _load_model(_require(cfg, "checkpoint"), cfg["use_ema"])
    users = evalharness.test_users(ds, cfg["n_test_users"])
    q, m, steps = cfg["probe_budget"], cfg["brainstorm"], cfg["steps"]
    gains = evalharness.generative_gains(model, ds, users, q, (m,), steps, cfg["eval_seed"])
    with open(out, "w", newline="\n") as f:
        f.write("user,q,m,steps,gain_db\n")
        for u, g in zip(users, gains[m]):
            f.write(f"{u},{q},{m},{steps},{g:.6f}\n")
    print(f"mean gain {float(np.mean(gains[m])):.3f} dB over {len(users)} users -> {out}")
    return 0


def _cmd_eval(cfg: dict, out: str) -> int:
    ds = load_dataset(_require(cfg, "dataset"))
    ckpt_path = _require(cfg, "checkpoint")
    model = _load_model(ckpt_path, cfg["use_ema"])
    spec = _spec(cfg)
    rows = eval_method("mrt", ds, spec)
    rows += eval_method("exhaustive", ds, spec)
    rows += eval_method("fbbs", ds, spec, {"fbbs": model})
    write_csv(rows, out)
    write_manifest(out + ".manifest.json", {k: str(v) for k, v in cfg.items()},
                   {"fbbs": ckpt_path})
    print(f"wrote {len(rows)} rows -> {out}")
    return 0


def _cmd_sweep_overhead(cfg: dict, out: str) -> int:
    ds = load_dataset(_require(cfg, "dataset"))
    ckpt_path = _require(cfg, "checkpoint")
    model = _load_model(ckpt_path, cfg["use_ema"])
    spec = _spec(cfg, steps=(cfg["steps"],))
    # probe the exhaustive baseline at the fbbs total overheads too, so the
    # CSV supports equal-overhead comparisons directly
    exhaustive_budgets = sorted({
        *cfg["budgets"],
        *(min(q + m, ds.n_antennas) for q in cfg["budgets"] for m in cfg["brainstorm_list"]),
    })
    rows = eval_method("exhaustive", ds, _spec(cfg, budgets=tuple(exhaustive_budgets)))
    rows += eval_method("fbbs", ds, spec, {"fbbs": model})
    disc_cfg = DiscriminativeConfig(epochs=cfg["disc_epochs"],
                                    learning_rate=cfg["disc_learning_rate"],
                                    seed=cfg["disc_seed"])
    predictors = {q: train_discriminative(ds, disc_cfg, q) for q in spec.budgets}
    rows += eval_method("discriminative", ds, spec, {"discriminative": predictors})
    write_csv(rows, out)
    write_manifest(out + ".manifest.json", {k: str(v) for k, v in cfg.items()},
                   {"fbbs": ckpt_path})
    print(f"wrote {len(rows)} rows -> {out}")
    return 0


def _cmd_sweep_steps(cfg: dict, out: str) -> int:
    ds = load_dataset(_require(cfg, "dataset"))
    ckpt_path = _require(cfg, "checkpoint")
    teacher_path = _require(cfg, "checkpoint_stage1")
    model = _load_model(ckpt_path, cfg["use_ema"])
    teacher = _load_model(teacher_path, cfg["use_ema"])
    spec = _spec(cfg, budgets=(cfg["probe_budget"],), brainstorm=(cfg["brainstorm"],))
    rows = eval_method("fbbs", ds, spec, {"fbbs": model})
    rows += eval_method("flow_teacher", ds, spec, {"flow_teacher": teacher})
    write_csv(rows, out)
    write_manifest(out + ".manifest.json", {k: str(v) for k, v in cfg.items()},
                   {"fbbs": ckpt_path, "flow_teacher": teacher_path})
    print(f"wrote {len(rows)} rows -> {out}")
    return 0


def _cmd_eval_noise(cfg: dict, out: str) -> int:
    ds = load_dataset(_require(cfg, "dataset"))
    ckpt_path = _require(cfg, "checkpoint")
    model = _load_model(ckpt_path, cfg["use_ema"])
    grid: tuple = tuple(cfg["snr_grid"]) + (None,)  # None = noiseless reference
    rows = evalharness.eval_noisy_prompts(model, grid, cfg["probe_budget"],
                                          cfg["brainstorm"], cfg["steps"], ds,
                                          cfg["n_test_users"], cfg["eval_seed"])
    write_csv(rows, out)
    write_manifest(out + ".manifest.json", {k: str(v) for k, v in cfg.items()},
                   {"fbbs": ckpt_path})
    print(f"wrote {len(rows)} rows -> {out}")
    return 0


def _cmd_eval_budgets(cfg: dict, out: str) -> int:
    ds = load_dataset(_require(cfg, "dataset"))
    sparse_path = _require(cfg, "checkpoint_sparse")
    dense_path = _require(cfg, "checkpoint_dense")
    sparse = _load_model(sparse_path, cfg["use_ema"])
    dense = _load_model(dense_path, cfg["use_ema"])
    rows = evalharness.sweep_budget_generalization(
        sparse, dense, tuple(cfg["q_grid"]), ds, m=cfg["brainstorm"],
        steps=cfg["steps"], n_test_users=cfg["n_test_users"], seed=cfg["eval_seed"])
    write_csv(rows, out)
    write_manifest(out + ".manifest.json", {k: str(v) for k, v in cfg.items()},
                   {"sparse": sparse_path, "dense": dense_path})
    print(f"wrote {len(rows)} rows -> {out}")
    return 0


def _cmd_selftest() -> int:
    results = run_selftest()
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failed += 1
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fbbs", description="few-step generative beamforming")
    parser.add_argument("verb", choices=["gen-data", "train", "infer", "eval",
                                         "sweep-overhead", "sweep-steps", "eval-noise",
                                         "eval-budgets", "selftest"])
    parser.add_argument("--config", default=None)
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE")
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        if args.threads is not None:
            torch.set_num_threads(args.threads)
        if args.verb == "selftest":
            return _cmd_selftest()
        cfg = parse_config(args.config, args.overrides)
        if args.seed is not None:
            cfg["seed"] = cfg["train_seed"] = cfg["eval_seed"] = args.seed
        if args.out is None:
            raise ConfigError(f"--out is required for {args.verb}")
        handler = {
            "gen-data": _cmd_gen_data,
            "train": _cmd_train,
            "infer": _cmd_infer,
            "eval": _cmd_eval,
            "sweep-overhead": _cmd_sweep_overhead,
            "sweep-steps": _cmd_sweep_steps,
            "eval-noise": _cmd_eval_noise,
            "eval-budgets": _cmd_eval_budgets,
        }[args.verb]
        return handler(cfg, args.out)
    except (FBBSError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
