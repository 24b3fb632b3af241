"""Command-line driver: generate -> degrade -> train -> eval / ablate / kernels / plot."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import GridSpec, load_field, save_field
from .degrade import DegradeSpec, pair_manifest
from .errors import ConfigError, DataError, PhySRError
from .manifest import DatasetManifest
from .model import PhySRConfig
from .pde import PDESystem
from .train import TrainConfig

log = logging.getLogger("physr")

# Top-level experiment keys; "model" and "train" hold PhySRConfig / TrainConfig fields.
DESK = {
    "system": "gs2d",
    "samples": 11,
    "grid": 64,
    "dx": 1.0,
    "t_start": 1000.0,
    "t_end": 1080.0,
    "snapshot_dt": 10.0,
    "internal_dt": 0.5,
    "seed": 0,
    "r_t": 2,
    "r_s": 4,
    "blur": "block_mean",
    "split_ratio": 0.7,
    "model": {},
    "train": {"epochs": 300, "eval_every": 10},
}

PRESETS = {
    "desk": DESK,
    "full-gs2d": {
        **DESK,
        "samples": 400, "grid": 256, "t_start": 0.0, "t_end": 200.0, "snapshot_dt": 10.0,
        "r_t": 4, "r_s": 8, "train": {"epochs": 4000, "eval_every": 50},
    },
    "full-gs3d": {
        **DESK,
        "system": "gs3d", "samples": 400, "grid": 48, "dx": 100 / 48, "t_start": 0.0, "t_end": 20.0,
        "snapshot_dt": 1.0, "internal_dt": None, "r_t": 2, "r_s": 4, "train": {"epochs": 4000, "eval_every": 50},
    },
}
LARGE = {"full-gs2d", "full-gs3d"}


def schema() -> dict:
    return {**DESK, "model": PhySRConfig().to_dict(), "train": TrainConfig().to_dict()}


def load_config(path: str | None, preset: str = "desk", overrides: dict | None = None) -> dict:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = json.loads(json.dumps(PRESETS[preset]))
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: not valid JSON ({exc})") from None
        unknown = sorted(set(user) - set(DESK))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key in ("model", "train"):
            cfg[key] = {**cfg[key], **user.pop(key, {})}
        cfg.update(user)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k in ("model", "train"):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    # validate nested keys early so typos fail with exit code 2
    unknown = sorted(set(cfg["model"]) - set(PhySRConfig().to_dict()))
    if unknown:
        raise ConfigError(f"unknown model config keys: {unknown}")
    TrainConfig.from_dict(cfg["train"])
    return cfg


def _model_cfg(cfg: dict, manifest: DatasetManifest) -> PhySRConfig:
    base = dict(cfg["model"])
    base.update(
        n_channels=len(manifest.pde.channels),
        m=manifest.pde.spatial_dims,
        r_t=manifest.degrade.r_t,
        r_s=manifest.degrade.r_s,
    )
    return PhySRConfig.from_dict(base)


# ---------------------------------------------------------------------------
# generate


def _sim_chunk(args):
    from .simulate import SimSpec, simulate_many

    spec_kw, seeds = args
    spec = SimSpec(**spec_kw)
    return [s.astype(np.float32).values for s in simulate_many(spec, seeds)]


def sample_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def cmd_generate(args) -> int:
    from .simulate import SimSpec

    if args.preset in LARGE and not args.confirm_large:
        raise ConfigError(f"preset {args.preset!r} is full-scale; pass --confirm-large to run it")
    cfg = load_config(args.config, args.preset, {"system": args.system, "samples": args.samples, "grid": args.grid, "seed": args.seed})
    system = PDESystem.preset(cfg["system"])
    m = system.spatial_dims
    grid = GridSpec.uniform(int(cfg["grid"]), m, float(cfg["dx"]))
    spec_kw = dict(
        system=system, grid=grid, t_end=float(cfg["t_end"]), snapshot_dt=float(cfg["snapshot_dt"]),
        internal_dt=cfg["internal_dt"], t_start=float(cfg["t_start"]),
    )
    SimSpec(**spec_kw)  # validate before spawning work
    n = int(cfg["samples"])
    seeds = sample_seeds(int(cfg["seed"]), n)
    jobs = max(1, args.jobs)
    chunks = [seeds[i::jobs] for i in range(jobs) if seeds[i::jobs]]
    out = Path(args.out)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    if jobs == 1:
        results = [_sim_chunk((spec_kw, chunks[0]))]
    else:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_sim_chunk, [(spec_kw, c) for c in chunks]))
    by_seed = {}
    for chunk, vals in zip(chunks, results):
        by_seed.update(zip(chunk, vals))
    from .core import FieldSequence

    records = []
    for i, s in enumerate(seeds):
        name = f"{i:04d}"
        seq = FieldSequence(by_seed[s], spec_kw["snapshot_dt"], grid, system.channels)
        save_field(seq, out / "hr" / f"{name}.fld")
        records.append({"name": name, "hr": f"hr/{name}.fld", "seed": s})
        log.info("sample %s seed %d", name, s)
    corpus = {"version": 1, "pde": system.to_dict(), "config": cfg, "samples": records}
    (out / "corpus.json").write_text(json.dumps(corpus, indent=2, sort_keys=True, default=str) + "\n")
    print(f"wrote {n} samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# degrade / train / eval


def _read_corpus(path: Path) -> dict:
    p = path / "corpus.json" if path.is_dir() else path
    if not p.exists():
        raise DataError(f"corpus manifest not found: {p} (run `generate` first)")
    return json.loads(p.read_text())


def cmd_degrade(args) -> int:
    root = Path(args.corpus)
    corpus = _read_corpus(root)
    root = root if root.is_dir() else root.parent
    cfg = load_config(args.config, "desk", {"r_t": args.r_t, "r_s": args.r_s, "blur": args.blur})
    cfg.update({k: corpus["config"][k] for k in ("split_ratio",) if k in corpus.get("config", {})})
    system = PDESystem.from_dict(corpus["pde"])
    hrs = []
    for rec in corpus["samples"]:
        p = root / rec["hr"]
        if not p.exists():
            raise DataError(f"missing HR field {p}")
        hrs.append(load_field(p))
    spec = DegradeSpec(int(cfg["r_t"]), int(cfg["r_s"]), cfg["blur"])
    man = pair_manifest(
        hrs, spec, system, float(cfg["split_ratio"]), args.split_seed,
        names=[r["name"] for r in corpus["samples"]], seeds=[r["seed"] for r in corpus["samples"]],
    )
    out = Path(args.out or root)
    path = man.save(out)
    print(f"wrote {path} ({len(man.train)} train / {len(man.test)} test)")
    return 0


def _load_manifest(path) -> DatasetManifest:
    return DatasetManifest.load(path)


def cmd_train(args) -> int:
    from .evaluation import variant_configs
    from .model import save_checkpoint
    from .train import train, write_history

    man = _load_manifest(args.manifest)
    cfg = load_config(args.config, "desk", {"train": {k: v for k, v in {"epochs": args.epochs, "seed": args.seed}.items() if v is not None}})
    mc, tc = variant_configs(args.variant, _model_cfg(cfg, man), TrainConfig.from_dict(cfg["train"]))
    if args.nondeterministic:
        tc = tc.replace(deterministic=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(mc, man, tc)
    save_checkpoint(res.model, out / "best.pt", {"best_epoch": res.best_epoch, "best_eps": res.best_eps, "train": tc.to_dict()})
    write_history(res.history, out / "history.tsv")
    (out / "config.json").write_text(json.dumps(res.config, indent=2, sort_keys=True) + "\n")
    print(f"best test eps {res.best_eps:.4f}% at epoch {res.best_epoch}; checkpoint {out / 'best.pt'}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import EvalReport, evaluate_baseline, format_table, predict, relative_error, relative_l2, timing, write_table
    from .model import count_params, load_checkpoint

    man = _load_manifest(args.manifest)
    reports = []
    if args.baseline == "interp" or not args.checkpoint:
        reports.append(evaluate_baseline(man, args.split))
    if args.checkpoint:
        model, extra = load_checkpoint(args.checkpoint)
        samples = man.subset(args.split)
        preds = predict(model, samples)
        eps = [relative_error(s.hr, p) for s, p in zip(samples, preds)]
        l2 = [relative_l2(s.hr, p) for s, p in zip(samples, preds)]
        reports.append(EvalReport("PhySR", eps, per_sample_l2=l2, n_params=count_params(model), t_infer_ms=timing(model, samples[0])))
    rows = [r.row() for r in reports]
    print(format_table(rows))
    if args.out:
        write_table(rows, args.out)
    return 0


def _seeds(n: int) -> list[int]:
    return list(range(n))


def cmd_ablate(args) -> int:
    from .evaluation import REFERENCE_ABLATION, ablate, format_table, write_table

    man = _load_manifest(args.manifest)
    cfg = load_config(args.config, "desk", {"train": {k: v for k, v in {"epochs": args.epochs}.items() if v is not None}})
    mc, tc = _model_cfg(cfg, man), TrainConfig.from_dict(cfg["train"])
    rows = []
    for v in [s.strip().upper() for s in args.variants.split(",") if s.strip()]:
        rep = ablate(v, man, mc, tc, _seeds(args.seeds))
        row = {"model": v, **{k: val for k, val in rep.row().items() if k != "method"}}
        ref = REFERENCE_ABLATION.get(v)
        row["reference_eps"] = f"{ref[0]:.2f}+-{ref[1]:.2f}" if ref else "N/A"
        rows.append(row)
    print(format_table(rows))
    if args.out:
        write_table(rows, args.out)
    return 0


def cmd_kernels(args) -> int:
    from .evaluation import REFERENCE_KERNEL_ORDER, format_table, kernel_order_study, write_table

    man = _load_manifest(args.manifest)
    cfg = load_config(args.config, "desk", {"train": {k: v for k, v in {"epochs": args.epochs}.items() if v is not None}})
    orders = [int(o) for o in args.orders.split(",")]
    rows = kernel_order_study(man, _model_cfg(cfg, man), TrainConfig.from_dict(cfg["train"]), orders, _seeds(args.seeds))
    for r in rows:
        ref = REFERENCE_KERNEL_ORDER.get(r["order"])
        r["reference_eps"] = f"{ref[1]:.2f}+-{ref[2]:.2f}" if ref else "N/A"
    print(format_table(rows))
    if args.out:
        write_table(rows, args.out)
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_history, plot_snapshots

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.history:
        written += plot_history(args.history, out)
    if args.manifest:
        written += plot_snapshots(args.manifest, args.checkpoint, args.sample, args.frame, out, args.split)
    if not written:
        raise ConfigError("plot: pass --manifest (snapshot panels) and/or --history (loss curves)")
    for p in written:
        print(p)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="physr", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--print-schema", action="store_true", help="print the config schema with defaults and exit")
    sub = ap.add_subparsers(dest="command")

    g = sub.add_parser("generate", help="simulate an HR Gray-Scott corpus")
    g.add_argument("--config")
    g.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    g.add_argument("--system", type=str.lower, choices=["gs2d", "gs3d"])
    g.add_argument("--samples", type=int)
    g.add_argument("--grid", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", default="data")
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--confirm-large", action="store_true")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("degrade", help="build LR/HR pairs and the dataset manifest")
    d.add_argument("--corpus", default="data")
    d.add_argument("--config")
    d.add_argument("--r-t", type=int, dest="r_t")
    d.add_argument("--r-s", type=int, dest="r_s")
    d.add_argument("--blur", choices=["block_mean", "none"])
    d.add_argument("--split-seed", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_degrade)

    t = sub.add_parser("train", help="train PhySR (or an ablation variant)")
    t.add_argument("--manifest", default="data")
    t.add_argument("--config")
    t.add_argument("--variant", default="A", choices=["A", "B", "C", "D"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--nondeterministic", action="store_true")
    t.add_argument("--out", default="runs/A")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="relative full-field error of a baseline or checkpoint")
    e.add_argument("--manifest", default="data")
    e.add_argument("--baseline", choices=["interp"])
    e.add_argument("--checkpoint")
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train variants A-D over several seeds")
    a.add_argument("--manifest", default="data")
    a.add_argument("--config")
    a.add_argument("--variants", default="A,B,C,D")
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--epochs", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    k = sub.add_parser("kernels", help="FD kernel-order study")
    k.add_argument("--manifest", default="data")
    k.add_argument("--config")
    k.add_argument("--orders", default="2,4,6")
    k.add_argument("--seeds", type=int, default=1)
    k.add_argument("--epochs", type=int)
    k.add_argument("--out")
    k.set_defaults(func=cmd_kernels)

    p = sub.add_parser("plot", help="snapshot panels and loss curves")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--history")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--frame", default="mid")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", default="figures")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.print_schema:
        print(json.dumps(schema(), indent=2, default=str))
        return 0
    if not args.command:
        ap.print_help()
        return 2
    try:
        return args.func(args)
    except PhySRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
