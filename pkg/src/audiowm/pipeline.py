"""Stage functions behind the command line: synth, preprocess, train, generate, eval, gradcheck, plot.

Every stage reads and writes files under one output directory, echoes the
resolved config next to its outputs and appends a line to ``manifest.jsonl``.
Reports and checkpoints are deterministic; wall-clock numbers go to separate
``*_timing`` files so reruns stay byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autoencoder as aemod
from . import checkpoint
from .config import RunConfig, dumps
from .datasets import episode_seed, latent_pairs, mid_fill_contexts, phase_sequences, policy_demos
from .evaluate import RollModels, WaterModels, piano_evaluate, pitch_trend, predict_future, water_evaluate
from .flow import FlowNetConfig, VectorFieldNet, init_net, rollout, train_flow
from .frontend import NormalizationStats, dump_wav, fit_normalization, load_wav, normalize, spectrogram
from .gridio import dump_roll_csv, load_roll_csv, read_grid, write_grid, write_pgm
from .midi import N_KEYS, PianoRoll, parse_midi, to_piano_roll
from .optim import LrSchedule
from .piano import etude_roll, make_benchmark_songs, transpose_roll
from .policy import dump_demos, load_demos, policy_from_tensors, train_chunk_policy
from .water import WaterSimConfig, water_episode_oracle


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class DependencyError(StageError):
    pass


# --- layout and bookkeeping -------------------------------------------------------


class Layout:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def ckpt(self, name: str) -> Path:
        return self.path("checkpoints", f"{name}.sfwm")

    def water_wav(self, split: str, i: int) -> Path:
        return self.path("data", "water", f"{split}_{i:03d}.wav")

    def water_spec(self, split: str, i: int) -> Path:
        return self.path("features", "water", f"{split}_{i:03d}.spec")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class StageRun:
    """Collects inputs/outputs of one stage and appends the manifest entry on success."""

    def __init__(self, stage: str, cfg: RunConfig, layout: Layout):
        self.stage, self.cfg, self.layout = stage, cfg, layout
        self.inputs, self.outputs, self.metrics = {}, {}, {}
        self.t0 = time.perf_counter()
        name = stage.replace(" ", "_")
        self.layout.path("config", f"{name}.resolved.json").write_text(dumps(cfg) + "\n")

    def need(self, path: Path, what: str) -> Path:
        if not path.exists():
            raise DependencyError(self.stage, f"missing {what}: {path}")
        self.inputs[str(path.relative_to(self.layout.root))] = sha256_file(path)
        return path

    def wrote(self, path: Path) -> Path:
        self.outputs[str(path.relative_to(self.layout.root))] = sha256_file(path)
        return path

    def finish(self) -> dict:
        entry = {"stage": self.stage, "seed": self.cfg.seed, "inputs": self.inputs, "outputs": self.outputs,
                 "duration_s": round(time.perf_counter() - self.t0, 3), "metrics": self.metrics}
        with open(self.layout.path("manifest.jsonl"), "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True, allow_nan=False) + "\n")
        return entry


def _write_text(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def _loss_csv(losses) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    for step, loss in losses:
        w.writerow([step, f"{loss:.8g}"])
    return buf.getvalue()


def _schedule(train) -> LrSchedule:
    return LrSchedule(train.lr, train.warmup_steps, train.steps)


def _episodes_meta(layout: Layout, run: StageRun) -> dict:
    return json.loads(run.need(layout.path("data", "water", "episodes.json"), "episode index").read_text())


# --- synth ----------------------------------------------------------------------------


def piano_training_rolls(cfg: RunConfig) -> list[PianoRoll]:
    songs = make_benchmark_songs()
    rolls = [transpose_roll(r, k) for r in songs.values() for k in cfg.piano.transpositions]
    jumps = [44, 50, 56]
    rolls += [etude_roll(cfg.seed * 1000 + 100 + i, jumps[i % len(jumps)]) for i in range(cfg.piano.extra_etudes)]
    return rolls


def cmd_synth(cfg: RunConfig) -> dict:
    layout = Layout(cfg.out_dir)
    run = StageRun("synth", cfg, layout)
    n, n_held = cfg.data.n_episodes, cfg.data.heldout_episodes
    if n < 1:
        raise StageError("synth", "empty dataset request")
    index = {"sample_rate": cfg.simulator.sample_rate, "control_dt": cfg.simulator.control_dt, "episodes": []}
    for split, count, base in (("train", n, cfg.seed), ("heldout", n_held, cfg.seed + 1)):
        for i in range(count):
            ep = water_episode_oracle(cfg.simulator, episode_seed(base, i))
            path = run.wrote(_write_bytes(layout.water_wav(split, i), dump_wav(ep.signal)))
            index["episodes"].append({
                "split": split, "index": i, "seed": ep.seed, "wav": str(path.relative_to(layout.root)),
                "press_step": ep.press_step, "release_step": ep.release_step, "fill_rate": ep.fill_rate,
                "final_fill": ep.states[-1].fill_level,
                "fill_levels": [round(s.fill_level, 6) for s in ep.states],
            })
    run.wrote(_write_text(layout.path("data", "water", "episodes.json"), json.dumps(index, sort_keys=True)))
    for name, roll in make_benchmark_songs().items():
        run.wrote(_write_text(layout.path("data", "piano", "songs", f"{name}.csv"), dump_roll_csv(roll.grid)))
    for i, roll in enumerate(piano_training_rolls(cfg)):
        run.wrote(_write_text(layout.path("data", "piano", "train", f"roll_{i:03d}.csv"), dump_roll_csv(roll.grid)))
    run.metrics = {"water_episodes": n, "heldout_episodes": n_held}
    return run.finish()


def _write_bytes(path: Path, data: bytes) -> Path:
    path.write_bytes(data)
    return path


# --- preprocess ----------------------------------------------------------------------


def cmd_preprocess(cfg: RunConfig) -> dict:
    layout = Layout(cfg.out_dir)
    run = StageRun("preprocess", cfg, layout)
    index = _episodes_meta(layout, run)
    specs = {}
    for ep in index["episodes"]:
        signal = load_wav(run.need(layout.root / ep["wav"], "episode audio").read_bytes())
        specs[(ep["split"], ep["index"])] = spectrogram(signal, cfg.frontend)
    stats = fit_normalization(s for (split, _), s in specs.items() if split == "train")
    run.wrote(_write_text(layout.path("features", "water", "stats.json"),
                          json.dumps({"lo": stats.lo, "hi": stats.hi}, sort_keys=True)))
    for (split, i), spec in specs.items():
        write_grid(layout.water_spec(split, i), normalize(spec, stats).frames, cfg.frontend.frame_shift_s)
        run.wrote(layout.water_spec(split, i))
    train = [ep for ep in index["episodes"] if ep["split"] == "train"]
    demos = policy_demos([_EpisodeView(ep, index["control_dt"]) for ep in train],
                         [normalize(specs[("train", ep["index"])], stats).frames for ep in train],
                         _sim(cfg, index), cfg.frontend, cfg.policy.model)
    data, sidecar = dump_demos(demos)
    run.wrote(_write_bytes(layout.path("demos", "water_demos.bin"), data))
    run.wrote(_write_text(layout.path("demos", "water_demos.json"), sidecar))
    run.metrics = {"n_spectrograms": len(specs), "n_demos": len(demos), "stats": [stats.lo, stats.hi]}
    return run.finish()


class _EpisodeView:
    """Episode index entry with the attributes the demo builder reads."""

    def __init__(self, entry: dict, control_dt: float):
        self.press_step = entry["press_step"]
        self.release_step = entry["release_step"]
        self.control_dt = control_dt
        self.states = [_Fill(f) for f in entry["fill_levels"]]


class _Fill:
    def __init__(self, fill_level: float):
        self.fill_level = fill_level


def _sim(cfg: RunConfig, index: dict) -> WaterSimConfig:
    if index["sample_rate"] != cfg.simulator.sample_rate or index["control_dt"] != cfg.simulator.control_dt:
        raise StageError("preprocess", "simulator settings differ from the synthesized data; rerun synth")
    return cfg.simulator


def _load_stats(layout: Layout, run: StageRun) -> NormalizationStats:
    d = json.loads(run.need(layout.path("features", "water", "stats.json"), "normalization stats").read_text())
    return NormalizationStats(d["lo"], d["hi"])


def _load_specs(layout: Layout, run: StageRun, split: str, count: int) -> list[np.ndarray]:
    return [read_grid(run.need(layout.water_spec(split, i), "spectrogram"))[0] for i in range(count)]


# --- training ----------------------------------------------------------------------------


def _ae_meta(cfg: RunConfig, task: str) -> tuple:
    if task == "water":
        return "ae", cfg.autoencoder.model, cfg.autoencoder.train
    return "roll_ae", cfg.piano.autoencoder, cfg.piano.ae_train


def _wm_meta(cfg: RunConfig, task: str) -> tuple:
    if task == "water":
        return "wm", cfg.world_model.net, cfg.world_model.loss, cfg.world_model.train
    return "roll_wm", cfg.piano.net, cfg.piano.loss, cfg.piano.wm_train


def _piano_sequences(cfg: RunConfig, layout: Layout, run: StageRun) -> list[np.ndarray]:
    n_ctx = cfg.piano.net.n_context * cfg.piano.autoencoder.block
    horizon = cfg.piano.net.n_future * cfg.piano.autoencoder.block
    train_dir = layout.root / "data" / "piano" / "train"
    files = sorted(train_dir.glob("roll_*.csv")) if train_dir.exists() else []
    if not files:
        raise DependencyError(run.stage, f"missing piano training rolls under {train_dir}")
    seqs = []
    for f in files:
        grid = load_roll_csv(run.need(f, "training roll").read_text()).astype(np.float32)
        seqs.append(np.concatenate([np.zeros((n_ctx, N_KEYS), np.float32), grid,
                                    np.zeros((horizon, N_KEYS), np.float32)]))
    return seqs


def cmd_train(cfg: RunConfig, stage: str, task: str = "water", baseline: bool = False) -> dict:
    if stage == "ae":
        return _train_ae(cfg, task)
    if stage == "wm":
        return _train_wm(cfg, task)
    if stage == "policy":
        if task != "water":
            raise StageError("train policy", "the chunk policy is defined for the water task only")
        return _train_policy(cfg, baseline)
    raise StageError("train", f"unknown stage '{stage}'")


def _train_ae(cfg: RunConfig, task: str) -> dict:
    layout = Layout(cfg.out_dir)
    run = StageRun(f"train ae {task}", cfg, layout)
    name, model_cfg, train = _ae_meta(cfg, task)
    stats = None
    if task == "water":
        stats = _load_stats(layout, run)
        frames = _load_specs(layout, run, "train", cfg.data.n_episodes)
    else:
        frames = _piano_sequences(cfg, layout, run)
    b = model_cfg.block
    blocks = np.concatenate([f[:len(f) // b * b].reshape(-1, b, f.shape[1]) for f in frames])
    ae = aemod.train_autoencoder(blocks, model_cfg, _schedule(train), cfg.seed, batch_size=train.batch_size,
                                 weight_decay=train.weight_decay, log_every=train.log_every)
    meta = {"kind": "autoencoder", "task": task, "model": asdict(model_cfg), "train": asdict(train),
            "seed": cfg.seed, "inputs": dict(run.inputs),
            "normalization": None if stats is None else {"lo": stats.lo, "hi": stats.hi}}
    checkpoint.save(layout.ckpt(name), aemod.to_tensors(ae), meta)
    run.wrote(layout.ckpt(name))
    run.wrote(_write_text(layout.path("logs", f"{name}_loss.csv"), _loss_csv(ae.losses)))
    run.metrics = {"final_loss": ae.losses[-1][1], "n_blocks": int(len(blocks))}
    return run.finish()


def load_autoencoder(path) -> aemod.Autoencoder:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "autoencoder":
        raise ValueError(f"{path} is not an autoencoder checkpoint")
    return aemod.from_tensors(tensors, aemod.AutoencoderConfig(**meta["model"]))


def load_world_model(path) -> VectorFieldNet:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "world-model":
        raise ValueError(f"{path} is not a world-model checkpoint")
    return VectorFieldNet(FlowNetConfig(**meta["net"]), tensors)


def load_policy(path):
    tensors, meta = checkpoint.load(path)
    return policy_from_tensors(tensors, meta)


def _train_wm(cfg: RunConfig, task: str) -> dict:
    layout = Layout(cfg.out_dir)
    run = StageRun(f"train wm {task}", cfg, layout)
    ae_name = _ae_meta(cfg, task)[0]
    ae = load_autoencoder(run.need(layout.ckpt(ae_name), "autoencoder checkpoint (run 'train ae' first)"))
    name, net_cfg, loss_cfg, train = _wm_meta(cfg, task)
    if net_cfg.d != ae.cfg.d:
        raise StageError(run.stage, f"world model width {net_cfg.d} != autoencoder latent width {ae.cfg.d}")
    if task == "water":
        frames = _load_specs(layout, run, "train", cfg.data.n_episodes)
    else:
        frames = _piano_sequences(cfg, layout, run)
    phases = cfg.data.augment_phases
    seqs = [z for f in frames for z in phase_sequences(ae, f, phases)]
    ctx, fut = latent_pairs(seqs, net_cfg.n_context, net_cfg.n_future)
    net = init_net(net_cfg, (cfg.seed, f"{name}-init"))
    train_flow(net, ctx, fut, loss_cfg, _schedule(train), (cfg.seed, f"{name}-train"), batch_size=train.batch_size,
               weight_decay=train.weight_decay, log_every=train.log_every)
    meta = {"kind": "world-model", "task": task, "net": asdict(net_cfg), "loss": asdict(loss_cfg),
            "train": asdict(train), "seed": cfg.seed, "inputs": dict(run.inputs)}
    checkpoint.save(layout.ckpt(name), dict(net.params), meta)
    run.wrote(layout.ckpt(name))
    run.wrote(_write_text(layout.path("logs", f"{name}_loss.csv"), _loss_csv(net.losses)))
    run.metrics = {"final_loss": net.losses[-1][1], "n_pairs": int(len(ctx))}
    return run.finish()


def _train_policy(cfg: RunConfig, baseline: bool) -> dict:
    layout = Layout(cfg.out_dir)
    name = "policy_baseline" if baseline else "policy"
    run = StageRun(f"train {name}", cfg, layout)
    if not baseline:
        run.need(layout.ckpt("ae"), "autoencoder checkpoint")
        run.need(layout.ckpt("wm"), "world-model checkpoint (or pass --baseline)")
    data = run.need(layout.path("demos", "water_demos.bin"), "demonstrations (run preprocess)").read_bytes()
    sidecar = run.need(layout.path("demos", "water_demos.json"), "demonstration sidecar").read_text()
    demos = load_demos(data, sidecar)
    train = cfg.policy.train
    pol = train_chunk_policy(demos, cfg.policy.model, _schedule(train), cfg.seed, baseline_mode=baseline,
                             batch_size=train.batch_size)
    meta = {**pol.metadata(), "train": asdict(train), "seed": cfg.seed, "inputs": dict(run.inputs)}
    checkpoint.save(layout.ckpt(name), dict(pol.net.params), meta)
    run.wrote(layout.ckpt(name))
    run.wrote(_write_text(layout.path("logs", f"{name}_loss.csv"), _loss_csv(pol.net.losses)))
    run.metrics = {"final_loss": pol.net.losses[-1][1], "n_demos": len(demos), "baseline_mode": baseline}
    return run.finish()


# --- generate ------------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, input_path, n_windows: int | None = None) -> dict:
    layout = Layout(cfg.out_dir)
    run = StageRun("generate", cfg, layout)
    input_path = Path(input_path)
    if not input_path.exists():
        raise StageError("generate", f"context file not found: {input_path}")
    sampler = cfg.sampler
    t0 = time.perf_counter()
    if input_path.suffix.lower() in (".wav", ".wave"):
        ae = load_autoencoder(run.need(layout.ckpt("ae"), "autoencoder checkpoint"))
        net = load_world_model(run.need(layout.ckpt("wm"), "world-model checkpoint"))
        stats = _load_stats(layout, run)
        signal = load_wav(input_path.read_bytes())
        frames = normalize(spectrogram(signal, cfg.frontend), stats).frames
        n_ctx = net.cfg.n_context * ae.cfg.block
        if len(frames) < n_ctx:
            raise StageError("generate", f"context {input_path} has {len(frames)} frames, need {n_ctx}")
        ctx = aemod.encode(ae, frames[-n_ctx:]).frames
        out = rollout(net, ae, ctx, n_windows or 1, sampler)
        base = layout.path("generated", input_path.stem)
        write_grid(base.with_suffix(".spec"), out.decoded, cfg.frontend.frame_shift_s)
        write_pgm(base.with_suffix(".pgm"), out.decoded)
        run.wrote(base.with_suffix(".spec"))
        run.wrote(base.with_suffix(".pgm"))
        seconds = len(out.decoded) * cfg.frontend.frame_shift_s
    else:
        ae = load_autoencoder(run.need(layout.ckpt("roll_ae"), "roll autoencoder checkpoint"))
        net = load_world_model(run.need(layout.ckpt("roll_wm"), "roll world-model checkpoint"))
        if input_path.suffix.lower() in (".mid", ".midi"):
            grid = to_piano_roll(parse_midi(input_path.read_bytes())).grid
        else:
            grid = load_roll_csv(input_path.read_text())
        n_ctx = net.cfg.n_context * ae.cfg.block
        if len(grid) < n_ctx:
            raise StageError("generate", f"context {input_path} has {len(grid)} steps, need {n_ctx}")
        ctx = aemod.encode(ae, grid[-n_ctx:].astype(np.float32)).frames
        out = rollout(net, ae, ctx, n_windows or cfg.piano.n_windows, sampler)
        roll = (out.decoded > 0.5).astype(np.uint8)
        base = layout.path("generated", input_path.stem)
        run.wrote(_write_text(base.with_suffix(".csv"), dump_roll_csv(roll)))
        write_pgm(base.with_suffix(".pgm"), roll.astype(np.float32), 0.0, 1.0)
        run.wrote(base.with_suffix(".pgm"))
        seconds = len(roll) * 0.125
    elapsed = time.perf_counter() - t0
    _write_text(layout.path("generated", f"{input_path.stem}_timing.json"),
                json.dumps({"seconds": elapsed, "windows": len(out.window_seeds)}))
    log_path = layout.path("generated", "rollouts.csv")
    new_log = not log_path.exists()
    with open(log_path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new_log:
            w.writerow(["input", "window", "seed", "n_steps", "seconds"])
        for i, (seed, sec) in enumerate(zip(out.window_seeds, out.window_seconds)):
            w.writerow([input_path.name, i, seed, sampler.n_steps, f"{sec:.4f}"])
    run.metrics = {"windows": len(out.window_seeds), "generated_seconds": round(seconds, 3),
                   "latent_frames": int(len(out.latents))}
    return run.finish()


# --- evaluation ------------------------------------------------------------------------------


def cmd_eval(cfg: RunConfig, task: str) -> dict:
    if task == "water":
        return _eval_water(cfg)
    if task == "piano":
        return _eval_piano(cfg)
    raise StageError("eval", f"unknown task '{task}'")


def _eval_water(cfg: RunConfig) -> dict:
    layout = Layout(cfg.out_dir)
    run = StageRun("eval water", cfg, layout)
    stats = _load_stats(layout, run)
    ae = load_autoencoder(run.need(layout.ckpt("ae"), "autoencoder checkpoint"))
    wm = load_world_model(run.need(layout.ckpt("wm"), "world-model checkpoint"))
    arms = {"lookahead": load_policy(run.need(layout.ckpt("policy"), "policy checkpoint")),
            "baseline": load_policy(run.need(layout.ckpt("policy_baseline"), "baseline policy checkpoint"))}
    sim, fe, n_steps = cfg.simulator, cfg.frontend, cfg.sampler.n_steps
    rows, timing, summary = [], [], {}
    for arm, pol in arms.items():
        trials = water_evaluate(WaterModels(stats, ae, wm, pol), sim, fe, cfg.data.eval_trials, cfg.data.eval_seed,
                                n_steps, keep_predictions=(arm == "lookahead"))
        for t in trials:
            rows.append([t.seed, arm, int(t.success), f"{t.fill_level:.6f}", int(t.overflowed), t.press_step,
                         "" if t.release_step is None else t.release_step,
                         "" if t.first_predicted_release_step is None else t.first_predicted_release_step])
            timing.append([t.seed, arm, f"{sum(t.plan_seconds):.4f}", len(t.plan_seconds)])
        summary[arm] = {"successes": int(sum(t.success for t in trials)), "trials": len(trials)}
        if arm == "lookahead":
            for t in trials[:3]:
                for k, pred in t.predictions[:4]:
                    p = layout.path("eval", "water_predictions", f"trial_{t.seed}_step_{k:04d}.spec")
                    write_grid(p, pred, fe.frame_shift_s)
                    run.wrote(p)
            leads = [t.release_step - t.first_predicted_release_step for t in trials
                     if t.release_step is not None and t.first_predicted_release_step is not None]
            summary[arm]["mean_predicted_release_lead_steps"] = float(np.mean(leads)) if leads else None
    summary["pitch_trend"] = _pitch_trend_report(cfg, layout, run, stats, ae, wm)
    header = ["seed", "arm", "success", "fill_level", "overflowed", "press_step", "release_step",
              "first_predicted_release_step"]
    run.wrote(_write_text(layout.path("eval", "water_trials.csv"), _csv(header, rows)))
    _write_text(layout.path("eval", "water_timing.csv"), _csv(["seed", "arm", "plan_seconds", "plans"], timing))
    run.wrote(_write_text(layout.path("eval", "water_summary.json"), _report_json(summary)))
    run.metrics = {arm: summary[arm]["successes"] for arm in arms}
    run.metrics["pitch_trend_pass_fraction"] = summary["pitch_trend"]["pass_fraction"]
    return run.finish()


def _report_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True, allow_nan=False)


def _pitch_trend_report(cfg, layout, run, stats, ae, wm) -> dict:
    index = _episodes_meta(layout, run)
    held = [ep for ep in index["episodes"] if ep["split"] == "heldout"]
    views = [_EpisodeView(ep, index["control_dt"]) for ep in held]
    frames = _load_specs(layout, run, "heldout", len(held))
    contexts = mid_fill_contexts(views, cfg.simulator, cfg.frontend)
    n_ctx = wm.cfg.n_context * ae.cfg.block
    rhos = []
    for i, c in enumerate(contexts):
        pred = predict_future(_Bundle(ae, wm), frames[c.episode][c.frame - n_ctx:c.frame],
                              (cfg.sampler.seed, "trend", i), cfg.sampler.n_steps)
        rhos.append(pitch_trend(pred))
    rhos = np.array(rhos)
    ok = np.nan_to_num(rhos, nan=-1.0) > 0.8
    return {"contexts": len(contexts), "pass_fraction": float(ok.mean()) if len(ok) else 0.0,
            "min_spearman": float(np.nanmin(rhos)) if np.isfinite(rhos).any() else None,
            "spearman": [None if np.isnan(r) else round(float(r), 6) for r in rhos]}


class _Bundle:
    def __init__(self, ae, wm):
        self.ae, self.wm = ae, wm


def _eval_piano(cfg: RunConfig) -> dict:
    layout = Layout(cfg.out_dir)
    run = StageRun("eval piano", cfg, layout)
    ae = load_autoencoder(run.need(layout.ckpt("roll_ae"), "roll autoencoder checkpoint"))
    wm = load_world_model(run.need(layout.ckpt("roll_wm"), "roll world-model checkpoint"))
    songs = {}
    for name in make_benchmark_songs():
        grid = load_roll_csv(run.need(layout.path("data", "piano", "songs", f"{name}.csv"), "song roll").read_text())
        songs[name] = PianoRoll(grid)
    seeds = [cfg.data.eval_seed + i for i in range(cfg.piano.n_seeds)]
    horizons = (1, cfg.piano.lookahead)
    t0 = time.perf_counter()
    results = piano_evaluate(songs, RollModels(ae, wm), seeds, horizons, cfg.piano.max_speed, cfg.piano.reach,
                             cfg.sampler.n_steps)
    elapsed = time.perf_counter() - t0
    rows = [[r.seed, r.song, r.horizon, f"{r.f1:.6f}", r.source] for r in results]
    run.wrote(_write_text(layout.path("eval", "piano_results.csv"),
                          _csv(["seed", "song", "horizon", "f1", "lookahead_source"], rows)))
    summary = piano_summary(results, horizons)
    run.wrote(_write_text(layout.path("eval", "piano_summary.json"), _report_json(summary)))
    _write_text(layout.path("eval", "piano_timing.json"), json.dumps({"seconds": elapsed}))
    run.metrics = {f"mean_f1_h{h}": summary[f"h{h}"]["mean"] for h in horizons}
    return run.finish()


def piano_summary(results, horizons) -> dict:
    out = {}
    for h in horizons:
        per_seed = {}
        for r in results:
            if r.horizon == h:
                per_seed.setdefault(r.seed, []).append(r.f1)
        means = np.array([np.mean(v) for _, v in sorted(per_seed.items())])
        out[f"h{h}"] = {"mean": float(means.mean()), "sd": float(means.std(ddof=1)) if len(means) > 1 else 0.0,
                        "seeds": len(means)}
    return out


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --- diagnostics --------------------------------------------------------------------------------


def cmd_gradcheck(cfg: RunConfig, seeds=None) -> dict:
    from .gradcheck import run_gradcheck

    layout = Layout(cfg.out_dir)
    run = StageRun("gradcheck", cfg, layout)
    report = run_gradcheck(seeds=range(20) if seeds is None else seeds)
    run.wrote(_write_text(layout.path("reports", "gradcheck.txt"), "\n".join(report.lines()) + "\n"))
    run.metrics = {"passed": report.passed, "max_error": report.worst}
    entry = run.finish()
    entry["report"] = report
    return entry


def cmd_plot(cfg: RunConfig, input_path, output=None) -> dict:
    layout = Layout(cfg.out_dir)
    run = StageRun("plot", cfg, layout)
    input_path = Path(input_path)
    if not input_path.exists():
        raise StageError("plot", f"input not found: {input_path}")
    suffix = input_path.suffix.lower()
    if suffix == ".spec":
        frames, _ = read_grid(input_path)
        lo, hi = -1.0, 1.0
    elif suffix == ".csv":
        frames, lo, hi = load_roll_csv(input_path.read_text()).astype(np.float32), 0.0, 1.0
    elif suffix in (".wav", ".wave"):
        spec = spectrogram(load_wav(input_path.read_bytes()), cfg.frontend).frames
        frames, lo, hi = spec, float(spec.min()), float(spec.max())
    else:
        raise StageError("plot", f"unsupported input type '{suffix}' (expected .spec, .csv or .wav)")
    out = Path(output) if output else layout.path("plots", input_path.stem + ".pgm")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(out, frames, lo, hi)
    run.metrics = {"frames": int(frames.shape[0])}
    if out.resolve().is_relative_to(layout.root.resolve()):
        run.outputs[str(out.resolve().relative_to(layout.root.resolve()))] = sha256_file(out)
    return run.finish()
