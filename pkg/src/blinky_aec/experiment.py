"""Pipeline orchestration: embed, transmit, classify, score and report."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import channel as ch
from .acoustics import cached_rirs, generate_placement, propagate
from .config import (AE_MODES, MODES, ExperimentConfig, dump_config, from_dict, strict_deterministic,
                     to_dict)
from .dataset import AudioClip, Waveform, ingest_esc50, load_waveform, make_splits, random_crop
from .dsp import (AffineStats, fit_spectrogram_stats, latent_normalize, logmel,
                  sound_power_embedding)
from .errors import ConfigError, DataError
from .metrics import per_class_scores
from .models import ModelBundle, build_encoder, encode
from .training import pretrain_autoencoder, train_classifier

log = logging.getLogger(__name__)

SPLIT_CODES = {"train": 0, "validation": 1, "test": 2}
STD_FLOOR = 1e-3
MEMMAP_THRESHOLD = 256 * 2 ** 20
SOUND_POWER_PERCENTILE = 99.5


@dataclass
class RunResult:
    config_digest: str
    embedding_mode: str
    scenario: str
    seed: int
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_f1: float
    wall_time: float
    n_test: int
    best_epoch: int | None = None
    best_val_f1: float | None = None
    checkpoint: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunResult":
        return cls(**json.loads(text))

    def check_integrity(self, tol: float = 1e-9) -> bool:
        return abs(float(np.mean(self.f1)) - self.macro_f1) <= tol


def set_determinism(seed: int) -> None:
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    if strict_deterministic():
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


# ------------------------------------------------------------------ workspace


def _alloc(shape, dtype, path: Path | None):
    nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if path is not None and nbytes > MEMMAP_THRESHOLD:
        path.parent.mkdir(parents=True, exist_ok=True)
        return np.lib.format.open_memmap(path, mode="w+", dtype=dtype, shape=tuple(shape))
    return np.zeros(shape, dtype=dtype)


class Workspace:
    """Corpus, splits, room responses and cached per-clip signals for one campaign."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        root = Path(cfg.dataset_root)
        self.manifest = ingest_esc50(root, cfg.n_classes)
        self.splits = make_splits(self.manifest, cfg.split_ratios, cfg.split_seed)
        self.cache_dir = Path(cfg.output_dir) / "cache"
        self.placement = generate_placement(cfg.scene, cfg.n_blinkies, cfg.n_classes,
                                            cfg.placement_seed)
        self.rirs = cached_rirs(cfg.scene, self.placement, cfg.sample_rate, self.cache_dir)
        self._by_id = self.manifest.by_id()
        self._memo: dict = {}
        key = json.dumps([str(root.resolve()), cfg.split_seed, list(cfg.split_ratios),
                          cfg.scene.digest(), cfg.placement_seed, cfg.n_classes, cfg.n_blinkies,
                          cfg.sample_rate, cfg.camera.window,
                          sorted(self.splits.mapping.items())])
        self.key = hashlib.sha256(key.encode()).hexdigest()[:12]

    def clips(self, split: str) -> list[AudioClip]:
        return [self._by_id[i] for i in self.splits.ids(split)]

    def labels(self, split: str) -> np.ndarray:
        return np.array([c.class_label for c in self.clips(split)], dtype=np.int64)

    def source(self, clip: AudioClip, split: str, idx: int) -> Waveform:
        w = load_waveform(clip, self.cfg.sample_rate)
        rng = np.random.default_rng([self.cfg.split_seed, SPLIT_CODES[split], idx])
        return random_crop(w, self.cfg.camera.window, rng)

    def blinky_signals(self, clip: AudioClip, split: str, idx: int) -> np.ndarray:
        """(n_blinkies, n_samples): the clip's source heard at every Blinky."""
        s = self.source(clip, split, idx)
        k = clip.class_label
        n = self.cfg.n_samples
        return np.stack([
            propagate(s, self.rirs.responses[k, i], offset=int(self.rirs.onsets[k, i]),
                      length=n).samples
            for i in range(self.cfg.n_blinkies)
        ])

    def _cached(self, name: str, split: str, shape, fill):
        memo_key = (name, split)
        if memo_key in self._memo:
            return self._memo[memo_key]
        path = self.cache_dir / f"{name}_{self.key}_{split}.npy"
        if path.is_file():
            arr = np.load(path, mmap_mode="r")
        else:
            tmp = path.with_suffix(".partial.npy")
            arr = _alloc(shape, np.float32, tmp)
            fill(arr)
            if isinstance(arr, np.memmap):
                arr.flush()
                del arr
                tmp.replace(path)
            else:
                path.parent.mkdir(parents=True, exist_ok=True)
                np.save(path, arr)
            arr = np.load(path, mmap_mode="r")
        self._memo[memo_key] = arr
        return arr

    def logmels(self, split: str) -> np.ndarray:
        """(N, n_blinkies, mel, frames) log-Mel matrices of every Blinky's signal."""
        clips = self.clips(split)
        shape = (len(clips), self.cfg.n_blinkies, self.cfg.encoder.mel_bands,
                 self.cfg.encoder.n_frames)

        def fill(out):
            for j, clip in enumerate(clips):
                for b, x in enumerate(self.blinky_signals(clip, split, j)):
                    out[j, b] = logmel(Waveform(x, self.cfg.sample_rate)).values
        return self._cached("logmel", split, shape, fill)

    def source_logmels(self, split: str) -> np.ndarray:
        """(N, mel, frames) log-Mel matrices of the dry source clips."""
        clips = self.clips(split)
        shape = (len(clips), self.cfg.encoder.mel_bands, self.cfg.encoder.n_frames)

        def fill(out):
            for j, clip in enumerate(clips):
                out[j] = logmel(self.source(clip, split, j)).values
        return self._cached("srclogmel", split, shape, fill)


# --------------------------------------------------------- embeddings, channel


def run_directory(cfg: ExperimentConfig) -> Path:
    return (Path(cfg.output_dir) / "runs" / cfg.embedding_mode / cfg.effective_scenario
            / f"seed{cfg.seed}")


def pretrained_path(cfg: ExperimentConfig, sigma: float) -> Path:
    d = {"pretrain": asdict(cfg.pretrain), "encoder": cfg.encoder.to_dict(),
         "split_seed": cfg.split_seed, "n_classes": cfg.n_classes}
    d["pretrain"]["latent_noise_sigma"] = sigma
    tag = hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]
    return Path(cfg.output_dir) / "pretrain" / f"ae_sigma{sigma:g}_seed{cfg.pretrain.seed}_{tag}.pt"


def mode_sigma(cfg: ExperimentConfig, mode: str) -> float:
    return cfg.pretrain.latent_noise_sigma if mode == "noise_robust_autoencoder" else 0.0


def obtain_pretrained(cfg: ExperimentConfig, ws: Workspace, sigma: float,
                      path: str | Path | None = None) -> tuple[ModelBundle, Path]:
    """Load the autoencoder bundle for *sigma*, pre-training it on the train split if absent."""
    path = Path(path) if path else pretrained_path(cfg, sigma)
    if path.is_file():
        return ModelBundle.load(path), path
    corpus = np.asarray(ws.source_logmels("train"))
    stats = fit_spectrogram_stats(corpus)
    pcfg = type(cfg.pretrain)(**{**asdict(cfg.pretrain), "latent_noise_sigma": sigma})
    path.parent.mkdir(parents=True, exist_ok=True)
    curve = path.with_suffix(".curve.jsonl")
    curve.unlink(missing_ok=True)
    bundle = pretrain_autoencoder(stats.apply(corpus).astype(np.float32), pcfg, cfg.encoder,
                                  stats.to_dict(), log_path=curve)
    bundle.save(path)
    return bundle, path


def encode_split(bundle: ModelBundle, ws: Workspace, split: str, batch: int = 16) -> np.ndarray:
    """(N, n_blinkies, L) latents of every Blinky signal under the bundle's encoder."""
    enc = bundle.encoder()
    stats = AffineStats(**bundle.spectrogram_stats)
    X = ws.logmels(split)
    n, nb = X.shape[:2]
    out = np.zeros((n, nb, enc.cfg.latent_dim), dtype=np.float64)
    for i in range(0, n, batch):
        xb = stats.apply(np.asarray(X[i:i + batch], dtype=np.float32)).reshape(-1, *X.shape[2:])
        out[i:i + batch] = encode(enc, xb).numpy().reshape(-1, nb, enc.cfg.latent_dim)
    return out


def sound_power_latents(ws: Workspace, split: str, stats: AffineStats):
    """Yields (index, (n_blinkies, n_samples) normalized power envelopes)."""
    for j, clip in enumerate(ws.clips(split)):
        x = ws.blinky_signals(clip, split, j)
        yield j, latent_normalize(sound_power_embedding(Waveform(x.ravel(), ws.cfg.sample_rate))
                                  .reshape(x.shape), stats)


def fit_sound_power_stats(ws: Workspace) -> AffineStats:
    """Scale so the camera-frame average of training power lands in [0, 1]."""
    cam = ws.cfg.camera
    frame_means = []
    for j, clip in enumerate(ws.clips("train")):
        p = np.square(ws.blinky_signals(clip, "train", j))
        seg = ch._frame_segments(p.shape[1], cam)
        counts = np.bincount(seg, minlength=cam.n_frames)
        for row in p:
            frame_means.append(np.bincount(seg, weights=row, minlength=cam.n_frames) / counts)
    scale = float(np.percentile(np.concatenate(frame_means), SOUND_POWER_PERCENTILE))
    return AffineStats(0.0, max(scale, 1e-12))


def channel_seed(cfg: ExperimentConfig, split: str, idx: int, blinky: int, epoch: int = 0):
    return (cfg.seed, SPLIT_CODES[split], int(idx), blinky, epoch)


def received_layout(cfg: ExperimentConfig, latent_len: int, scenario: str) -> tuple[int, int]:
    """Rows x columns of the single-channel classifier image built from all Blinkies."""
    if scenario == "none":
        return cfg.n_blinkies, latent_len
    return cfg.n_blinkies * cfg.camera.n_led, cfg.camera.n_frames


def record_received(latents, n: int, latent_len: int, cfg: ExperimentConfig, split: str,
                    scenario: str, epoch: int = 0, path: Path | None = None) -> np.ndarray:
    """Transmit every Blinky latent and stack the receptions as (N, 1, rows, cols)."""
    rows, cols = received_layout(cfg, latent_len, scenario)
    out = _alloc((n, 1, rows, cols), np.float32, path)
    items = latents if not isinstance(latents, np.ndarray) else enumerate(latents)
    for j, z in items:
        parts = []
        for b in range(cfg.n_blinkies):
            r = ch.transmit(z[b], scenario, cfg.channel, cfg.camera,
                            seed=channel_seed(cfg, split, j, b, epoch))
            parts.append(r.values if isinstance(r, ch.LedFrameGrid) else r[None, :])
        out[j, 0] = np.concatenate(parts, axis=0)
    return out


def fit_input_stats(inputs, batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and floored std over the training inputs."""
    n = len(inputs)
    total = np.zeros(inputs.shape[1:], dtype=np.float64)
    total_sq = np.zeros_like(total)
    for i in range(0, n, batch):
        x = np.asarray(inputs[i:i + batch], dtype=np.float64)
        total += x.sum(0)
        total_sq += np.square(x).sum(0)
    mean = total / n
    std = np.sqrt(np.maximum(total_sq / n - mean ** 2, 0.0))
    return mean.astype(np.float32), np.maximum(std, STD_FLOOR).astype(np.float32)


def standardizer(mean: np.ndarray, std: np.ndarray):
    m, s = torch.from_numpy(np.asarray(mean)), torch.from_numpy(np.asarray(std))

    def features(x, idx, training, epoch):
        return (x - m) / s
    return features


def e2e_features(cfg: ExperimentConfig, encoder, stats: AffineStats, scenario: str,
                 eval_split: str):
    """Encoder plus differentiable channel over raw per-Blinky log-Mels."""

    def features(x, idx, training, epoch):
        b, nb = x.shape[:2]
        z = encoder(stats.apply(x).reshape(b * nb, *x.shape[2:]))
        split = "train" if training else eval_split
        ep = epoch if training else 0
        seeds = [channel_seed(cfg, split, i, k, ep) for i in idx for k in range(nb)]
        r = ch.transmit_torch(z, scenario, cfg.channel, cfg.camera, seeds)
        rows, cols = received_layout(cfg, z.shape[1], scenario)
        return r.reshape(b, 1, rows, cols)
    return features


# ------------------------------------------------------------------ pipeline


class Pipeline:
    """Builds classifier inputs for one mode and scenario from a workspace."""

    def __init__(self, cfg: ExperimentConfig, ws: Workspace, bundle: ModelBundle):
        self.cfg = cfg
        self.ws = ws
        self.bundle = bundle
        self.mode = cfg.embedding_mode
        self.scenario = cfg.effective_scenario
        self._latents: dict = {}

    @property
    def layout(self) -> str:
        return "logmel_ref" if self.mode == "logmel_ref" else "grid"

    @property
    def in_channels(self) -> int:
        return self.cfg.n_blinkies if self.mode == "logmel_ref" else 1

    def _cache_path(self, split: str) -> Path:
        return (self.ws.cache_dir / "received"
                / f"{self.mode}_{self.scenario}_{self.cfg.digest()}_{self.ws.key}_{split}.npy")

    def raw_inputs(self, split: str, epoch: int = 0):
        """Recorded classifier inputs before standardization (encoder inputs for end_to_end)."""
        cfg, ws = self.cfg, self.ws
        if self.mode in ("logmel_ref", "end_to_end"):
            return ws.logmels(split)
        n = len(ws.clips(split))
        if self.mode == "sound_power":
            stats = AffineStats(**self.bundle.latent_stats)
            return record_received(sound_power_latents(ws, split, stats), n, cfg.n_samples, cfg,
                                   split, self.scenario, epoch, self._cache_path(split))
        if split not in self._latents:
            self._latents[split] = encode_split(self.bundle, ws, split)
        z = self._latents[split]
        return record_received(z, n, z.shape[-1], cfg, split, self.scenario, epoch)

    def features(self, eval_split: str, encoder=None):
        if self.mode == "end_to_end":
            enc = encoder if encoder is not None else self.bundle.encoder()
            return e2e_features(self.cfg, enc, AffineStats(**self.bundle.spectrogram_stats),
                                self.scenario, eval_split)
        return standardizer(self.bundle.input_mean, self.bundle.input_std)

    def predict(self, split: str) -> np.ndarray:
        net = self.bundle.classifier()
        enc = self.bundle.encoder() if self.mode == "end_to_end" else None
        feat = self.features(split, enc)
        inputs = self.raw_inputs(split)
        preds = []
        with torch.no_grad():
            for i in range(0, len(inputs), 32):
                idx = np.arange(i, min(i + 32, len(inputs)))
                x = torch.as_tensor(np.asarray(inputs[idx]), dtype=torch.float32)
                preds.append(net(feat(x, idx, False, 0)).argmax(-1).numpy())
        return np.concatenate(preds)


def _prepare_bundle(cfg: ExperimentConfig, ws: Workspace) -> ModelBundle:
    mode = cfg.embedding_mode
    if mode in AE_MODES:
        sigma = mode_sigma(cfg, mode)
        ae, path = obtain_pretrained(cfg, ws, sigma, cfg.pretrained_bundles.get(mode))
        bundle = ModelBundle(encoder_config=ae.encoder_config, encoder_state=ae.encoder_state,
                             spectrogram_stats=ae.spectrogram_stats,
                             metadata={"pretrained_bundle": str(path),
                                       "latent_noise_sigma": sigma})
        return bundle
    if mode == "end_to_end":
        stats = fit_spectrogram_stats(np.asarray(ws.logmels("train")[i])
                                      for i in range(len(ws.clips("train"))))
        return ModelBundle(spectrogram_stats=stats.to_dict())
    if mode == "sound_power":
        return ModelBundle(latent_stats=fit_sound_power_stats(ws).to_dict())
    return ModelBundle()


def run_pipeline(cfg: ExperimentConfig, ws: Workspace | None = None) -> RunResult:
    """One (mode, scenario, seed) run: record, train, select on validation, score on test."""
    if cfg.embedding_mode not in MODES:
        raise ConfigError(f"unknown embedding_mode {cfg.embedding_mode!r}")
    t0 = time.perf_counter()
    set_determinism(cfg.seed)
    ws = ws or Workspace(cfg)
    run_dir = run_directory(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.yaml")
    curve = run_dir / "curves.jsonl"
    curve.unlink(missing_ok=True)

    bundle = _prepare_bundle(cfg, ws)
    pipe = Pipeline(cfg, ws, bundle)
    ccfg = cfg.classifier
    y_train, y_val, y_test = ws.labels("train"), ws.labels("validation"), ws.labels("test")
    common = dict(layout=pipe.layout, n_classes=cfg.n_classes, in_channels=pipe.in_channels,
                  base=bundle, log_path=curve)

    if cfg.embedding_mode == "end_to_end":
        torch.manual_seed(cfg.seed)
        enc_cfg = type(cfg.encoder)(**cfg.encoder.to_dict())
        encoder = build_encoder(enc_cfg)
        trained = train_classifier(
            ws.logmels("train"), y_train, ws.logmels("validation"), y_val,
            type(ccfg)(**{**asdict(ccfg), "seed": cfg.seed, "encoder_frozen": False}),
            mode="end_to_end", encoder=encoder, features=pipe.features("validation", encoder),
            **common)
    else:
        train_in = pipe.raw_inputs("train")
        bundle.input_mean, bundle.input_std = fit_input_stats(train_in)
        if cfg.renoise_each_epoch and cfg.embedding_mode != "logmel_ref":
            train_src = lambda epoch: pipe.raw_inputs("train", epoch)  # noqa: E731
        else:
            train_src = train_in
        trained = train_classifier(
            train_src, y_train, pipe.raw_inputs("validation"), y_val,
            type(ccfg)(**{**asdict(ccfg), "seed": cfg.seed, "encoder_frozen": True}),
            mode="frozen_encoder", features=pipe.features("validation"), **common)

    trained.metadata.update({"experiment_config": to_dict(cfg),
                             "embedding_mode": cfg.embedding_mode,
                             "scenario": pipe.scenario, "seed": cfg.seed})
    pipe.bundle = trained
    preds = pipe.predict("test")
    ckpt = run_dir / "bundle.pt"
    trained.save(ckpt)

    result = _score(cfg, pipe.scenario, y_test, preds, time.perf_counter() - t0,
                    best_epoch=trained.metadata.get("best_epoch"),
                    best_val_f1=trained.metadata.get("best_val_f1"), checkpoint=str(ckpt))
    (run_dir / "result.json").write_text(result.to_json())
    log.info("%s/%s seed %d: test macro-F1 %.4f", cfg.embedding_mode, pipe.scenario, cfg.seed,
             result.macro_f1)
    return result


def _score(cfg, scenario, truths, preds, wall_time, **kw) -> RunResult:
    p, r, f = per_class_scores(truths, preds, cfg.n_classes)
    return RunResult(
        config_digest=cfg.digest(), embedding_mode=cfg.embedding_mode, scenario=scenario,
        seed=cfg.seed, precision=p.tolist(), recall=r.tolist(), f1=f.tolist(),
        macro_f1=float(np.mean(f)), wall_time=float(wall_time), n_test=int(len(truths)), **kw)


def evaluate_bundle(bundle_path: str | Path, scenario: str, dataset_root: str | None = None,
                    output_dir: str | None = None, split: str = "test") -> RunResult:
    """Re-score a saved run checkpoint on *split* under another (or the same) scenario."""
    t0 = time.perf_counter()
    bundle = ModelBundle.load(bundle_path)
    if "experiment_config" not in bundle.metadata:
        raise ConfigError(f"{bundle_path} is not a pipeline run checkpoint")
    data = dict(bundle.metadata["experiment_config"])
    data["scenario"] = scenario
    if dataset_root:
        data["dataset_root"] = dataset_root
    if output_dir:
        data["output_dir"] = output_dir
    from .config import apply_env
    cfg = apply_env(from_dict(data))
    ws = Workspace(cfg)
    pipe = Pipeline(cfg, ws, bundle)
    trained_scenario = bundle.metadata["scenario"]
    if (cfg.embedding_mode != "logmel_ref"
            and (trained_scenario == "none") != (cfg.effective_scenario == "none")):
        raise ConfigError(f"checkpoint was trained for scenario {trained_scenario!r}; its input "
                          f"layout does not fit scenario {scenario!r}")
    preds = pipe.predict(split)
    return _score(cfg, cfg.effective_scenario, ws.labels(split), preds, time.perf_counter() - t0,
                  checkpoint=str(bundle_path))


def campaign_configs(cfg: ExperimentConfig) -> list[ExperimentConfig]:
    """Every (mode, scenario, seed) run of the campaign; the log-Mel reference runs once per seed."""
    out = []
    for mode in cfg.campaign.modes:
        scenarios = ("none",) if mode == "logmel_ref" else cfg.campaign.scenarios
        for scenario in scenarios:
            for seed in cfg.campaign.seeds:
                out.append(cfg.replace(embedding_mode=mode, scenario=scenario, seed=seed))
    return out


def run_campaign(cfg: ExperimentConfig) -> list[RunResult]:
    ws = Workspace(cfg)
    results = [run_pipeline(c, ws) for c in campaign_configs(cfg)]
    aggregate_and_report(results, Path(cfg.output_dir))
    return results


# ------------------------------------------------------------------ reporting


@dataclass
class GroupStats:
    mode: str
    scenario: str
    n_runs: int
    mean: float
    std: float | None


def aggregate(results) -> list[GroupStats]:
    groups: dict[tuple[str, str], list[float]] = {}
    for r in results:
        groups.setdefault((r.embedding_mode, r.scenario), []).append(r.macro_f1)
    out = []
    for (mode, scenario), vals in sorted(groups.items(), key=lambda kv: _group_order(*kv[0])):
        if not vals:
            raise ValueError(f"empty group {(mode, scenario)}")
        v = np.asarray(vals, dtype=np.float64)
        std = float(np.std(v, ddof=1)) if len(v) > 1 else None
        out.append(GroupStats(mode, scenario, len(v), float(v.mean()), std))
    return out


def _group_order(mode, scenario):
    m = MODES.index(mode) if mode in MODES else len(MODES)
    s = ch.SCENARIOS.index(scenario) if scenario in ch.SCENARIOS else len(ch.SCENARIOS)
    return (m, mode, s, scenario)


def load_results(runs_dir: str | Path) -> list[RunResult]:
    paths = sorted(Path(runs_dir).rglob("result.json"))
    return [RunResult.from_json(p.read_text()) for p in paths]


def render_table(stats: list[GroupStats]) -> str:
    modes = [m for m in MODES if any(s.mode == m for s in stats)]
    modes += sorted({s.mode for s in stats} - set(modes))
    scenarios = [s for s in ch.SCENARIOS if any(g.scenario == s for g in stats)]
    cell = {(g.mode, g.scenario): g for g in stats}

    def fmt(g):
        if g is None:
            return "-"
        return f"{g.mean:.4f} +/- {g.std:.4f}" if g.std is not None else f"{g.mean:.4f} (n=1)"

    header = ["mode"] + scenarios
    rows = [[m] + [fmt(cell.get((m, s))) for s in scenarios] for m in modes]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
    return "\n".join(lines) + "\n"


def aggregate_and_report(results, out_dir: str | Path) -> dict[str, Path]:
    """Write results.csv, results.txt and results.png; identical inputs give identical bytes."""
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    stats = aggregate(results)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    csv_lines = ["mode,scenario,n_runs,mean_macro_f1,std_macro_f1"]
    for g in stats:
        std = "" if g.std is None else f"{g.std:.6f}"
        csv_lines.append(f"{g.mode},{g.scenario},{g.n_runs},{g.mean:.6f},{std}")
    paths = {"csv": out / "results.csv", "table": out / "results.txt", "plot": out / "results.png"}
    paths["csv"].write_text("\n".join(csv_lines) + "\n")
    paths["table"].write_text(render_table(stats))
    _plot(stats, paths["plot"])
    return paths


def _plot(stats: list[GroupStats], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scenarios = [s for s in ch.SCENARIOS if any(g.scenario == s for g in stats)]
    modes = [m for m in MODES if any(g.mode == m for g in stats)]
    cell = {(g.mode, g.scenario): g for g in stats}
    width = 0.8 / max(len(scenarios), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    for k, s in enumerate(scenarios):
        xs, ys, es = [], [], []
        for i, m in enumerate(modes):
            g = cell.get((m, s))
            if g is not None:
                xs.append(i + k * width)
                ys.append(g.mean)
                es.append(g.std or 0.0)
        ax.bar(xs, ys, width, yerr=es, label=s, capsize=3)
    ax.set_xticks([i + width * (len(scenarios) - 1) / 2 for i in range(len(modes))])
    ax.set_xticklabels(modes, rotation=15, fontsize=8)
    ax.set_ylabel("macro-F1")
    ax.set_ylim(0, 1)
    ax.legend(title="scenario")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def check_dataset(root: str | Path) -> None:
    if not Path(root).is_dir():
        raise DataError(f"dataset root not found: {root}")
