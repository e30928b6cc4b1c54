"""Config-driven training, generation, retrieval evaluation, and ablations.

Single-threaded training with derived sub-seeds makes every run bit
reproducible: two runs with the same config and seed write byte-identical
checkpoints and CSV metric logs. Run manifests carry the config fingerprint
so every reported number traces back to exactly one configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import corpus, diffusion, figures, metrics, tensorstore
from .alignment import multiscale_contrastive_loss, temporal_attention_weights
from .config import ExperimentConfig, config_fingerprint, config_to_text, with_overrides
from .encoders import (AudioEncoder, ProjectionHead, VideoEncoder,
                       initialize_module, l2_normalize)
from .errors import NumericError
from .pyramid import FeatureSequence, PyramidTransform, SpatialPyramid, \
    build_feature_pyramid
from .metrics import EvalReport

# sub-seed salts (mixed into the master seed, one stream per concern)
SALT_INIT = 1
SALT_TRAIN = 2
SALT_SAMPLE = 3
SALT_CLASSIFIER = 4
SALT_PROBE_SHIFT = 5

PROBE_SET_SIZE = 128
PROJECTION_GAIN = 0.01
EVAL_CHUNK = 64

METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"
REPORT_FILE = "eval_report.csv"


def derive_seed(seed: int, salt: int) -> int:
    return (seed ^ (salt * 0x9E3779B97F4A7C15)) & (2 ** 63 - 1)


# ---------------------------------------------------------------------------
# model bundle

class ModelBundle(nn.Module):
    """All trainable pieces: encoders, projections, pyramid convs, denoiser."""

    def __init__(self, cfg: ExperimentConfig):
        super().__init__()
        self.cfg = cfg
        self.audio_encoder = AudioEncoder(cfg.encoder_channels, cfg.time_reduction)
        self.video_encoder = VideoEncoder(cfg.encoder_channels)
        self.audio_proj = ProjectionHead(cfg.embed_dim)
        self.video_proj = ProjectionHead(cfg.embed_dim)
        self.audio_pyramid = PyramidTransform(cfg.embed_dim, cfg.pyramid_factors)
        self.video_pyramid = PyramidTransform(cfg.embed_dim, cfg.pyramid_factors)
        self.spatial = (SpatialPyramid(cfg.encoder_channels[-1], cfg.embed_dim,
                                       cfg.spatial_grids)
                        if cfg.spatial_pyramid else None)
        self.denoiser = diffusion.Denoiser(cfg.denoiser_channels, cfg.embed_dim)

    @classmethod
    def build(cls, cfg: ExperimentConfig) -> "ModelBundle":
        bundle = cls(cfg)
        generator = torch.Generator().manual_seed(derive_seed(cfg.seed, SALT_INIT))
        for module in (bundle.audio_encoder, bundle.video_encoder,
                       bundle.audio_pyramid, bundle.video_pyramid):
            initialize_module(module, generator)
        initialize_module(bundle.audio_proj, generator, gain=PROJECTION_GAIN)
        initialize_module(bundle.video_proj, generator, gain=PROJECTION_GAIN)
        if bundle.spatial is not None:
            initialize_module(bundle.spatial, generator)
        initialize_module(bundle.denoiser, generator)
        with torch.no_grad():
            bundle.denoiser.out.weight.zero_()
            bundle.denoiser.out.bias.zero_()
        bundle.denoiser.zero_conditioning()
        return bundle

    def pyramids(self, video: torch.Tensor, audio: torch.Tensor):
        """Projected multi-scale pyramids for a batch of raw pairs."""
        audio_seq = FeatureSequence(self.audio_proj(self.audio_encoder(audio)), "audio")
        maps = self.video_encoder.spatial_maps(video)
        video_seq = FeatureSequence(self.video_proj(self.video_encoder.head(maps)),
                                    "video")
        a_pyr, v_pyr = build_feature_pyramid(audio_seq, video_seq,
                                             self.audio_pyramid, self.video_pyramid)
        if self.spatial is not None:
            # merge at the finest temporal level: spatial grid cells pool to a
            # per-sample context vector added to every finest-level step
            spatial_seqs = self.spatial(maps)
            context = torch.stack(
                [seq.features.mean(dim=-2) for seq in spatial_seqs]).mean(dim=0)
            finest = v_pyr.levels[0]
            finest.features = l2_normalize(finest.features + context[:, None, :])
        return a_pyr, v_pyr

    def finest_embeddings(self, a_pyr, v_pyr) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-sample retrieval embeddings at the finest scale."""
        a_seq = a_pyr.levels[0].features
        v_seq = v_pyr.levels[0].features
        if self.cfg.attention:
            weights = temporal_attention_weights(v_seq, a_seq)
            a_emb = (weights[..., None] * a_seq).sum(dim=-2)
            v_emb = (weights[..., None] * v_seq).sum(dim=-2)
        else:
            a_emb = a_seq.mean(dim=-2)
            v_emb = v_seq.mean(dim=-2)
        return l2_normalize(a_emb), l2_normalize(v_emb)

    # -- checkpointing ------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {name: param.detach().numpy()
                for name, param in sorted(self.named_parameters())}

    def save_checkpoint(self, directory: str | Path, fingerprint: str) -> None:
        tensorstore.write_tensors(
            directory, self.state_tensors(),
            extra={"kind": "checkpoint", "version": 1,
                   "config_fingerprint": fingerprint,
                   "init_seed": derive_seed(self.cfg.seed, SALT_INIT)})

    @classmethod
    def load_checkpoint(cls, directory: str | Path,
                        cfg: ExperimentConfig) -> "ModelBundle":
        tensors, extra = tensorstore.read_tensors(directory)
        if extra.get("kind") != "checkpoint":
            raise ValueError(f"{directory} is not a checkpoint store")
        bundle = cls(cfg)
        named = dict(bundle.named_parameters())
        if set(named) != set(tensors):
            missing = set(named) ^ set(tensors)
            raise ValueError(f"checkpoint/config parameter mismatch: {sorted(missing)}")
        with torch.no_grad():
            for name, array in tensors.items():
                if tuple(named[name].shape) != array.shape:
                    raise ValueError(
                        f"shape mismatch for {name}: checkpoint {array.shape} "
                        f"vs config {tuple(named[name].shape)}")
                named[name].copy_(torch.from_numpy(array))
        return bundle


# ---------------------------------------------------------------------------
# manifest and delimited outputs

@dataclass
class RunManifest:
    fingerprint: str
    seed: int
    started_at: str
    finished_at: str = ""
    epoch_losses: list[dict] = field(default_factory=list)
    final_report: dict | None = None
    checkpoints: dict[str, str] = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)
        tmp = Path(path).with_name(Path(path).name + ".tmp")
        tmp.write_text(payload)
        tmp.replace(path)


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def write_eval_report(path: str | Path, report: EvalReport) -> None:
    buffer = io.StringIO()
    buffer.write(f"# config_fingerprint={report.fingerprint}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(EvalReport.CSV_COLUMNS)
    writer.writerow(report.csv_row())
    Path(path).write_text(buffer.getvalue())


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


# ---------------------------------------------------------------------------
# evaluation helpers

def _embed_rows(bundle: ModelBundle, cfg: ExperimentConfig,
                video: np.ndarray, audio: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Finest-scale pooled embeddings for dense arrays, chunked."""
    bundle.eval()
    a_out, v_out = [], []
    with torch.no_grad():
        for start in range(0, len(video), EVAL_CHUNK):
            v = torch.from_numpy(video[start:start + EVAL_CHUNK])
            a = torch.from_numpy(audio[start:start + EVAL_CHUNK])
            a_pyr, v_pyr = bundle.pyramids(v, a)
            a_emb, v_emb = bundle.finest_embeddings(a_pyr, v_pyr)
            a_out.append(a_emb.numpy())
            v_out.append(v_emb.numpy())
    return np.concatenate(v_out), np.concatenate(a_out)


def _probe_indices(cfg: ExperimentConfig) -> np.ndarray:
    start = cfg.n_pairs + cfg.retrieval_size
    return np.arange(start, start + PROBE_SET_SIZE, dtype=np.int64)


def _shift_audio(cfg: ExperimentConfig, audio: np.ndarray, seed: int) -> np.ndarray:
    """Roll every clip by a per-row mid-range offset (misaligned negatives)."""
    rng = np.random.default_rng(seed)
    lo, hi = cfg.audio_frames // 4, 3 * cfg.audio_frames // 4
    shifted = np.empty_like(audio)
    for i in range(len(audio)):
        k = int(rng.integers(lo, hi + 1))
        shifted[i] = np.roll(audio[i], k, axis=0)
    return shifted


def train_sync_probe(bundle: ModelBundle, cfg: ExperimentConfig) -> metrics.ProbeParams:
    """Fit the synchronization probe on held-out aligned/shifted pairs."""
    batch = corpus.render_batch(cfg, cfg.seed, _probe_indices(cfg))
    shifted = _shift_audio(cfg, batch.audio, derive_seed(cfg.seed, SALT_PROBE_SHIFT))
    v_pos, a_pos = _embed_rows(bundle, cfg, batch.video, batch.audio)
    v_neg, a_neg = _embed_rows(bundle, cfg, batch.video, shifted)
    feats = np.vstack([metrics.probe_features(v_pos, a_pos),
                       metrics.probe_features(v_neg, a_neg)])
    labels = np.concatenate([np.ones(len(v_pos)), np.zeros(len(v_neg))])
    return metrics.train_alignment_probe(feats, labels)


def fit_reference_classifier(cfg: ExperimentConfig) -> metrics.AudioClassifier:
    """Class-distribution network fitted on the training corpus audio.

    Model-independent (depends only on corpus and seed), so KLD and FAD are
    comparable across checkpoints. The hidden width stays below the
    generation sample count so Gaussians remain fittable for FAD.
    """
    size = min(cfg.n_pairs, 1024)
    batch = corpus.render_batch(cfg, cfg.seed, np.arange(size))
    hidden = max(2, min(32, cfg.generation_samples - 1))
    grid = (min(8, cfg.audio_frames), min(8, cfg.audio_bins))
    clf = metrics.AudioClassifier(n_classes=cfg.n_classes, hidden=hidden, grid=grid,
                                  seed=derive_seed(cfg.seed, SALT_CLASSIFIER))
    clf.fit(batch.audio, batch.class_ids)
    return clf


def evaluate_retrieval(bundle: ModelBundle, cfg: ExperimentConfig,
                       fingerprint: str) -> EvalReport:
    indices = corpus.test_indices(cfg)
    batch = corpus.render_batch(cfg, cfg.seed, indices)
    v_emb, a_emb = _embed_rows(bundle, cfg, batch.video, batch.audio)
    v_table = metrics.EmbeddingTable(v_emb, indices, "video")
    a_table = metrics.EmbeddingTable(a_emb, indices, "audio")
    return EvalReport(
        fingerprint=fingerprint,
        recall_v2a=metrics.recall_at_k(v_table, a_table),
        recall_a2v=metrics.recall_at_k(a_table, v_table),
        n_retrieval=len(indices),
    )


def generate_spectrograms(bundle: ModelBundle, cfg: ExperimentConfig,
                          video: np.ndarray, sample_fn=None) -> np.ndarray:
    """Sample one spectrogram per conditioning video."""
    bundle.eval()
    schedule = diffusion.make_schedule(cfg.schedule, cfg.diffusion_steps,
                                       cfg.beta_start, cfg.beta_end)
    out = []
    with torch.no_grad():
        for start in range(0, len(video), EVAL_CHUNK):
            v = torch.from_numpy(video[start:start + EVAL_CHUNK])
            dummy_audio = torch.zeros(v.shape[0], cfg.audio_frames, cfg.audio_bins)
            _, v_pyr = bundle.pyramids(v, dummy_audio)
            cond = diffusion.conditioning_sequences(v_pyr)
            if sample_fn is not None:
                chunk = sample_fn(bundle, cond, start)
            else:
                generator = torch.Generator().manual_seed(
                    derive_seed(cfg.seed, SALT_SAMPLE) + start)
                chunk = diffusion.sample(
                    bundle.denoiser, cond,
                    (v.shape[0], cfg.audio_frames, cfg.audio_bins),
                    schedule, cfg.sampler_mode, cfg.sampler_steps, generator)
            out.append(chunk.numpy().astype(np.float32))
    return np.concatenate(out)


def evaluate_generation(bundle: ModelBundle, cfg: ExperimentConfig, fingerprint: str,
                        classifier: metrics.AudioClassifier | None = None,
                        probe: metrics.ProbeParams | None = None,
                        sample_fn=None) -> tuple[EvalReport, np.ndarray, corpus.CorpusBatch]:
    """Generate for the held-out split and score KLD / FAD / alignment."""
    indices = corpus.test_indices(cfg, cfg.generation_samples)
    batch = corpus.render_batch(cfg, cfg.seed, indices)
    generated = generate_spectrograms(bundle, cfg, batch.video, sample_fn=sample_fn)

    classifier = classifier or fit_reference_classifier(cfg)
    kld = metrics.kld_metric(classifier.class_distributions(generated),
                             classifier.class_distributions(batch.audio))
    mu_real, s_real = metrics.fit_gaussian(classifier.hidden_embeddings(batch.audio))
    mu_gen, s_gen = metrics.fit_gaussian(classifier.hidden_embeddings(generated))
    fad = max(metrics.frechet_distance(mu_real, s_real, mu_gen, s_gen), 0.0)

    probe = probe or train_sync_probe(bundle, cfg)
    v_emb, a_emb = _embed_rows(bundle, cfg, batch.video, generated)
    shifted = _shift_audio(cfg, generated,
                           derive_seed(cfg.seed, SALT_PROBE_SHIFT) + 1)
    v_neg, a_neg = _embed_rows(bundle, cfg, batch.video, shifted)
    feats = np.vstack([metrics.probe_features(v_emb, a_emb),
                       metrics.probe_features(v_neg, a_neg)])
    labels = np.concatenate([np.ones(len(v_emb)), np.zeros(len(v_neg))])
    align_acc = metrics.alignment_accuracy(probe, feats, labels)

    report = EvalReport(fingerprint=fingerprint, kld=kld, fad=fad,
                        align_acc=align_acc, n_generation=len(indices))
    return report, generated, batch


def _merge_reports(retrieval: EvalReport, generation: EvalReport | None) -> EvalReport:
    if generation is None:
        return retrieval
    return EvalReport(
        fingerprint=retrieval.fingerprint,
        recall_v2a=retrieval.recall_v2a, recall_a2v=retrieval.recall_a2v,
        align_acc=generation.align_acc, kld=generation.kld, fad=generation.fad,
        n_retrieval=retrieval.n_retrieval, n_generation=generation.n_generation)


# ---------------------------------------------------------------------------
# pretraining

def _metric_columns(cfg: ExperimentConfig) -> list[str]:
    scales = [f"contrastive_scale_{l}" for l in range(1, cfg.pyramid_levels + 1)]
    return (["step", "epoch", "total", "contrastive"] + scales
            + ["diffusion_base", "diffusion_terminal", "diffusion_total"])


def run_pretrain(cfg: ExperimentConfig, out_dir: str | Path) -> RunManifest:
    """Joint contrastive + diffusion pretraining with per-step CSV logging."""
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = config_fingerprint(cfg)
    (out_dir / "config.cfg").write_text(config_to_text(cfg))
    manifest = RunManifest(fingerprint=fingerprint, seed=cfg.seed,
                           started_at=_timestamp())

    bundle = ModelBundle.build(cfg)
    optimizer = torch.optim.Adam(bundle.parameters(), lr=cfg.learning_rate)
    schedule = diffusion.make_schedule(cfg.schedule, cfg.diffusion_steps,
                                       cfg.beta_start, cfg.beta_end)
    train_generator = torch.Generator().manual_seed(derive_seed(cfg.seed, SALT_TRAIN))
    run_diffusion = cfg.diffusion_weight > 0

    columns = _metric_columns(cfg)
    buffer = io.StringIO()
    buffer.write(f"# config_fingerprint={fingerprint}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)

    steps_per_epoch = cfg.n_pairs // cfg.batch_size
    global_step = 0
    checkpoint_dir = out_dir / "checkpoints"
    for epoch in range(1, cfg.epochs + 1):
        bundle.train()
        perm = torch.randperm(cfg.n_pairs, generator=train_generator).numpy()
        epoch_sums = {"total": 0.0, "contrastive": 0.0, "diffusion": 0.0}
        for b in range(steps_per_epoch):
            indices = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = corpus.render_batch(cfg, cfg.seed, indices)
            video = torch.from_numpy(batch.video)
            audio = torch.from_numpy(batch.audio)

            a_pyr, v_pyr = bundle.pyramids(video, audio)
            contrastive, per_scale = multiscale_contrastive_loss(
                a_pyr, v_pyr, cfg.temperature, cfg.attention, cfg.attention_mode)
            loss = cfg.contrastive_weight * contrastive
            if run_diffusion:
                cond = diffusion.conditioning_sequences(v_pyr)
                include_terminal = global_step % cfg.terminal_interval == 0
                terms = diffusion.diffusion_loss(
                    bundle.denoiser, audio, cond, schedule, cfg.terminal_weight,
                    train_generator, include_terminal=include_terminal)
                loss = loss + cfg.diffusion_weight * terms.total
            else:
                terms = None

            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at step {global_step} (epoch {epoch}, "
                    f"batch {b}, seed {cfg.seed}, sample indices {indices[:4].tolist()}...)")

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            scale_values = [float(term.item()) for term in per_scale]
            contrastive_logged = sum(scale_values)  # keeps CSV additivity exact
            row = [str(global_step), str(epoch), repr(float(loss.item())),
                   repr(contrastive_logged)]
            row += [repr(value) for value in scale_values]
            if terms is not None:
                row += [repr(float(terms.base.item())),
                        repr(float(terms.terminal.item())) if terms.terminal is not None else "",
                        repr(float(terms.total.item()))]
            else:
                row += ["", "", ""]
            writer.writerow(row)

            epoch_sums["total"] += float(loss.item())
            epoch_sums["contrastive"] += contrastive_logged
            if terms is not None:
                epoch_sums["diffusion"] += float(terms.total.item())
            global_step += 1

        denom = max(steps_per_epoch, 1)
        manifest.epoch_losses.append({
            "epoch": epoch,
            "total": epoch_sums["total"] / denom,
            "contrastive": epoch_sums["contrastive"] / denom,
            "diffusion": (epoch_sums["diffusion"] / denom) if run_diffusion else None,
        })
        epoch_dir = checkpoint_dir / f"epoch_{epoch:04d}"
        bundle.save_checkpoint(epoch_dir, fingerprint)
        manifest.checkpoints[f"epoch_{epoch:04d}"] = str(epoch_dir)

    final_dir = checkpoint_dir / "final"
    bundle.save_checkpoint(final_dir, fingerprint)
    manifest.checkpoints["final"] = str(final_dir)

    (out_dir / METRICS_FILE).write_text(buffer.getvalue())
    figures.training_curves(manifest.epoch_losses, out_dir / "loss_curves.png")

    retrieval_report = evaluate_retrieval(bundle, cfg, fingerprint)
    generation_report = None
    if run_diffusion:
        generation_report, _, _ = evaluate_generation(bundle, cfg, fingerprint)
    report = _merge_reports(retrieval_report, generation_report)
    write_eval_report(out_dir / REPORT_FILE, report)
    figures.retrieval_bars(report.recall_v2a, report.recall_a2v,
                           out_dir / "retrieval.png")

    manifest.final_report = dataclasses.asdict(report)
    manifest.finished_at = _timestamp()
    manifest.save(out_dir / MANIFEST_FILE)
    return manifest


# ---------------------------------------------------------------------------
# standalone evaluation entry points

def run_retrieval_eval(cfg: ExperimentConfig, checkpoint_dir: str | Path,
                       out_dir: str | Path) -> EvalReport:
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = ModelBundle.load_checkpoint(checkpoint_dir, cfg)
    report = evaluate_retrieval(bundle, cfg, config_fingerprint(cfg))
    write_eval_report(out_dir / REPORT_FILE, report)
    figures.retrieval_bars(report.recall_v2a, report.recall_a2v,
                           out_dir / "retrieval.png")
    return report


def run_generate(cfg: ExperimentConfig, checkpoint_dir: str | Path,
                 out_dir: str | Path, sample_fn=None) -> EvalReport:
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = ModelBundle.load_checkpoint(checkpoint_dir, cfg)
    fingerprint = config_fingerprint(cfg)
    report, generated, batch = evaluate_generation(bundle, cfg, fingerprint,
                                                   sample_fn=sample_fn)
    tensorstore.write_tensors(
        out_dir / "generated",
        {"audio": generated},
        extra={"kind": "generated-audio", "config_fingerprint": fingerprint,
               "indices": [int(i) for i in corpus.test_indices(cfg, cfg.generation_samples)],
               "sampler_mode": cfg.sampler_mode, "sampler_steps": cfg.sampler_steps})
    write_eval_report(out_dir / REPORT_FILE, report)
    figures.spectrogram_grid(batch.audio, generated, out_dir / "spectrograms.png")
    return report


# ---------------------------------------------------------------------------
# ablation grid

GRID_CELLS = ("none", "alignment_only", "diffusion_only", "full")


def cell_config(cfg: ExperimentConfig, multiscale_alignment: bool,
                diffusion_on: bool) -> ExperimentConfig:
    """Config for one grid cell; alignment off collapses the pyramid to L=1."""
    overrides = {}
    if not multiscale_alignment:
        overrides.update(pyramid_levels=1, pyramid_factors=(1,), attention=False,
                         denoiser_channels=cfg.denoiser_channels[:1])
    if not diffusion_on:
        overrides.update(diffusion_weight=0.0)
    return with_overrides(cfg, **overrides) if overrides else cfg


def _cell_settings(name: str) -> tuple[bool, bool]:
    return {"none": (False, False), "alignment_only": (True, False),
            "diffusion_only": (False, True), "full": (True, True)}[name]


def _run_cell(args: tuple[str, str, str]) -> tuple[str, str]:
    """Subprocess entry: train one ablation cell from its serialized config."""
    name, cfg_text, out_dir = args
    from .config import parse_config_text
    cfg = parse_config_text(cfg_text)
    try:
        run_pretrain(cfg, out_dir)
        return name, ""
    except Exception as exc:  # one cell's failure must not abort the others
        return name, f"{type(exc).__name__}: {exc}"


ABLATION_COLUMNS = ("kind", "cell", "multiscale_alignment", "diffusion",
                    "sampler_steps", "terminal_interval", "spatial", "corpus_size",
                    "kld", "fad", "align_acc",
                    "r1_v2a", "r5_v2a", "r10_v2a", "r1_a2v", "r5_a2v", "r10_a2v",
                    "error")


def _row_from_report(report: dict | None) -> dict:
    row = {}
    if not report:
        return row
    v2a = report.get("recall_v2a") or {}
    a2v = report.get("recall_a2v") or {}
    # json round-trips dict keys as strings
    get = lambda table, k: table.get(k) if k in table else table.get(str(k))
    row.update(r1_v2a=get(v2a, 1), r5_v2a=get(v2a, 5), r10_v2a=get(v2a, 10),
               r1_a2v=get(a2v, 1), r5_a2v=get(a2v, 5), r10_a2v=get(a2v, 10),
               kld=report.get("kld"), fad=report.get("fad"),
               align_acc=report.get("align_acc"))
    return row


def run_ablation(cfg: ExperimentConfig, out_dir: str | Path,
                 workers: int | None = None) -> list[dict]:
    """2x2 component grid plus the configured sweeps; one CSV row per cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = workers if workers is not None else cfg.ablation_workers

    jobs = []
    for name in GRID_CELLS:
        msa_on, msd_on = _cell_settings(name)
        cell_cfg = cell_config(cfg, msa_on, msd_on)
        jobs.append((name, config_to_text(cell_cfg), str(out_dir / "cells" / name)))

    extra_train_jobs = []
    for k in cfg.ablate_terminal_intervals:
        variant = with_overrides(cfg, terminal_interval=k)
        extra_train_jobs.append((f"terminal_every_{k}", config_to_text(variant),
                                 str(out_dir / "sweeps" / f"terminal_every_{k}")))
    if cfg.ablate_spatial:
        variant = with_overrides(cfg, spatial_pyramid=True)
        extra_train_jobs.append(("spatial_on", config_to_text(variant),
                                 str(out_dir / "sweeps" / "spatial_on")))
    for n in cfg.ablate_corpus_sizes:
        variant = with_overrides(cfg, n_pairs=n)
        extra_train_jobs.append((f"corpus_{n}", config_to_text(variant),
                                 str(out_dir / "sweeps" / f"corpus_{n}")))

    all_jobs = jobs + extra_train_jobs
    errors: dict[str, str] = {}
    if workers > 1 and len(all_jobs) > 1:
        import multiprocessing

        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(processes=min(workers, len(all_jobs))) as pool:
            for name, error in pool.map(_run_cell, all_jobs):
                if error:
                    errors[name] = error
    else:
        for job in all_jobs:
            name, error = _run_cell(job)
            if error:
                errors[name] = error

    rows: list[dict] = []

    def report_row(kind, name, job_dir, **extra) -> dict:
        row = dict.fromkeys(ABLATION_COLUMNS)
        row.update(kind=kind, cell=name, error=errors.get(name, ""), **extra)
        manifest_path = Path(job_dir) / MANIFEST_FILE
        if not row["error"] and manifest_path.is_file():
            row.update(_row_from_report(load_manifest(manifest_path)["final_report"]))
        return row

    for name, _, job_dir in jobs:
        msa_on, msd_on = _cell_settings(name)
        rows.append(report_row("grid", name, job_dir,
                               multiscale_alignment=int(msa_on), diffusion=int(msd_on),
                               sampler_steps=cfg.sampler_steps,
                               terminal_interval=cfg.terminal_interval,
                               spatial=int(cfg.spatial_pyramid),
                               corpus_size=cfg.n_pairs))

    # sampler-steps sweep reuses the trained full-model checkpoint
    full_dir = out_dir / "cells" / "full"
    if cfg.ablate_sampler_steps and "full" not in errors:
        checkpoint = full_dir / "checkpoints" / "final"
        for n in cfg.ablate_sampler_steps:
            sweep_name = f"sampler_steps_{n}"
            sweep_dir = out_dir / "sweeps" / sweep_name
            variant = with_overrides(cfg, sampler_steps=n)
            try:
                report = run_generate(variant, checkpoint, sweep_dir)
                row = dict.fromkeys(ABLATION_COLUMNS)
                row.update(kind="sampler_steps", cell=sweep_name, error="",
                           multiscale_alignment=1, diffusion=1, sampler_steps=n,
                           terminal_interval=cfg.terminal_interval,
                           spatial=int(cfg.spatial_pyramid), corpus_size=cfg.n_pairs,
                           kld=report.kld, fad=report.fad, align_acc=report.align_acc)
            except Exception as exc:
                row = dict.fromkeys(ABLATION_COLUMNS)
                row.update(kind="sampler_steps", cell=sweep_name,
                           sampler_steps=n, error=f"{type(exc).__name__}: {exc}")
            rows.append(row)

    for name, cfg_text, job_dir in extra_train_jobs:
        from .config import parse_config_text
        variant = parse_config_text(cfg_text)
        kind = name.rsplit("_", 1)[0] if name[-1].isdigit() else name
        rows.append(report_row(kind, name, job_dir,
                               multiscale_alignment=1, diffusion=1,
                               sampler_steps=variant.sampler_steps,
                               terminal_interval=variant.terminal_interval,
                               spatial=int(variant.spatial_pyramid),
                               corpus_size=variant.n_pairs))

    buffer = io.StringIO()
    buffer.write(f"# config_fingerprint={config_fingerprint(cfg)}\n")
    writer = csv.DictWriter(buffer, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    (out_dir / "ablation.csv").write_text(buffer.getvalue())

    figures.ablation_chart(rows, out_dir / "ablation.png")
    steps_rows = [r for r in rows if r["kind"] == "sampler_steps"]
    if steps_rows:
        figures.sweep_curve(steps_rows, "sampler_steps", ["kld", "fad", "align_acc"],
                            "generation quality vs sampling steps",
                            out_dir / "sampler_steps.png")
    return rows
