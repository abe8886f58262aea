"""Glue between a :class:`RunConfig` and the library: source, corpora, training, benchmark."""

from __future__ import annotations

import csv
import logging
import re
from pathlib import Path

import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .denoiser import Denoiser, DenoiserConfig
from .evaluation import (
    CorpusStream,
    build_corpus,
    make_source,
    run_benchmark,
    write_benchmark,
    write_corpus,
)
from .losses import LossKind
from .rng import torch_seed
from .schedule import Schedule
from .trainer import DistillConfig, PretrainConfig, pretrain_teacher, run_distillation

log = logging.getLogger(__name__)


def schedule_of(cfg: RunConfig) -> Schedule:
    return Schedule(cfg["schedule.kind"], cfg["schedule.t_min"])


def source_of(cfg: RunConfig):
    return make_source(cfg["seed"], cfg["eval.order"], cfg["eval.alphabet"], cfg["eval.concentration"],
                       cfg["eval.backoff"])


def model_config_of(cfg: RunConfig) -> DenoiserConfig:
    return DenoiserConfig(
        vocab_extended=cfg["eval.alphabet"] + 1,
        context=cfg["eval.context"],
        width=cfg["model.width"],
        depth=cfg["model.depth"],
        heads=cfg["model.heads"],
        ff_mult=cfg["model.ff_mult"],
        init_std=cfg["model.init_std"],
    )


def corpora_of(cfg: RunConfig, source=None):
    source = source or source_of(cfg)
    L = cfg["eval.context"]
    train = build_corpus(source, cfg["eval.train_tokens"], L, cfg["seed"], "train")
    heldout = build_corpus(source, cfg["eval.heldout_tokens"], L, cfg["seed"], "heldout")
    return train, heldout


def pretrain_config_of(cfg: RunConfig) -> PretrainConfig:
    return PretrainConfig(steps=cfg["pretrain.steps"], lr=cfg["pretrain.lr"], warmup=cfg["pretrain.warmup"],
                          batch=cfg["pretrain.batch"], grad_clip=cfg["pretrain.grad_clip"], seed=cfg["seed"])


def distill_config_of(cfg: RunConfig, variant: str | None = None, rounds: int | None = None) -> DistillConfig:
    return DistillConfig(
        rounds=cfg["distill.rounds"] if rounds is None else rounds,
        iters_per_round=cfg["distill.iters"],
        delta0=cfg["distill.delta0"],
        lr=cfg["distill.lr"],
        warmup=cfg["distill.warmup"],
        tau_init=cfg["distill.tau_init"],
        tau_step=cfg["distill.tau_step"],
        loss_variant=LossKind(variant or cfg["distill.loss"]),
        batch=cfg["distill.batch"],
        grad_clip=cfg["distill.grad_clip"],
        seed=cfg["seed"],
    )


def run_pretrain(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source = source_of(cfg)
    train, heldout = corpora_of(cfg, source)
    if cfg["eval.write_corpus"]:
        write_corpus(train, out / "train.txt")
        write_corpus(heldout, out / "heldout.txt")
    model = Denoiser(model_config_of(cfg), torch_seed(cfg["seed"], "init"))
    losses = pretrain_teacher(CorpusStream(train), model, pretrain_config_of(cfg), schedule_of(cfg),
                              dump_path=out / "teacher_diverged.mcd")
    path = out / "teacher.mcd"
    save_checkpoint(model, path, {"round": 0})
    with open(out / "pretrain_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses, 1):
            w.writerow([i, repr(v)])
    return path


def run_distill(cfg: RunConfig, teacher_path, out_dir, variant: str | None = None,
                rounds: int | None = None) -> Path:
    train, _ = corpora_of(cfg)
    return run_distillation(teacher_path, distill_config_of(cfg, variant, rounds), CorpusStream(train), out_dir,
                            schedule_of(cfg), expected=model_config_of(cfg))


_ROUND = re.compile(r"student_r(\d+)\.mcd$")


def student_checkpoints(directory) -> dict[int, Path]:
    found = {}
    for p in Path(directory).glob("student_r*.mcd"):
        m = _ROUND.search(p.name)
        if m:
            found[int(m.group(1))] = p
    return dict(sorted(found.items()))


def run_eval(cfg: RunConfig, teacher_path, students: dict[int, Path], out_path) -> list:
    mcfg = model_config_of(cfg)
    models = {0: load_checkpoint(teacher_path, mcfg)}
    for rnd, p in students.items():
        models[rnd] = load_checkpoint(p, mcfg)
    rows = run_benchmark(models, cfg["eval.steps"], source_of(cfg), cfg["eval.count"], mcfg.context,
                         mcfg.mask_id, cfg["seed"], schedule_of(cfg), cfg["sample.batch"])
    write_benchmark(rows, out_path)
    return rows


def run_repro(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    teacher = run_pretrain(cfg, out)
    run_distill(cfg, teacher, out)
    table = out / "table2_desk.csv"
    run_eval(cfg, teacher, student_checkpoints(out), table)
    return table


def set_threads(n: int = 1) -> None:
    torch.set_num_threads(n)
