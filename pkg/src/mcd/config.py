"""Flat ``key=value`` run configuration with documented defaults."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    default: str
    kind: type
    help: str


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


KEYS: dict[str, Key] = {
    "seed": Key("0", int, "top-level seed; every module derives its stream from it by label"),
    "schedule.kind": Key("linear", str, "signal schedule: linear (1 - t) or cosine"),
    "schedule.t_min": Key("0.001", float, "lower bound of t during pretraining"),
    "schedule.K": Key("28", int, "extended vocabulary size used by calibrate"),
    "schedule.cdf_tolerance": Key("1e-10", float, "absolute tolerance of F_Y and its inverse"),
    "schedule.points": Key("101", int, "calibrate: number of equally spaced t values in [0, 1]"),
    "schedule.gammas": Key("0.5,0.760250", _floats, "calibrate: extra rows at these gamma values (comma list)"),
    "model.width": Key("64", int, "embedding width"),
    "model.depth": Key("2", int, "number of attention blocks"),
    "model.heads": Key("2", int, "attention heads per block"),
    "model.ff_mult": Key("4", int, "feed-forward width multiplier"),
    "model.init_std": Key("0.02", float, "std of the normal initialisation"),
    "pretrain.steps": Key("8000", int, "teacher pretraining steps"),
    "pretrain.lr": Key("0.003", float, "teacher learning rate (after warmup)"),
    "pretrain.warmup": Key("200", int, "linear warmup steps"),
    "pretrain.batch": Key("32", int, "sequences per step"),
    "pretrain.grad_clip": Key("1.0", float, "global gradient-norm clip (0 disables)"),
    "distill.teacher": Key("", str, "teacher checkpoint for distill (defaults to OUT/teacher.mcd)"),
    "distill.rounds": Key("3", int, "number of rounds N"),
    "distill.iters": Key("2000", int, "iterations per round M"),
    "distill.delta0": Key("0.001953125", float, "initial time gap (1/512); doubles each round"),
    "distill.lr": Key("0.0003", float, "student learning rate"),
    "distill.warmup": Key("100", int, "linear warmup steps"),
    "distill.tau_init": Key("0.96", float, "teacher temperature in round 1"),
    "distill.tau_step": Key("0.03", float, "temperature decrement per round"),
    "distill.loss": Key("hybrid", str, "hybrid | kl_fwd | kl_bwd"),
    "distill.batch": Key("32", int, "sequences per iteration"),
    "distill.grad_clip": Key("1.0", float, "global gradient-norm clip (0 disables)"),
    "sample.checkpoint": Key("", str, "checkpoint to sample from"),
    "sample.steps": Key("8", int, "number of reverse steps N"),
    "sample.count": Key("64", int, "number of sequences"),
    "sample.batch": Key("256", int, "sequences per model call"),
    "sample.scores": Key("false", _bool, "also write per-sample oracle perplexity"),
    "eval.order": Key("2", int, "Markov source order"),
    "eval.alphabet": Key("27", int, "source alphabet size (26 letters + space)"),
    "eval.concentration": Key("0.1", float, "Dirichlet concentration of first-order source rows"),
    "eval.backoff": Key("2.0", float, "Dirichlet strength of higher-order rows around their parent (0 = flat)"),
    "eval.context": Key("64", int, "sequence length L"),
    "eval.train_tokens": Key("2000000", int, "training corpus size in tokens"),
    "eval.heldout_tokens": Key("200000", int, "held-out corpus size in tokens"),
    "eval.write_corpus": Key("true", _bool, "write train.txt / heldout.txt next to the teacher"),
    "eval.steps": Key("8,16,32,64", _ints, "benchmark step counts"),
    "eval.count": Key("512", int, "sequences per benchmark cell"),
    "eval.students": Key("", str, "directory holding student_r*.mcd (eval subcommand)"),
    "eval.verify_K": Key("2,30,1000", _ints, "verify: vocabulary sizes to check"),
    "eval.verify_samples": Key("1000000", int, "verify: Monte Carlo projections per K"),
    "eval.verify_grid": Key("16", int, "verify: interior times for the marginal check"),
    "eval.lock_trajectories": Key("10000", int, "verify: trajectories for the locking check"),
    "eval.lock_grid": Key("64", int, "verify: times per trajectory for the locking check"),
}


class RunConfig:
    """Resolved configuration; values are kept as text and typed on access."""

    def __init__(self, values: dict[str, str] | None = None):
        self._raw = {k: v.default for k, v in KEYS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: str, where: str = "") -> None:
        if key not in KEYS:
            raise ConfigError(f"{where}unknown config key {key!r}")
        value = str(value).strip()
        try:
            if value:
                KEYS[key].kind(value)
        except ValueError as exc:
            raise ConfigError(f"{where}bad value for {key}: {exc}") from None
        self._raw[key] = value

    def __getitem__(self, key: str):
        spec = KEYS[key]
        raw = self._raw[key]
        if spec.kind is str:
            return raw
        if not raw:
            return [] if spec.kind in (_ints, _floats) else None
        return spec.kind(raw)

    def raw(self, key: str) -> str:
        return self._raw[key]

    def dumps(self) -> str:
        return "".join(f"{k}={self._raw[k]}\n" for k in KEYS)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "resolved.cfg"
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{origin}:{lineno}: malformed line {line!r} (expected key=value)")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown config key {key!r}")
        out[key] = value.strip()
    return out


def load(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        for k, v in parse_text(text, str(p)).items():
            cfg.set(k, v)
    for k, v in (overrides or {}).items():
        cfg.set(k, v, "command line: ")
    return cfg


def help_text() -> str:
    width = max(len(k) for k in KEYS)
    return "\n".join(f"  {k:<{width}}  default={v.default or '(empty)'}  {v.help}" for k, v in KEYS.items())
