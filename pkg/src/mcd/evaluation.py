"""Synthetic Markov text, exact oracle perplexity, and step/round benchmarks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import substream
from .sampler import SamplerConfig, generate
from .schedule import Schedule

ALPHABET = "abcdefghijklmnopqrstuvwxyz "
MASK_CHAR = "_"


def encode(text: str, alphabet: str = ALPHABET) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(alphabet)}
    try:
        return np.array([lookup[c] for c in text], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} not in alphabet") from None


def decode(ids, alphabet: str = ALPHABET) -> str:
    chars = alphabet + MASK_CHAR
    return "".join(chars[int(i)] for i in ids)


def write_corpus(seqs: np.ndarray, path, alphabet: str = ALPHABET) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in seqs:
            text = decode(row, alphabet)
            # leading/trailing spaces are data; lines are delimited by \n only
            fh.write(text + "\n")


def read_corpus(path, alphabet: str = ALPHABET) -> np.ndarray:
    with open(path, encoding="utf-8", newline="\n") as fh:
        rows = [encode(line.rstrip("\n"), alphabet) for line in fh if line != "\n"]
    return np.stack(rows)


@dataclass(frozen=True)
class MarkovSource:
    """Order-``n`` Markov chain over ``A`` symbols.

    ``transitions`` has shape ``(A ** order, A)``; context index is the
    base-``A`` number formed by the last ``order`` symbols, oldest first.
    """

    order: int
    alphabet_size: int
    transitions: np.ndarray
    seed: int | None = None
    stationary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A, n = self.alphabet_size, self.order
        T = np.asarray(self.transitions, dtype=np.float64)
        if T.shape != (A**n, A):
            raise ValueError(f"transitions shape {T.shape} != {(A**n, A)}")
        if np.any(T <= 0) or np.max(np.abs(T.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be positive and sum to 1")
        T.setflags(write=False)
        object.__setattr__(self, "transitions", T)
        object.__setattr__(self, "stationary", _stationary(T, A, n))

    @classmethod
    def uniform(cls, order: int, alphabet_size: int) -> "MarkovSource":
        A = alphabet_size
        return cls(order, A, np.full((A**order, A), 1.0 / A))

    @property
    def entropy_rate(self) -> float:
        T = self.transitions
        row_h = -(T * np.log(T)).sum(axis=1)
        return float(self.stationary.ravel() @ row_h)

    @property
    def unigram(self) -> np.ndarray:
        p = self.stationary.reshape((self.alphabet_size,) * self.order)
        return p.sum(axis=tuple(range(self.order - 1))) if self.order > 1 else p

    @property
    def unigram_entropy(self) -> float:
        p = self.unigram
        return float(-(p * np.log(p)).sum())

    def sample(self, count: int, length: int, rng: np.random.Generator) -> np.ndarray:
        A, n = self.alphabet_size, self.order
        if length < n:
            raise ValueError("sequence shorter than the chain order")
        out = np.empty((count, length), dtype=np.int64)
        pi = self.stationary.ravel()
        ctx = np.minimum(np.searchsorted(np.cumsum(pi), rng.random(count) * pi.sum(), side="right"),
                         pi.size - 1)
        for j in range(n):
            out[:, j] = (ctx // A ** (n - 1 - j)) % A
        cdf = np.cumsum(self.transitions, axis=1)
        for i in range(n, length):
            u = rng.random(count)[:, None] * cdf[ctx, -1:]
            nxt = np.minimum((u >= cdf[ctx]).sum(axis=1), A - 1)
            out[:, i] = nxt
            ctx = (ctx * A + nxt) % A**n
        return out

    def token_log_probs(self, seqs: np.ndarray) -> np.ndarray:
        """Exact log-probability of each token given its true history.

        The first ``order`` positions use stationary marginals of the prefix.
        """
        seqs = np.asarray(seqs, dtype=np.int64)
        A, n = self.alphabet_size, self.order
        if seqs.ndim != 2 or seqs.shape[1] < n:
            raise ValueError("expected a (count, length >= order) array")
        if np.any(seqs < 0) or np.any(seqs >= A):
            raise ValueError("sequences contain ids outside the alphabet (mask tokens?)")
        out = np.empty(seqs.shape, dtype=np.float64)
        joint = self.stationary.reshape((A,) * n)
        prev = None
        for j in range(n):
            marg = joint.sum(axis=tuple(range(j + 1, n))) if j + 1 < n else joint
            marg = marg.reshape((A,) * (j + 1))
            cur = marg[tuple(seqs[:, k] for k in range(j + 1))]
            out[:, j] = np.log(cur) - (0.0 if prev is None else np.log(prev))
            prev = cur
        ctx = np.zeros(seqs.shape[0], dtype=np.int64)
        for k in range(n):
            ctx = ctx * A + seqs[:, k]
        logT = np.log(self.transitions)
        for i in range(n, seqs.shape[1]):
            out[:, i] = logT[ctx, seqs[:, i]]
            ctx = (ctx * A + seqs[:, i]) % A**n
        return out

    def posterior(self, z: np.ndarray, mask_id: int) -> np.ndarray:
        """Exact ``p(x_i | visible tokens of z)`` for every position, shape ``(B, L, A)``.

        Forward-backward over the ``A ** order`` context states; visible
        positions come out as one-hot vectors.
        """
        z = np.asarray(z, dtype=np.int64)
        A, n = self.alphabet_size, self.order
        B, L = z.shape
        if L < n:
            raise ValueError("sequence shorter than the chain order")
        ev = np.ones((B, L, A))
        vis = z != mask_id
        if np.any(z[vis] >= A) or np.any(z < 0):
            raise ValueError("ids must be clean tokens or the mask id")
        ev[vis] = np.eye(A)[z[vis]]
        S, R = A**n, A ** (n - 1)
        T3 = self.transitions.reshape(A, R, A)

        init = np.broadcast_to(self.stationary.reshape((1,) + (A,) * n), (B,) + (A,) * n).copy()
        for j in range(n):
            shape = [B] + [1] * n
            shape[j + 1] = A
            init *= ev[:, j].reshape(shape)
        alphas = np.empty((B, L - n + 1, S))
        a = init.reshape(B, S)
        a /= a.sum(axis=1, keepdims=True)
        alphas[:, 0] = a
        for i in range(n, L):
            a = np.einsum("bxy,xyz->byz", a.reshape(B, A, R), T3).reshape(B, S) * np.tile(ev[:, i], R)
            a /= a.sum(axis=1, keepdims=True)
            alphas[:, i - n + 1] = a

        out = np.empty((B, L, A))
        beta = np.ones((B, S))
        for i in range(L - 1, n - 1, -1):
            post = alphas[:, i - n + 1] * beta
            out[:, i] = post.reshape(B, R, A).sum(axis=1)
            nxt = (beta.reshape(B, R, A) * ev[:, i][:, None, :])
            beta = np.einsum("xyz,byz->bxy", T3, nxt).reshape(B, S)
            beta /= beta.sum(axis=1, keepdims=True)
        post = (alphas[:, 0] * beta).reshape((B,) + (A,) * n)
        for j in range(n):
            axes = tuple(k + 1 for k in range(n) if k != j)
            out[:, j] = post.sum(axis=axes) if axes else post
        return out / out.sum(axis=-1, keepdims=True)



def _stationary(T: np.ndarray, A: int, n: int, tol: float = 1e-15, max_iter: int = 100_000) -> np.ndarray:
    # power iteration on the context chain: ctx (a_1..a_n) -> (a_2..a_n, b)
    pi = np.full(A**n, 1.0 / A**n)
    for _ in range(max_iter):
        mass = pi[:, None] * T
        new = mass.reshape(A, A ** (n - 1) * A).sum(axis=0)
        new /= new.sum()
        if np.max(np.abs(new - pi)) < tol:
            return new
        pi = new
    return pi


def make_source(seed: int, order: int = 2, alphabet: int = 27, concentration: float = 0.1,
                backoff: float = 2.0, floor: float = 1e-4) -> MarkovSource:
    """Random chain with Dirichlet rows, floored at ``floor`` then renormalised.

    With ``backoff == 0`` every row is Dirichlet(concentration).  Otherwise
    first-order rows are Dirichlet(concentration) and each order-``k`` row is
    Dirichlet(backoff * parent) around the row of its shorter context, so
    the chain has strong lower-order structure on top of its full-order
    dependence.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if alphabet < 2:
        raise ValueError("alphabet must have at least 2 symbols")
    if concentration <= 0 or backoff < 0:
        raise ValueError("concentration must be > 0 and backoff >= 0")
    rng = substream(seed, "source")
    A = alphabet
    if backoff == 0:
        T = rng.dirichlet(np.full(A, concentration), size=A**order)
    else:
        T = rng.dirichlet(np.full(A, concentration), size=A)
        for _ in range(1, order):
            # context (a, rest) backs off to context rest
            parent = np.tile(T, (A, 1))
            T = np.stack([rng.dirichlet(np.maximum(backoff * row, 1e-3)) for row in parent])
    T = np.maximum(T, floor)
    T /= T.sum(axis=1, keepdims=True)
    return MarkovSource(order, A, T, seed)


def oracle_ppl(samples, source: MarkovSource) -> float:
    return math.exp(-float(source.token_log_probs(samples).mean()))


def oracle_ppl_stats(samples, source: MarkovSource) -> tuple[float, float]:
    """Perplexity and the standard error of the mean token log-probability."""
    lp = source.token_log_probs(samples)
    seq_means = lp.mean(axis=1)
    se = float(seq_means.std(ddof=1) / math.sqrt(len(seq_means))) if len(seq_means) > 1 else math.inf
    return math.exp(-float(lp.mean())), se


def unigram_tv(samples, source: MarkovSource) -> float:
    counts = np.bincount(np.asarray(samples).ravel(), minlength=source.alphabet_size)
    freq = counts[:source.alphabet_size] / max(counts.sum(), 1)
    return float(0.5 * np.abs(freq - source.unigram).sum())


@dataclass
class BenchRow:
    round: int
    steps: int
    ppl: float
    mask_residual: int
    unigram_tv: float


BENCH_HEADER = ["round", "steps", "ppl", "mask_residual", "unigram_tv"]


def evaluate_model(model, source: MarkovSource, steps: int, count: int, length: int, mask_id: int,
                   seed: int, schedule: Schedule | None = None, batch: int = 256):
    cfg = SamplerConfig(steps=steps, schedule=schedule or Schedule(), seed=seed, batch=batch)
    samples = generate(model, cfg, count, length, mask_id)
    residual = int((samples == mask_id).sum())
    return samples, oracle_ppl(samples, source), residual, unigram_tv(samples, source)


def run_benchmark(models: dict, steps_list, source: MarkovSource, count: int, length: int, mask_id: int,
                  seed: int, schedule: Schedule | None = None, batch: int = 256) -> list[BenchRow]:
    """Grid of oracle perplexities; ``models`` maps round (0 = teacher) to a model.

    Every cell uses the same sampler seed, so cells share random numbers.
    """
    rows = []
    for rnd in sorted(models):
        for steps in steps_list:
            _, ppl, residual, tv = evaluate_model(models[rnd], source, int(steps), count, length, mask_id,
                                                  seed, schedule, batch)
            rows.append(BenchRow(rnd, int(steps), ppl, residual, tv))
    return rows


def write_benchmark(rows: list[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in rows:
            w.writerow([r.round, r.steps, f"{r.ppl:.6f}", r.mask_residual, f"{r.unigram_tv:.6f}"])


def read_benchmark(path) -> list[BenchRow]:
    with open(path, newline="") as fh:
        return [BenchRow(int(r["round"]), int(r["steps"]), float(r["ppl"]), int(r["mask_residual"]),
                         float(r["unigram_tv"])) for r in csv.DictReader(fh)]


def masked_ce(model, seqs: np.ndarray, gamma_value: float, rng: np.random.Generator, mask_id: int,
              batch: int = 256) -> float:
    """Mean cross-entropy (nats) on positions masked at clean-probability ``gamma_value``."""
    from .denoiser import predict_proba
    from .masking import forward_sample

    total, count = 0.0, 0
    for lo in range(0, len(seqs), batch):
        x0 = seqs[lo:lo + batch]
        z = forward_sample(x0, gamma_value, rng, mask_id)
        m = z == mask_id
        if not m.any():
            continue
        p = predict_proba(model, z)
        picked = np.take_along_axis(p, x0[..., None], axis=-1)[..., 0]
        total += float(-np.log(picked[m]).sum())
        count += int(m.sum())
    return total / max(count, 1)


def oracle_masked_ce(source: MarkovSource, seqs: np.ndarray, gamma_value: float, rng: np.random.Generator,
                     mask_id: int, batch: int = 128) -> float:
    """Masked cross-entropy of the exact posterior: the floor for any denoiser at this noise level."""
    from .masking import forward_sample

    total, count = 0.0, 0
    for lo in range(0, len(seqs), batch):
        x0 = seqs[lo:lo + batch]
        z = forward_sample(x0, gamma_value, rng, mask_id)
        m = z == mask_id
        if not m.any():
            continue
        p = source.posterior(z, mask_id)
        picked = np.take_along_axis(p, x0[..., None], axis=-1)[..., 0]
        total += float(-np.log(picked[m]).sum())
        count += int(m.sum())
    return total / max(count, 1)


class CorpusStream:
    """Uniform sampling (with replacement) of rows from a fixed token corpus."""

    def __init__(self, corpus: np.ndarray):
        self.corpus = np.asarray(corpus, dtype=np.int64)

    def sample(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        return self.corpus[rng.integers(0, len(self.corpus), size=batch)]


def build_corpus(source: MarkovSource, tokens: int, length: int, seed: int, label: str) -> np.ndarray:
    count = max(1, tokens // length)
    return source.sample(count, length, substream(seed, "corpus", label))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
