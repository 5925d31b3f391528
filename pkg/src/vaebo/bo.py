"""Bayesian optimization in the latent space of a trained VAE.

The loop: encode evaluated designs with the encoder mean, fit one GP per
objective on the latent points, score prior samples z ~ N(0, I) with an
acquisition rule, decode the winner, simulate it and refit.

Single-objective campaigns use expected improvement. Bi-objective campaigns
keep the candidates whose predicted means are non-dominated and pick the one
with the largest summed (standardized) predictive standard deviation.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from . import gp as gplib
from . import vae as vaelib
from .design_space import DesignPoint, DesignSpace, sample_indices
from .simulators import SimulatorError

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class CampaignAborted(RuntimeError):
    """Raised when a simulator keeps failing; ``state`` holds everything evaluated so far."""

    def __init__(self, message: str, state: "CampaignState"):
        super().__init__(message)
        self.state = state


# -- acquisition primitives -------------------------------------------------

def expected_improvement(mean, std, best):
    """Expected improvement below ``best`` (minimization). Vectorized."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < 0):
        raise ValueError("std must be nonnegative")
    gain = best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(std > 0, gain / np.where(std > 0, std, 1.0), 0.0)
    ei = gain * ndtr(u) + std * _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    ei = np.where(std > 0, ei, np.maximum(gain, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def non_dominated(points) -> list[int]:
    """Indices of bi-objective points not dominated under minimization.

    ``p`` dominates ``q`` when ``p <= q`` componentwise and ``p != q``; exact
    duplicates therefore never dominate each other.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.size == 0:
        return []
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError("non_dominated expects a list of 2-vectors")
    order = np.lexsort((P[:, 1], P[:, 0]))
    f1, f2 = P[order, 0], P[order, 1]
    _, first, group = np.unique(f1, return_index=True, return_inverse=True)
    gmin = f2[first]  # f2 is sorted within each f1 group
    # smallest f2 among points with strictly smaller f1
    best_prev = np.concatenate([[np.inf], np.minimum.accumulate(gmin)[:-1]])
    keep = (f2 == gmin[group]) & (best_prev[group] > f2)
    return sorted(int(k) for k in order[keep])


def hypervolume_2d(points, reference) -> float:
    """Area dominated by ``points`` and bounded by ``reference`` (minimization)."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    r1, r2 = float(reference[0]), float(reference[1])
    P = P[(P[:, 0] < r1) & (P[:, 1] < r2)]
    if len(P) == 0:
        return 0.0
    front = P[non_dominated(P)]
    front = front[np.lexsort((front[:, 1], front[:, 0]))]
    hv, prev = 0.0, r2
    for f1, f2 in front:
        if f2 < prev:
            hv += (r1 - f1) * (prev - f2)
            prev = f2
    return hv


# -- campaign data ----------------------------------------------------------

@dataclass
class CampaignConfig:
    init_count: int = 10
    budget: int = 50
    candidates: int = 2048
    seed: int = 0
    arity: int = 1
    latent_dim: int = 8
    beta: float = 0.05
    epochs: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_retries: int = 3

    def __post_init__(self):
        if self.init_count < 2:
            raise ValueError("init_count must be >= 2")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.arity not in (1, 2):
            raise ValueError("arity must be 1 or 2")

    @classmethod
    def from_dict(cls, doc: dict) -> "CampaignConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown campaign config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Record:
    indices: tuple
    z: tuple
    objectives: tuple
    iteration: int  # 0 for the initial design
    acquisition: float | None = None
    fallback: bool = False
    wall_time: float = 0.0


@dataclass
class AcquisitionChoice:
    z: np.ndarray
    point: DesignPoint
    score: float
    fallback: bool


@dataclass
class CampaignState:
    space: DesignSpace
    config: CampaignConfig
    records: list = field(default_factory=list)
    iteration: int = 0
    rng_state: dict | None = None  # candidate stream
    init_rng_state: dict | None = None
    failures: list = field(default_factory=list)

    @property
    def objectives(self) -> np.ndarray:
        return np.asarray([r.objectives for r in self.records], dtype=np.float64).reshape(-1, self.config.arity)

    @property
    def latents(self) -> np.ndarray:
        return np.asarray([r.z for r in self.records], dtype=np.float64)

    def seen(self) -> set:
        out = {tuple(r.indices) for r in self.records}
        out.update(tuple(f["indices"]) for f in self.failures)
        return out

    def incumbent(self) -> Record:
        """Best record (single objective); first among equals."""
        f = self.objectives[:, 0]
        return self.records[int(np.argmin(f))]

    def best_trace(self) -> np.ndarray:
        return np.minimum.accumulate(self.objectives[:, 0])

    def pareto_records(self) -> list[Record]:
        return [self.records[i] for i in non_dominated(self.objectives)]


def seed_streams(seed: int) -> dict[str, np.random.SeedSequence]:
    """Split one user seed into the VAE, initial-design and candidate streams."""
    vae_ss, init_ss, cand_ss = np.random.SeedSequence(seed).spawn(3)
    return {"vae": vae_ss, "init": init_ss, "candidates": cand_ss}


def _generator(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


# -- proposals --------------------------------------------------------------

def _pick_unseen(order: Sequence[int], decoded: np.ndarray, seen: set):
    for k in order:
        if tuple(int(v) for v in decoded[k]) not in seen:
            return int(k), False
    return int(order[0]), True


def propose_single(state: CampaignState, vae: vaelib.VaeModel, gp: gplib.GpModel,
                   candidate_count: int, rng: np.random.Generator) -> AcquisitionChoice:
    Z = rng.standard_normal((candidate_count, vae.latent_dim))
    mean, std = gplib.predict_batch(gp, Z)
    best = float(state.objectives[:, 0].min())
    ei = expected_improvement(mean, std, best)
    order = np.argsort(-ei, kind="stable")
    decoded = vaelib.decode_batch(vae, Z)
    k, fallback = _pick_unseen(order, decoded, state.seen())
    return AcquisitionChoice(Z[k], state.space.point(decoded[k]), float(ei[k]), fallback)


def pareto_order(mean1, mean2, std1, std2) -> np.ndarray:
    """Candidate ranking for the bi-objective rule.

    Candidates on the predicted front come first, by descending summed
    uncertainty; if every one of them is rejected the next predicted front
    (after removing the first) is ranked the same way, and so on.
    """
    M = np.column_stack([mean1, mean2])
    unc = np.asarray(std1) + np.asarray(std2)
    remaining = np.arange(len(M))
    ranked = []
    while len(remaining):
        nd = remaining[non_dominated(M[remaining])]
        nd = nd[np.argsort(-unc[nd], kind="stable")]
        ranked.append(nd)
        remaining = np.setdiff1d(remaining, nd, assume_unique=True)
    return np.concatenate(ranked)


def propose_pareto(state: CampaignState, vae: vaelib.VaeModel, gp1: gplib.GpModel, gp2: gplib.GpModel,
                   candidate_count: int, rng: np.random.Generator) -> AcquisitionChoice:
    Z = rng.standard_normal((candidate_count, vae.latent_dim))
    m1, s1 = gplib.predict_batch(gp1, Z, standardized=True)
    m2, s2 = gplib.predict_batch(gp2, Z, standardized=True)
    decoded = vaelib.decode_batch(vae, Z)
    seen = state.seen()
    order = None
    # fast path: only rank deeper fronts when the first one is exhausted
    first = np.asarray(non_dominated(np.column_stack([m1, m2])))
    first = first[np.argsort(-(s1 + s2)[first], kind="stable")]
    k, fallback = _pick_unseen(first, decoded, seen)
    if fallback:
        order = pareto_order(m1, m2, s1, s2)
        k, fallback = _pick_unseen(order, decoded, seen)
    return AcquisitionChoice(Z[k], state.space.point(decoded[k]), float(s1[k] + s2[k]), fallback)


# -- the loop ---------------------------------------------------------------

Simulator = Callable[[dict], Sequence[float]]


def _evaluate(space: DesignSpace, simulator: Simulator, p: DesignPoint, arity: int) -> tuple:
    try:
        vals = tuple(float(v) for v in simulator(space.assignment(p)))
    except SimulatorError:
        raise
    except (KeyError, ValueError, TypeError, ArithmeticError) as exc:
        raise SimulatorError(f"{type(exc).__name__}: {exc}") from exc
    if len(vals) != arity:
        raise SimulatorError(f"simulator returned {len(vals)} objectives, expected {arity}")
    if not all(math.isfinite(v) for v in vals):
        raise SimulatorError(f"simulator returned non-finite objectives {vals}")
    return vals


def _record_failure(state: CampaignState, p: DesignPoint, iteration: int, exc: Exception) -> None:
    log.warning("simulator failed at %s (iteration %d): %s", p.values, iteration, exc)
    state.failures.append({"indices": list(p.indices), "iteration": iteration,
                           "error": f"{type(exc).__name__}: {exc}"})


def initialize(space: DesignSpace, simulator: Simulator, config: CampaignConfig,
               vae: vaelib.VaeModel | None = None) -> tuple[CampaignState, vaelib.VaeModel]:
    """Initial design, VAE training (unless ``vae`` is given) and encoding."""
    streams = seed_streams(config.seed)
    init_rng = np.random.default_rng(streams["init"])
    cand_rng = np.random.default_rng(streams["candidates"])
    state = CampaignState(space, config)
    state.rng_state = cand_rng.bit_generator.state

    pending = list(sample_indices(space, config.init_count, init_rng))
    evaluated = []
    for row in pending:
        p = space.point(row)
        for attempt in range(config.max_retries + 1):
            t0 = time.perf_counter()
            try:
                f = _evaluate(space, simulator, p, config.arity)
            except SimulatorError as exc:
                _record_failure(state, p, 0, exc)
                if attempt == config.max_retries:
                    state.init_rng_state = init_rng.bit_generator.state
                    state.records = [Record(q.indices, (), fq, 0, None, False, w) for q, fq, w in evaluated]
                    raise CampaignAborted(f"initial design: simulator failed {attempt + 1} times; last error: {exc}",
                                          state) from exc
                p = space.point(sample_indices(space, 1, init_rng)[0])
                continue
            evaluated.append((p, f, time.perf_counter() - t0))
            break
    state.init_rng_state = init_rng.bit_generator.state

    if vae is None:
        data = vaelib.default_training_set(space, seed=config.seed)
        vae, report = vaelib.train(space, data, latent_dim=config.latent_dim, beta=config.beta,
                                   epochs=config.epochs, batch_size=config.batch_size,
                                   learning_rate=config.learning_rate, seed=streams["vae"])
        log.info("VAE trained: final loss %.5f, reconstruction rate %.4f",
                 report.loss_total[-1] if report.loss_total else float("nan"), report.reconstruction_rate)
    elif vae.space != space:
        raise ValueError("VAE was trained on a different design space")

    # per-point encoding keeps every stored z bit-identical to encode_mean(x)
    state.records = [Record(p.indices, tuple(float(v) for v in vaelib.encode_mean(vae, p)), f, 0, None, False, w)
                     for p, f, w in evaluated]
    return state, vae


def fit_surrogates(state: CampaignState, options: gplib.GpOptions | None = None) -> list[gplib.GpModel]:
    Z, F = state.latents, state.objectives
    return [gplib.fit(Z, F[:, j], options) for j in range(state.config.arity)]


def step(state: CampaignState, vae: vaelib.VaeModel, simulator: Simulator,
         options: gplib.GpOptions | None = None) -> Record:
    """One propose/decode/evaluate/append iteration; refits the surrogates first."""
    cfg = state.config
    rng = _generator(state.rng_state)
    gps = fit_surrogates(state, options)
    it = state.iteration + 1
    for attempt in range(cfg.max_retries + 1):
        if cfg.arity == 1:
            choice = propose_single(state, vae, gps[0], cfg.candidates, rng)
        else:
            choice = propose_pareto(state, vae, gps[0], gps[1], cfg.candidates, rng)
        t0 = time.perf_counter()
        try:
            f = _evaluate(state.space, simulator, choice.point, cfg.arity)
        except SimulatorError as exc:
            _record_failure(state, choice.point, it, exc)
            state.rng_state = rng.bit_generator.state
            if attempt == cfg.max_retries:
                raise CampaignAborted(f"iteration {it}: simulator failed {attempt + 1} times; last error: {exc}",
                                      state) from exc
            continue
        wall = time.perf_counter() - t0
        break
    z = vaelib.encode_mean(vae, choice.point)
    rec = Record(choice.point.indices, tuple(float(v) for v in z), f, it, choice.score, choice.fallback, wall)
    state.records.append(rec)
    state.iteration = it
    state.rng_state = rng.bit_generator.state
    return rec


def extend(state: CampaignState, vae: vaelib.VaeModel, simulator: Simulator, extra: int,
           callback: Callable[[CampaignState], None] | None = None,
           options: gplib.GpOptions | None = None) -> CampaignState:
    for _ in range(extra):
        step(state, vae, simulator, options)
        if callback is not None:
            callback(state)
    return state


def run_campaign(space: DesignSpace, simulator: Simulator, config: CampaignConfig,
                 vae: vaelib.VaeModel | None = None,
                 callback: Callable[[CampaignState], None] | None = None,
                 options: gplib.GpOptions | None = None) -> tuple[CampaignState, vaelib.VaeModel]:
    """Initial design followed by ``config.budget`` BO iterations."""
    state, vae = initialize(space, simulator, config, vae)
    if callback is not None:
        callback(state)
    extend(state, vae, simulator, config.budget, callback, options)
    return state, vae
