"""Variational autoencoder mapping a discrete design space to a continuous latent space.

Each design variable has its own embedding table. Embeddings are concatenated
and pushed through an MLP encoder that outputs the latent mean and
log-variance. The decoder maps a latent point to one block of logits per
variable; decoding takes the argmax of every block.

Training minimizes ``loss_rec + beta * loss_kl`` averaged over minibatches,
with fresh Gaussian noise per sample per epoch.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import neural
from .design_space import DesignPoint, DesignSpace, sample_indices, space_from_dict
from .neural import AdamState

log = logging.getLogger(__name__)

ENCODER_HIDDEN = (64, 32)
DECODER_HIDDEN = (32, 64)
MAX_TRAINING_POINTS = 100_000


class TrainingDivergedError(FloatingPointError):
    pass


def embedding_width(num_levels: int) -> int:
    return min(8, num_levels)


@dataclass(eq=False)
class VaeModel:
    space: DesignSpace
    embeddings: list  # one (levels_n, width_n) table per variable
    encoder: list  # h -> 2D
    decoder: list  # D -> sum of level counts
    latent_dim: int
    beta: float = 0.05

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.encoder[-1].n_out != 2 * self.latent_dim:
            raise ValueError("encoder output must have length 2 * latent_dim")
        if self.decoder[0].n_in != self.latent_dim or self.decoder[-1].n_out != sum(self.space.sizes):
            raise ValueError("decoder shape does not match the space / latent_dim")

    @property
    def blocks(self) -> list[slice]:
        out, start = [], 0
        for c in self.space.sizes:
            out.append(slice(start, start + c))
            start += c
        return out

    def parameters(self) -> list[np.ndarray]:
        return list(self.embeddings) + neural.parameters(self.encoder) + neural.parameters(self.decoder)


def build_model(space: DesignSpace, latent_dim: int = 8, beta: float = 0.05,
                rng: np.random.Generator | int = 0, encoder_hidden: Sequence[int] = ENCODER_HIDDEN,
                decoder_hidden: Sequence[int] = DECODER_HIDDEN) -> VaeModel:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    embeddings = [rng.standard_normal((c, embedding_width(c))) for c in space.sizes]
    h = sum(e.shape[1] for e in embeddings)
    enc_sizes = [h, *encoder_hidden, 2 * latent_dim]
    dec_sizes = [latent_dim, *decoder_hidden, sum(space.sizes)]
    encoder = neural.init_network(enc_sizes, ["relu"] * len(encoder_hidden) + ["linear"], rng)
    decoder = neural.init_network(dec_sizes, ["relu"] * len(decoder_hidden) + ["linear"], rng)
    return VaeModel(space, embeddings, encoder, decoder, latent_dim, beta)


# -- elementary pieces ------------------------------------------------------

def reparameterize(mu, log_var, epsilon) -> np.ndarray:
    mu, log_var, epsilon = (np.asarray(a, dtype=np.float64) for a in (mu, log_var, epsilon))
    if not (mu.shape == log_var.shape == epsilon.shape):
        raise ValueError(f"shape mismatch: {mu.shape}, {log_var.shape}, {epsilon.shape}")
    return mu + epsilon * np.exp(0.5 * log_var)


def _log_softmax(y: np.ndarray) -> np.ndarray:
    shifted = y - y.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(y) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(y, dtype=np.float64)))


def loss_rec(logits: Sequence, target) -> float:
    """Summed cross-entropy of per-variable logit blocks against class indices.

    ``target`` is a :class:`DesignPoint` or a sequence of class indices.
    """
    idx = target.indices if isinstance(target, DesignPoint) else tuple(target)
    if len(idx) != len(logits):
        raise ValueError(f"{len(logits)} logit blocks for {len(idx)} targets")
    total = 0.0
    for block, k in zip(logits, idx):
        block = np.asarray(block, dtype=np.float64)
        if not 0 <= k < block.size:
            raise IndexError(f"target class {k} outside block of size {block.size}")
        total -= _log_softmax(block)[k]
    return float(total)


def loss_kl(mu, log_var) -> float:
    mu, log_var = np.asarray(mu, dtype=np.float64), np.asarray(log_var, dtype=np.float64)
    if mu.shape != log_var.shape:
        raise ValueError("mu and log_var differ in shape")
    return float(0.5 * np.sum(np.exp(log_var) + mu * mu - log_var - 1.0))


# -- batched forward / backward --------------------------------------------

def _embed(model: VaeModel, idx: np.ndarray) -> np.ndarray:
    return np.concatenate([table[idx[:, n]] for n, table in enumerate(model.embeddings)], axis=1)


def encode_batch(model: VaeModel, idx) -> tuple[np.ndarray, np.ndarray]:
    """Encoder means and log-variances for an (n, N) index array."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, len(model.space))
    out, _ = neural.forward(model.encoder, _embed(model, idx))
    return out[:, :model.latent_dim], out[:, model.latent_dim:]


def decoder_logits(model: VaeModel, z) -> np.ndarray:
    out, _ = neural.forward(model.decoder, np.atleast_2d(np.asarray(z, dtype=np.float64)))
    return out


def composite_loss(model: VaeModel, idx, epsilon, with_grad: bool = False):
    """Mean composite loss over a batch with externally supplied noise.

    Returns ``(loss, rec, kl)`` batch means, plus a gradient list aligned with
    ``model.parameters()`` when ``with_grad`` is true.
    """
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, len(model.space))
    eps = np.asarray(epsilon, dtype=np.float64).reshape(idx.shape[0], model.latent_dim)
    B, D = idx.shape[0], model.latent_dim

    h = _embed(model, idx)
    enc_out, enc_tape = neural.forward(model.encoder, h)
    mu, log_var = enc_out[:, :D], enc_out[:, D:]
    std = np.exp(0.5 * log_var)
    z = mu + eps * std
    logits, dec_tape = neural.forward(model.decoder, z)

    rec = np.zeros(B)
    dlogits = np.empty_like(logits) if with_grad else None
    rows = np.arange(B)
    for n, blk in enumerate(model.blocks):
        lsm = _log_softmax(logits[:, blk])
        rec -= lsm[rows, idx[:, n]]
        if with_grad:
            p = np.exp(lsm)
            p[rows, idx[:, n]] -= 1.0
            dlogits[:, blk] = p
    var = std * std
    kl = 0.5 * np.sum(var + mu * mu - log_var - 1.0, axis=1)
    rec_m, kl_m = rec.mean(), kl.mean()
    loss = float(np.mean(rec + model.beta * kl))
    if not with_grad:
        return loss, float(rec_m), float(kl_m)

    dlogits /= B
    g_dec = neural.backward(model.decoder, dec_tape, dlogits)
    dz = g_dec.input
    dmu = dz + (model.beta / B) * mu
    dlog_var = 0.5 * dz * eps * std + (0.5 * model.beta / B) * (var - 1.0)
    g_enc = neural.backward(model.encoder, enc_tape, np.concatenate([dmu, dlog_var], axis=1))
    demb, start = [], 0
    for n, table in enumerate(model.embeddings):
        w = table.shape[1]
        g = np.zeros_like(table)
        np.add.at(g, idx[:, n], g_enc.input[:, start:start + w])
        demb.append(g)
        start += w
    grads = demb + g_enc.arrays() + g_dec.arrays()
    return (loss, float(rec_m), float(kl_m)), grads


# -- training ---------------------------------------------------------------

@dataclass
class TrainingReport:
    loss_rec: list = field(default_factory=list)
    loss_kl: list = field(default_factory=list)
    loss_total: list = field(default_factory=list)
    reconstruction_rate: float = float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss_rec", "loss_kl", "loss_total"])
            for i, row in enumerate(zip(self.loss_rec, self.loss_kl, self.loss_total), start=1):
                w.writerow([i, *(repr(float(v)) for v in row)])


def _share_flat_buffer(model: VaeModel) -> np.ndarray:
    """Rebind every parameter as a view into one flat vector (one Adam update per step)."""
    params = model.parameters()
    flat = np.concatenate([p.ravel() for p in params])
    views, start = [], 0
    for p in params:
        views.append(flat[start:start + p.size].reshape(p.shape))
        start += p.size
    n_emb = len(model.embeddings)
    model.embeddings = views[:n_emb]
    rest = views[n_emb:]
    for layer in model.encoder + model.decoder:
        layer.weights, layer.biases = rest[0], rest[1]
        rest = rest[2:]
    return flat


def _as_index_array(space: DesignSpace, dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        arr = np.asarray(dataset, dtype=np.int64).reshape(-1, len(space))
        for n, c in enumerate(space.sizes):
            if arr.size and (arr[:, n].min() < 0 or arr[:, n].max() >= c):
                raise ValueError(f"{space.variables[n].name}: level index out of range in dataset")
        return arr
    return space.index_array(space.validate(p) for p in dataset)


def default_training_set(space: DesignSpace, seed=0) -> np.ndarray:
    """Full enumeration for small spaces, otherwise a uniform sample of 10^5 points."""
    if space.cardinality <= MAX_TRAINING_POINTS:
        return space.enumerate_indices()
    return sample_indices(space, MAX_TRAINING_POINTS, np.random.default_rng(seed))


def train(space: DesignSpace, dataset, latent_dim: int = 8, beta: float = 0.05,
          epochs: int = 2000, batch_size: int = 64, learning_rate: float = 1e-3,
          seed=0) -> tuple[VaeModel, TrainingReport]:
    """Train a VAE on ``dataset`` (DesignPoints or an index array)."""
    idx = _as_index_array(space, dataset)
    if idx.shape[0] == 0:
        raise ValueError("empty training dataset")
    if epochs < 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0 and batch_size >= 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    init_ss, order_ss, noise_ss = ss.spawn(3)
    model = build_model(space, latent_dim, beta, np.random.default_rng(init_ss))
    order_rng = np.random.default_rng(order_ss)
    noise_rng = np.random.default_rng(noise_ss)

    flat = _share_flat_buffer(model)
    state = AdamState.create([flat], learning_rate=learning_rate)
    report = TrainingReport()
    n = idx.shape[0]
    for epoch in range(epochs):
        perm = order_rng.permutation(n)
        eps = noise_rng.standard_normal((n, latent_dim))
        tot_rec = tot_kl = tot = 0.0
        for start in range(0, n, batch_size):
            sel = perm[start:start + batch_size]
            (loss, rec, kl), grads = composite_loss(model, idx[sel], eps[sel], with_grad=True)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}")
            b = len(sel)
            tot += loss * b
            tot_rec += rec * b
            tot_kl += kl * b
            neural.adam_step([flat], [np.concatenate([g.ravel() for g in grads])], state)
            for layer in model.encoder + model.decoder:
                layer.version += 1
        report.loss_rec.append(tot_rec / n)
        report.loss_kl.append(tot_kl / n)
        report.loss_total.append(tot / n)
        if (epoch + 1) % 250 == 0:
            log.debug("epoch %d: L=%.5f rec=%.5f kl=%.5f", epoch + 1, tot / n, tot_rec / n, tot_kl / n)
    report.reconstruction_rate = reconstruction_rate(model, idx)
    return model, report


# -- deterministic encode / decode -----------------------------------------

def encode_mean(model: VaeModel, p: DesignPoint) -> np.ndarray:
    model.space.validate(p)
    mu, _ = encode_batch(model, np.asarray([p.indices]))
    return mu[0]


def encode_mean_batch(model: VaeModel, idx) -> np.ndarray:
    return encode_batch(model, idx)[0]


def decode_batch(model: VaeModel, z) -> np.ndarray:
    """Argmax class per variable for each latent row; ties go to the lower index."""
    logits = decoder_logits(model, z)
    return np.stack([np.argmax(logits[:, blk], axis=1) for blk in model.blocks], axis=1).astype(np.int64)


def decode(model: VaeModel, z) -> DesignPoint:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,) or not np.all(np.isfinite(z)):
        raise ValueError(f"latent point must be a finite vector of length {model.latent_dim}")
    return model.space.point(decode_batch(model, z[None, :])[0])


def probabilities(model: VaeModel, z) -> list[np.ndarray]:
    logits = decoder_logits(model, z)[0]
    return [softmax(logits[blk]) for blk in model.blocks]


def reconstruction_rate(model: VaeModel, dataset) -> float:
    idx = _as_index_array(model.space, dataset)
    back = decode_batch(model, encode_mean_batch(model, idx))
    return float(np.mean(np.all(back == idx, axis=1)))


def latent_dim_sweep(space: DesignSpace, dataset, dims: Sequence[int], seed=0, **hyper) -> list[dict]:
    """Train one model per latent dimension and tabulate its final losses."""
    if not dims:
        raise ValueError("dims must be non-empty")
    rows = []
    for d in dims:
        _, report = train(space, dataset, latent_dim=int(d), seed=seed, **hyper)
        rows.append({"latent_dim": int(d), "loss_rec": report.loss_rec[-1] if report.loss_rec else float("nan"),
                     "loss_kl": report.loss_kl[-1] if report.loss_kl else float("nan"),
                     "loss_total": report.loss_total[-1] if report.loss_total else float("nan"),
                     "reconstruction_rate": report.reconstruction_rate})
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    cols = ["latent_dim", "loss_rec", "loss_kl", "loss_total", "reconstruction_rate"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["latent_dim"]] + [repr(float(r[c])) for c in cols[1:]])


# -- checkpoints ------------------------------------------------------------

def save_model(model: VaeModel, path) -> None:
    arrays = {f"embedding{n}": t for n, t in enumerate(model.embeddings)}
    enc, enc_act = neural.network_arrays(model.encoder, "encoder")
    dec, dec_act = neural.network_arrays(model.decoder, "decoder")
    arrays.update(enc)
    arrays.update(dec)
    meta = {"kind": "vae", "latent_dim": model.latent_dim, "beta": model.beta,
            "encoder_activations": enc_act, "decoder_activations": dec_act,
            "space": model.space.to_config()}
    neural.save_checkpoint(path, arrays, meta)


def load_model(path) -> VaeModel:
    arrays, meta = neural.load_checkpoint(path)
    if meta.get("kind") != "vae":
        raise ValueError(f"{path}: not a VAE checkpoint")
    space = space_from_dict(meta["space"])
    embeddings = [arrays[f"embedding{n}"].copy() for n in range(len(space))]
    encoder = neural.network_from_arrays(arrays, "encoder", meta["encoder_activations"])
    decoder = neural.network_from_arrays(arrays, "decoder", meta["decoder_activations"])
    return VaeModel(space, embeddings, encoder, decoder, int(meta["latent_dim"]), float(meta["beta"]))
