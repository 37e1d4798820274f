"""Small fully-connected score network trained by denoising score matching.

The network sees the signal (complex signals as stacked real/imag parts)
concatenated with a sinusoidal embedding of ``tau / T`` and predicts the
scaled output ``out = sigma_tau * score``. With that parameterisation the DSM
objective weighted by ``sigma_tau^2`` becomes plain noise prediction,
``|out(alpha x0 + sigma z, tau) + z|^2``.

Gradients (parameters and input) are back-propagated by hand; everything is
float64 numpy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import DomainError, FormatError, NumericalError
from ..sde import NoiseSchedule
from .base import ScorePrior, as_complex, as_real

__all__ = [
    "ScoreNet",
    "TrainingConfig",
    "score_net_eval",
    "dsm_loss_and_grads",
    "dsm_train",
    "save_scorenet",
    "load_scorenet",
]

MAGIC = b"DSCORENT"
VERSION = 1
_MAX_FREQ = 100.0
_SCHEDULE_KINDS = ("vp", "ve")


def _silu(z):
    return z * expit(z)


def _silu_grad(z):
    sig = expit(z)
    return sig * (1.0 + z * (1.0 - sig))


def time_embedding(tau, T: float, size: int) -> np.ndarray:
    """``[sin(w_k tau/T), cos(w_k tau/T)]`` with ``w_k`` geometric between 1 and 100."""
    half = size // 2
    freqs = np.exp(np.linspace(0.0, np.log(_MAX_FREQ), max(half, 1)))[:half]
    t = np.atleast_1d(np.asarray(tau, dtype=float)) / T
    arg = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(arg), np.cos(arg)], axis=1)
    if size % 2:
        emb = np.concatenate([emb, t[:, None]], axis=1)
    return emb


class ScoreNet(ScorePrior):
    """MLP ``[x, emb(tau)] -> hidden (SiLU) -> ... -> out`` with ``score = out / sigma_tau``.

    ``dim`` is the real input width; complex signals of length ``dim // 2`` are
    accepted and realified. The output layer starts at zero, so an untrained net
    returns a zero score.

    With ``data_variance > 0`` the output gains the fixed skip term
    ``-sigma x / (alpha^2 v + sigma^2)``, the exact score of ``N(0, v I)``, and
    the MLP learns the correction to it. Without the skip an MLP narrower than
    the signal cannot represent even a Gaussian score, since its output is
    confined to the span of the last layer.
    """

    def __init__(self, dim: int, hidden=(128, 128, 128), embed_dim: int = 64,
                 schedule: NoiseSchedule | None = None, seed: int = 0, data_variance: float = 0.0):
        if dim < 1 or embed_dim < 1 or any(int(h) < 1 for h in hidden):
            raise DomainError("widths must be positive")
        if not (np.isfinite(data_variance) and data_variance >= 0):
            raise DomainError("data_variance must be finite and non-negative")
        self.data_variance = float(data_variance)
        self.dim = int(dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.embed_dim = int(embed_dim)
        self.schedule = schedule or NoiseSchedule()
        rng = np.random.default_rng(seed)
        sizes = self.layer_sizes
        self.weights, self.biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            W = np.zeros((n_in, n_out)) if last else rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
            self.weights.append(W)
            self.biases.append(np.zeros(n_out))
        self.step = 0
        self.loss_history: list[float] = []
        self._adam: tuple | None = None

    @property
    def layer_sizes(self) -> list[int]:
        return [self.dim + self.embed_dim, *self.hidden, self.dim]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise DomainError(f"expected {self.n_params} parameters, got {flat.size}")
        offset = 0
        for arr in self.params:
            arr[...] = flat[offset: offset + arr.size].reshape(arr.shape)
            offset += arr.size

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    # --- forward / backward -------------------------------------------------

    def _forward(self, x, tau):
        """``x`` is real with shape (B, dim); ``tau`` scalar or (B,)."""
        B = x.shape[0]
        emb = time_embedding(tau, self.schedule.T, self.embed_dim)
        if emb.shape[0] == 1 and B > 1:
            emb = np.broadcast_to(emb, (B, self.embed_dim))
        h = np.concatenate([x, emb], axis=1)
        acts, pre = [h], []
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i < n_layers - 1:
                pre.append(z)
                h = _silu(z)
                acts.append(h)
            else:
                h = z
        coef = None
        if self.data_variance > 0:
            alpha, sigma = self.schedule.rates(np.broadcast_to(np.asarray(tau, dtype=float), (B,)))
            coef = (-sigma / (alpha**2 * self.data_variance + sigma**2))[:, None]
            h = h + coef * x
        return h, (acts, pre, coef)

    def _backward(self, cache, g, want_params: bool):
        """Back-propagate upstream gradient ``g`` (B, dim) of the output."""
        acts, pre, coef = cache
        g_out = g
        gW, gb = [], []
        for i in range(len(self.weights) - 1, -1, -1):
            if want_params:
                gW.append(acts[i].T @ g)
                gb.append(g.sum(axis=0))
            g = g @ self.weights[i].T
            if i > 0:
                g = g * _silu_grad(pre[i - 1])
        gW.reverse()
        gb.reverse()
        gx = g[:, : self.dim]
        if coef is not None:
            gx = gx + coef * g_out
        return gx, gW, gb

    def _as_batch(self, x):
        xr, cplx = as_real(x)
        if xr.shape[-1] != self.dim:
            raise DomainError(f"signal width {xr.shape[-1]} != network width {self.dim}")
        lead = xr.shape[:-1]
        return xr.reshape(-1, self.dim).astype(float), lead, cplx

    def _restore(self, out, lead, cplx):
        out = out.reshape(lead + (self.dim,))
        return as_complex(out) if cplx else out

    def output(self, x, tau) -> np.ndarray:
        """Raw network output ``sigma_tau * score``."""
        xb, lead, cplx = self._as_batch(x)
        out, _ = self._forward(xb, tau)
        return self._restore(out, lead, cplx)

    def score_vjp(self, x, tau, schedule=None):
        schedule = schedule or self.schedule
        _, sigma = schedule.rates(tau)
        if sigma == 0:
            raise DomainError("network score needs sigma_tau > 0")
        xb, lead, cplx = self._as_batch(x)
        out, cache = self._forward(xb, tau)
        score = self._restore(out / sigma, lead, cplx)

        def vjp(v):
            vb, _, _ = self._as_batch(v)
            gx, _, _ = self._backward(cache, vb / sigma, want_params=False)
            return self._restore(gx, lead, cplx)

        return score, vjp

    def score(self, x, tau, schedule=None) -> np.ndarray:
        return self.score_vjp(x, tau, schedule)[0]

    def posterior_mean(self, x, tau, schedule=None) -> np.ndarray:
        return self.denoise(x, tau, schedule or self.schedule)


def score_net_eval(net: ScoreNet, x_tau, tau) -> np.ndarray:
    return net.score(x_tau, tau, net.schedule)


# --- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 2000
    batch_size: int = 128
    learning_rate: float = 1e-3
    #: cosine-anneal the step size to this value over the run; None keeps it fixed
    final_learning_rate: float | None = None
    clip_norm: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise DomainError("steps must be >= 0 and batch_size >= 1")
        if not (self.learning_rate > 0 and self.clip_norm > 0):
            raise DomainError("learning_rate and clip_norm must be positive")
        if self.final_learning_rate is not None and not self.final_learning_rate > 0:
            raise DomainError("final_learning_rate must be positive")

    def step_size(self, step: int) -> float:
        if self.final_learning_rate is None or self.steps <= 1:
            return self.learning_rate
        frac = 0.5 * (1.0 + np.cos(np.pi * step / (self.steps - 1)))
        return self.final_learning_rate + (self.learning_rate - self.final_learning_rate) * frac


def dsm_loss_and_grads(net: ScoreNet, x0, tau, z, want_grads: bool = True):
    """Noise-prediction loss ``mean_b |out(alpha x0 + sigma z) + z|^2 / dim`` and its parameter gradients."""
    x0, _ = as_real(np.atleast_2d(x0))
    z, _ = as_real(np.atleast_2d(z))
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (x0.shape[0],))
    alpha, sigma = net.schedule.rates(tau)
    x_tau = alpha[:, None] * x0 + sigma[:, None] * z
    out, cache = net._forward(x_tau, tau)
    resid = out + z
    B, D = resid.shape
    loss = float(np.sum(resid**2) / (B * D))
    if not want_grads:
        return loss, None
    _, gW, gb = net._backward(cache, 2.0 * resid / (B * D), want_params=True)
    grads = []
    for a, b in zip(gW, gb):
        grads += [a, b]
    return loss, grads


def dsm_train(net: ScoreNet, dataset, schedule: NoiseSchedule | None = None,
              config: TrainingConfig | None = None, validation=None) -> ScoreNet:
    """Fit ``net`` to ``dataset`` (rows are signals) with Adam on the DSM loss.

    ``tau`` is drawn uniformly on ``[tau_end, T]`` and batches follow a seeded
    shuffling order, so training is deterministic given ``config.seed``. If a
    ``validation`` tuple ``(x0, tau, z)`` is given its loss is recorded
    alongside the training loss in ``net.validation_history``.
    """
    config = config or TrainingConfig()
    if schedule is not None and schedule != net.schedule:
        raise DomainError("training schedule differs from the network's schedule")
    data = np.asarray(dataset)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] == 0:
        raise DomainError("empty training set")
    data, _ = as_real(data)
    if data.shape[1] != net.dim:
        raise DomainError(f"training signals have width {data.shape[1]}, network expects {net.dim}")
    rng = np.random.default_rng(config.seed)
    sched = net.schedule
    params = net.params
    if net._adam is None:
        net._adam = ([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)
    m, v, t_adam = net._adam
    if not hasattr(net, "validation_history"):
        net.validation_history = []
    order = rng.permutation(data.shape[0])
    cursor = 0
    for step in range(config.steps):
        if cursor + config.batch_size > order.size:
            order = rng.permutation(data.shape[0])
            cursor = 0
        idx = order[cursor: cursor + config.batch_size]
        cursor += config.batch_size
        x0 = data[idx]
        tau = rng.uniform(sched.tau_end, sched.T, size=x0.shape[0])
        z = rng.standard_normal(x0.shape)
        loss, grads = dsm_loss_and_grads(net, x0, tau, z)
        if not np.isfinite(loss):
            raise NumericalError("non-finite DSM loss", step=net.step)
        norm = np.sqrt(sum(float(np.sum(g**2)) for g in grads))
        scale = min(1.0, config.clip_norm / norm) if norm > 0 else 1.0
        t_adam += 1
        lr = config.step_size(step)
        for p, g, mi, vi in zip(params, grads, m, v):
            g = g * scale
            mi *= config.beta1
            mi += (1 - config.beta1) * g
            vi *= config.beta2
            vi += (1 - config.beta2) * g**2
            mhat = mi / (1 - config.beta1**t_adam)
            vhat = vi / (1 - config.beta2**t_adam)
            p -= lr * mhat / (np.sqrt(vhat) + 1e-8)
        net.step += 1
        net.loss_history.append(loss)
        if validation is not None:
            net.validation_history.append(dsm_loss_and_grads(net, *validation, want_grads=False)[0])
    net._adam = (m, v, t_adam)
    return net


# --- serialization ------------------------------------------------------------------

_HEADER = "<8sIII"


def save_scorenet(net: ScoreNet, path) -> None:
    """Write the versioned binary layout documented in the README."""
    sched = net.schedule
    with open(path, "wb") as fh:
        fh.write(struct.pack(_HEADER, MAGIC, VERSION, net.dim, len(net.hidden)))
        fh.write(struct.pack(f"<{len(net.hidden)}I", *net.hidden))
        fh.write(struct.pack("<IQd", net.embed_dim, net.step, net.data_variance))
        fh.write(struct.pack("<B6d", _SCHEDULE_KINDS.index(sched.kind), sched.T, sched.beta_min,
                             sched.beta_max, sched.sigma_min, sched.sigma_max, sched.tau_end))
        for p in net.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_scorenet(path) -> ScoreNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    offset = 0

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise FormatError(f"score-net file truncated at byte {offset}")
        vals = struct.unpack_from(fmt, blob, offset)
        offset += size
        return vals

    magic, version, dim, n_hidden = take(_HEADER)
    if magic != MAGIC:
        raise FormatError("not a score-net file (bad magic)")
    if version != VERSION:
        raise FormatError(f"unsupported score-net version {version}")
    hidden = take(f"<{n_hidden}I")
    embed_dim, step, data_variance = take("<IQd")
    kind, T, bmin, bmax, smin, smax, tau_end = take("<B6d")
    schedule = NoiseSchedule(kind=_SCHEDULE_KINDS[kind], T=T, beta_min=bmin, beta_max=bmax,
                             sigma_min=smin, sigma_max=smax, tau_end=tau_end)
    net = ScoreNet(dim, hidden, embed_dim, schedule, data_variance=data_variance)
    for p in net.params:
        n = p.size * 8
        if offset + n > len(blob):
            raise FormatError(f"score-net file truncated at byte {offset}")
        p[...] = np.frombuffer(blob, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
        offset += n
    if offset != len(blob):
        raise FormatError("trailing bytes after score-net parameters")
    net.step = step
    return net
