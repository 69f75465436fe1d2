"""Volume-conditioned denoising diffusion over centerline images, desk scale.

A centerline of k points is encoded as a k x 3 image in [-1, 1] (see
``centerline.encode_image``).  The forward process draws

    x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps

and a small MLP learns to predict eps from (x_t, t, features), where the
conditioning features are looked up in the volume at the noisy points'
denormalized world positions, both in training and in sampling.  The
reverse update is the standard ancestral step with sigma_t = sqrt(beta_t).

Everything is plain float64 numpy with analytic gradients, trainable in
seconds and bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .centerline import decode_image
from .volume import Volume, sample_trilinear

_REFERENCE_T = 1000  # step count at which the canonical beta range applies


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with cached cumulative products.

    alpha_bars has length T + 1 with alpha_bars[0] = 1, so index t is the
    cumulative product over steps 1..t.
    """

    timesteps: int
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("need at least one timestep")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ValueError("betas must satisfy 0 < start <= end < 1")
        betas = np.linspace(self.beta_start, self.beta_end, self.timesteps)
        alphas = 1.0 - betas
        alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.betas)

    @staticmethod
    def desk_default(timesteps: int = 200) -> "NoiseSchedule":
        """Schedule whose cumulative noise profile matches the 1000-step
        reference, so the terminal state is essentially pure noise even at
        reduced step counts."""
        scale = _REFERENCE_T / timesteps
        return NoiseSchedule(timesteps, 1e-4 * scale, 0.02 * scale)


def forward_noise(ci0, t: int, eps, sched: NoiseSchedule):
    """Closed-form noising: sqrt(abar_t) ci0 + sqrt(1 - abar_t) eps; t=0 is identity."""
    if not (0 <= t <= sched.timesteps):
        raise ValueError(f"t={t} outside [0, {sched.timesteps}]")
    ci0 = np.asarray(ci0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != ci0.shape:
        raise ValueError("noise must match the centerline image shape")
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * ci0 + np.sqrt(1.0 - ab) * eps


class VolumeFeatureEncoder:
    """Handcrafted per-point conditioning: intensity, central-difference
    gradient at one voxel step, and the 3x3x3 patch mean (5 values)."""

    n_features = 5

    def __init__(self, vol: Volume):
        self.vol = vol
        sp = np.asarray(vol.spacing, dtype=np.float64)
        patch = np.array([(i, j, k) for k in (-1, 0, 1) for j in (-1, 0, 1) for i in (-1, 0, 1)])
        grad = np.vstack([np.eye(3), -np.eye(3)])
        # one fused lookup: 27 patch offsets then +x +y +z -x -y -z steps
        self._offsets = np.vstack([patch, grad]) * sp[None, :]
        self._grad_step = sp

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(pts)
        query = (pts[:, None, :] + self._offsets[None, :, :]).reshape(-1, 3)
        vals = sample_trilinear(self.vol, query).reshape(n, 33)
        patch = vals[:, :27]
        intensity = patch[:, 13]  # center offset (0,0,0)
        grad = (vals[:, 27:30] - vals[:, 30:33]) / (2.0 * self._grad_step[None, :])
        return np.column_stack([intensity, grad, patch.mean(axis=1)])


def time_embedding(t, dim: int = 16) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (..., dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


_PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


class MlpDenoiser:
    """Two-hidden-layer tanh perceptron predicting the added noise.

    Input: flattened noisy centerline (k*3) ++ per-point features (k*F) ++
    sinusoidal time embedding; output: k*3 predicted noise.
    """

    def __init__(self, k_points: int, n_features: int = 5, hidden: int = 256,
                 time_dim: int = 16, seed: int = 0):
        self.k_points = k_points
        self.n_features = n_features
        self.hidden = hidden
        self.time_dim = time_dim
        self.d_in = k_points * 3 + k_points * n_features + time_dim
        self.d_out = k_points * 3
        rng = np.random.default_rng(seed)

        def xavier(n_out, n_in):
            s = np.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-s, s, size=(n_out, n_in))

        self.params = {
            "w1": xavier(hidden, self.d_in),
            "b1": np.zeros(hidden),
            "w2": xavier(hidden, hidden),
            "b2": np.zeros(hidden),
            "w3": xavier(self.d_out, hidden),
            "b3": np.zeros(self.d_out),
        }

    def assemble_input(self, ci_t, t, features) -> np.ndarray:
        ci_t = np.asarray(ci_t, dtype=np.float64)
        feats = np.asarray(features, dtype=np.float64)
        if ci_t.ndim == 2:
            ci_t = ci_t[None]
            feats = feats[None]
        b = ci_t.shape[0]
        emb = time_embedding(t, self.time_dim)
        if emb.shape[0] == 1 and b > 1:
            emb = np.repeat(emb, b, axis=0)
        return np.concatenate(
            [ci_t.reshape(b, -1), feats.reshape(b, -1), emb], axis=1
        )

    def forward(self, x: np.ndarray):
        p = self.params
        z1 = x @ p["w1"].T + p["b1"]
        h1 = np.tanh(z1)
        z2 = h1 @ p["w2"].T + p["b2"]
        h2 = np.tanh(z2)
        out = h2 @ p["w3"].T + p["b3"]
        return out, (x, h1, h2)

    def backward(self, cache, d_out: np.ndarray) -> dict:
        x, h1, h2 = cache
        p = self.params
        grads = {}
        grads["w3"] = d_out.T @ h2
        grads["b3"] = d_out.sum(axis=0)
        dh2 = d_out @ p["w3"]
        dz2 = dh2 * (1.0 - h2 * h2)
        grads["w2"] = dz2.T @ h1
        grads["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["w2"]
        dz1 = dh1 * (1.0 - h1 * h1)
        grads["w1"] = dz1.T @ x
        grads["b1"] = dz1.sum(axis=0)
        return grads

    def predict(self, ci_t, t, features) -> np.ndarray:
        single = np.asarray(ci_t).ndim == 2
        x = self.assemble_input(ci_t, t, features)
        out, _ = self.forward(x)
        out = out.reshape(-1, self.k_points, 3)
        return out[0] if single else out

    # flat views used by checkpoints and finite-difference checks
    def flatten_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in _PARAM_ORDER])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for k in _PARAM_ORDER:
            n = self.params[k].size
            self.params[k] = flat[pos : pos + n].reshape(self.params[k].shape).copy()
            pos += n
        if pos != flat.size:
            raise ValueError("parameter payload size mismatch")


@dataclass(frozen=True)
class TrainingPair:
    """One supervised sample: a clean centerline image plus its volume context."""

    ci0: np.ndarray
    encoder: object  # callable (N, 3) world points -> (N, F)
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray

    @staticmethod
    def from_volume(vol: Volume, centerline_points, encoder=None) -> "TrainingPair":
        from .centerline import encode_image

        lo, hi = vol.bounds()
        enc = encoder if encoder is not None else VolumeFeatureEncoder(vol)
        return TrainingPair(
            ci0=encode_image(centerline_points, lo, hi),
            encoder=enc,
            bounds_lo=lo,
            bounds_hi=hi,
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    batch_size: int = 16
    iterations: int = 5000
    seed: int = 0
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 1:
            raise ValueError("train config rates and counts must be positive")


def loss_and_grads(pairs, denoiser, sched: NoiseSchedule, rng) -> tuple[float, dict | None]:
    """Mean squared noise-prediction error over a batch.

    Per sample, t ~ U{1..T} and eps ~ N(0, I); the conditioning features
    are looked up at the noisy points' denormalized world positions.  For
    the MLP denoiser the analytic parameter gradients are returned; for
    predict-only denoisers (oracles) the gradient slot is None.
    """
    if not pairs:
        raise ValueError("empty batch")
    b = len(pairs)
    k = pairs[0].ci0.shape[0]
    draws = []
    for pair in pairs:
        t = int(rng.integers(1, sched.timesteps + 1))
        eps = rng.standard_normal((k, 3))
        ci_t = forward_noise(pair.ci0, t, eps, sched)
        pos = decode_image(ci_t, pair.bounds_lo, pair.bounds_hi)
        feats = pair.encoder(pos)
        draws.append((t, eps, ci_t, feats))

    if not isinstance(denoiser, MlpDenoiser):
        preds = np.stack(
            [denoiser.predict(ci_t, t, feats) for t, _, ci_t, feats in draws]
        ).reshape(b, k * 3)
        targets = np.stack([eps.ravel() for _, eps, _, _ in draws])
        resid = preds - targets
        return float(np.mean(resid * resid)), None

    xs = np.empty((b, denoiser.d_in))
    targets = np.empty((b, k * 3))
    for i, (t, eps, ci_t, feats) in enumerate(draws):
        xs[i] = denoiser.assemble_input(ci_t, t, feats)[0]
        targets[i] = eps.ravel()
    out, cache = denoiser.forward(xs)
    resid = out - targets
    loss = float(np.mean(resid * resid))
    d_out = 2.0 * resid / resid.size
    grads = denoiser.backward(cache, d_out)
    return loss, grads


class TrainingDiverged(RuntimeError):
    pass


def train(dataset, cfg: TrainConfig, sched: NoiseSchedule,
          denoiser: MlpDenoiser | None = None, log_every: int = 100):
    """Adam-style optimization of the denoiser; deterministic for a seed.

    Returns (denoiser, curve) where curve rows are (iteration, loss,
    smoothed loss over the trailing 100 iterations).  Aborts when the loss
    stays above 10x its initial value for 500 consecutive iterations.
    """
    if len(dataset) < 1:
        raise ValueError("empty dataset")
    k = dataset[0].ci0.shape[0]
    n_feat = getattr(dataset[0].encoder, "n_features", 5)
    if denoiser is None:
        denoiser = MlpDenoiser(k, n_feat, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    m = {key: np.zeros_like(val) for key, val in denoiser.params.items()}
    v = {key: np.zeros_like(val) for key, val in denoiser.params.items()}
    curve = []
    recent = []
    initial_loss = None
    bad_streak = 0
    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = [dataset[i] for i in idx]
        loss, grads = loss_and_grads(batch, denoiser, sched, rng)
        if initial_loss is None:
            initial_loss = loss
        bad_streak = bad_streak + 1 if loss > 10.0 * initial_loss else 0
        if bad_streak >= 500:
            raise TrainingDiverged(
                f"loss {loss:.4g} stayed above 10x initial ({initial_loss:.4g}) "
                f"for 500 iterations (at iteration {it})"
            )
        for key in _PARAM_ORDER:
            g = grads[key]
            m[key] = cfg.beta1 * m[key] + (1 - cfg.beta1) * g
            v[key] = cfg.beta2 * v[key] + (1 - cfg.beta2) * g * g
            mhat = m[key] / (1 - cfg.beta1 ** it)
            vhat = v[key] / (1 - cfg.beta2 ** it)
            denoiser.params[key] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        recent.append(loss)
        if len(recent) > 100:
            recent.pop(0)
        if it % log_every == 0 or it == cfg.iterations:
            curve.append((it, loss, float(np.mean(recent))))
    return denoiser, curve


def sample(
    vol: Volume,
    encoder,
    denoiser,
    sched: NoiseSchedule,
    rng,
    deterministic: bool = False,
    x_init: np.ndarray | None = None,
    k_points: int | None = None,
):
    """Ancestral sampling of a centerline conditioned on the volume.

    Starts from unit Gaussian noise (or ``x_init``), re-looks up features at
    the current denormalized positions each step, and returns the decoded
    polyline.  The noise injection is skipped at the final step and, when
    ``deterministic`` is set, at every step.
    """
    k = k_points if k_points is not None else denoiser.k_points
    lo, hi = vol.bounds()
    x = rng.standard_normal((k, 3)) if x_init is None else np.array(x_init, dtype=np.float64)
    for t in range(sched.timesteps, 0, -1):
        pos = decode_image(x, lo, hi)
        feats = encoder(pos)
        eps_hat = denoiser.predict(x, t, feats)
        beta = sched.betas[t - 1]
        alpha = sched.alphas[t - 1]
        abar = sched.alpha_bars[t]
        x = (x - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
        if t > 1 and not deterministic:
            x = x + sched.sigmas[t - 1] * rng.standard_normal((k, 3))
        if not np.isfinite(x).all():
            raise RuntimeError(f"sampling state became non-finite at step t={t}")
    return decode_image(x, lo, hi)


class OracleDenoiser:
    """Perfect denoiser for one known sample: given the current state, it
    returns the exact noise that would have produced it from ci0 by the
    closed-form forward process."""

    def __init__(self, ci0: np.ndarray, sched: NoiseSchedule, k_points: int | None = None):
        self.ci0 = np.asarray(ci0, dtype=np.float64)
        self.sched = sched
        self.k_points = k_points if k_points is not None else self.ci0.shape[0]

    def predict(self, ci_t, t, features) -> np.ndarray:
        ab = self.sched.alpha_bars[t]
        return (np.asarray(ci_t) - np.sqrt(ab) * self.ci0) / np.sqrt(1.0 - ab)


# ---------------------------------------------------------------------------
# checkpoints: JSON header + little-endian float32 parameter payload


def save_checkpoint(denoiser: MlpDenoiser, sched: NoiseSchedule, path_stem, seed: int = 0) -> None:
    stem = Path(path_stem)
    header = {
        "k_points": denoiser.k_points,
        "n_features": denoiser.n_features,
        "hidden": denoiser.hidden,
        "time_dim": denoiser.time_dim,
        "schedule": {
            "timesteps": sched.timesteps,
            "beta_start": sched.beta_start,
            "beta_end": sched.beta_end,
        },
        "seed": seed,
        "payload_dtype": "f32le",
    }
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    payload = denoiser.flatten_params().astype("<f4")
    stem.with_suffix(".f32").write_bytes(payload.tobytes())


def load_checkpoint(path_stem) -> tuple[MlpDenoiser, NoiseSchedule]:
    stem = Path(path_stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    if header.get("payload_dtype") != "f32le":
        raise ValueError("unknown checkpoint payload dtype")
    den = MlpDenoiser(
        k_points=int(header["k_points"]),
        n_features=int(header["n_features"]),
        hidden=int(header["hidden"]),
        time_dim=int(header["time_dim"]),
        seed=int(header.get("seed", 0)),
    )
    flat = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4").astype(np.float64)
    den.set_flat_params(flat)
    s = header["schedule"]
    sched = NoiseSchedule(int(s["timesteps"]), float(s["beta_start"]), float(s["beta_end"]))
    return den, sched
