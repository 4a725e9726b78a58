"""
Sequence autoencoder trip anomaly detector.

A GRU encoder maps a resampled, bbox-normalized trajectory to a latent vector; a GRU
decoder fed with that vector at every step reconstructs the sequence. The anomaly
score is the mean squared reconstruction error (1/T) sum ||x_t - x'_t||^2.

Optionally the latent is variational and pulled towards a Gaussian mixture prior
with learnable component means. Gradients are computed by explicit
backpropagation through time; gradient_check compares them with central finite
differences.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..config import CHECKPOINT_FORMAT_VERSION, DEFAULT_SEQ
from ..errors import ConfigError, TrainingDiverged
from ..privacy import perturb_corpus
from ..trajectory import BBox, Label
from ..utils import derive_rng

logger = logging.getLogger(__name__)

LOGVAR_CLAMP = 8.0
TRAINABLE = ("enc_W", "enc_U", "enc_b", "mu_W", "mu_b", "lv_W", "lv_b",
             "init_W", "init_b", "dec_W", "dec_U", "dec_b", "out_W", "out_b", "prior_means")


@dataclass(frozen=True)
class SeqModelConfig:
    hidden_dim: int = DEFAULT_SEQ["hidden_dim"]
    latent_dim: int = DEFAULT_SEQ["latent_dim"]
    n_mixture: int = DEFAULT_SEQ["n_mixture"]
    variational: bool = DEFAULT_SEQ["variational"]
    beta: float = DEFAULT_SEQ["beta"]
    learning_rate: float = DEFAULT_SEQ["learning_rate"]
    epochs: int = DEFAULT_SEQ["epochs"]
    batch_size: int = DEFAULT_SEQ["batch_size"]
    max_len: int = DEFAULT_SEQ["max_len"]
    grad_clip: float = DEFAULT_SEQ["grad_clip"]
    seed: int = DEFAULT_SEQ["seed"]

    def validate(self):
        for name in ("hidden_dim", "latent_dim", "n_mixture", "batch_size", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"seq model {name} must be >= 1")
        if self.max_len < 2:
            raise ConfigError("seq model max_len must be >= 2")
        if not self.learning_rate > 0:
            raise ConfigError("seq model learning_rate must be > 0")
        if self.epochs < 0 or self.beta < 0 or self.grad_clip < 0:
            raise ConfigError("seq model epochs, beta and grad_clip must be >= 0")
        return self


class Normalizer:
    """Min-max normalization of planar coordinates by the corpus bbox."""

    def __init__(self, bbox):
        self.bbox = bbox
        self.origin = bbox.centroid
        xmin, ymin, xmax, ymax = bbox.planar_extent(self.origin)
        if not (xmax - xmin > 0 and ymax - ymin > 0):
            raise ValueError(f"Degenerate bbox {bbox}")
        self.low = np.array([xmin, ymin])
        self.span = np.array([xmax - xmin, ymax - ymin])

    @property
    def diagonal_m(self):
        return float(np.hypot(*self.span))

    def transform(self, xy):
        return (np.asarray(xy) - self.low) / self.span

    def inverse(self, u):
        return np.asarray(u) * self.span + self.low


def resample_arc_length(xy, max_len):
    """Exactly max_len points evenly spaced by arc length along a polyline."""
    seg = np.hypot(*np.diff(xy, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0.0:
        return np.repeat(xy[:1], max_len, axis=0)
    s = np.linspace(0.0, cum[-1], max_len)
    return np.column_stack([np.interp(s, cum, xy[:, 0]), np.interp(s, cum, xy[:, 1])])


def preprocess(t, bbox, max_len, normalizer=None):
    """Resample t to max_len points and normalize into the bbox unit square."""
    normalizer = normalizer or Normalizer(bbox)
    xy = t.planar(normalizer.origin)
    return normalizer.transform(resample_arc_length(xy, max_len))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(X, h0, W, U, b):
    """Run a GRU over X (B, T, D); returns hidden states [h0..hT] and step caches."""
    H = h0.shape[1]
    h = h0
    states, caches = [h0], []
    for t in range(X.shape[1]):
        x = X[:, t]
        gx = x @ W + b
        gh = h @ U[:, :2 * H]
        z = _sigmoid(gx[:, :H] + gh[:, :H])
        r = _sigmoid(gx[:, H:2 * H] + gh[:, H:])
        rh = r * h
        n = np.tanh(gx[:, 2 * H:] + rh @ U[:, 2 * H:])
        caches.append((x, h, z, r, rh, n))
        h = (1.0 - z) * n + z * h
        states.append(h)
    return states, caches


def gru_backward(dH, caches, W, U):
    """Backpropagate dH (B, T, H), the loss gradient w.r.t. each step's output state.

    Returns (dW, dU, db, dX, dh0).
    """
    H = U.shape[0]
    dW, dU, db = np.zeros_like(W), np.zeros_like(U), np.zeros(W.shape[1])
    B, T = dH.shape[0], dH.shape[1]
    dX = np.zeros((B, T, W.shape[0]))
    dh_next = np.zeros((B, H))
    for t in reversed(range(T)):
        x, h, z, r, rh, n = caches[t]
        dh = dh_next + dH[:, t]
        dn_pre = dh * (1.0 - z) * (1.0 - n ** 2)
        dz_pre = dh * (h - n) * z * (1.0 - z)
        dh_prev = dh * z
        d_rh = dn_pre @ U[:, 2 * H:].T
        dr_pre = d_rh * h * r * (1.0 - r)
        dh_prev += d_rh * r
        dg = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
        dW += x.T @ dg
        db += dg.sum(axis=0)
        dU[:, :H] += h.T @ dz_pre
        dU[:, H:2 * H] += h.T @ dr_pre
        dU[:, 2 * H:] += rh.T @ dn_pre
        dh_prev += dz_pre @ U[:, :H].T + dr_pre @ U[:, H:2 * H].T
        dX[:, t] = dg @ W.T
        dh_next = dh_prev
    return dW, dU, db, dX, dh_next


@dataclass
class GradientCheckReport:
    max_relative_error: float
    per_tensor: dict = field(default_factory=dict)


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    heldout_loss: float = None
    gradient_check: GradientCheckReport = None
    n_train: int = 0
    n_heldout: int = 0


class SeqModel:
    """GRU sequence autoencoder with an optional Gaussian mixture latent prior."""

    def __init__(self, cfg, bbox):
        self.cfg = cfg.validate()
        self.bbox = bbox
        self.normalizer = Normalizer(bbox)
        rng = derive_rng(cfg.seed, "seq-init")
        H, L, K = cfg.hidden_dim, cfg.latent_dim, cfg.n_mixture

        def dense(fan_in, shape):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

        self.params = {
            "enc_W": dense(2, (2, 3 * H)),
            "enc_U": dense(H, (H, 3 * H)),
            "enc_b": np.zeros(3 * H),
            "mu_W": dense(H, (H, L)),
            "mu_b": np.zeros(L),
            "lv_W": dense(H, (H, L)) * 0.1,
            "lv_b": np.zeros(L),
            "init_W": dense(L, (L, H)),
            "init_b": np.zeros(H),
            "dec_W": dense(L, (L, 3 * H)),
            "dec_U": dense(H, (H, 3 * H)),
            "dec_b": np.zeros(3 * H),
            "out_W": dense(H, (H, 2)),
            "out_b": np.full(2, 0.5),
            "prior_means": rng.normal(0.0, 1.0, size=(K, L)) if K > 1 else np.zeros((K, L)),
            "prior_log_weights": np.full(K, -np.log(K)),
        }

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def sequences(self, trips):
        return np.stack([preprocess(t, self.bbox, self.cfg.max_len, self.normalizer) for t in trips])

    def _forward(self, X, noise=None):
        p = self.params
        B = X.shape[0]
        enc_states, enc_cache = gru_forward(X, np.zeros((B, self.cfg.hidden_dim)),
                                            p["enc_W"], p["enc_U"], p["enc_b"])
        hT = enc_states[-1]
        mu = hT @ p["mu_W"] + p["mu_b"]
        lv_raw = hT @ p["lv_W"] + p["lv_b"]
        lv = np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
        sampled = self.cfg.variational and noise is not None
        z = mu + np.exp(0.5 * lv) * noise if sampled else mu
        h0 = np.tanh(z @ p["init_W"] + p["init_b"])
        Xd = np.repeat(z[:, None, :], X.shape[1], axis=1)
        dec_states, dec_cache = gru_forward(Xd, h0, p["dec_W"], p["dec_U"], p["dec_b"])
        Hd = np.stack(dec_states[1:], axis=1)
        Y = Hd @ p["out_W"] + p["out_b"]
        cache = dict(enc_cache=enc_cache, hT=hT, mu=mu, lv=lv, lv_raw=lv_raw, z=z, h0=h0,
                     dec_cache=dec_cache, Hd=Hd, noise=noise if sampled else None)
        return Y, cache

    def _kl_terms(self, mu, lv):
        p = self.params
        diff = mu[:, None, :] - p["prior_means"][None, :, :]
        kl = 0.5 * np.sum(np.exp(lv)[:, None, :] + diff ** 2 - 1.0 - lv[:, None, :], axis=2)
        logits = p["prior_log_weights"][None, :] - kl
        top = logits.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
        weights = np.exp(logits - lse[:, None])
        return -lse, weights, diff

    def reconstruct(self, X):
        return self._forward(X)[0]

    def loss(self, X, noise=None):
        return self.loss_and_grads(X, noise, with_grads=False)[0]

    def loss_and_grads(self, X, noise=None, with_grads=True):
        """Total loss (MSE + beta * mixture KL in variational mode) and its gradients."""
        p = self.params
        B, T = X.shape[0], X.shape[1]
        Y, c = self._forward(X, noise)
        diff = Y - X
        mse = float(np.sum(diff ** 2) / (B * T))
        use_kl = self.cfg.variational and self.cfg.beta > 0
        total = mse
        if use_kl:
            kl_sample, weights, mdiff = self._kl_terms(c["mu"], c["lv"])
            total += self.cfg.beta * float(np.mean(kl_sample))
        if not with_grads:
            return total, None

        g = {name: np.zeros_like(value) for name, value in p.items()}
        dY = 2.0 * diff / (B * T)
        g["out_W"] = np.einsum("bth,btc->hc", c["Hd"], dY)
        g["out_b"] = dY.sum(axis=(0, 1))
        dHd = dY @ p["out_W"].T
        g["dec_W"], g["dec_U"], g["dec_b"], dXd, dh0 = gru_backward(dHd, c["dec_cache"],
                                                                   p["dec_W"], p["dec_U"])
        dpre0 = dh0 * (1.0 - c["h0"] ** 2)
        g["init_W"] = c["z"].T @ dpre0
        g["init_b"] = dpre0.sum(axis=0)
        dz = dXd.sum(axis=1) + dpre0 @ p["init_W"].T

        dmu = dz.copy()
        dlv = np.zeros_like(c["lv"])
        if c["noise"] is not None:
            dlv += dz * c["noise"] * 0.5 * np.exp(0.5 * c["lv"])
        if use_kl:
            scale = self.cfg.beta / B
            dmu += scale * np.einsum("bk,bkl->bl", weights, mdiff)
            dlv += scale * 0.5 * (np.exp(c["lv"]) - 1.0)
            g["prior_means"] = -scale * np.einsum("bk,bkl->kl", weights, mdiff)
        dlv_raw = dlv * (np.abs(c["lv_raw"]) <= LOGVAR_CLAMP)

        g["mu_W"] = c["hT"].T @ dmu
        g["mu_b"] = dmu.sum(axis=0)
        g["lv_W"] = c["hT"].T @ dlv_raw
        g["lv_b"] = dlv_raw.sum(axis=0)
        dhT = dmu @ p["mu_W"].T + dlv_raw @ p["lv_W"].T
        dH = np.zeros((B, T, self.cfg.hidden_dim))
        dH[:, -1] = dhT
        g["enc_W"], g["enc_U"], g["enc_b"], _, _ = gru_backward(dH, c["enc_cache"],
                                                                p["enc_W"], p["enc_U"])
        return total, g

    def score_sequences(self, X):
        """Per-sequence (1/T) sum ||x_t - x'_t||^2, latent = posterior mean."""
        Y = self.reconstruct(X)
        return np.sum((Y - X) ** 2, axis=(1, 2)) / X.shape[1]

    def to_dict(self):
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": asdict(self.cfg),
            "bbox": self.bbox.to_dict(),
            "params": {name: value.tolist() for name, value in self.params.items()},
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"Unsupported checkpoint version {data.get('format_version')!r}")
        model = cls(SeqModelConfig(**data["config"]), BBox(**data["bbox"]))
        for name, value in data["params"].items():
            if name not in model.params:
                raise ConfigError(f"Unknown checkpoint tensor {name}")
            arr = np.asarray(value, dtype=float)
            if arr.shape != model.params[name].shape:
                raise ConfigError(f"Checkpoint tensor {name} has shape {arr.shape}")
            model.params[name] = arr
        return model


def gradient_check(model, X, noise=None, step=1e-5, n_probe=None, rng=None):
    """Compare analytic gradients with central finite differences.

    Per tensor the error is max|analytic - numeric| / max(max|analytic|, max|numeric|),
    over all entries or n_probe random entries per tensor.
    """
    _, grads = model.loss_and_grads(X, noise)
    rng = rng or np.random.default_rng(0)
    per_tensor = {}
    for name in TRAINABLE:
        param = model.params[name]
        flat = param.reshape(-1)
        idx = np.arange(flat.size)
        if n_probe is not None and n_probe < flat.size:
            idx = rng.choice(flat.size, size=n_probe, replace=False)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            up = model.loss(X, noise)
            flat[i] = old - step
            down = model.loss(X, noise)
            flat[i] = old
            numeric[k] = (up - down) / (2.0 * step)
        analytic = grads[name].reshape(-1)[idx]
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
        per_tensor[name] = float(np.max(np.abs(analytic - numeric)) / scale)
    return GradientCheckReport(max(per_tensor.values()), per_tensor)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(params[k]) for k in TRAINABLE}
        self.v = {k: np.zeros_like(params[k]) for k in TRAINABLE}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for k in TRAINABLE:
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * grads[k]
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * grads[k] ** 2
            m_hat = self.m[k] / (1 - self.beta1 ** self.t)
            v_hat = self.v[k] / (1 - self.beta2 ** self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _clip(grads, max_norm):
    if not max_norm:
        return grads
    norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in TRAINABLE))
    if norm > max_norm:
        for k in TRAINABLE:
            grads[k] *= max_norm / norm
    return grads


def train(model, trips, cfg=None, probe_gradients=True):
    """Train on normal trips only; deterministic under cfg.seed."""
    cfg = (cfg or model.cfg).validate()
    trips = list(trips)
    if any(t.label is Label.MALICIOUS for t in trips):
        raise ConfigError("Training set must contain only Normal trips")
    report = TrainReport()
    if cfg.epochs == 0 or not trips:
        return report

    rng = derive_rng(cfg.seed, "seq-train")
    X_all = model.sequences(trips)
    order = rng.permutation(len(X_all))
    n_held = len(X_all) // 10 if len(X_all) >= 10 else 0
    held = X_all[order[:n_held]] if n_held else X_all
    X = X_all[order[n_held:]]
    report.n_train, report.n_heldout = len(X), len(held)

    if probe_gradients:
        probe = X[:2]
        noise = rng.normal(size=(len(probe), cfg.latent_dim)) if cfg.variational else None
        report.gradient_check = gradient_check(model, probe, noise, n_probe=3, rng=rng)
        logger.debug("Probe gradient check: max relative error %.2e",
                     report.gradient_check.max_relative_error)

    optimizer = Adam(model.params, cfg.learning_rate)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(X))
        total, seen = 0.0, 0
        for batch, start in enumerate(range(0, len(X), cfg.batch_size)):
            xb = X[perm[start:start + cfg.batch_size]]
            noise = rng.normal(size=(len(xb), cfg.latent_dim)) if cfg.variational else None
            loss, grads = model.loss_and_grads(xb, noise)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, batch, loss)
            optimizer.step(model.params, _clip(grads, cfg.grad_clip))
            total += loss * len(xb)
            seen += len(xb)
        report.epoch_losses.append(total / seen)
        if (epoch + 1) % 10 == 0 or epoch == cfg.epochs - 1:
            logger.info("Epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, report.epoch_losses[-1])
    report.heldout_loss = float(np.mean(model.score_sequences(held)))
    return report


def score(model, t):
    """Reconstruction error of one trip in normalized coordinates."""
    return float(model.score_sequences(model.sequences([t]))[0])


def score_batch(model, trips):
    trips = list(trips)
    if not trips:
        return np.zeros(0)
    return model.score_sequences(model.sequences(trips))


def fit_seq_detector(corpus, train_ids, privacy_cfg, cfg, jobs=1):
    """Perturb the normal training split like the server would see it and train a model."""
    train_corpus = corpus.subset(train_ids)
    normals = [t.id for t in train_corpus if t.label is Label.NORMAL]
    visible, _ = perturb_corpus(train_corpus.subset(normals), privacy_cfg, jobs=jobs)
    model = SeqModel(cfg, corpus.bbox)
    report = train(model, visible.trajectories, cfg)
    logger.info("Trained sequence model (%d parameters) on %d trips for %s",
                model.n_params, len(normals), privacy_cfg.label)
    return model, report


def detect(corpus, test_ids, privacy_cfg, model, jobs=1):
    """Score every test trip after the same perturbation the training data received."""
    from ..evaluation import ScoredTrip
    from ..trajectory import od_key

    truth = corpus.labels()
    visible, _ = perturb_corpus(corpus.subset(sorted(test_ids)).without_labels(), privacy_cfg, jobs=jobs)
    scores = score_batch(model, visible.trajectories)
    return [ScoredTrip(t.id, truth[t.id], float(s), str(od_key(t, corpus.bbox)))
            for t, s in zip(visible.trajectories, scores)]
