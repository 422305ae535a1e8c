"""Latent transition models trained with multi-step hallucinated replay.

Continuous models regress the next latent with squared error; discrete models
emit per-latent-vector categorical logits trained with cross-entropy and are
re-discretized (argmax -> one-hot) between hallucinated steps. An optional
pair of outcome heads turns either into a sample model for stochastic
environments: a discretization head assigns each observed transition to one of
a fixed set of outcome bins, and a prediction head learns the distribution
over bins given (z, a).
"""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .backbone import MLP
from .quantizer import LatentDiscrete, nearest_indices
from .seeding import derive_seed

ADAM_BETAS = (0.9, 0.999)
OUTCOME_BINS = 32
OUTCOME_PROJECTIONS = (256, 256)


class TrainingDivergedError(RuntimeError):
    pass


def discretize_logits(logits) -> LatentDiscrete:
    """Per-row argmax (ties to the lowest index) as indices / one-hot / nothing.

    The quantized view is left empty: between hallucinated steps and during
    rollouts only the index/one-hot forms are consumed.
    """
    t = torch.as_tensor(np.asarray(logits), dtype=torch.float32)
    if not torch.isfinite(t).all():
        raise ValueError("non-finite logits")
    idx = t.argmax(dim=-1)
    one_hot = torch.nn.functional.one_hot(idx, num_classes=t.shape[-1]).float()
    return LatentDiscrete(idx.numpy(), one_hot.numpy(), None)


class OutcomeHeads(nn.Module):
    """Discretization and prediction networks over a fixed bin count."""

    def __init__(self, flat_dim: int, n_actions: int, bins: int = OUTCOME_BINS,
                 projections=OUTCOME_PROJECTIONS):
        super().__init__()
        self.bins = bins
        self.discretizer = MLP(2 * flat_dim + n_actions, projections, bins)
        self.predictor = MLP(flat_dim + n_actions, projections, bins)

    def discretize(self, z_flat, act_oh, z_next_flat):
        """Straight-through one-hot outcome for an observed transition."""
        logits = self.discretizer(torch.cat([z_flat, act_oh, z_next_flat], dim=-1))
        soft = torch.softmax(logits, dim=-1)
        hard = torch.nn.functional.one_hot(logits.argmax(-1), self.bins).float()
        return hard + soft - soft.detach(), logits

    def predict_logits(self, z_flat, act_oh):
        return self.predictor(torch.cat([z_flat, act_oh], dim=-1))

    def sample_outcome(self, z_flat, act_oh, rng) -> torch.Tensor:
        probs = torch.softmax(self.predict_logits(z_flat, act_oh), dim=-1).numpy()
        picks = np.array([rng.choice(self.bins, p=p / p.sum()) for p in probs])
        return torch.nn.functional.one_hot(torch.as_tensor(picks), self.bins).float()


def _one_hot_actions(actions, n_actions):
    idx = torch.as_tensor(np.asarray(actions), dtype=torch.int64)
    return torch.nn.functional.one_hot(idx, n_actions).float()


class _WorldModelBase(BaseEstimator):
    """Shared hallucinated-replay training loop (Alg-1 style, per-step updates)."""

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise RuntimeError(f"{type(self).__name__} is not fitted")

    def _flat(self, z):
        raise NotImplementedError

    def _forward(self, z, act_oh, outcome):
        raise NotImplementedError

    def _loss(self, pred, target_feats):
        raise NotImplementedError

    def _advance(self, pred):
        """Map a prediction to the latent fed into the next hallucinated step."""
        raise NotImplementedError

    def _features_tensor(self, state_features):
        raise NotImplementedError

    def fit(self, dataset, state_features, log=None):
        """Train over `dataset` sequences using per-state latent features.

        `state_features` maps manifest state index -> latent (continuous
        vector, codebook index row, or quantized matrix depending on the
        variant); the frozen encoder is applied once per unique state.
        """
        torch.manual_seed(derive_seed(self.seed, f"wm-{type(self).__name__}"))
        rng = np.random.default_rng(derive_seed(self.seed, "wm-batches"))
        feats = self._features_tensor(state_features)
        self._build(feats)
        params = list(self.net_.parameters())
        if self.stochastic:
            params += list(self.heads_.parameters())
        opt = torch.optim.Adam(params, lr=self.lr, betas=ADAM_BETAS)
        history = []
        for step in range(self.steps):
            seq_states, seq_actions, lengths = dataset.sample_sequences(
                rng, self.batch_size, self.horizon)
            z = feats[seq_states[:, 0]]
            step_losses = []
            for k in range(seq_states.shape[1] - 1):
                alive = lengths > k
                if not alive.any():
                    break
                za, act = z[alive], seq_actions[alive, k]
                target = feats[seq_states[alive, k + 1]]
                act_oh = _one_hot_actions(act, self.n_actions)
                outcome = None
                aux = 0.0
                if self.stochastic:
                    outcome, disc_logits = self.heads_.discretize(
                        self._flat(za), act_oh, self._flat(target))
                    pred_logits = self.heads_.predict_logits(self._flat(za), act_oh)
                    aux = torch.nn.functional.cross_entropy(
                        pred_logits, disc_logits.argmax(-1).detach())
                pred = self._forward(za, act_oh, outcome)
                loss = self._loss(pred, target)
                total = loss + aux
                if not torch.isfinite(total):
                    raise TrainingDivergedError(f"world-model loss non-finite at step {step}")
                opt.zero_grad()
                total.backward()
                opt.step()
                step_losses.append(float(loss.detach()))
                with torch.no_grad():
                    z = z.clone()
                    z[alive] = self._advance(pred.detach())
            history.append({"step": step, "loss": float(np.mean(step_losses)),
                            "per_step": step_losses})
            if log is not None and (step + 1) % log == 0:
                print(f"wm step {step + 1}: loss {history[-1]['loss']:.5f}", flush=True)
        self.net_.eval()
        self.net_.requires_grad_(False)
        if self.stochastic:
            self.heads_.eval()
            self.heads_.requires_grad_(False)
        self.loss_history_ = history
        return self

    def hallucinated_losses(self, feats_seq, actions):
        """Per-step losses of one frozen-model hallucinated rollout (no updates)."""
        self._check_fitted()
        feats_seq = self._features_tensor(feats_seq)
        losses = []
        z = feats_seq[:1]
        with torch.no_grad():
            for k, a in enumerate(actions):
                act_oh = _one_hot_actions([a], self.n_actions)
                outcome = None
                if self.stochastic:
                    outcome, _ = self.heads_.discretize(
                        self._flat(z), act_oh, self._flat(feats_seq[k + 1 : k + 2]))
                pred = self._forward(z, act_oh, outcome)
                losses.append(float(self._loss(pred, feats_seq[k + 1 : k + 2])))
                z = self._advance(pred)
        return losses


class ContinuousWorldModel(_WorldModelBase):
    """MSE regression of the next latent vector (vanilla / FTA latents)."""

    variant = "continuous"

    def __init__(self, latent_dim=32, n_actions=3, hidden_width=64, hidden_layers=3,
                 lr=2e-4, steps=3000, batch_size=32, horizon=4,
                 stochastic=False, outcome_bins=OUTCOME_BINS, seed=0):
        self.latent_dim = latent_dim
        self.n_actions = n_actions
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.horizon = horizon
        self.stochastic = stochastic
        self.outcome_bins = outcome_bins
        self.seed = seed

    def _features_tensor(self, state_features):
        return torch.as_tensor(np.asarray(state_features), dtype=torch.float32)

    def _build(self, feats):
        in_dim = self.latent_dim + self.n_actions
        if self.stochastic:
            in_dim += self.outcome_bins
            self.heads_ = OutcomeHeads(self.latent_dim, self.n_actions, self.outcome_bins)
        self.net_ = MLP(in_dim, [self.hidden_width] * self.hidden_layers, self.latent_dim)

    def _flat(self, z):
        return z

    def _forward(self, z, act_oh, outcome):
        parts = [z, act_oh] if outcome is None else [z, act_oh, outcome]
        return self.net_(torch.cat(parts, dim=-1))

    def _loss(self, pred, target):
        return (pred - target).pow(2).mean()

    def _advance(self, pred):
        return pred

    @torch.no_grad()
    def predict(self, z, action, outcome=None):
        """One-step prediction; z is (latent_dim,) or (B, latent_dim)."""
        self._check_fitted()
        z = torch.as_tensor(np.asarray(z), dtype=torch.float32)
        single = z.ndim == 1
        if single:
            z = z[None]
        act_oh = _one_hot_actions(np.repeat(action, len(z)) if np.ndim(action) == 0
                                  else action, self.n_actions)
        if self.stochastic != (outcome is not None):
            raise ValueError("outcome vector required iff the stochastic head is enabled")
        if outcome is not None:
            outcome = torch.as_tensor(np.asarray(outcome), dtype=torch.float32)
            if outcome.ndim == 1:
                outcome = outcome[None].expand(len(act_oh), -1)
        out = self._forward(z, act_oh, outcome)
        return out[0].numpy() if single else out.numpy()


class DiscreteWorldModel(_WorldModelBase):
    """Per-latent-vector categorical prediction over codebook indices."""

    variant = "discrete"

    def __init__(self, n_latents=9, codebook_size=32, n_actions=3, embed_dim=64,
                 hidden_width=64, hidden_layers=3, lr=2e-4, steps=3000, batch_size=32,
                 horizon=4, stochastic=False, outcome_bins=OUTCOME_BINS,
                 loss_kind="ce", seed=0):
        self.n_latents = n_latents
        self.codebook_size = codebook_size
        self.n_actions = n_actions
        self.embed_dim = embed_dim
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.horizon = horizon
        self.stochastic = stochastic
        self.outcome_bins = outcome_bins
        self.loss_kind = loss_kind
        self.seed = seed

    def _features_tensor(self, state_features):
        return torch.as_tensor(np.asarray(state_features), dtype=torch.int64)

    def _build(self, feats):
        flat = self.n_latents * self.embed_dim
        in_dim = flat + self.n_actions
        if self.stochastic:
            in_dim += self.outcome_bins
            self.heads_ = OutcomeHeads(self.n_latents * self.codebook_size,
                                       self.n_actions, self.outcome_bins)
        self.embed_ = nn.Embedding(self.codebook_size, self.embed_dim)
        trunk = MLP(in_dim, [self.hidden_width] * self.hidden_layers,
                    self.n_latents * self.codebook_size)
        self.net_ = nn.ModuleDict({"embed": self.embed_, "trunk": trunk})

    def _flat(self, idx):
        return torch.nn.functional.one_hot(
            idx, self.codebook_size).float().reshape(idx.shape[0], -1)

    def _forward(self, idx, act_oh, outcome):
        emb = self.embed_(idx).reshape(idx.shape[0], -1)
        parts = [emb, act_oh] if outcome is None else [emb, act_oh, outcome]
        logits = self.net_["trunk"](torch.cat(parts, dim=-1))
        return logits.reshape(idx.shape[0], self.n_latents, self.codebook_size)

    def _loss(self, logits, target_idx):
        if self.loss_kind == "mse":
            target = torch.nn.functional.one_hot(target_idx, self.codebook_size).float()
            return (logits - target).pow(2).mean()
        return torch.nn.functional.cross_entropy(
            logits.reshape(-1, self.codebook_size), target_idx.reshape(-1))

    def _advance(self, logits):
        return logits.argmax(dim=-1)

    @torch.no_grad()
    def predict(self, indices, action, outcome=None):
        """Next-state logits of shape (k^2, l) or (B, k^2, l)."""
        self._check_fitted()
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.int64)
        single = idx.ndim == 1
        if single:
            idx = idx[None]
        act_oh = _one_hot_actions(np.repeat(action, len(idx)) if np.ndim(action) == 0
                                  else action, self.n_actions)
        if self.stochastic != (outcome is not None):
            raise ValueError("outcome vector required iff the stochastic head is enabled")
        if outcome is not None:
            outcome = torch.as_tensor(np.asarray(outcome), dtype=torch.float32)
            if outcome.ndim == 1:
                outcome = outcome[None].expand(len(act_oh), -1)
        out = self._forward(idx, act_oh, outcome)
        return out[0].numpy() if single else out.numpy()


class QuantizedWorldModel(_WorldModelBase):
    """Regression on quantized embedding vectors, snapped back to the table
    between steps so the model stays on the embedding manifold."""

    variant = "quantized"

    def __init__(self, n_latents=9, embed_dim=64, n_actions=3, hidden_width=64,
                 hidden_layers=3, lr=2e-4, steps=3000, batch_size=32, horizon=4,
                 stochastic=False, outcome_bins=OUTCOME_BINS, seed=0):
        self.n_latents = n_latents
        self.embed_dim = embed_dim
        self.n_actions = n_actions
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.horizon = horizon
        self.stochastic = stochastic
        self.outcome_bins = outcome_bins
        self.seed = seed

    def set_embeddings(self, table: np.ndarray):
        """Embedding table used for snapping (from the trained VQ-VAE)."""
        self.embeddings_ = torch.as_tensor(np.asarray(table), dtype=torch.float32)
        return self

    def _features_tensor(self, state_features):
        return torch.as_tensor(np.asarray(state_features), dtype=torch.float32)

    def _build(self, feats):
        flat = self.n_latents * self.embed_dim
        in_dim = flat + self.n_actions
        if self.stochastic:
            in_dim += self.outcome_bins
            self.heads_ = OutcomeHeads(flat, self.n_actions, self.outcome_bins)
        self.net_ = MLP(in_dim, [self.hidden_width] * self.hidden_layers, flat)

    def _flat(self, q):
        return q.reshape(q.shape[0], -1)

    def _forward(self, q, act_oh, outcome):
        parts = [self._flat(q), act_oh] if outcome is None else [self._flat(q), act_oh, outcome]
        out = self.net_(torch.cat(parts, dim=-1))
        return out.reshape(q.shape[0], self.n_latents, self.embed_dim)

    def _loss(self, pred, target):
        return (pred - target).pow(2).mean()

    def _advance(self, pred):
        idx = nearest_indices(pred, self.embeddings_)
        return self.embeddings_[idx]

    @torch.no_grad()
    def predict(self, q, action, outcome=None):
        self._check_fitted()
        q = torch.as_tensor(np.asarray(q), dtype=torch.float32)
        single = q.ndim == 2
        if single:
            q = q[None]
        act_oh = _one_hot_actions(np.repeat(action, len(q)) if np.ndim(action) == 0
                                  else action, self.n_actions)
        if self.stochastic != (outcome is not None):
            raise ValueError("outcome vector required iff the stochastic head is enabled")
        if outcome is not None:
            outcome = torch.as_tensor(np.asarray(outcome), dtype=torch.float32)
            if outcome.ndim == 1:
                outcome = outcome[None].expand(len(act_oh), -1)
        out = self._forward(q, act_oh, outcome)
        return out[0].numpy() if single else out.numpy()


def advance_latents(model, z, actions, rng):
    """One model step for a batch of latents (torch in/out), sampling outcome
    bins from the prediction head when the model is stochastic."""
    act_oh = _one_hot_actions(actions, model.n_actions)
    outcome = None
    if model.stochastic:
        outcome = model.heads_.sample_outcome(model._flat(z), act_oh, rng)
    with torch.no_grad():
        pred = model._forward(z, act_oh, outcome)
        return model._advance(pred)


def sample_rollout(model, encode_fn, policy_fn, start_obs, steps=30, rng=None):
    """Roll the frozen model forward from an encoded start observation.

    `policy_fn(latent, t)` returns an action; the returned trajectory holds
    the encoded start plus one latent per step (`steps == 0` gives only the
    encoded start).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    z = model._features_tensor(encode_fn(start_obs[None])[0:1]
                               if np.asarray(start_obs).ndim == 3
                               else encode_fn(start_obs))
    traj = [z[0].numpy()]
    actions = []
    for t in range(steps):
        a = policy_fn(traj[-1], t)
        actions.append(a)
        z = advance_latents(model, z, [a], rng)
        traj.append(z[0].numpy())
    return traj, actions
