"""The three representation learners: vanilla, FTA and VQ-VAE autoencoders.

All share the conv backbone and a reconstruction objective; they differ only
in the bottleneck. They are sklearn-style transformers: `fit(X)` trains on a
batch of observations and freezes the weights, `transform(X)` produces the
latent representation consumed downstream (dense vector, sparse FTA expansion,
or codebook indices).
"""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from torch import nn

from .backbone import ConvDecoder, ConvEncoder, conv_spec_for
from .fta import FTA
from .gridworld import obs_hw
from .quantizer import VectorQuantizer
from .seeding import derive_seed
from .validation import as_float_batch, check_matrix, check_observations

VARIANTS = ("vanilla", "fta", "vqvae")
ADAM_BETAS = (0.9, 0.999)


class TrainingDivergedError(RuntimeError):
    pass


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every pixel of the batch."""
    return (x - x_hat).pow(2).mean()


class VanillaAENet(nn.Module):
    def __init__(self, spec, input_hw, pool_k, latent_dim):
        super().__init__()
        self.encoder = ConvEncoder(spec, input_hw, pool_k)
        self.decoder = ConvDecoder(spec, input_hw, pool_k)
        feat = spec.out_channels * pool_k * pool_k
        self.to_latent = nn.Linear(feat, latent_dim)
        self.from_latent = nn.Linear(self.latent_out_dim(latent_dim), feat)
        self._feat_shape = (spec.out_channels, pool_k, pool_k)

    @staticmethod
    def latent_out_dim(latent_dim):
        return latent_dim

    def bottleneck(self, pre):
        return pre

    def encode(self, x):
        pre = self.to_latent(self.encoder(x).flatten(1))
        return self.bottleneck(pre)

    def decode(self, z):
        h = self.from_latent(z).reshape(z.shape[0], *self._feat_shape)
        return self.decoder(h)

    def forward(self, x):
        z = self.encode(x)
        return self.decode(z), z

    def loss(self, x):
        recon, _ = self(x)
        loss = reconstruction_loss(x, recon)
        return loss, {"reconstruction_loss": float(loss.detach()),
                      "commitment_loss": 0.0, "codebook_usage": 0.0}


class FTAAENet(VanillaAENet):
    def __init__(self, spec, input_hw, pool_k, latent_dim, n_tiles, lower, upper):
        self.n_tiles = n_tiles
        super().__init__(spec, input_hw, pool_k, latent_dim)
        self.fta = FTA(lower, upper, n_tiles)

    def latent_out_dim(self, latent_dim):
        return latent_dim * self.n_tiles

    def bottleneck(self, pre):
        return self.fta(pre)


class VQVAENet(nn.Module):
    """Quantizes the pooled conv features directly; d equals the conv channels."""

    def __init__(self, spec, input_hw, pool_k, codebook_size, embed_dim=None, beta=1.0):
        super().__init__()
        self.encoder = ConvEncoder(spec, input_hw, pool_k)
        self.decoder = ConvDecoder(spec, input_hw, pool_k)
        self.pool_k = pool_k
        self.n_latents = pool_k * pool_k
        self.n_pixels = input_hw[0] * input_hw[1] * 3
        self.beta = beta
        d = spec.out_channels
        if embed_dim is not None and embed_dim != d:
            # sparsity-sweep style architectures project to a custom dim
            self.project_in = nn.Conv2d(d, embed_dim, 1)
            self.project_out = nn.Conv2d(embed_dim, d, 1)
            d = embed_dim
        else:
            self.project_in = self.project_out = None
        self.embed_dim = d
        self.quantizer = VectorQuantizer(codebook_size, d)

    def encode_prequant(self, x):
        """(B, 3, H, W) -> (B, k^2, d) latent vectors."""
        h = self.encoder(x)
        if self.project_in is not None:
            h = self.project_in(h)
        return h.permute(0, 2, 3, 1).reshape(x.shape[0], self.n_latents, self.embed_dim)

    encode = encode_prequant

    def decode_quantized(self, q):
        """(B, k^2, d) quantized vectors -> reconstruction."""
        h = q.reshape(q.shape[0], self.pool_k, self.pool_k, self.embed_dim)
        h = h.permute(0, 3, 1, 2)
        if self.project_out is not None:
            h = self.project_out(h)
        return self.decoder(h)

    def forward(self, x):
        z = self.encode_prequant(x)
        q, idx, commitment = self.quantizer(z)
        return self.decode_quantized(q), z, q, idx, commitment

    def loss(self, x, bypass_quantizer: bool = False):
        """Reconstruction MSE plus beta-weighted commitment (per-element MSE).

        With `bypass_quantizer` the latents go straight to the decoder and the
        commitment is dropped (codebook warmup: quantizing an encoder whose
        states are not yet separated collapses the codebook irrecoverably).
        """
        if bypass_quantizer:
            z = self.encode_prequant(x)
            recon = self.decode_quantized(z)
            rec = reconstruction_loss(x, recon)
            return rec, {"reconstruction_loss": float(rec.detach()),
                         "commitment_loss": 0.0, "codebook_usage": 0.0}
        recon, z, q, idx, commitment = self(x)
        rec = reconstruction_loss(x, recon)
        total = rec + self.beta * commitment
        return total, {"reconstruction_loss": float(rec.detach()),
                       "commitment_loss": float(commitment.detach()),
                       "codebook_usage": self.quantizer.usage_fraction(idx)}


class _AutoencoderBase(BaseEstimator, TransformerMixin):
    """Shared training loop: Adam(2e-4), fixed steps, freeze at the end."""

    def _build_net(self):
        raise NotImplementedError

    def _input_hw(self):
        return obs_hw(self.env_id, self.scale)

    def _step_loss(self, net, batch, step, X, rng):
        return net.loss(batch)

    def fit(self, X, y=None):
        X = check_observations(X, self._input_hw())
        torch.manual_seed(derive_seed(self.seed, f"ae-{type(self).__name__}"))
        rng = np.random.default_rng(derive_seed(self.seed, "ae-batches"))
        net = self._build_net()
        opt = torch.optim.Adam(net.parameters(), lr=self.lr, betas=ADAM_BETAS)
        history = []
        net.train()
        for step in range(self.steps):
            idx = rng.integers(len(X), size=min(self.batch_size, len(X)))
            batch = torch.from_numpy(as_float_batch(X, idx)).permute(0, 3, 1, 2)
            loss, parts = self._step_loss(net, batch, step, X, rng)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"{type(self).__name__} loss became non-finite at step {step}: {parts}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append({"step": step, **parts})
        net.eval()
        net.requires_grad_(False)
        self.net_ = net
        self.loss_history_ = history
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise RuntimeError(f"{type(self).__name__} is not fitted")

    @torch.no_grad()
    def _encode_torch(self, X):
        self._check_fitted()
        X = check_observations(X, self._input_hw())
        batch = torch.from_numpy(as_float_batch(X)).permute(0, 3, 1, 2)
        return self.net_.encode(batch)

    def final_loss(self, window: int = 50) -> float:
        self._check_fitted()
        tail = self.loss_history_[-window:]
        return float(np.mean([row["reconstruction_loss"] for row in tail]))


class VanillaAutoencoder(_AutoencoderBase):
    variant = "vanilla"

    def __init__(self, env_id="empty", scale="desk", pool_k=4, latent_dim=32,
                 lr=2e-4, steps=2000, batch_size=64, seed=0):
        self.env_id = env_id
        self.scale = scale
        self.pool_k = pool_k
        self.latent_dim = latent_dim
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed

    def _build_net(self):
        spec = conv_spec_for(self.env_id, self.scale)
        return VanillaAENet(spec, self._input_hw(), self.pool_k, self.latent_dim)

    @property
    def feature_dim(self):
        return self.latent_dim

    def transform(self, X):
        return self._encode_torch(X).numpy()

    @torch.no_grad()
    def inverse_transform(self, Z):
        self._check_fitted()
        Z = check_matrix(Z, self.feature_dim)
        out = self.net_.decode(torch.from_numpy(Z))
        return out.permute(0, 2, 3, 1).numpy()

    @torch.no_grad()
    def reconstruct(self, X):
        self._check_fitted()
        X = check_observations(X, self._input_hw())
        batch = torch.from_numpy(as_float_batch(X)).permute(0, 3, 1, 2)
        recon, _ = self.net_(batch)
        return recon.permute(0, 2, 3, 1).numpy()


class FTAAutoencoder(VanillaAutoencoder):
    variant = "fta"

    def __init__(self, env_id="empty", scale="desk", pool_k=4, latent_dim=32,
                 fta_tiles=8, fta_lower=-2.0, fta_upper=2.0,
                 lr=2e-4, steps=2000, batch_size=64, seed=0):
        super().__init__(env_id, scale, pool_k, latent_dim, lr, steps, batch_size, seed)
        self.fta_tiles = fta_tiles
        self.fta_lower = fta_lower
        self.fta_upper = fta_upper

    def _build_net(self):
        spec = conv_spec_for(self.env_id, self.scale)
        return FTAAENet(spec, self._input_hw(), self.pool_k, self.latent_dim,
                        self.fta_tiles, self.fta_lower, self.fta_upper)

    @property
    def feature_dim(self):
        return self.latent_dim * self.fta_tiles


class VQVAE(_AutoencoderBase):
    variant = "vqvae"

    def __init__(self, env_id="empty", scale="desk", pool_k=3, codebook_size=32,
                 embed_dim=None, beta=1.0, warmup_frac=0.4,
                 lr=2e-4, steps=2000, batch_size=64, seed=0):
        self.env_id = env_id
        self.scale = scale
        self.pool_k = pool_k
        self.codebook_size = codebook_size
        self.embed_dim = embed_dim
        self.beta = beta
        self.warmup_frac = warmup_frac
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed

    def _build_net(self):
        spec = conv_spec_for(self.env_id, self.scale)
        return VQVAENet(spec, self._input_hw(), self.pool_k,
                        self.codebook_size, self.embed_dim, self.beta)

    def _warmup_steps(self):
        return int(self.steps * self.warmup_frac)

    def _seed_codebook(self, net, X, rng):
        idx = rng.integers(len(X), size=min(512, len(X)))
        with torch.no_grad():
            batch = torch.from_numpy(as_float_batch(X, idx)).permute(0, 3, 1, 2)
            z = net.encode_prequant(batch)
        net.quantizer.init_from_data(z, rng)

    def _step_loss(self, net, batch, step, X, rng):
        """Two-phase schedule around the quantization switch.

        Bypass the quantizer until the latents separate, then seed the
        codebook with k-means centers of the latent cloud and train the
        decoder/embeddings on the full objective with the encoder held fixed.
        Joint re-training after the switch is unstable at this scale: the
        k-means residual makes the commitment term dwarf the reconstruction
        term, and its easiest descent direction contracts every latent onto a
        single code (verified empirically), which is irrecoverable.
        """
        warmup = self._warmup_steps()
        if step == warmup:
            self._seed_codebook(net, X, rng)
            net.encoder.requires_grad_(False)
            if net.project_in is not None:
                net.project_in.requires_grad_(False)
        return net.loss(batch, bypass_quantizer=step < warmup)

    @property
    def n_latents(self):
        return self.pool_k * self.pool_k

    @property
    def feature_dim(self):
        """Flattened multi-one-hot width."""
        return self.n_latents * self.codebook_size

    def transform(self, X):
        """Codebook indices, shape (N, k^2)."""
        z = self._encode_torch(X)
        return self.net_.quantizer.indices(z).numpy()

    def one_hot(self, indices) -> np.ndarray:
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.int64)
        return torch.nn.functional.one_hot(idx, self.codebook_size).float().numpy()

    @torch.no_grad()
    def quantized(self, indices) -> np.ndarray:
        """(N, k^2) indices -> (N, k^2, d) embedding vectors."""
        self._check_fitted()
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.int64)
        return self.net_.quantizer.embeddings[idx].numpy()

    @property
    def embeddings_(self) -> np.ndarray:
        self._check_fitted()
        return self.net_.quantizer.embeddings.detach().numpy()

    @torch.no_grad()
    def decode_indices(self, indices) -> np.ndarray:
        self._check_fitted()
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.int64)
        q = self.net_.quantizer.embeddings[idx]
        out = self.net_.decode_quantized(q)
        return out.permute(0, 2, 3, 1).numpy()

    @torch.no_grad()
    def reconstruct(self, X):
        self._check_fitted()
        X = check_observations(X, self._input_hw())
        batch = torch.from_numpy(as_float_batch(X)).permute(0, 3, 1, 2)
        recon = self.net_(batch)[0]
        return recon.permute(0, 2, 3, 1).numpy()


def make_autoencoder(variant: str, **kwargs):
    table = {"vanilla": VanillaAutoencoder, "fta": FTAAutoencoder, "vqvae": VQVAE}
    if variant not in table:
        raise ValueError(f"unknown autoencoder variant {variant!r}; expected {VARIANTS}")
    return table[variant](**kwargs)
