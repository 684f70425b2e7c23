"""NeuralModel: encoder + MLP + optimizer + loss, the representation Phi.

The model owns the fused training step (encode -> MLP -> loss -> backprop ->
Adam) and two evaluators: a BLAS-batched forward used for training and
decoding, and a fused per-sample numba evaluator used by the renderers (see
_kernels for why the two exist).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .encoding import EncoderConfig, Encoder, GridEncoder, make_encoder
from .errors import ConfigError
from .network import Mlp, MlpConfig, OptimizerState, adam_step, loss_and_grad
from .sampler import SampleBatch

_ENCODER_OTYPES = {
    "Identity": "identity",
    "Frequency": "frequency",
    "OneBlob": "oneblob",
    "DenseGrid": "densegrid",
    "HashGrid": "hashgrid",
}
_ENCODER_KIND_TO_OTYPE = {v: k for k, v in _ENCODER_OTYPES.items()}


def encoder_config_from_json(obj: dict) -> EncoderConfig:
    otype = obj.get("otype", "HashGrid")
    if otype not in _ENCODER_OTYPES:
        raise ConfigError(f"unknown encoding otype {otype!r}; expected one of {sorted(_ENCODER_OTYPES)}")
    defaults = EncoderConfig(kind=_ENCODER_OTYPES[otype])
    return EncoderConfig(
        kind=defaults.kind,
        n_levels=int(obj.get("n_levels", defaults.n_levels)),
        n_features_per_level=int(obj.get("n_features_per_level", defaults.n_features_per_level)),
        log2_hashmap_size=int(obj.get("log2_hashmap_size", defaults.log2_hashmap_size)),
        base_resolution=int(obj.get("base_resolution", defaults.base_resolution)),
        per_level_scale=float(obj.get("per_level_scale", defaults.per_level_scale)),
        n_frequencies=int(obj.get("n_frequencies", defaults.n_frequencies)),
        n_bins=int(obj.get("n_bins", defaults.n_bins)),
    )


def encoder_config_to_json(cfg: EncoderConfig) -> dict:
    out = {"otype": _ENCODER_KIND_TO_OTYPE[cfg.kind]}
    if cfg.kind in ("densegrid", "hashgrid"):
        out.update(
            n_levels=cfg.n_levels,
            n_features_per_level=cfg.n_features_per_level,
            log2_hashmap_size=cfg.log2_hashmap_size,
            base_resolution=cfg.base_resolution,
            per_level_scale=cfg.per_level_scale,
        )
    elif cfg.kind == "frequency":
        out["n_frequencies"] = cfg.n_frequencies
    elif cfg.kind == "oneblob":
        out["n_bins"] = cfg.n_bins
    return out


def optimizer_from_json(obj: dict) -> OptimizerState:
    opt = OptimizerState()
    if obj.get("otype", "ExponentialDecay") == "ExponentialDecay":
        opt.decay_start = int(obj.get("decay_start", opt.decay_start))
        opt.decay_interval = int(obj.get("decay_interval", opt.decay_interval))
        opt.decay_base = float(obj.get("decay_base", opt.decay_base))
        nested = obj.get("nested", {})
    else:
        # Bare Adam: no decay schedule.
        opt.decay_base = 1.0
        nested = obj
    if nested.get("otype", "Adam") != "Adam":
        raise ConfigError(f"unsupported optimizer otype {nested.get('otype')!r}")
    opt.base_lr = float(nested.get("learning_rate", opt.base_lr))
    opt.beta1 = float(nested.get("beta1", opt.beta1))
    opt.beta2 = float(nested.get("beta2", opt.beta2))
    opt.epsilon = float(nested.get("epsilon", opt.epsilon))
    opt.l2_reg = float(nested.get("l2_reg", opt.l2_reg))
    return opt


def default_config() -> dict:
    return {
        "loss": {"otype": "L1"},
        "optimizer": OptimizerState().to_json(),
        "encoding": encoder_config_to_json(EncoderConfig()),
        "network": {"otype": "MLP", "n_neurons": 64, "n_hidden_layers": 4, "output_activation": "ReLU"},
    }


@dataclass
class NeuralModel:
    encoder: Encoder
    mlp: Mlp
    opt: OptimizerState
    loss_kind: str = "L1"
    batch_size: int = 65536
    value_range: tuple[float, float] = (0.0, 1.0)
    dims: tuple[int, int, int] = (2, 2, 2)

    def __post_init__(self) -> None:
        if self.encoder.out_width != self.mlp.config.input_width:
            raise ConfigError(
                f"encoder width {self.encoder.out_width} != MLP input width {self.mlp.config.input_width}"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    # ---------------------------------------------------------------- params

    @property
    def n_params(self) -> int:
        return self.encoder.n_params + self.mlp.n_params

    def param_groups(self):
        return [self.encoder.params] + self.mlp.weights, [self.encoder.param_grads] + self.mlp.grads

    @property
    def dtype(self) -> np.dtype:
        return self.mlp.dtype

    # ---------------------------------------------------------------- fast encode

    def _grid_tables(self):
        enc = self.encoder
        res, entries, dense, offsets = enc.kernel_tables()
        return enc.params, offsets, res, entries, dense

    def _use_kernels(self) -> bool:
        return isinstance(self.encoder, GridEncoder) and self.dtype == np.float32

    def encode_batch(self, coords: np.ndarray):
        """Feature matrix for a coordinate batch, plus the backward cache (grid fast path)."""
        coords = np.ascontiguousarray(coords, dtype=self.dtype)
        if not self._use_kernels():
            return self.encoder.encode(coords), None
        enc = self.encoder
        n = enc.config.n_features_per_level
        b = coords.shape[0]
        m = enc.config.n_levels
        params, off, res, entries, dense = self._grid_tables()
        idx_cache = np.empty((b, m, 8), dtype=np.int64)
        w_cache = np.empty((b, m, 8), dtype=np.float32)
        out = np.empty((b, enc.out_width), dtype=np.float32)
        _kernels.grid_encode_fwd(coords, params, off, res, entries, dense, n, idx_cache, w_cache, out)
        return out, (idx_cache, w_cache)

    # ---------------------------------------------------------------- training

    def train_step(self, batch: SampleBatch) -> float:
        """One optimization step; returns the pre-update loss."""
        coords, targets = batch.coords, batch.targets
        if coords.shape[0] != self.batch_size:
            raise ConfigError(f"batch size {coords.shape[0]} != configured {self.batch_size}")
        feats, cache = self.encode_batch(coords)
        pred, acts = self.mlp.forward(feats)
        loss, dl_dpred = loss_and_grad(pred, targets.astype(pred.dtype), self.loss_kind)
        dl_dfeat = self.mlp.backward(acts, dl_dpred)
        if cache is not None:
            idx_cache, w_cache = cache
            n = self.encoder.config.n_features_per_level
            _kernels.grid_encode_bwd(
                np.ascontiguousarray(dl_dfeat, dtype=np.float32), idx_cache, w_cache, n,
                self.encoder.param_grads,
            )
        else:
            self.encoder.encode_backward(coords.astype(self.dtype), dl_dfeat)
        params, grads = self.param_groups()
        adam_step(self.opt, params, grads)
        return loss

    # ---------------------------------------------------------------- inference

    def eval_batch(self, coords: np.ndarray) -> np.ndarray:
        """BLAS-batched Phi(coords) in normalized value space (training forward)."""
        feats, _ = self.encode_batch(coords)
        pred, _ = self.mlp.forward(feats)
        return np.asarray(pred, dtype=self.dtype)

    def eval_fused(self, coords: np.ndarray) -> np.ndarray:
        """Per-sample fused evaluator; value independent of batch composition."""
        if not self._use_kernels():
            return self.eval_batch(coords)
        coords = np.ascontiguousarray(coords, dtype=np.float32)
        params, off, res, entries, dense = self._grid_tables()
        out = np.empty(coords.shape[0], dtype=np.float32)
        _kernels.field_eval_model(
            coords, params, off, res, entries, dense,
            self.encoder.config.n_features_per_level,
            tuple(self.mlp.weights),
            self.mlp.config.output_activation == "relu",
            out,
        )
        return out

    # ---------------------------------------------------------------- config

    def config_json(self) -> dict:
        return {
            "loss": {"otype": self.loss_kind},
            "optimizer": self.opt.to_json(),
            "encoding": encoder_config_to_json(self.encoder.config),
            "network": {
                "otype": "MLP",
                "n_neurons": self.mlp.config.n_neurons,
                "n_hidden_layers": self.mlp.config.n_hidden_layers,
                "output_activation": "ReLU" if self.mlp.config.output_activation == "relu" else "None",
            },
            "batch_size": self.batch_size,
        }


def build_model(
    config: Optional[dict] = None,
    dims: tuple[int, int, int] = (2, 2, 2),
    value_range: tuple[float, float] = (0.0, 1.0),
    seed: int = 0,
    dtype=np.float32,
) -> NeuralModel:
    """Construct a model from a network-config dict (missing keys take defaults)."""
    cfg = dict(config or {})
    loss_obj = cfg.get("loss", {"otype": "L1"})
    loss_kind = loss_obj.get("otype", "L1")
    if loss_kind not in ("L1", "L2"):
        raise ConfigError(f"unknown loss otype {loss_kind!r}; expected 'L1' or 'L2'")
    enc_cfg = encoder_config_from_json(cfg.get("encoding", {}))
    net = cfg.get("network", {})
    act = str(net.get("output_activation", "ReLU")).lower()
    if act not in ("relu", "none"):
        raise ConfigError(f"unknown output_activation {net.get('output_activation')!r}")
    rng = np.random.default_rng(seed)
    encoder = make_encoder(enc_cfg, dtype=dtype, rng=rng)
    mlp_cfg = MlpConfig(
        input_width=encoder.out_width,
        n_neurons=int(net.get("n_neurons", 64)),
        n_hidden_layers=int(net.get("n_hidden_layers", 4)),
        output_activation=act,
    )
    mlp = Mlp(mlp_cfg, dtype=dtype, rng=rng)
    opt = optimizer_from_json(cfg.get("optimizer", {}))
    return NeuralModel(
        encoder=encoder,
        mlp=mlp,
        opt=opt,
        loss_kind=loss_kind,
        batch_size=int(cfg.get("batch_size", 65536)),
        value_range=tuple(value_range),
        dims=tuple(dims),
    )
