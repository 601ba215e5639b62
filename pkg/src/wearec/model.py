"""The WEARec network.

An embedding layer feeds a stack of blocks.  Each block splits channels
into ``heads`` feature subspaces and runs two parallel mixers over the
time axis:

* dynamic frequency filtering (DFF): per-head one-sided FFT, a real
  filter row scaled/shifted by two context MLPs, inverse FFT;
* wavelet feature enhancement (WFE): level-1 Haar decomposition,
  element-wise rescaling of the detail coefficients by a learnable
  enhancer, reconstruction.

The two branches are blended by ``alpha``, wrapped with residual /
dropout / layer norm, and followed by a GELU feed-forward sublayer.
Prediction ties the item embedding: logits are the final position's
hidden state times the embedding table transposed, with the padding
column masked out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import ConfigError, InvalidInputError
from .tape import Node, ParamSlot, Tape, neg_cap

LAYER_NORM_EPS = 1e-12
INIT_STD = 0.02


@dataclass
class ModelConfig:
    """Shape and behavior hyperparameters of the network."""

    vocab_size: int  # includes padding id 0
    max_len: int = 50  # N, must be even
    embed_dim: int = 64  # d, divisible by heads
    blocks: int = 2  # L
    heads: int = 2  # k, parallel filter subspaces
    alpha: float = 0.3  # DFF weight in the branch blend
    dropout: float = 0.5
    dtype: str = "float32"
    # Mean over all rows by default; True restricts the context vector to
    # non-padding rows.
    context_excludes_padding: bool = False
    wavelet_level: int = 1

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.max_len < 2 or self.max_len % 2 != 0:
            raise ConfigError(f"max_len must be even and >= 2, got {self.max_len}")
        if self.embed_dim < 1 or self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed_dim ({self.embed_dim}) must be divisible by heads ({self.heads})"
            )
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.wavelet_level != 1:
            raise ConfigError("only level-1 wavelet decomposition is supported")

    @property
    def m_bins(self) -> int:
        return self.max_len // 2 + 1

    @property
    def k_half(self) -> int:
        return self.max_len // 2

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "embed_dim": self.embed_dim,
            "blocks": self.blocks,
            "heads": self.heads,
            "alpha": self.alpha,
            "dropout": self.dropout,
            "dtype": self.dtype,
            "context_excludes_padding": self.context_excludes_padding,
            "wavelet_level": self.wavelet_level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardTrace:
    """Per-block intermediates captured when tracing is requested.

    ``filter_scale``/``filter_bias`` are the modulated per-head filter
    rows, shaped ``(batch, heads, m_bins)``.
    """

    block_inputs: list = field(default_factory=list)
    contexts: list = field(default_factory=list)
    scale_deltas: list = field(default_factory=list)
    bias_deltas: list = field(default_factory=list)
    filter_scales: list = field(default_factory=list)
    filter_biases: list = field(default_factory=list)
    spectra: list = field(default_factory=list)  # (re, im), heads merged
    wavelet_pairs: list = field(default_factory=list)  # (approx, detail)
    dff_outputs: list = field(default_factory=list)
    wfe_outputs: list = field(default_factory=list)
    mixed: list = field(default_factory=list)
    block_outputs: list = field(default_factory=list)


@dataclass
class FilterModulation:
    """Modulated filters for one block.

    ``per_head[i]`` is ``(w_hat, b_hat)`` shaped ``(B, m_bins, 1)``;
    the raw MLP outputs are kept as ``(B, heads * m_bins, 1)`` nodes.
    """

    per_head: list[tuple[Node, Node]]
    scale_delta: Node
    bias_delta: Node


def split_heads(h: np.ndarray, heads: int) -> list[np.ndarray]:
    """Contiguous channel slices, order preserving."""
    if h.shape[-1] % heads != 0:
        raise InvalidInputError(
            f"channel count {h.shape[-1]} not divisible by heads {heads}"
        )
    return np.split(h, heads, axis=-1)


def merge_heads(blocks: list[np.ndarray]) -> np.ndarray:
    """Inverse of :func:`split_heads`."""
    return np.concatenate(blocks, axis=-1)


class WEARec:
    """Trainable model: parameter store plus tape-based forward passes."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self._dropout_rng = seeding.sub_rng(seed, "dropout")
        self.params: dict[str, ParamSlot] = {}
        self._param_order: list[str] = []
        self._init_params(seeding.sub_rng(seed, "init"))

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> ParamSlot:
        slot = ParamSlot(name, np.ascontiguousarray(value, dtype=self.config.np_dtype))
        self.params[name] = slot
        self._param_order.append(name)
        return slot

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        normal = lambda *shape: rng.normal(0.0, INIT_STD, shape)
        self._add("item_embedding", normal(cfg.vocab_size, cfg.embed_dim))
        self._add("position_embedding", normal(cfg.max_len, cfg.embed_dim))
        self._add("embed_norm_gamma", np.ones(cfg.embed_dim))
        self._add("embed_norm_beta", np.zeros(cfg.embed_dim))
        for layer in range(cfg.blocks):
            p = f"block{layer}_"
            self._add(p + "filter_weight", normal(cfg.heads, cfg.m_bins))
            self._add(p + "filter_bias", np.zeros((cfg.heads, cfg.m_bins)))
            for mlp in ("scale_mlp", "shift_mlp"):
                self._add(p + mlp + "_w0", normal(cfg.embed_dim, cfg.embed_dim))
                self._add(p + mlp + "_b0", np.zeros((1, cfg.embed_dim)))
                self._add(p + mlp + "_w1", normal(cfg.embed_dim, cfg.embed_dim))
                self._add(p + mlp + "_b1", np.zeros((1, cfg.embed_dim)))
                # Zero-initialized final stage: modulation starts exactly at
                # the base filter.
                self._add(
                    p + mlp + "_w2", np.zeros((cfg.embed_dim, cfg.heads * cfg.m_bins))
                )
                self._add(p + mlp + "_b2", np.zeros((1, cfg.heads * cfg.m_bins)))
            # Enhancer at one: WFE starts as perfect reconstruction.
            self._add(p + "enhancer", np.ones((cfg.k_half, cfg.head_dim)))
            self._add(p + "ffn_w1", normal(cfg.embed_dim, cfg.embed_dim))
            self._add(p + "ffn_b1", np.zeros((1, cfg.embed_dim)))
            self._add(p + "ffn_w2", normal(cfg.embed_dim, cfg.embed_dim))
            self._add(p + "ffn_b2", np.zeros((1, cfg.embed_dim)))
            self._add(p + "mix_norm_gamma", np.ones(cfg.embed_dim))
            self._add(p + "mix_norm_beta", np.zeros(cfg.embed_dim))
            self._add(p + "ffn_norm_gamma", np.ones(cfg.embed_dim))
            self._add(p + "ffn_norm_beta", np.zeros(cfg.embed_dim))

    def parameters(self) -> list[ParamSlot]:
        return [self.params[name] for name in self._param_order]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_identity_filters(self) -> None:
        """Configure both mixers as exact identity maps (test anchor)."""
        for layer in range(self.config.blocks):
            p = f"block{layer}_"
            self.params[p + "filter_weight"].value[...] = 1.0
            self.params[p + "filter_bias"].value[...] = 0.0
            self.params[p + "enhancer"].value[...] = 1.0
            for mlp in ("scale_mlp", "shift_mlp"):
                self.params[p + mlp + "_w2"].value[...] = 0.0
                self.params[p + mlp + "_b2"].value[...] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: self.params[name].value.copy() for name in self._param_order}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        missing = set(self._param_order) - set(tensors)
        if missing:
            raise InvalidInputError(f"missing parameters: {sorted(missing)}")
        for name in self._param_order:
            slot = self.params[name]
            arr = tensors[name]
            if arr.shape != slot.value.shape:
                raise InvalidInputError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, "
                    f"model {slot.value.shape}"
                )
            slot.value[...] = arr.astype(slot.value.dtype)

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def _check_items(self, items: np.ndarray) -> np.ndarray:
        items = np.asarray(items)
        if items.ndim == 1:
            items = items[None, :]
        if items.shape[-1] != self.config.max_len:
            raise InvalidInputError(
                f"sequence length {items.shape[-1]} != configured {self.config.max_len}"
            )
        if items.size and (items.min() < 0 or items.max() >= self.config.vocab_size):
            raise InvalidInputError(
                f"item ids out of range [0, {self.config.vocab_size})"
            )
        return items

    def _dropout(self, tp: Tape, x: Node, train: bool) -> Node:
        if not train or self.config.dropout == 0.0:
            return x
        return tp.dropout(x, self.config.dropout, self._dropout_rng)

    def embed(self, tp: Tape, items: np.ndarray, train: bool = False) -> Node:
        """Item plus positional embedding, layer norm, dropout: (B, N, d)."""
        items = self._check_items(items)
        e = tp.embedding(self.params["item_embedding"], items)
        e = tp.add(e, self.params["position_embedding"])
        h = tp.layer_norm(
            e,
            self.params["embed_norm_gamma"],
            self.params["embed_norm_beta"],
            LAYER_NORM_EPS,
        )
        return self._dropout(tp, h, train)

    def context_vector(self, tp: Tape, h: Node, items: np.ndarray | None = None) -> Node:
        """Column mean over the time axis: (B, 1, d).

        With ``context_excludes_padding`` the mean is restricted to rows
        whose item id is non-zero (needs ``items``).
        """
        if self.config.context_excludes_padding:
            if items is None:
                raise InvalidInputError("masked context mean requires item ids")
            mask = (items != 0).astype(h.value.dtype)[..., None]
            return tp.mean_time(h, weights=mask)
        return tp.mean_time(h)

    def modulate_filter(self, tp: Tape, c: Node, layer: int) -> "FilterModulation":
        """Per-head modulated filter rows.

        Both MLPs map the context ``(B, 1, d)`` through two GELU stages to
        ``heads * m_bins`` values.  Head ``i`` gets
        ``w_hat = W[i] * (1 + scale_delta_i)`` and
        ``b_hat = b[i] + bias_delta_i``, each shaped ``(B, M, 1)`` so it
        broadcasts over that head's channels.
        """
        cfg = self.config
        p = f"block{layer}_"

        def run_mlp(prefix: str) -> Node:
            out = tp.gelu(
                tp.linear(c, self.params[prefix + "_w0"], self.params[prefix + "_b0"])
            )
            out = tp.gelu(
                tp.linear(out, self.params[prefix + "_w1"], self.params[prefix + "_b1"])
            )
            out = tp.linear(out, self.params[prefix + "_w2"], self.params[prefix + "_b2"])
            # (B, 1, k*M) -> (B, k*M, 1); head i occupies rows i*M..(i+1)*M
            batch = out.value.shape[0]
            return tp.reshape(out, (batch, cfg.heads * cfg.m_bins, 1))

        scale_delta = run_mlp(p + "scale_mlp")
        bias_delta = run_mlp(p + "shift_mlp")
        base_w = self.params[p + "filter_weight"]
        base_b = self.params[p + "filter_bias"]
        per_head = []
        for i in range(cfg.heads):
            lo, hi = i * cfg.m_bins, (i + 1) * cfg.m_bins
            w_row = tp.reshape(tp.slice_time(base_w, i, i + 1), (cfg.m_bins, 1))
            b_row = tp.reshape(tp.slice_time(base_b, i, i + 1), (cfg.m_bins, 1))
            ds_i = tp.slice_time(scale_delta, lo, hi)
            db_i = tp.slice_time(bias_delta, lo, hi)
            w_hat = tp.mul(w_row, tp.add(ds_i, 1.0))
            b_hat = tp.add(b_row, db_i)
            per_head.append((w_hat, b_hat))
        return FilterModulation(per_head, scale_delta, bias_delta)

    def dff_forward(
        self,
        tp: Tape,
        h: Node,
        layer: int,
        items: np.ndarray | None = None,
        filter_override: np.ndarray | None = None,
        trace: ForwardTrace | None = None,
    ) -> Node:
        """Dynamic frequency filtering: (B, N, d) -> (B, N, d).

        ``filter_override`` replaces every head's modulated filter with a
        fixed real response over the ``m_bins`` frequency bins (bias zero);
        used by the band-pass analysis.
        """
        cfg = self.config
        if filter_override is None:
            c = self.context_vector(tp, h, items)
            modulation = self.modulate_filter(tp, c, layer)
        else:
            override = np.asarray(filter_override, dtype=h.value.dtype)
            if override.shape != (cfg.m_bins,):
                raise InvalidInputError(
                    f"filter override must have shape ({cfg.m_bins},)"
                )
            override = override.reshape(cfg.m_bins, 1)
        outs = []
        spectra = []
        for i in range(cfg.heads):
            b_i = tp.slice_cols(h, i * cfg.head_dim, (i + 1) * cfg.head_dim)
            re, im = tp.rfft(b_i)
            if filter_override is None:
                w_hat, b_hat = modulation.per_head[i]
                re_f = tp.add(tp.mul(re, w_hat), b_hat)
                im_f = tp.mul(im, w_hat)
            else:
                re_f = tp.mul(re, override)
                im_f = tp.mul(im, override)
            outs.append(tp.irfft(re_f, im_f, cfg.max_len))
            if trace is not None:
                spectra.append((re.value, im.value))
        x = tp.concat_cols(outs)
        if trace is not None:
            trace.spectra.append(
                (
                    np.concatenate([s[0] for s in spectra], axis=-1),
                    np.concatenate([s[1] for s in spectra], axis=-1),
                )
            )
            if filter_override is None:
                batch = h.value.shape[0]
                heads_view = lambda node: node.value.reshape(
                    batch, cfg.heads, cfg.m_bins
                )
                trace.contexts.append(c.value)
                trace.scale_deltas.append(heads_view(modulation.scale_delta))
                trace.bias_deltas.append(heads_view(modulation.bias_delta))
                stack = lambda nodes: np.concatenate(
                    [n.value.swapaxes(-1, -2) for n in nodes], axis=-2
                )
                trace.filter_scales.append(stack([m[0] for m in modulation.per_head]))
                trace.filter_biases.append(stack([m[1] for m in modulation.per_head]))
            trace.dff_outputs.append(x.value)
        return x

    def wfe_forward(
        self,
        tp: Tape,
        h: Node,
        layer: int,
        identity: bool = False,
        trace: ForwardTrace | None = None,
    ) -> Node:
        """Wavelet feature enhancement: (B, N, d) -> (B, N, d).

        ``identity=True`` skips the detail rescaling, making the branch an
        exact reconstruction of its input.
        """
        cfg = self.config
        enhancer = self.params[f"block{layer}_enhancer"]
        outs = []
        pairs = []
        for i in range(cfg.heads):
            b_i = tp.slice_cols(h, i * cfg.head_dim, (i + 1) * cfg.head_dim)
            approx, detail = tp.haar_dwt(b_i)
            scaled = detail if identity else tp.mul(detail, enhancer)
            outs.append(tp.haar_idwt(approx, scaled))
            if trace is not None:
                pairs.append((approx.value, detail.value))
        y = tp.concat_cols(outs)
        if trace is not None:
            trace.wavelet_pairs.append(
                (
                    np.concatenate([p[0] for p in pairs], axis=-1),
                    np.concatenate([p[1] for p in pairs], axis=-1),
                )
            )
            trace.wfe_outputs.append(y.value)
        return y

    def mix_block(
        self,
        tp: Tape,
        h: Node,
        layer: int,
        train: bool = False,
        items: np.ndarray | None = None,
        filter_override: np.ndarray | None = None,
        wfe_identity: bool = False,
        trace: ForwardTrace | None = None,
    ) -> Node:
        """Blend the two mixers, then residual + dropout + layer norm."""
        cfg = self.config
        if trace is not None:
            trace.block_inputs.append(h.value)
        x = self.dff_forward(tp, h, layer, items, filter_override, trace)
        y = self.wfe_forward(tp, h, layer, wfe_identity, trace)
        mixed = tp.add(tp.mul(x, float(cfg.alpha)), tp.mul(y, 1.0 - float(cfg.alpha)))
        if trace is not None:
            trace.mixed.append(mixed.value)
        return tp.layer_norm(
            tp.add(h, self._dropout(tp, mixed, train)),
            self.params[f"block{layer}_mix_norm_gamma"],
            self.params[f"block{layer}_mix_norm_beta"],
            LAYER_NORM_EPS,
        )

    def ffn_block(self, tp: Tape, h: Node, layer: int, train: bool = False) -> Node:
        """Position-wise feed-forward with residual + dropout + layer norm."""
        p = f"block{layer}_"
        hidden = tp.gelu(tp.linear(h, self.params[p + "ffn_w1"], self.params[p + "ffn_b1"]))
        hidden = tp.linear(hidden, self.params[p + "ffn_w2"], self.params[p + "ffn_b2"])
        return tp.layer_norm(
            tp.add(h, self._dropout(tp, hidden, train)),
            self.params[p + "ffn_norm_gamma"],
            self.params[p + "ffn_norm_beta"],
            LAYER_NORM_EPS,
        )

    # ------------------------------------------------------------------
    # full passes
    # ------------------------------------------------------------------

    def forward(
        self,
        tp: Tape,
        items: np.ndarray,
        train: bool = False,
        filter_override: np.ndarray | None = None,
        wfe_identity: bool = False,
        trace: ForwardTrace | None = None,
    ) -> Node:
        """Logits over the vocabulary: (B, vocab).  Padding id is masked."""
        cfg = self.config
        items = self._check_items(items)
        h = self.embed(tp, items, train)
        for layer in range(cfg.blocks):
            h = self.mix_block(
                tp, h, layer, train, items, filter_override, wfe_identity, trace
            )
            h = self.ffn_block(tp, h, layer, train)
            if trace is not None:
                trace.block_outputs.append(h.value)
        last = tp.reshape(
            tp.slice_time(h, cfg.max_len - 1, cfg.max_len),
            (items.shape[0], cfg.embed_dim),
        )
        logits = tp.matmul_rt(last, self.params["item_embedding"])
        return tp.mask_col(logits, 0, neg_cap(logits.value.dtype))

    def loss(
        self, tp: Tape, items: np.ndarray, targets: np.ndarray, train: bool = True
    ) -> Node:
        """Full-vocabulary softmax cross-entropy against the next items."""
        targets = np.atleast_1d(np.asarray(targets))
        if np.any(targets == 0):
            raise InvalidInputError("loss target may not be the padding id 0")
        if targets.min() < 0 or targets.max() >= self.config.vocab_size:
            raise InvalidInputError("loss target out of vocabulary range")
        logits = self.forward(tp, items, train=train)
        return tp.softmax_cross_entropy(logits, targets)

    def predict_logits(
        self,
        items: np.ndarray,
        filter_override: np.ndarray | None = None,
        wfe_identity: bool = False,
    ) -> np.ndarray:
        """Evaluation-mode logits as a plain array."""
        tp = Tape(grad_enabled=False)
        return self.forward(
            tp,
            items,
            train=False,
            filter_override=filter_override,
            wfe_identity=wfe_identity,
        ).value

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        from .checkpoint import save_checkpoint

        save_checkpoint(path, self.parameters(), self.config.to_dict(), self.seed, extra)

    @classmethod
    def load(cls, path) -> "WEARec":
        from .checkpoint import load_checkpoint
        from .errors import DataError

        header, tensors = load_checkpoint(path)
        try:
            config = ModelConfig.from_dict(header["config"])
        except (KeyError, TypeError, ConfigError) as exc:
            raise DataError(f"checkpoint config is invalid: {exc}") from exc
        model = cls(config, seed=header.get("seed", 0))
        try:
            model.load_state_dict(tensors)
        except InvalidInputError as exc:
            raise DataError(str(exc)) from exc
        return model
