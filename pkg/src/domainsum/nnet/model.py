"""The basic scorer: embeddings, convolutional sentence encoder, one
self-attention document encoder block, per-sentence sigmoid readout.

All four training strategies share this architecture. The domain tag slot is
part of the sentence encoder when the config enables it; strategies that
carry no domain information feed the reserved unknown tag id, so a zero tag
table makes them exactly equivalent to a tag-free forward pass.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    NumericsError,
    Tensor,
    concat,
    embedding,
    layer_norm,
    sliding_windows,
    stack,
)


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    conv_filter_widths: tuple[int, ...] = (3, 4, 5)
    conv_filters_per_width: int = 32
    model_dim: int = 128
    attention_heads: int = 4
    ffn_dim: int = 256
    tag_embed_dim: int = 16
    dropout_rate: float = 0.1
    use_positional_encoding: bool = True
    use_domain_tag: bool = True
    external_feature_dim: int = 0

    def __post_init__(self):
        dims = {
            "embed_dim": self.embed_dim,
            "conv_filters_per_width": self.conv_filters_per_width,
            "model_dim": self.model_dim,
            "attention_heads": self.attention_heads,
            "ffn_dim": self.ffn_dim,
            "tag_embed_dim": self.tag_embed_dim,
        }
        for name, value in dims.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if not self.conv_filter_widths or any(w < 1 for w in self.conv_filter_widths):
            raise ValueError("conv_filter_widths must be a non-empty list of widths >= 1")
        if self.model_dim % self.attention_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by attention_heads {self.attention_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.external_feature_dim < 0:
            raise ValueError("external_feature_dim must be >= 0")
        object.__setattr__(self, "conv_filter_widths", tuple(self.conv_filter_widths))

    @property
    def conv_output_dim(self) -> int:
        return len(self.conv_filter_widths) * self.conv_filters_per_width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_filter_widths"] = list(self.conv_filter_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_filter_widths"] = tuple(d["conv_filter_widths"])
        return cls(**d)


@dataclass
class ParameterStore:
    """Ordered name -> Tensor map owning the model's trainable state."""

    config: ModelConfig
    vocab_size: int
    n_domains: int
    rng_seed: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            name: t.grad for name, t in self.tensors.items() if t.grad is not None
        }

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def copy(self) -> "ParameterStore":
        clone = ParameterStore(self.config, self.vocab_size, self.n_domains, self.rng_seed)
        for name, t in self.tensors.items():
            clone.tensors[name] = Tensor(t.data.copy(), requires_grad=True, name=name)
        return clone

    def astype(self, dtype) -> "ParameterStore":
        clone = ParameterStore(self.config, self.vocab_size, self.n_domains, self.rng_seed)
        for name, t in self.tensors.items():
            clone.tensors[name] = Tensor(t.data.astype(dtype), requires_grad=True, name=name)
        return clone

    def assign(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            t = self.tensors[name]
            if t.data.shape != arr.shape:
                raise ValueError(f"shape mismatch assigning {name!r}")
            t.data = np.asarray(arr, dtype=t.data.dtype)


def init_params(
    config: ModelConfig, vocab_size: int, n_domains: int, seed: int
) -> ParameterStore:
    """Seeded uniform(-0.1, 0.1) weights, zero biases, zero final classifier.

    Layer-norm gains start at one so normalization is initially the identity
    scale. The domain tag table has n_domains + 1 rows, the last one reserved
    for the unknown tag.
    """
    rng = np.random.default_rng(seed)
    store = ParameterStore(config, vocab_size, n_domains, seed)

    def uniform(name, *shape):
        store.tensors[name] = Tensor(
            rng.uniform(-0.1, 0.1, size=shape).astype(np.float32),
            requires_grad=True,
            name=name,
        )

    def zeros(name, *shape):
        store.tensors[name] = Tensor(
            np.zeros(shape, dtype=np.float32), requires_grad=True, name=name
        )

    def ones(name, *shape):
        store.tensors[name] = Tensor(
            np.ones(shape, dtype=np.float32), requires_grad=True, name=name
        )

    c = config
    uniform("embed", vocab_size, c.embed_dim)
    if c.use_domain_tag:
        uniform("tag_embed", n_domains + 1, c.tag_embed_dim)
    for w in c.conv_filter_widths:
        uniform(f"conv_w{w}", w * c.embed_dim, c.conv_filters_per_width)
        zeros(f"conv_b{w}", c.conv_filters_per_width)
    if c.external_feature_dim:
        uniform("feat_proj_w", c.external_feature_dim, c.conv_output_dim)
        zeros("feat_proj_b", c.conv_output_dim)
    proj_in = c.conv_output_dim + (c.tag_embed_dim if c.use_domain_tag else 0)
    uniform("proj_w", proj_in, c.model_dim)
    zeros("proj_b", c.model_dim)
    for name in ("attn_q", "attn_k", "attn_v", "attn_o"):
        uniform(f"{name}_w", c.model_dim, c.model_dim)
        zeros(f"{name}_b", c.model_dim)
    ones("ln1_g", c.model_dim)
    zeros("ln1_b", c.model_dim)
    uniform("ffn_w1", c.model_dim, c.ffn_dim)
    zeros("ffn_b1", c.ffn_dim)
    uniform("ffn_w2", c.ffn_dim, c.model_dim)
    zeros("ffn_b2", c.model_dim)
    ones("ln2_g", c.model_dim)
    zeros("ln2_b", c.model_dim)
    zeros("readout_w", c.model_dim)
    zeros("readout_b", 1)
    return store


def sinusoidal_positions(n: int, dim: int, dtype) -> np.ndarray:
    positions = np.arange(n, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-np.log(10000.0) / dim))
    pe = np.zeros((n, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(positions * div)
    pe[:, 1::2] = np.cos(positions * div[: dim // 2])
    return pe.astype(dtype)


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return x * Tensor(mask)


def encode_sentence(
    params: ParameterStore,
    token_ids: list[int],
    tag_id: int | None = None,
    external_feature: np.ndarray | None = None,
) -> Tensor:
    """Embed, convolve per width, max-pool, concat, project to model_dim.

    An external feature vector replaces the convolutional output (via its own
    learned projection); the frozen provider itself receives no gradient. The
    tag embedding, when configured, is concatenated before the projection.
    """
    c = params.config
    if external_feature is not None:
        if "feat_proj_w" not in params:
            raise NumericsError(
                "model was initialized without an external feature projection"
            )
        feat = np.asarray(external_feature, dtype=params["feat_proj_w"].dtype)
        if feat.shape != (c.external_feature_dim,):
            raise ValueError(
                f"external feature dim {feat.shape} != ({c.external_feature_dim},)"
            )
        base = Tensor(feat) @ params["feat_proj_w"] + params["feat_proj_b"]
    else:
        max_width = max(c.conv_filter_widths)
        ids = list(token_ids)
        if len(ids) < max_width:
            ids = ids + [0] * (max_width - len(ids))  # pad id 0
        emb = embedding(params["embed"], ids)
        pooled = []
        for w in c.conv_filter_widths:
            windows = sliding_windows(emb, w)
            act = (windows @ params[f"conv_w{w}"] + params[f"conv_b{w}"]).relu()
            pooled.append(act.max_over_axis0())
        base = concat(pooled) if len(pooled) > 1 else pooled[0]

    if c.use_domain_tag:
        if tag_id is None:
            raise ValueError("model uses domain tags but tag_id is None")
        if not 0 <= tag_id <= params.n_domains:
            raise ValueError(
                f"tag id {tag_id} outside table of {params.n_domains + 1} rows"
            )
        tag_vec = embedding(params["tag_embed"], np.asarray(tag_id))
        base = concat([base, tag_vec])
    return base @ params["proj_w"] + params["proj_b"]


def encode_document(
    params: ParameterStore,
    sentence_vectors: list[Tensor],
    rng: np.random.Generator | None = None,
    return_attention: bool = False,
):
    """One pre-activation Transformer block over the sentence vectors.

    Sinusoidal positional encodings (when enabled) are added first; then
    multi-head self-attention and a position-wise feed-forward sublayer, each
    with a residual connection followed by layer normalization. rng enables
    dropout (training mode); None disables it.
    """
    c = params.config
    if not sentence_vectors:
        raise ValueError("document has no sentence vectors")
    x = stack(sentence_vectors)
    n = x.data.shape[0]
    if c.use_positional_encoding:
        x = x + Tensor(sinusoidal_positions(n, c.model_dim, x.data.dtype))

    heads, dh = c.attention_heads, c.model_dim // c.attention_heads

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(n, heads, dh).transpose((1, 0, 2))

    q = split_heads(x @ params["attn_q_w"] + params["attn_q_b"])
    k = split_heads(x @ params["attn_k_w"] + params["attn_k_b"])
    v = split_heads(x @ params["attn_v_w"] + params["attn_v_b"])
    scores = (q @ k.transpose((0, 2, 1))) * (1.0 / np.sqrt(dh))
    attn = scores.softmax_lastaxis()
    ctx = (attn @ v).transpose((1, 0, 2)).reshape(n, c.model_dim)
    attended = ctx @ params["attn_o_w"] + params["attn_o_b"]
    x = layer_norm(x + _dropout(attended, c.dropout_rate, rng), params["ln1_g"], params["ln1_b"])

    hidden = (x @ params["ffn_w1"] + params["ffn_b1"]).relu()
    ffn_out = hidden @ params["ffn_w2"] + params["ffn_b2"]
    x = layer_norm(x + _dropout(ffn_out, c.dropout_rate, rng), params["ln2_g"], params["ln2_b"])

    if return_attention:
        return x, attn.data
    return x


def score_sentences(
    params: ParameterStore,
    sentence_token_ids: list[list[int]],
    tag_id: int | None = None,
    external_features: list[np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Per-sentence selection probabilities, each strictly inside (0, 1)."""
    if external_features is not None and len(external_features) != len(sentence_token_ids):
        raise ValueError("one external feature vector per sentence required")
    vectors = [
        encode_sentence(
            params,
            ids,
            tag_id=tag_id,
            external_feature=None if external_features is None else external_features[i],
        )
        for i, ids in enumerate(sentence_token_ids)
    ]
    contextual = encode_document(params, vectors, rng=rng)
    logits = contextual @ params["readout_w"] + params["readout_b"]
    return logits.sigmoid()


def bce_loss(probabilities: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7]."""
    y = np.asarray(labels, dtype=probabilities.data.dtype)
    if probabilities.data.shape != y.shape:
        raise ValueError(
            f"probabilities shape {probabilities.data.shape} != labels shape {y.shape}"
        )
    p = probabilities.clip(1e-7, 1.0 - 1e-7)
    y_t = Tensor(y)
    one = Tensor(np.ones_like(y))
    term = y_t * p.log() + (one - y_t) * (one - p).log()
    return -(term.mean())
