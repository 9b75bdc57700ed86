"""Hierarchical multi-head attention classifier over sentence embeddings.

Pipeline per article: a 2-layer BiLSTM adds positional information to the
frozen sentence embeddings; each attention head independently relates every
sentence to every other; per head, body sentences are scored against the
headline to split main-sentence from supporting-sentence mass; weighted
main/supporting encodings form context clusters whose LayerNorm'd sum feeds
a per-head classifier; the final class distribution is the plain average of
the per-head distributions (a mixture, not a concatenation).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import EncodedArticle, EncoderSpec
from .errors import ConfigError, DataError

NEG_INF = -1e9
_LN_EPS = 1e-5
_CHECKPOINT_MAGIC = b"NBCK0001"


@dataclass(frozen=True)
class ModelConfig:
    d_s: int
    d_h: int = 512
    lstm_layers: int = 2
    num_heads: int = 8
    head_dim: int | None = None
    num_classes: int = 3
    max_sentences: int = 128
    include_headline_cluster: bool = True
    shared_classifier: bool = False

    def __post_init__(self) -> None:
        if self.head_dim is None:
            object.__setattr__(self, "head_dim", 2 * self.d_h)
        for name in ("d_s", "d_h", "lstm_layers", "num_heads", "head_dim",
                     "num_classes", "max_sentences"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model config: {name} must be > 0")

    @property
    def width(self) -> int:
        return 2 * self.d_h

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ForwardTrace:
    """Per-article attention bookkeeping from one forward pass.

    ``alpha`` rows carry the main-sentence scores per head with the headline
    entry pinned to 1; ``dep`` holds the body-to-body dependency
    distributions with a zero diagonal; ``main_index`` is the 1-based body
    index each head selects (ties broken toward the start of the article).
    """

    article_id: str
    n_sentences: int
    alpha: np.ndarray       # (N, n+1)
    dep: np.ndarray         # (N, n, n)
    head_probs: np.ndarray  # (N, C)
    probs: np.ndarray       # (C,)
    main_index: np.ndarray  # (N,) in 1..n
    label: int | None = None


# ---------------------------------------------------------------------------
# Core math (batched over leading dims; shared by the module and the
# single-article helpers so both paths stay identical)
# ---------------------------------------------------------------------------

def _masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax with excluded entries; fully-masked rows come back as zeros."""
    probs = torch.softmax(logits.masked_fill(mask, NEG_INF), dim=-1)
    dead = mask.all(dim=-1, keepdim=True)
    return torch.where(dead, torch.zeros_like(probs), probs)


def _alpha_scores(hbar: torch.Tensor) -> torch.Tensor:
    """Main-sentence distribution from headline dot products.

    ``hbar`` is (..., n+1, d).  Body entries softmax-normalize over the dot
    products with the headline row; the headline itself is fixed at 1.
    """
    logits = (hbar[..., 1:, :] * hbar[..., :1, :]).sum(dim=-1)
    body = torch.softmax(logits, dim=-1)
    ones = torch.ones_like(body[..., :1])
    return torch.cat([ones, body], dim=-1)


def _dependency_mask(n: int, device: torch.device) -> torch.Tensor:
    """(n+1, n) mask excluding j == i for body rows; headline row open."""
    eye = torch.eye(n, dtype=torch.bool, device=device)
    top = torch.zeros(1, n, dtype=torch.bool, device=device)
    return torch.cat([top, eye], dim=0)


def _cluster_core(u: torch.Tensor, v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Dependency distributions and context clusters.

    Returns ``(dep, clusters)`` where ``dep`` is (..., n+1, n): row i is the
    distribution over supporting body sentences for main candidate i, with
    the diagonal masked out.  With a single body sentence its own row is all
    zeros and the cluster degenerates to the main encoding alone.
    """
    n = u.shape[-2] - 1
    logits = torch.matmul(u, v[..., 1:, :].transpose(-1, -2))
    mask = _dependency_mask(n, u.device).expand_as(logits)
    dep = _masked_softmax(logits, mask)
    clusters = u + torch.matmul(dep, v[..., 1:, :])
    return dep, clusters


def _layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return gain * (x - mu) / torch.sqrt(var + _LN_EPS) + bias


def sentence_type_scores(hbar: torch.Tensor) -> torch.Tensor:
    """Single-head main-sentence scores for an (n+1, d) attended matrix."""
    if hbar.shape[0] < 2:
        raise DataError("need at least one body sentence")
    return _alpha_scores(hbar)


def context_clusters(
    u: torch.Tensor,
    v: torch.Tensor,
    gain: torch.Tensor | None = None,
    bias: torch.Tensor | None = None,
    include_headline: bool = True,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Single-head clusters: returns (dep over body pairs, clusters, pooled).

    ``dep`` is the (n, n) body-to-body matrix (zero diagonal); ``pooled`` is
    the LayerNorm of the cluster sum, using identity gain/bias unless the
    head's parameters are supplied.
    """
    if u.shape != v.shape or u.ndim != 2:
        raise ConfigError(f"u/v shape mismatch: {tuple(u.shape)} vs {tuple(v.shape)}")
    dep_full, clusters = _cluster_core(u, v)
    pooled_in = clusters.sum(dim=0) if include_headline else clusters[1:].sum(dim=0)
    if gain is None:
        gain = torch.ones_like(pooled_in)
    if bias is None:
        bias = torch.zeros_like(pooled_in)
    pooled = _layer_norm(pooled_in, gain, bias)
    return dep_full[1:], clusters, pooled


# ---------------------------------------------------------------------------
# The network
# ---------------------------------------------------------------------------

class HierarchicalAttentionClassifier(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        w, d, n = config.width, config.head_dim, config.num_heads
        self.lstm = nn.LSTM(
            input_size=config.d_s,
            hidden_size=config.d_h,
            num_layers=config.lstm_layers,
            bidirectional=True,
            batch_first=True,
        )
        self.q_proj = nn.Parameter(torch.empty(n, w, d))
        self.k_proj = nn.Parameter(torch.empty(n, w, d))
        self.v_proj = nn.Parameter(torch.empty(n, w, d))
        self.main_ffn_w = nn.Parameter(torch.empty(n, d, d))
        self.main_ffn_b = nn.Parameter(torch.zeros(n, d))
        self.supp_ffn_w = nn.Parameter(torch.empty(n, d, d))
        self.supp_ffn_b = nn.Parameter(torch.zeros(n, d))
        self.ln_gain = nn.Parameter(torch.ones(n, d))
        self.ln_bias = nn.Parameter(torch.zeros(n, d))
        n_cls = 1 if config.shared_classifier else n
        self.cls_w = nn.Parameter(torch.empty(n_cls, d, config.num_classes))
        self.cls_b = nn.Parameter(torch.zeros(n_cls, config.num_classes))
        init_parameters(self, seed=0)

    # -- spec-level single-article operations --------------------------------

    def position_encode(self, embeddings: torch.Tensor) -> torch.Tensor:
        """BiLSTM over the full sequence (headline at position 0)."""
        if embeddings.ndim != 2 or embeddings.shape[1] != self.config.d_s:
            raise ConfigError(
                f"expected (n+1, {self.config.d_s}) embeddings, got "
                f"{tuple(embeddings.shape)}"
            )
        if embeddings.shape[0] < 2:
            raise DataError("need a headline plus at least one body sentence")
        if embeddings.shape[0] > self.config.max_sentences:
            raise DataError(
                f"article has {embeddings.shape[0]} rows incl. headline but "
                f"max_sentences={self.config.max_sentences}; truncate explicitly"
            )
        out, _ = self.lstm(embeddings.unsqueeze(0))
        return out.squeeze(0)

    def head_attend(self, h: torch.Tensor, head: int) -> torch.Tensor:
        """Scaled dot-product self-attention under one head's projections."""
        if not 0 <= head < self.config.num_heads:
            raise ConfigError(f"head {head} out of range")
        q = h @ self.q_proj[head]
        k = h @ self.k_proj[head]
        v = h @ self.v_proj[head]
        weights = torch.softmax(q @ k.T / math.sqrt(self.config.head_dim), dim=-1)
        return weights @ v

    def perspective_vectors(
        self, hbar: torch.Tensor, alpha: torch.Tensor, head: int
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Main/supporting encodings u_i, v_i for one head."""
        scaled_main = alpha.unsqueeze(-1) * hbar
        scaled_supp = (1.0 - alpha).unsqueeze(-1) * hbar
        u = F.gelu(scaled_main @ self.main_ffn_w[head] + self.main_ffn_b[head])
        v = F.gelu(scaled_supp @ self.supp_ffn_w[head] + self.supp_ffn_b[head])
        return u, v

    def classify(self, pooled: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-head distributions and their mixture for stacked (N, d) input."""
        cls_w, cls_b = self._classifier_params()
        logits = torch.einsum("nd,ndc->nc", pooled, cls_w) + cls_b
        head_probs = torch.softmax(logits, dim=-1)
        return head_probs, head_probs.mean(dim=0)

    # -- batched path ---------------------------------------------------------

    def _classifier_params(self) -> tuple[torch.Tensor, torch.Tensor]:
        if self.config.shared_classifier:
            n = self.config.num_heads
            return self.cls_w.expand(n, -1, -1), self.cls_b.expand(n, -1)
        return self.cls_w, self.cls_b

    def forward_batch(self, emb: torch.Tensor) -> dict[str, torch.Tensor]:
        """Full pipeline over a (B, n+1, d_s) batch of equal-length articles."""
        if emb.ndim != 3:
            raise ConfigError(f"expected (B, n+1, d_s) batch, got {tuple(emb.shape)}")
        if emb.shape[1] < 2:
            raise DataError("need a headline plus at least one body sentence")
        if emb.shape[1] > self.config.max_sentences:
            raise DataError(
                f"batch has {emb.shape[1]} rows incl. headline but "
                f"max_sentences={self.config.max_sentences}; truncate explicitly"
            )
        h, _ = self.lstm(emb)
        q = torch.einsum("bsw,nwd->bnsd", h, self.q_proj)
        k = torch.einsum("bsw,nwd->bnsd", h, self.k_proj)
        v = torch.einsum("bsw,nwd->bnsd", h, self.v_proj)
        attn = torch.softmax(
            torch.einsum("bnsd,bntd->bnst", q, k) / math.sqrt(self.config.head_dim),
            dim=-1,
        )
        hbar = torch.einsum("bnst,bntd->bnsd", attn, v)

        alpha = _alpha_scores(hbar)
        scaled_main = alpha.unsqueeze(-1) * hbar
        scaled_supp = (1.0 - alpha).unsqueeze(-1) * hbar
        u = F.gelu(
            torch.einsum("bnsd,nde->bnse", scaled_main, self.main_ffn_w)
            + self.main_ffn_b.unsqueeze(0).unsqueeze(2)
        )
        vv = F.gelu(
            torch.einsum("bnsd,nde->bnse", scaled_supp, self.supp_ffn_w)
            + self.supp_ffn_b.unsqueeze(0).unsqueeze(2)
        )
        dep, clusters = _cluster_core(u, vv)
        if self.config.include_headline_cluster:
            pooled_in = clusters.sum(dim=2)
        else:
            pooled_in = clusters[:, :, 1:, :].sum(dim=2)
        pooled = _layer_norm(pooled_in, self.ln_gain, self.ln_bias)
        cls_w, cls_b = self._classifier_params()
        logits = torch.einsum("bnd,ndc->bnc", pooled, cls_w) + cls_b
        head_probs = torch.softmax(logits, dim=-1)
        probs = head_probs.mean(dim=1)
        return {
            "h": h,
            "attended": hbar,
            "alpha": alpha,
            "dep": dep,
            "clusters": clusters,
            "pooled": pooled,
            "head_probs": head_probs,
            "probs": probs,
        }

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.forward_batch(emb)["probs"]

    @torch.no_grad()
    def trace(self, encoded: EncodedArticle) -> ForwardTrace:
        """Single-article forward with the attention bookkeeping attached."""
        emb = torch.as_tensor(encoded.embeddings, dtype=self.dtype()).unsqueeze(0)
        out = self.forward_batch(emb)
        alpha = out["alpha"][0].cpu().numpy()
        dep_full = out["dep"][0].cpu().numpy()
        return ForwardTrace(
            article_id=encoded.article_id,
            n_sentences=encoded.n_sentences,
            alpha=alpha,
            dep=dep_full[:, 1:, :],
            head_probs=out["head_probs"][0].cpu().numpy(),
            probs=out["probs"][0].cpu().numpy(),
            main_index=1 + alpha[:, 1:].argmax(axis=1),
            label=int(encoded.label),
        )

    def dtype(self) -> torch.dtype:
        return self.q_proj.dtype


def extract_main_sentences(trace: ForwardTrace) -> list[tuple[int, int, np.ndarray]]:
    """Per head: (head, 1-based main body index, supporting-weight row).

    The main index is the argmax of the body scores with ties resolved to
    the lowest index; the supporting row is that sentence's dependency
    distribution over the other body sentences (zero at its own position).
    """
    out = []
    for head in range(trace.alpha.shape[0]):
        i_star = int(trace.main_index[head])
        out.append((head, i_star, trace.dep[head, i_star - 1].copy()))
    return out


def init_parameters(model: HierarchicalAttentionClassifier, seed: int) -> None:
    """Fan-based uniform init for weights, zeros for biases, identity for
    LayerNorm; fully determined by the seed."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name in ("ln_gain",):
                p.fill_(1.0)
            elif name in ("ln_bias", "main_ffn_b", "supp_ffn_b", "cls_b"):
                p.zero_()
            elif name.startswith("lstm.") and "weight" in name:
                bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
                p.uniform_(-bound, bound, generator=gen)
            elif name.startswith("lstm."):
                p.zero_()
            else:  # stacked per-head weights (N, fan_in, fan_out)
                bound = math.sqrt(6.0 / (p.shape[-2] + p.shape[-1]))
                p.uniform_(-bound, bound, generator=gen)


# ---------------------------------------------------------------------------
# Checkpoints: one binary file = magic + JSON header + raw float32 tensors
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    header: dict
    state: dict[str, np.ndarray] = field(repr=False)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.header["model_config"])

    @property
    def encoder_spec(self) -> EncoderSpec:
        enc = self.header["encoder"]
        return EncoderSpec(name=enc["name"], dim=enc["dim"])


def save_checkpoint(
    path: str | Path,
    model: HierarchicalAttentionClassifier,
    *,
    seed: int,
    epoch: int,
    encoder_name: str,
    encoder_version: str,
    encoder_dim: int,
    model_tag: str,
    train_size: int,
    train_config: dict | None = None,
) -> None:
    state = {k: v.detach().cpu().numpy().astype("<f4") for k, v in model.state_dict().items()}
    header = {
        "format": 1,
        "model_tag": model_tag,
        "seed": seed,
        "epoch": epoch,
        "train_size": train_size,
        "encoder": {"name": encoder_name, "version": encoder_version, "dim": encoder_dim},
        "model_config": model.config.to_dict(),
        "train_config": train_config,
        "dtype": "float32",
        "params": [[k, list(v.shape)] for k, v in state.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "big"))
        fh.write(blob)
        for _, v in state.items():
            fh.write(np.ascontiguousarray(v).tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(_CHECKPOINT_MAGIC) + 8 or not raw.startswith(_CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    off = len(_CHECKPOINT_MAGIC)
    hlen = int.from_bytes(raw[off : off + 8], "big")
    off += 8
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path}: corrupt checkpoint header") from None
    off += hlen
    if header.get("dtype") != "float32":
        raise DataError(f"{path}: unsupported checkpoint dtype {header.get('dtype')!r}")
    state: dict[str, np.ndarray] = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if off + nbytes > len(raw):
            raise DataError(f"{path}: checkpoint truncated at tensor {name!r}")
        state[name] = np.frombuffer(raw[off : off + nbytes], dtype="<f4").reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes after tensors")
    return Checkpoint(header=header, state=state)


def model_from_checkpoint(ckpt: Checkpoint) -> HierarchicalAttentionClassifier:
    model = HierarchicalAttentionClassifier(ckpt.model_config)
    expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    got = {k: tuple(v.shape) for k, v in ckpt.state.items()}
    if expected != got:
        diffs = sorted(
            k for k in expected.keys() | got.keys() if expected.get(k) != got.get(k)
        )
        raise DataError(f"checkpoint parameter shapes do not match config: {diffs}")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in ckpt.state.items()})
    model.eval()
    return model
