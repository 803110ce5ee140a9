"""The cooperative beam predictor and its head variants.

Pipeline per window: every (slot, BS, view) CSI slice passes an instance-norm
plus two-conv front-end to a d_c feature; slot features are patch-averaged,
projected to the token width, view-summed, and tagged with positional and BS
embeddings; a stack of pre-norm decoder blocks mixes the patch-major token
sequence; attention pooling over the BS axis yields per-patch summaries whose
last entry feeds the output head.

Heads:
- switch: stable logits, a residual flip branch, a low-rank prior indexed by
  the current label (U V^T never materialized), and a sigmoid gate fusing the
  two branch distributions at probability level.
- ungated: stable logits + prior only.
- hierarchical: separate BS and per-BS beam distributions, composed by
  cascaded argmax.

Window batches can be given either as per-window tensors x or in shared-slot
form (one tensor of distinct slots + per-window slot indices). Both paths run
the same math; the shared form computes the front-end once per distinct slot,
which is what makes training on stride-1 windows affordable.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor, ParamBlock
from .container import load_checkpoint, save_checkpoint
from .dataset import Batch
from .errors import ConfigError, DataFormatError
from .scenario import ScenarioConfig

MASK_MODES = ("block_causal", "causal", "none")
HEAD_KINDS = ("switch", "ungated", "hierarchical")
MASK_SENTINEL = -1e9


@dataclass(frozen=True)
class ModelDims:
    n_bs: int
    n_beam: int
    t_h: int
    n_ports: int
    n_subc: int

    @property
    def n_classes(self) -> int:
        return self.n_bs * self.n_beam

    @classmethod
    def from_scenario(cls, cfg: ScenarioConfig) -> "ModelDims":
        return cls(
            n_bs=cfg.n_bs,
            n_beam=cfg.n_beam,
            t_h=cfg.history_len,
            n_ports=cfg.n_ports,
            n_subc=cfg.n_subcarriers,
        )


@dataclass
class ModelConfig:
    d_c: int = 32
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    patch_len: int = 1
    rank_r: int = 8
    frozen_backbone: bool = False
    mask_mode: str = "block_causal"
    head: str = "switch"

    def validate(self, dims: ModelDims) -> None:
        if self.d < 1 or self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} must be a positive multiple of n_heads={self.n_heads}")
        if self.patch_len < 1 or dims.t_h % self.patch_len != 0:
            raise ConfigError(
                f"history {dims.t_h} not divisible by patch_len {self.patch_len}"
            )
        if self.d_c < 2 or self.d_c % 2 != 0:
            raise ConfigError(f"d_c={self.d_c} must be an even count >= 2")
        if self.n_layers < 0:
            raise ConfigError(f"n_layers must be >= 0, got {self.n_layers}")
        if not 1 <= self.rank_r <= dims.n_classes // 4:
            raise ConfigError(
                f"rank_r={self.rank_r} outside 1..{dims.n_classes // 4} "
                f"(must stay well below {dims.n_classes} classes)"
            )
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode {self.mask_mode!r} not one of {MASK_MODES}")
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"head {self.head!r} not one of {HEAD_KINDS}")


@dataclass
class ModelOutput:
    head: str
    r_patches: DiffTensor  # (B, n_patch, d) pooled per-patch summaries
    h_p: DiffTensor  # (B, d) final-patch summary
    alpha_bs: DiffTensor | None = None  # (B, n_patch, n_bs) pooling weights
    logits_st: DiffTensor | None = None  # (B, C) prior included
    logits_fl: DiffTensor | None = None  # (B, C) prior included
    gate_logits: DiffTensor | None = None  # (B,)
    logits_bs: DiffTensor | None = None  # (B, n_bs)
    logits_beam: DiffTensor | None = None  # (B, n_bs, n_beam)


def build_mask(n_patch: int, n_bs: int, mode: str, dtype=np.float32) -> np.ndarray | None:
    """Additive attention mask for the patch-major token order."""
    if mode == "none":
        return None
    n_tok = n_patch * n_bs
    patch_of = np.arange(n_tok) // n_bs
    if mode == "block_causal":
        allowed = patch_of[None, :] <= patch_of[:, None]
    elif mode == "causal":
        tok = np.arange(n_tok)
        allowed = tok[None, :] <= tok[:, None]
    else:
        raise ConfigError(f"mask_mode {mode!r} not one of {MASK_MODES}")
    mask = np.where(allowed, 0.0, MASK_SENTINEL).astype(dtype)
    return mask


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def fuse_probabilities(
    logits_st: np.ndarray, logits_fl: np.ndarray, gate_logits: np.ndarray
) -> np.ndarray:
    """p_bar = (1 - p_sw) * softmax(stable) + p_sw * softmax(flip), float64."""
    p_st = _softmax_np(np.asarray(logits_st, dtype=np.float64))
    p_fl = _softmax_np(np.asarray(logits_fl, dtype=np.float64))
    p_sw = _sigmoid_np(np.asarray(gate_logits, dtype=np.float64))[..., None]
    return (1.0 - p_sw) * p_st + p_sw * p_fl


class CrsModel:
    def __init__(
        self,
        dims: ModelDims,
        cfg: ModelConfig | None = None,
        seed: int = 0,
        dtype=np.float32,
    ):
        cfg = cfg if cfg is not None else ModelConfig()
        cfg.validate(dims)
        self.dims = dims
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.n_patch = dims.t_h // cfg.patch_len
        self.n_tok = self.n_patch * dims.n_bs
        self.mask = build_mask(self.n_patch, dims.n_bs, cfg.mask_mode, self.dtype)
        self.params: dict[str, ParamBlock] = {}
        self._init_params(np.random.default_rng(seed))

    # --- parameters ---

    def _add(self, name: str, arr: np.ndarray, trainable: bool = True) -> None:
        t = DiffTensor(arr.astype(self.dtype, copy=False), requires_grad=trainable)
        self.params[name] = ParamBlock(name=name, tensor=t, trainable=trainable)

    def _init_params(self, rng) -> None:
        cfg, dims = self.cfg, self.dims
        c1, c2 = cfg.d_c // 2, cfg.d_c
        c_classes = dims.n_classes

        def normal(shape, std):
            return rng.normal(0.0, std, size=shape)

        self._add("front.conv1.w", normal((c1, 2, 3, 3), math.sqrt(2.0 / (2 * 9))))
        self._add("front.conv1.b", np.zeros(c1))
        self._add("front.conv2.w", normal((c2, c1, 3, 3), math.sqrt(2.0 / (c1 * 9))))
        self._add("front.conv2.b", np.zeros(c2))

        self._add("embed.proj.w", normal((cfg.d_c, cfg.d), 0.02))
        self._add("embed.proj.b", np.zeros(cfg.d))
        self._add("embed.pos", normal((self.n_patch, cfg.d), 0.02))
        self._add("embed.bs", normal((dims.n_bs, cfg.d), 0.02))

        resid_std = 0.02 / math.sqrt(2.0 * max(cfg.n_layers, 1))
        backbone_train = not cfg.frozen_backbone
        for i in range(cfg.n_layers):
            pre = f"backbone.{i}"
            self._add(f"{pre}.ln1.g", np.ones(cfg.d))
            self._add(f"{pre}.ln1.b", np.zeros(cfg.d))
            self._add(f"{pre}.attn.wqkv", normal((cfg.d, 3 * cfg.d), 0.02), backbone_train)
            self._add(f"{pre}.attn.bqkv", np.zeros(3 * cfg.d), backbone_train)
            self._add(f"{pre}.attn.wo", normal((cfg.d, cfg.d), resid_std), backbone_train)
            self._add(f"{pre}.attn.bo", np.zeros(cfg.d), backbone_train)
            self._add(f"{pre}.ln2.g", np.ones(cfg.d))
            self._add(f"{pre}.ln2.b", np.zeros(cfg.d))
            self._add(f"{pre}.mlp.w1", normal((cfg.d, 4 * cfg.d), 0.02), backbone_train)
            self._add(f"{pre}.mlp.b1", np.zeros(4 * cfg.d), backbone_train)
            self._add(f"{pre}.mlp.w2", normal((4 * cfg.d, cfg.d), resid_std), backbone_train)
            self._add(f"{pre}.mlp.b2", np.zeros(cfg.d), backbone_train)

        self._add("pool.wa", normal((cfg.d, cfg.d), 0.02))
        self._add("pool.a", normal((cfg.d, 1), 0.02))

        if cfg.head in ("switch", "ungated"):
            self._add("head.wst", normal((cfg.d, c_classes), 0.02))
            self._add("head.bst", np.zeros(c_classes))
            self._add("head.u", normal((c_classes, cfg.rank_r), 0.02))
            self._add("head.v", normal((c_classes, cfg.rank_r), 0.02))
        if cfg.head == "switch":
            # Flip branch starts as a copy of the stable branch (zero residual)
            # and the gate starts undecided at p_sw = 0.5.
            self._add("head.wdelta", np.zeros((cfg.d, c_classes)))
            self._add("head.bdelta", np.zeros(c_classes))
            self._add("head.wg", np.zeros((cfg.d, 1)))
            self._add("head.bg", np.zeros(1))
        if cfg.head == "hierarchical":
            self._add("head.wbs", normal((cfg.d, dims.n_bs), 0.02))
            self._add("head.bbs", np.zeros(dims.n_bs))
            self._add("head.wbeam", normal((cfg.d, c_classes), 0.02))
            self._add("head.bbeam", np.zeros(c_classes))

        self._add("aux.w", normal((cfg.d, c_classes), 0.02))
        self._add("aux.b", np.zeros(c_classes))

    def _p(self, name: str) -> DiffTensor:
        return self.params[name].tensor

    def blocks(self) -> list[ParamBlock]:
        return list(self.params.values())

    def stage1_blocks(self) -> list[ParamBlock]:
        """Everything but the stage-0 auxiliary head."""
        return [b for b in self.params.values() if not b.name.startswith("aux.")]

    # --- forward pieces ---

    def _front_end(self, slices: DiffTensor) -> DiffTensor:
        """(S, 2, n_ports, n_subc) -> (S, d_c)."""
        h = ad.instance_norm(slices, n_axes=2)
        h = ad.gelu(ad.conv2d(h, self._p("front.conv1.w"), self._p("front.conv1.b"), 2, 1))
        h = ad.gelu(ad.conv2d(h, self._p("front.conv2.w"), self._p("front.conv2.b"), 2, 1))
        return ad.global_mean_pool(h)

    def _project_views(self, feats: DiffTensor, lead_shape: tuple) -> DiffTensor:
        """([lead], 2, d_c) flattened -> view-summed ([lead], d) tokens."""
        proj = ad.add(ad.matmul(feats, self._p("embed.proj.w")), self._p("embed.proj.b"))
        proj = ad.reshape(proj, lead_shape + (2, self.cfg.d))
        return ad.sum_(proj, axis=len(lead_shape))

    def _tokens_from_slot_feats(self, window_feats: DiffTensor) -> DiffTensor:
        """(B, t_h, n_bs, d) -> (B, n_tok, d) with patch mean and embeddings."""
        b = window_feats.data.shape[0]
        dims, cfg = self.dims, self.cfg
        grouped = ad.reshape(
            window_feats, (b, self.n_patch, cfg.patch_len, dims.n_bs, cfg.d)
        )
        patched = ad.mean(grouped, axis=2)  # (B, n_patch, n_bs, d)
        pos = ad.reshape(self._p("embed.pos"), (1, self.n_patch, 1, cfg.d))
        tok = ad.add(ad.add(patched, pos), self._p("embed.bs"))
        return ad.reshape(tok, (b, self.n_tok, cfg.d))

    def _backbone(self, tokens: DiffTensor) -> DiffTensor:
        cfg = self.cfg
        n_heads = cfg.n_heads
        dh = cfg.d // n_heads
        h = tokens
        b, t, d = h.data.shape
        for i in range(cfg.n_layers):
            pre = f"backbone.{i}"
            x = ad.layer_norm(h, self._p(f"{pre}.ln1.g"), self._p(f"{pre}.ln1.b"))
            qkv = ad.add(ad.matmul(x, self._p(f"{pre}.attn.wqkv")), self._p(f"{pre}.attn.bqkv"))
            qkv = ad.reshape(qkv, (b, t, 3, n_heads, dh))
            qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, heads, T, dh)
            att = ad.sdpa(qkv[0], qkv[1], qkv[2], self.mask)
            att = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (b, t, d))
            att = ad.add(ad.matmul(att, self._p(f"{pre}.attn.wo")), self._p(f"{pre}.attn.bo"))
            h = ad.add(h, att)
            x = ad.layer_norm(h, self._p(f"{pre}.ln2.g"), self._p(f"{pre}.ln2.b"))
            x = ad.gelu(ad.add(ad.matmul(x, self._p(f"{pre}.mlp.w1")), self._p(f"{pre}.mlp.b1")))
            x = ad.add(ad.matmul(x, self._p(f"{pre}.mlp.w2")), self._p(f"{pre}.mlp.b2"))
            h = ad.add(h, x)
        return h

    def _pool(self, hidden: DiffTensor) -> tuple[DiffTensor, DiffTensor, DiffTensor]:
        """BS attention pooling: (r_patches (B, n_patch, d), h_p (B, d), alpha)."""
        b = hidden.data.shape[0]
        dims, cfg = self.dims, self.cfg
        grid = ad.reshape(hidden, (b, self.n_patch, dims.n_bs, cfg.d))
        scores = ad.matmul(ad.tanh(ad.matmul(grid, self._p("pool.wa"))), self._p("pool.a"))
        alpha = ad.softmax(ad.reshape(scores, (b, self.n_patch, dims.n_bs)))  # over BS
        r = ad.sum_(ad.mul(ad.reshape(alpha, (b, self.n_patch, dims.n_bs, 1)), grid), axis=2)
        h_p = r[:, self.n_patch - 1, :]
        return r, h_p, alpha

    def _head(
        self, r: DiffTensor, h_p: DiffTensor, alpha: DiffTensor,
        y_now: np.ndarray | None,
    ) -> ModelOutput:
        cfg, dims = self.cfg, self.dims
        if cfg.head == "hierarchical":
            zbs = ad.add(ad.matmul(h_p, self._p("head.wbs")), self._p("head.bbs"))
            zbeam = ad.add(ad.matmul(h_p, self._p("head.wbeam")), self._p("head.bbeam"))
            zbeam = ad.reshape(zbeam, (h_p.data.shape[0], dims.n_bs, dims.n_beam))
            return ModelOutput(
                head=cfg.head, r_patches=r, h_p=h_p, alpha_bs=alpha,
                logits_bs=zbs, logits_beam=zbeam,
            )

        if y_now is None:
            raise ConfigError(f"{cfg.head} head needs y_now")
        y_now = np.asarray(y_now)
        if y_now.min() < 1 or y_now.max() > dims.n_classes:
            raise ConfigError(
                f"y_now outside 1..{dims.n_classes}: range "
                f"[{int(y_now.min())}, {int(y_now.max())}]"
            )
        v_rows = ad.take0(self._p("head.v"), y_now - 1)  # (B, r)
        prior = ad.matmul(v_rows, ad.transpose(self._p("head.u"), (1, 0)))  # (B, C)
        z_st = ad.add(
            ad.add(ad.matmul(h_p, self._p("head.wst")), self._p("head.bst")), prior
        )
        if cfg.head == "ungated":
            return ModelOutput(
                head=cfg.head, r_patches=r, h_p=h_p, alpha_bs=alpha, logits_st=z_st
            )
        delta = ad.add(ad.matmul(h_p, self._p("head.wdelta")), self._p("head.bdelta"))
        z_fl = ad.add(z_st, delta)
        gate = ad.reshape(
            ad.add(ad.matmul(h_p, self._p("head.wg")), self._p("head.bg")),
            (h_p.data.shape[0],),
        )
        return ModelOutput(
            head=cfg.head, r_patches=r, h_p=h_p, alpha_bs=alpha,
            logits_st=z_st, logits_fl=z_fl, gate_logits=gate,
        )

    # --- entry points ---

    def _check_slice_dims(self, shape: tuple, form: str) -> None:
        dims = self.dims
        want = (dims.n_bs, 2, 2, dims.n_ports, dims.n_subc)
        if shape[-5:] != want:
            raise ConfigError(f"{form} input trailing dims {shape[-5:]} != expected {want}")

    def forward_windows(self, x: np.ndarray, y_now: np.ndarray | None) -> ModelOutput:
        """x: (B, t_h, n_bs, 2, 2, n_ports, n_subc) float tensor."""
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 7 or x.shape[1] != self.dims.t_h:
            raise ConfigError(f"window tensor has shape {x.shape}")
        self._check_slice_dims(x.shape, "window")
        b, t_h, n_bs = x.shape[:3]
        slices = DiffTensor(
            x.reshape(b * t_h * n_bs * 2, 2, self.dims.n_ports, self.dims.n_subc)
        )
        feats = self._front_end(slices)
        window_feats = self._project_views(feats, (b, t_h, n_bs))
        tokens = self._tokens_from_slot_feats(window_feats)
        hidden = self._backbone(tokens)
        r, h_p, alpha = self._pool(hidden)
        return self._head(r, h_p, alpha, y_now)

    def forward_shared(
        self, slots: np.ndarray, slot_map: np.ndarray, y_now: np.ndarray | None
    ) -> ModelOutput:
        """slots: (S, n_bs, 2, 2, n_ports, n_subc); slot_map: (B, t_h) into S."""
        slots = np.ascontiguousarray(slots, dtype=self.dtype)
        if slots.ndim != 6:
            raise ConfigError(f"slot tensor has shape {slots.shape}")
        self._check_slice_dims(slots.shape, "slot")
        slot_map = np.asarray(slot_map)
        if slot_map.ndim != 2 or slot_map.shape[1] != self.dims.t_h:
            raise ConfigError(f"slot_map has shape {slot_map.shape}")
        s, n_bs = slots.shape[:2]
        slices = DiffTensor(slots.reshape(s * n_bs * 2, 2, self.dims.n_ports, self.dims.n_subc))
        feats = self._front_end(slices)
        slot_tokens = self._project_views(feats, (s, n_bs))  # (S, n_bs, d)
        window_feats = ad.take0(slot_tokens, slot_map)  # (B, t_h, n_bs, d)
        tokens = self._tokens_from_slot_feats(window_feats)
        hidden = self._backbone(tokens)
        r, h_p, alpha = self._pool(hidden)
        return self._head(r, h_p, alpha, y_now)

    def forward_batch(self, batch: Batch) -> ModelOutput:
        if batch.slots is not None:
            return self.forward_shared(batch.slots, batch.slot_map, batch.y_now)
        if batch.x is None:
            raise ConfigError("batch carries neither window tensors nor shared slots")
        return self.forward_windows(batch.x, batch.y_now)

    # --- prediction ---

    def output_proba(self, out: ModelOutput) -> np.ndarray:
        """Final class distribution as float64 (B, n_classes)."""
        if out.head == "switch":
            return fuse_probabilities(
                out.logits_st.data, out.logits_fl.data, out.gate_logits.data
            )
        if out.head == "ungated":
            return _softmax_np(np.asarray(out.logits_st.data, dtype=np.float64))
        p_bs = _softmax_np(np.asarray(out.logits_bs.data, dtype=np.float64))
        p_beam = _softmax_np(np.asarray(out.logits_beam.data, dtype=np.float64))
        return (p_bs[:, :, None] * p_beam).reshape(p_bs.shape[0], -1)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        return self.output_proba(self.forward_batch(batch))

    def predict_label(self, batch: Batch) -> np.ndarray:
        """1-based class prediction; hierarchical uses cascaded argmax."""
        out = self.forward_batch(batch)
        if out.head == "hierarchical":
            b_hat = np.argmax(out.logits_bs.data, axis=1)
            rows = np.arange(out.logits_beam.data.shape[0])
            m_hat = np.argmax(out.logits_beam.data[rows, b_hat], axis=1)
            return (b_hat * self.dims.n_beam + m_hat + 1).astype(np.int64)
        return np.argmax(self.output_proba(out), axis=1) + 1

    # --- persistence ---

    def checkpoint_meta(self) -> dict:
        return {
            "model": asdict(self.cfg),
            "dims": asdict(self.dims),
            "n_patch": self.n_patch,
        }

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = self.checkpoint_meta()
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(
            path,
            [(b.name, b.tensor.data, b.trainable) for b in self.blocks()],
            meta,
        )

    def load_state(self, blocks: dict) -> None:
        missing = sorted(set(self.params) - set(blocks))
        extra = sorted(set(blocks) - set(self.params))
        if missing or extra:
            raise DataFormatError(
                f"checkpoint blocks do not match model: missing {missing}, extra {extra}"
            )
        for name, (arr, _trainable) in blocks.items():
            tgt = self.params[name].tensor
            if arr.shape != tgt.data.shape:
                raise DataFormatError(
                    f"block {name!r} shape {arr.shape} != model {tgt.data.shape}"
                )
            tgt.data = arr.astype(self.dtype, copy=True)

    @classmethod
    def from_checkpoint(cls, path, dtype=np.float32) -> "CrsModel":
        blocks, meta = load_checkpoint(path)
        try:
            dims = ModelDims(**meta["dims"])
            cfg = ModelConfig(**meta["model"])
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"checkpoint {path} has invalid metadata") from exc
        model = cls(dims, cfg, dtype=dtype)
        model.load_state(blocks)
        return model

    def state_copy(self) -> dict[str, np.ndarray]:
        return {name: blk.tensor.data.copy() for name, blk in self.params.items()}

    def restore_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            self.params[name].tensor.data = arr.copy()
