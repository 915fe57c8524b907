"""A small time- and label-conditioned U-Net written directly in numpy.

Parameters live in one flat float32 vector; ``manifest`` lists
``(name, shape)`` in storage order and is the contract used by the checkpoint
format. The forward pass returns a tape that ``backward`` consumes to produce a
flat gradient with the same layout.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import rng as rngmod
from . import layers as L


@dataclass(frozen=True)
class UNetConfig:
    grid_size: int = 32
    channels: tuple = (16, 32)
    time_embed_dim: int = 32
    eta: int = 4
    groups: int = 8
    down: str = "avg"        # "avg" pooling or strided "conv"
    residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        levels = len(self.channels)
        if levels < 1:
            raise ValueError("need at least one resolution level")
        if self.grid_size <= 0 or self.grid_size % (2 ** levels):
            raise ValueError(f"grid_size {self.grid_size} not divisible by 2**{levels}")
        if self.eta < 1:
            raise ValueError("eta must be >= 1")
        if self.down not in ("avg", "conv"):
            raise ValueError(f"unknown downsampling kind {self.down!r}")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        for c in self._block_channels():
            if c % self.groups:
                raise ValueError(f"{c} channels not divisible into {self.groups} groups")

    def _block_channels(self):
        ch = self.channels
        ins = [ch[0]] + list(ch[:-1]) + [ch[-1]]
        ins += [ch[lvl + 1] + ch[lvl] for lvl in reversed(range(len(ch) - 1))]
        return ins + [ch[0]]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def _resblock_manifest(name, cin, cout, emb):
    m = [(f"{name}.gn1.g", (cin,)), (f"{name}.gn1.b", (cin,)),
         (f"{name}.conv1.w", (3, 3, cin, cout)), (f"{name}.conv1.b", (cout,)),
         (f"{name}.emb.w", (emb, cout)), (f"{name}.emb.b", (cout,)),
         (f"{name}.gn2.g", (cout,)), (f"{name}.gn2.b", (cout,)),
         (f"{name}.conv2.w", (3, 3, cout, cout)), (f"{name}.conv2.b", (cout,))]
    if cin != cout:
        m += [(f"{name}.skip.w", (1, 1, cin, cout)), (f"{name}.skip.b", (cout,))]
    return m


def build_manifest(cfg: UNetConfig) -> list[tuple[str, tuple]]:
    ch, emb = cfg.channels, cfg.time_embed_dim
    m = [("time.w", (emb, emb)), ("time.b", (emb,)),
         ("label", (cfg.eta + 1, emb)),
         ("conv_in.w", (3, 3, 1, ch[0])), ("conv_in.b", (ch[0],))]
    prev = ch[0]
    for lvl, c in enumerate(ch):
        m += _resblock_manifest(f"enc{lvl}", prev, c, emb)
        prev = c
        if lvl < len(ch) - 1 and cfg.down == "conv":
            m += [(f"down{lvl}.w", (3, 3, c, c)), (f"down{lvl}.b", (c,))]
    m += _resblock_manifest("mid", prev, prev, emb)
    for lvl in reversed(range(len(ch) - 1)):
        m += _resblock_manifest(f"dec{lvl}", prev + ch[lvl], ch[lvl], emb)
        prev = ch[lvl]
    m += [("out.gn.g", (prev,)), ("out.gn.b", (prev,)),
          ("out.conv.w", (3, 3, prev, 1)), ("out.conv.b", (1,))]
    return m


def _fan_in(name, shape):
    if name.endswith(".w") or name == "time.w":
        return int(np.prod(shape[:-1]))
    return None


class TinyUNet:
    def __init__(self, cfg: UNetConfig, params: np.ndarray | None = None):
        self.cfg = cfg
        self.manifest = build_manifest(cfg)
        self.offsets = {}
        off = 0
        for name, shape in self.manifest:
            size = int(np.prod(shape))
            self.offsets[name] = (off, shape)
            off += size
        self.n_params = off
        if params is None:
            params = np.zeros(off, dtype=np.float32)
        params = np.asarray(params)
        if params.shape != (off,):
            raise ValueError(f"expected {off} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def init(cls, cfg: UNetConfig, seed: int) -> "TinyUNet":
        """Variance-scaled uniform weights, zero biases, unit norm gains."""
        net = cls(cfg)
        gen = rngmod.stream(seed, rngmod.INIT)
        p = np.zeros(net.n_params, dtype=np.float64)
        for name, shape in net.manifest:
            off, _ = net.offsets[name]
            size = int(np.prod(shape))
            if name.endswith(".g"):
                p[off:off + size] = 1.0
            elif name == "label":
                p[off:off + size] = gen.uniform(-1.0, 1.0, size)
            elif name.endswith(".w"):
                limit = np.sqrt(3.0 / _fan_in(name, shape))
                p[off:off + size] = gen.uniform(-limit, limit, size)
        net.params = p.astype(np.float32)
        return net

    def copy(self, dtype=None) -> "TinyUNet":
        return TinyUNet(self.cfg, self.params.astype(dtype or self.params.dtype, copy=True))

    def views(self, flat: np.ndarray) -> dict:
        return {name: flat[off:off + int(np.prod(shape))].reshape(shape)
                for name, (off, shape) in self.offsets.items()}

    # -- forward / backward -------------------------------------------------

    def _check_inputs(self, x, labels, steps):
        g = self.cfg.grid_size
        if x.ndim != 3 or x.shape[1:] != (g, g):
            raise ValueError(f"expected input of shape (B, {g}, {g}), got {x.shape}")
        if labels.shape != (x.shape[0],) or steps.shape != (x.shape[0],):
            raise ValueError("labels and steps need one entry per batch element")
        if labels.min(initial=0) < 0 or labels.max(initial=0) > self.cfg.eta:
            raise ValueError(f"labels must lie in 0..{self.cfg.eta} (0 = null)")

    def forward(self, x, labels, steps, dtype=np.float32):
        """Batch forward pass.

        ``x`` has shape (B, G, G); ``labels`` are ints with 0 meaning no
        label; ``steps`` are integer step indices. Returns ``(out, tape)``.
        """
        x = np.asarray(x)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        steps = np.asarray(steps, dtype=np.int64).reshape(-1)
        self._check_inputs(x, labels, steps)
        P = self.views(self.params.astype(dtype, copy=False))
        cfg = self.cfg
        tape = {"dtype": dtype, "labels": labels}

        tfeat = L.timestep_embedding(steps, cfg.time_embed_dim).astype(dtype)
        e = tfeat @ P["time.w"] + P["time.b"] + P["label"][labels]
        e_act, tape["emb_silu"] = L.silu_fwd(e)
        tape["tfeat"] = tfeat
        tape["e_act"] = e_act

        h, tape["conv_in"] = L.conv_fwd(x.astype(dtype)[..., None], P["conv_in.w"], P["conv_in.b"])
        skips = []
        for lvl, _ in enumerate(cfg.channels):
            h = self._block_fwd(f"enc{lvl}", h, e_act, P, tape)
            if lvl < len(cfg.channels) - 1:
                skips.append(h)
                if cfg.down == "conv":
                    h, tape[f"down{lvl}"] = L.conv_fwd(h, P[f"down{lvl}.w"], P[f"down{lvl}.b"], stride=2)
                else:
                    h, tape[f"down{lvl}"] = L.avgpool2_fwd(h)
        h = self._block_fwd("mid", h, e_act, P, tape)
        for lvl in reversed(range(len(cfg.channels) - 1)):
            h = L.upsample2_fwd(h)
            tape[f"cat{lvl}"] = h.shape[-1]
            h = np.concatenate([h, skips[lvl]], axis=-1)
            h = self._block_fwd(f"dec{lvl}", h, e_act, P, tape)
        h, tape["out.gn"] = L.group_norm_fwd(h, P["out.gn.g"], P["out.gn.b"], cfg.groups)
        h, tape["out.silu"] = L.silu_fwd(h)
        h, tape["out.conv"] = L.conv_fwd(h, P["out.conv.w"], P["out.conv.b"])
        return h[..., 0], tape

    def _block_fwd(self, name, x, e_act, P, tape):
        g = self.cfg.groups
        a, c_gn1 = L.group_norm_fwd(x, P[f"{name}.gn1.g"], P[f"{name}.gn1.b"], g)
        a, c_s1 = L.silu_fwd(a)
        a, c_c1 = L.conv_fwd(a, P[f"{name}.conv1.w"], P[f"{name}.conv1.b"])
        a = a + (e_act @ P[f"{name}.emb.w"] + P[f"{name}.emb.b"])[:, None, None, :]
        b, c_gn2 = L.group_norm_fwd(a, P[f"{name}.gn2.g"], P[f"{name}.gn2.b"], g)
        b, c_s2 = L.silu_fwd(b)
        b, c_c2 = L.conv_fwd(b, P[f"{name}.conv2.w"], P[f"{name}.conv2.b"])
        c_skip = None
        if self.cfg.residual:
            if f"{name}.skip.w" in P:
                sk, c_skip = L.conv_fwd(x, P[f"{name}.skip.w"], P[f"{name}.skip.b"], pad=0)
            else:
                sk = x
            b = b + sk
        tape[name] = (c_gn1, c_s1, c_c1, c_gn2, c_s2, c_c2, c_skip, x.shape[-1])
        return b

    def backward(self, tape, dout) -> np.ndarray:
        """Gradient of ``sum(dout * out)`` w.r.t. the flat parameter vector."""
        cfg = self.cfg
        dtype = tape["dtype"]
        grad = np.zeros(self.n_params, dtype=dtype)
        G = self.views(grad)
        P = self.views(self.params.astype(dtype, copy=False))

        d = np.asarray(dout, dtype=dtype)[..., None]
        d, G["out.conv.w"][...], G["out.conv.b"][...] = L.conv_bwd(d, tape["out.conv"])
        d = L.silu_bwd(d, tape["out.silu"])
        d, G["out.gn.g"][...], G["out.gn.b"][...] = L.group_norm_bwd(d, tape["out.gn"])

        d_e = np.zeros_like(tape["e_act"])
        skip_grads = {}
        for lvl in range(len(cfg.channels) - 1):
            d = self._block_bwd(f"dec{lvl}", d, P, G, tape, d_e)
            n_up = tape[f"cat{lvl}"]
            skip_grads[lvl] = d[..., n_up:]
            d = L.upsample2_bwd(d[..., :n_up])
        d = self._block_bwd("mid", d, P, G, tape, d_e)
        for lvl in reversed(range(len(cfg.channels))):
            if lvl < len(cfg.channels) - 1:
                if cfg.down == "conv":
                    d, G[f"down{lvl}.w"][...], G[f"down{lvl}.b"][...] = L.conv_bwd(d, tape[f"down{lvl}"])
                else:
                    d = L.avgpool2_bwd(d, tape[f"down{lvl}"])
                d = d + skip_grads[lvl]
            d = self._block_bwd(f"enc{lvl}", d, P, G, tape, d_e)
        _, G["conv_in.w"][...], G["conv_in.b"][...] = L.conv_bwd(d, tape["conv_in"])

        d_e = L.silu_bwd(d_e, tape["emb_silu"])
        G["time.w"][...] = tape["tfeat"].T @ d_e
        G["time.b"][...] = d_e.sum(axis=0)
        np.add.at(G["label"], tape["labels"], d_e)
        return grad

    def _block_bwd(self, name, d, P, G, tape, d_e):
        c_gn1, c_s1, c_c1, c_gn2, c_s2, c_c2, c_skip, _ = tape[name]
        dx_skip = None
        if self.cfg.residual:
            if c_skip is not None:
                dx_skip, G[f"{name}.skip.w"][...], G[f"{name}.skip.b"][...] = L.conv_bwd(d, c_skip)
            else:
                dx_skip = d
        db, G[f"{name}.conv2.w"][...], G[f"{name}.conv2.b"][...] = L.conv_bwd(d, c_c2)
        db = L.silu_bwd(db, c_s2)
        da, G[f"{name}.gn2.g"][...], G[f"{name}.gn2.b"][...] = L.group_norm_bwd(db, c_gn2)
        d_embout = da.sum(axis=(1, 2))
        G[f"{name}.emb.w"][...] = tape["e_act"].T @ d_embout
        G[f"{name}.emb.b"][...] = d_embout.sum(axis=0)
        d_e += d_embout @ P[f"{name}.emb.w"].T
        da, G[f"{name}.conv1.w"][...], G[f"{name}.conv1.b"][...] = L.conv_bwd(da, c_c1)
        da = L.silu_bwd(da, c_s1)
        dx, G[f"{name}.gn1.g"][...], G[f"{name}.gn1.b"][...] = L.group_norm_bwd(da, c_gn1)
        if dx_skip is not None:
            dx = dx + dx_skip
        return dx


class UNetPredictor:
    """Adapts a :class:`TinyUNet` to the single-grid ``predict`` interface."""

    def __init__(self, net: TinyUNet, dtype=np.float32):
        self.net = net
        self.dtype = dtype

    def predict(self, x_t, label, step):
        x = np.asarray(x_t, dtype=np.float64)
        batched = x.ndim == 3
        xb = x if batched else x[None]
        lab = 0 if label is None else label
        labels = np.broadcast_to(np.asarray(lab, dtype=np.int64), (xb.shape[0],))
        steps = np.full(xb.shape[0], int(step), dtype=np.int64)
        out, _ = self.net.forward(xb, labels, steps, dtype=self.dtype)
        out = out.astype(np.float64)
        return out if batched else out[0]
