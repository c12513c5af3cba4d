"""Desk-scale DMANet: residual backbone, SRM + LRM per scale, skip-sum fusion, shared head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..encoder import EventPillars
from ..memory import SRM, AdaptiveConvLSTM, LRMState, srm_forward
from ..nn import tensor as T
from ..nn.layers import Conv2d, Module, Pointwise
from ..nn.tensor import ShapeError, Tensor
from ..pillars import PillarConfig
from .config import DetectorConfig


class ResBlock(Module):
    def __init__(self, channels, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, rng, dtype=dtype)

    def __call__(self, x):
        return T.relu(x + self.conv2(T.relu(self.conv1(x))))


class Stage(Module):
    def __init__(self, c_in, c_out, rng, dtype):
        super().__init__()
        self.down = Conv2d(c_in, c_out, rng, stride=2, dtype=dtype)
        self.block = ResBlock(c_out, rng, dtype)

    def __call__(self, x):
        return self.block(T.relu(self.down(x)))


class Backbone(Module):
    def __init__(self, in_channels, widths, rng, dtype):
        super().__init__()
        chans = (in_channels,) + tuple(widths)
        self.stages = [Stage(chans[i], chans[i + 1], rng, dtype) for i in range(len(widths))]

    def __call__(self, x):
        h, w = x.shape[:2]
        if h % 8 or w % 8:
            raise ShapeError(f"backbone input {h}x{w} must be divisible by 8")
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class Head(Module):
    """Shared across scales: two small conv stacks for class logits and box deltas."""

    def __init__(self, width, num_classes, anchors, rng, dtype, prior=None):
        super().__init__()
        self.cls_conv = Conv2d(width, width, rng, dtype=dtype)
        self.cls_out = Conv2d(width, anchors * num_classes, rng, dtype=dtype)
        if prior:
            # start every anchor as unlikely foreground so background does not swamp the focal loss
            self.cls_out.bias.data[:] = -np.log((1.0 - prior) / prior)
        self.box_conv = Conv2d(width, width, rng, dtype=dtype)
        self.box_out = Conv2d(width, anchors * 4, rng, dtype=dtype)

    def __call__(self, feat):
        logits = self.cls_out(T.relu(self.cls_conv(feat)))
        deltas = self.box_out(T.relu(self.box_conv(feat)))
        return logits, deltas


@dataclass
class DetectorState:
    lrm: list  # LRMState per scale
    prev: list  # previous-interval backbone maps per scale

    def detach(self):
        return DetectorState([s.detach() for s in self.lrm], [p.detach() for p in self.prev])


class DMANet(Module):
    def __init__(self, config=None, rng=None):
        super().__init__()
        self.config = cfg = config or DetectorConfig()
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dt = cfg.np_dtype
        if cfg.representation == "eventpillars":
            pcfg = PillarConfig(cfg.max_events, cfg.max_pillars, cfg.slices, 1, cfg.seed)
            self.pillars = EventPillars(pcfg, cfg.pillar_channels, rng, dt)
        else:
            self.pillars = None
        self.backbone = Backbone(cfg.input_channels(), cfg.widths, rng, dt)
        self.srm = [SRM(c, cfg.srm_reduction, rng, dt) for c in cfg.widths] if cfg.use_srm else []
        self.lrm = [AdaptiveConvLSTM(c, rng, dt) for c in cfg.widths] if cfg.use_lrm else []
        self.lateral = [Pointwise(c, cfg.head_width, rng, dt) for c in cfg.widths]
        self.head = Head(cfg.head_width, cfg.num_classes, 1, rng, dt, cfg.cls_prior)

    def initial_state(self, size=None):
        cfg = self.config
        size = size or cfg.input_size
        lrm, prev = [], []
        for c, s in zip(cfg.widths, cfg.strides):
            shape = (size // s, size // s, c)
            lrm.append(LRMState.zeros(shape, cfg.np_dtype))
            prev.append(Tensor(np.zeros(shape, dtype=cfg.np_dtype)))
        return DetectorState(lrm, prev)

    def step(self, image, state):
        return dmanet_step(image, state, self)

    def forward_window(self, window, state, training, grid=None, psets=None):
        """Window -> (flat logits, flat deltas, new state).

        ``grid`` supplies a precomputed hand-crafted representation, ``psets``
        cached pillar sets; otherwise pillars are built from ``window``.
        """
        image = self.input_image(window, training, grid, psets)
        _, outputs, new_state = dmanet_step(image, state, self)
        logits, deltas = flatten_outputs(outputs, self.config.num_classes)
        return logits, deltas, new_state

    def input_image(self, window, training, grid=None, psets=None):
        cfg = self.config
        if self.pillars is not None:
            img = self.pillars(window, training, psets=psets)
        else:
            img = Tensor(np.asarray(grid, dtype=cfg.np_dtype))
        return resize_to_input(img, cfg.input_size)


def resize_to_input(img, size):
    h, w, c = img.shape
    if h == size and w == size:
        return img
    if h % size or w % size or h // size != w // size:
        raise ShapeError(f"cannot area-resize {h}x{w} to {size}x{size}")
    f = h // size
    return T.mean(T.reshape(img, (size, f, size, f, c)), axis=(1, 3))


def backbone_forward(image, model):
    return model.backbone(image)


def skip_sum(maps):
    """Top-down fusion: coarsest map upsampled x2 (nearest) and added to the next finer one."""
    out = [None] * len(maps)
    out[-1] = maps[-1]
    for i in range(len(maps) - 2, -1, -1):
        out[i] = maps[i] + T.upsample_nearest2x(out[i + 1])
    return out


def dmanet_step(image, state, model):
    """One interval: returns (fused maps, per-scale head outputs, new state)."""
    cfg = model.config
    feats = model.backbone(image)
    if len(state.prev) != len(feats) or len(state.lrm) != len(feats):
        raise ShapeError("detector state scale count does not match the backbone")
    enhanced = feats
    if model.srm:
        enhanced = [srm_forward(f, p, m) for f, p, m in zip(feats, state.prev, model.srm)]
    new_lrm = state.lrm
    if model.lrm:
        outs, new_lrm = [], []
        for x, s, p, cell in zip(enhanced, state.lrm, state.prev, model.lrm):
            h, ns = cell(x, s, p)
            outs.append(h)
            new_lrm.append(ns)
        enhanced = outs
    lat = [l(f) for l, f in zip(model.lateral, enhanced)]
    fused = skip_sum(lat) if cfg.skip_sum else lat
    outputs = [model.head(f) for f in fused]
    return fused, outputs, DetectorState(new_lrm, list(feats))


def flatten_outputs(outputs, num_classes):
    logits = T.concat([T.reshape(l, (-1, num_classes)) for l, _ in outputs], axis=0)
    deltas = T.concat([T.reshape(d, (-1, 4)) for _, d in outputs], axis=0)
    return logits, deltas


def make_anchors(config):
    """Anchor boxes (x_min, y_min, x_max, y_max), scale-major then row-major."""
    out = []
    for s in config.strides:
        n = config.input_size // s
        c = (np.arange(n) + 0.5) * s
        cy, cx = np.meshgrid(c, c, indexing="ij")
        half = config.anchor_scale * s / 2.0
        out.append(np.stack([cx - half, cy - half, cx + half, cy + half], axis=-1).reshape(-1, 4))
    return np.concatenate(out, axis=0)
