"""Toy vision-encoder / projector / causal-decoder model and its run report."""

import hashlib
import json
import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .attention import attention_sublayer, causal_mask, mlp_sublayer, transformer_block, zero_mask
from .cmai import SequenceLayout, cmai_layer, linear_gamma_schedule
from .errors import ShapeError
from .linalg import Rng, as_matrix, gelu, matmul
from .vmtc import compress, insertion_layers, last_layer_prune, round_half_up, schedule_stages, spatial_downsample
from .weights import init_weights


def _encoder_schedule(cfg):
    v = cfg.vmtc
    layers = v.insertion_layers if v.insertion_layers is not None else insertion_layers(cfg.vit_depth, v.num_stages)
    plans = schedule_stages(cfg.n_patches, v)
    return dict(zip(layers, enumerate(plans)))


def encode_image(patches, weights, cfg, trace=None):
    """Run the vision encoder; returns visual tokens without [CLS] unless ``cfg.keep_cls``.

    If ``trace`` is a dict it receives ``token_count_per_stage``.
    """
    patches = as_matrix(patches, "patches")
    if patches.shape != (cfg.n_patches, cfg.patch_dim):
        raise ShapeError(f"patches must be {cfg.n_patches}x{cfg.patch_dim}, got {patches.shape}")
    literal = cfg.literal_equations
    x = np.concatenate([weights.cls_embed[None, :], matmul(patches, weights.patch_embed)], axis=0)
    x = x + weights.enc_pos
    counts = [cfg.n_patches]

    stages = _encoder_schedule(cfg) if cfg.compression == "vmtc" else {}
    kmeans_rng = Rng(cfg.vmtc.kmeans.seed)
    record = None
    for layer, block in enumerate(weights.encoder):
        mask = zero_mask(x.shape[0])
        if layer in stages:
            t, plan = stages[layer]
            z_prime, record = attention_sublayer(x, block, mask, literal)
            if not plan.skipped:
                z_prime = compress(z_prime, record.averaged_weights, plan.k, cfg.vmtc,
                                   n_clusters=plan.clusters, rng=kmeans_rng.fork(t))
            counts.append(z_prime.shape[0] - 1)
            x = mlp_sublayer(z_prime, block, literal)
        else:
            x, record = transformer_block(x, block, mask, literal)

    if cfg.compression == "llp":
        x = last_layer_prune(x, record.averaged_weights, cfg.vmtc.target_keep_ratio, cfg.vmtc.ips_direction)
        counts.append(x.shape[0] - 1)
    cls_row, tokens = x[:1], x[1:]
    if cfg.compression == "spd":
        tokens = spatial_downsample(tokens, cfg.grid_side, cfg.spd_factor)
        counts.append(tokens.shape[0])
    if trace is not None:
        trace["token_count_per_stage"] = counts
    return np.concatenate([cls_row, tokens], axis=0) if cfg.keep_cls else tokens


def project(t, weights):
    """Two-layer GELU projector into the decoder width."""
    t = as_matrix(t, "t")
    if t.shape[1] != weights.proj_w1.shape[0]:
        raise ShapeError(f"visual tokens have {t.shape[1]} features, projector expects {weights.proj_w1.shape[0]}")
    hidden = gelu(matmul(t, weights.proj_w1) + weights.proj_b1)
    return matmul(hidden, weights.proj_w2) + weights.proj_b2


def decode(visual, text_ids, weights, cfg, trace=None):
    """Logits for the sequence [projected visual tokens, text tokens].

    With CMAI enabled each decoder layer inhibits under its own scheduled
    ratio. If ``trace`` is a list, one ``InhibitionResult`` per layer is
    appended to it.
    """
    text_ids = [int(i) for i in text_ids]
    if len(text_ids) > cfg.max_text_len:
        raise ShapeError(f"{len(text_ids)} text tokens exceed max_text_len {cfg.max_text_len}")
    if any(not 0 <= i < cfg.vocab_size for i in text_ids):
        raise ValueError("text id outside the vocabulary")
    image = project(visual, weights)
    text = weights.tok_embed[text_ids] if text_ids else np.zeros((0, cfg.d_llm))
    x = np.concatenate([image, text], axis=0)
    if x.shape[0] > weights.dec_pos.shape[0]:
        raise ShapeError(f"sequence of {x.shape[0]} exceeds {weights.dec_pos.shape[0]} positions")
    # positions are re-packed: surviving visual tokens take 0..n'-1
    x = x + weights.dec_pos[: x.shape[0]]
    layout = SequenceLayout(image.shape[0], len(text_ids))
    base = causal_mask(x.shape[0])
    c = cfg.cmai
    gammas = linear_gamma_schedule(cfg.llm_depth, c.gamma_max) if c.enabled else None
    for layer, block in enumerate(weights.decoder):
        if gammas is None:
            x, _ = transformer_block(x, block, base, cfg.literal_equations)
        else:
            x, result, _ = cmai_layer(x, block, base, layout, gammas[layer], c.mode, c.focus_basis,
                                      c.discount, cfg.literal_equations)
            if trace is not None:
                trace.append(result)
    return matmul(x, weights.head)


def generate_greedy(visual, prompt_ids, steps, weights, cfg):
    """Greedy decoding with a full forward pass per step; ties go to the lowest id."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    ids = list(prompt_ids)
    out = []
    for _ in range(steps):
        logits = decode(visual, ids, weights, cfg)
        nxt = int(np.argmax(logits[-1]))
        ids.append(nxt)
        out.append(nxt)
    return out


def synth_inputs(cfg):
    """Seeded stand-in image patches and prompt ids."""
    rng = Rng(cfg.seed).fork(0x5EED)
    patches = rng.normal(cfg.n_patches * cfg.patch_dim).reshape(cfg.n_patches, cfg.patch_dim)
    text_ids = [rng.below(cfg.vocab_size) for _ in range(cfg.prompt_len)]
    return patches, text_ids


def logits_digest(logits):
    """64-bit BLAKE2b checksum of the little-endian float64 bytes, as hex."""
    data = np.ascontiguousarray(np.asarray(logits, dtype="<f8")).tobytes()
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def _fmt(obj):
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x} in report")
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(f"{json.dumps(k)}:{_fmt(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj):
    """JSON with sorted keys, no whitespace and floats at 17 significant digits."""
    return _fmt(obj) + "\n"


@dataclass
class RunReport:
    config: dict
    seed: int
    token_count_per_stage: list
    final_visual_token_count: int
    layers: list
    logits_shape: list
    logits_digest: str
    generated_ids: list = field(default_factory=list)
    duration_s: float = 0.0

    def to_dict(self, include_timing=False):
        d = {
            "config": self.config,
            "seed": self.seed,
            "token_count_per_stage": self.token_count_per_stage,
            "final_visual_token_count": self.final_visual_token_count,
            "layers": self.layers,
            "logits_shape": self.logits_shape,
            "logits_digest": self.logits_digest,
            "generated_ids": self.generated_ids,
        }
        if include_timing:
            d["duration_s"] = self.duration_s
        return d

    def to_json(self, include_timing=False):
        return canonical_json(self.to_dict(include_timing))


def _image_mass(weights, layout, zeroed=None):
    """Mean over text rows of the attention mass on image columns."""
    n, m = layout.n_image, layout.n_text
    if m == 0:
        return 0.0
    block = weights[n:, :n].copy()
    if zeroed is not None:
        for row, cols in enumerate(zeroed):
            block[row, cols] = 0.0
    per_row = np.cumsum(block, axis=1)[:, -1] if n else np.zeros(m)
    return float(np.cumsum(per_row)[-1] / m)


def layer_stats(result, layout):
    counts = Counter(result.counts())
    rec1 = result.pass1_record
    return {
        "gamma": result.gamma,
        "inhibited_count_histogram": {str(k): v for k, v in sorted(counts.items())},
        "image_mass_before": _image_mass(rec1.averaged_weights, layout),
        "image_mass_after": _image_mass(rec1.averaged_weights, layout, result.positions),
    }


def run_pipeline(cfg, patches=None, text_ids=None, weights=None):
    """Encode, project and decode once (plus optional greedy generation) and report."""
    start = time.perf_counter()
    if patches is None or text_ids is None:
        synth_patches, synth_ids = synth_inputs(cfg)
        patches = synth_patches if patches is None else patches
        text_ids = synth_ids if text_ids is None else text_ids
    if weights is None:
        weights = init_weights(cfg)
    enc_trace = {}
    visual = encode_image(patches, weights, cfg, enc_trace)
    dec_trace = []
    logits = decode(visual, text_ids, weights, cfg, dec_trace)
    layout = SequenceLayout(visual.shape[0], len(text_ids))
    generated = []
    if cfg.generate_steps and text_ids:
        generated = generate_greedy(visual, text_ids, cfg.generate_steps, weights, cfg)
    return RunReport(
        config=cfg.to_dict(),
        seed=cfg.seed,
        token_count_per_stage=enc_trace["token_count_per_stage"],
        final_visual_token_count=int(visual.shape[0]),
        layers=[layer_stats(r, layout) for r in dec_trace],
        logits_shape=list(logits.shape),
        logits_digest=logits_digest(logits),
        generated_ids=generated,
        duration_s=time.perf_counter() - start,
    )


__all__ = [
    "encode_image", "project", "decode", "generate_greedy", "run_pipeline", "synth_inputs",
    "logits_digest", "canonical_json", "RunReport", "round_half_up",
]
