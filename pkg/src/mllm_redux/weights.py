"""Model weights: seeded initialization and the binary weights file.

File layout, little-endian, no padding::

    b"VMTC"  u32 version  u32 tensor_count
    per tensor: u32 name_len, utf-8 name, u32 ndims, u32 dims[ndims],
                float64 payload in row-major order
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, BlockParams
from .errors import WeightsFormatError
from .linalg import Rng, gaussian_init

MAGIC = b"VMTC"
VERSION = 1
INIT_STD = 0.02

_BLOCK_KEYS = ("w_q", "w_k", "w_v", "w_o", "mlp_in", "mlp_out", "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift")


@dataclass
class Weights:
    patch_embed: np.ndarray
    cls_embed: np.ndarray
    enc_pos: np.ndarray
    encoder: list
    proj_w1: np.ndarray
    proj_b1: np.ndarray
    proj_w2: np.ndarray
    proj_b2: np.ndarray
    tok_embed: np.ndarray
    dec_pos: np.ndarray
    decoder: list
    head: np.ndarray

    def tensors(self):
        """Flat name -> array mapping in a fixed order."""
        out = {}
        n_heads = self.encoder[0].attention.n_heads if self.encoder else 1
        dec_heads = self.decoder[0].attention.n_heads if self.decoder else 1
        out["meta.encoder_heads"] = np.array(float(n_heads))
        out["meta.decoder_heads"] = np.array(float(dec_heads))
        for name in ("patch_embed", "cls_embed", "enc_pos"):
            out[name] = getattr(self, name)
        for prefix, blocks in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, b in enumerate(blocks):
                a = b.attention
                parts = (a.w_q, a.w_k, a.w_v, a.w_o, b.mlp_in, b.mlp_out,
                         b.ln1_scale, b.ln1_shift, b.ln2_scale, b.ln2_shift)
                for key, arr in zip(_BLOCK_KEYS, parts):
                    out[f"{prefix}.{i}.{key}"] = arr
        for name in ("proj_w1", "proj_b1", "proj_w2", "proj_b2", "tok_embed", "dec_pos", "head"):
            out[name] = getattr(self, name)
        return out

    @classmethod
    def from_tensors(cls, t):
        def blocks(prefix, n_heads):
            out = []
            i = 0
            while f"{prefix}.{i}.w_q" in t:
                p = {k: t[f"{prefix}.{i}.{k}"] for k in _BLOCK_KEYS}
                attn = AttentionParams(p["w_q"], p["w_k"], p["w_v"], p["w_o"], n_heads)
                out.append(BlockParams(attn, p["mlp_in"], p["mlp_out"], p["ln1_scale"], p["ln1_shift"],
                                       p["ln2_scale"], p["ln2_shift"]))
                i += 1
            return out

        return cls(
            patch_embed=t["patch_embed"], cls_embed=t["cls_embed"], enc_pos=t["enc_pos"],
            encoder=blocks("encoder", int(t["meta.encoder_heads"])),
            proj_w1=t["proj_w1"], proj_b1=t["proj_b1"], proj_w2=t["proj_w2"], proj_b2=t["proj_b2"],
            tok_embed=t["tok_embed"], dec_pos=t["dec_pos"],
            decoder=blocks("decoder", int(t["meta.decoder_heads"])),
            head=t["head"],
        )

    def check(self, cfg):
        """Raise ValueError unless every shape matches ``cfg``."""
        d, dl = cfg.d_model, cfg.d_llm
        expect = {
            "patch_embed": (cfg.patch_dim, d), "cls_embed": (d,), "enc_pos": (cfg.n_patches + 1, d),
            "proj_w1": (d, dl), "proj_b1": (dl,), "proj_w2": (dl, dl), "proj_b2": (dl,),
            "tok_embed": (cfg.vocab_size, dl), "dec_pos": (cfg.n_image_max + cfg.max_text_len, dl),
            "head": (dl, cfg.vocab_size),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, config needs {shape}")
        for label, blocks, depth, width in (("encoder", self.encoder, cfg.vit_depth, d),
                                            ("decoder", self.decoder, cfg.llm_depth, dl)):
            if len(blocks) != depth:
                raise ValueError(f"{label} has {len(blocks)} blocks, config needs {depth}")
            for b in blocks:
                if b.attention.d_model != width or b.mlp_in.shape[1] != cfg.d_ff or b.attention.n_heads != cfg.n_heads:
                    raise ValueError(f"{label} block shape does not match config")


def _block(rng, d, d_ff, n_heads):
    attn = AttentionParams(*(gaussian_init(rng, d, d, INIT_STD) for _ in range(4)), n_heads)
    return BlockParams(attn, gaussian_init(rng, d, d_ff, INIT_STD), gaussian_init(rng, d_ff, d, INIT_STD),
                       np.ones(d), np.zeros(d), np.ones(d), np.zeros(d))


def init_weights(cfg):
    """N(0, 0.02^2) matrices, zero biases and shifts, unit scales; fully determined by ``cfg.seed``."""
    rng = Rng(cfg.seed)
    d, dl = cfg.d_model, cfg.d_llm
    patch_embed = gaussian_init(rng, cfg.patch_dim, d, INIT_STD)
    cls_embed = gaussian_init(rng, 1, d, INIT_STD)[0]
    enc_pos = gaussian_init(rng, cfg.n_patches + 1, d, INIT_STD)
    encoder = [_block(rng, d, cfg.d_ff, cfg.n_heads) for _ in range(cfg.vit_depth)]
    proj_w1 = gaussian_init(rng, d, dl, INIT_STD)
    proj_w2 = gaussian_init(rng, dl, dl, INIT_STD)
    tok_embed = gaussian_init(rng, cfg.vocab_size, dl, INIT_STD)
    dec_pos = gaussian_init(rng, cfg.n_image_max + cfg.max_text_len, dl, INIT_STD)
    decoder = [_block(rng, dl, cfg.d_ff, cfg.n_heads) for _ in range(cfg.llm_depth)]
    head = gaussian_init(rng, dl, cfg.vocab_size, INIT_STD)
    return Weights(patch_embed, cls_embed, enc_pos, encoder, proj_w1, np.zeros(dl), proj_w2, np.zeros(dl),
                   tok_embed, dec_pos, decoder, head)


def dumps(weights):
    tensors = weights.tensors()
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(buf):
    """Parse a weights file; any defect raises :class:`WeightsFormatError`."""
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightsFormatError(pos, f"truncated while reading {what}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise WeightsFormatError(0, "bad magic bytes")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise WeightsFormatError(4, f"unsupported version {version}")
    tensors = {}
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightsFormatError(start + 4, "name is not valid UTF-8") from exc
        (ndims,) = struct.unpack("<I", take(4, "ndims"))
        dims = struct.unpack(f"<{ndims}I", take(4 * ndims, "dims"))
        size = int(np.prod(dims, dtype=np.int64)) if ndims else 1
        payload = take(8 * size, f"payload of {name}")
        if name in tensors:
            raise WeightsFormatError(start, f"duplicate tensor {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if pos != len(buf):
        raise WeightsFormatError(pos, "trailing bytes after last tensor")
    try:
        return Weights.from_tensors(tensors)
    except KeyError as exc:
        raise WeightsFormatError(pos, f"missing tensor {exc.args[0]}") from exc
    except ValueError as exc:
        raise WeightsFormatError(pos, str(exc)) from exc


def save_weights(weights, path):
    data = dumps(weights)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".weights-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_weights(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
