"""Text-to-image attention inhibition inside the language decoder.

Each text token scores every image token by its own attention plus the
attention of the earlier text tokens it attends to. The lowest-scoring
fraction of image columns per text row is then masked out.
"""

import math
from dataclasses import dataclass

import numpy as np

from .attention import attention_sublayer, transformer_block
from .errors import ModeError, ShapeError
from .linalg import NEG_INF, as_matrix, lowest_rank_indices, matmul

FOCUS_MODES = ("focus", "tia", "sum", "discounted")
FOCUS_BASES = ("weights", "scores")


@dataclass(frozen=True)
class SequenceLayout:
    n_image: int
    n_text: int

    @property
    def size(self):
        return self.n_image + self.n_text


@dataclass
class InhibitionResult:
    gamma: float
    positions: list
    mask: np.ndarray
    focus: np.ndarray
    # head-averaged attention of the unmodified first pass
    pass1_record: object = None

    def counts(self):
        return [len(p) for p in self.positions]


def split_attention(a_s, layout):
    a_s = as_matrix(a_s, "a_s")
    n, size = layout.n_image, layout.size
    if a_s.shape != (size, size):
        raise ShapeError(f"attention {a_s.shape} does not match layout of {size} tokens")
    return a_s[n:, :n].copy(), a_s[n:, n:].copy()


def neighborhood_mask(a_t2t):
    """Strictly lower-triangular part: each text token's attention to earlier text tokens."""
    a_t2t = as_matrix(a_t2t, "a_t2t")
    if a_t2t.shape[0] != a_t2t.shape[1]:
        raise ShapeError("text-to-text block must be square")
    return np.tril(a_t2t, k=-1)


def neighborhood_focus(a_t2n, a_t2i):
    return matmul(a_t2n, a_t2i)


def focus_score(a_n2i, a_t2i):
    a_n2i = as_matrix(a_n2i, "a_n2i")
    a_t2i = as_matrix(a_t2i, "a_t2i")
    if a_n2i.shape != a_t2i.shape:
        raise ShapeError(f"{a_n2i.shape} vs {a_t2i.shape}")
    return a_n2i + a_t2i


def focus_score_variant(a_t2i, a_t2t, mode="focus", discount=0.5):
    """Text-to-image focus under one of the ablation modes.

    ``focus`` is own attention plus neighbour-weighted attention, ``tia`` is
    own attention only, ``sum`` and ``discounted`` accumulate the rows of
    earlier text tokens (the latter weighting distance ``d`` by ``discount**d``).
    """
    a_t2i = as_matrix(a_t2i, "a_t2i")
    if mode == "focus":
        return focus_score(neighborhood_focus(neighborhood_mask(a_t2t), a_t2i), a_t2i)
    if mode == "tia":
        return a_t2i.copy()
    if mode == "sum":
        out = np.zeros_like(a_t2i)
        running = np.zeros(a_t2i.shape[1])
        for j in range(a_t2i.shape[0]):
            running = running + a_t2i[j]
            out[j] = running
        return out
    if mode == "discounted":
        if not 0.0 < discount < 1.0:
            raise ValueError(f"discount {discount} outside (0, 1)")
        out = np.zeros_like(a_t2i)
        for j in range(a_t2i.shape[0]):
            acc = np.zeros(a_t2i.shape[1])
            for h in range(j + 1):
                acc = acc + discount ** (j - h) * a_t2i[h]
            out[j] = acc
        return out
    raise ModeError(f"unknown focus mode {mode!r}; expected one of {FOCUS_MODES}")


def inhibited_count(gamma, n_image):
    if n_image == 0:
        return 0
    return min(math.floor(gamma * n_image), n_image - 1)


def inhibition_positions(f, gamma):
    """Per text row, the ``min(floor(gamma * n), n - 1)`` lowest-focus image columns."""
    f = as_matrix(f, "focus")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma {gamma} outside [0, 1)")
    q = inhibited_count(gamma, f.shape[1])
    return [lowest_rank_indices(row, q) for row in f]


def apply_inhibition(mask, positions, layout):
    mask = as_matrix(mask, "mask")
    if mask.shape != (layout.size, layout.size):
        raise ShapeError(f"mask {mask.shape} does not match layout of {layout.size} tokens")
    out = mask.copy()
    for row, cols in enumerate(positions):
        out[layout.n_image + row, np.asarray(cols, dtype=int)] = NEG_INF
    return out


def linear_gamma_schedule(depth, gamma_max):
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if not 0.0 <= gamma_max < 1.0:
        raise ValueError(f"gamma_max {gamma_max} outside [0, 1)")
    if depth == 1:
        return [gamma_max]
    return [gamma_max * layer / (depth - 1) for layer in range(depth)]


def cmai_layer(x, params, base_mask, layout, gamma, mode="focus", focus_basis="weights",
               discount=0.5, literal_mode=False):
    """Decoder block with text-to-image inhibition.

    Pass 1 runs attention under ``base_mask`` to obtain the head-averaged
    attention. The focus score and inhibited columns come from that pass;
    pass 2 reruns the whole block under the augmented mask. Returns the
    pass-2 output, the inhibition result and the pass-2 attention record.
    """
    if focus_basis not in FOCUS_BASES:
        raise ModeError(f"unknown focus basis {focus_basis!r}")
    if mode not in FOCUS_MODES:
        raise ModeError(f"unknown focus mode {mode!r}")
    _, record1 = attention_sublayer(x, params, base_mask, literal_mode)
    basis = record1.averaged_weights if focus_basis == "weights" else record1.averaged_scores
    a_t2i, a_t2t = split_attention(basis, layout)
    f = focus_score_variant(a_t2i, a_t2t, mode, discount)
    positions = inhibition_positions(f, gamma)
    mask = apply_inhibition(base_mask, positions, layout)
    out, record2 = transformer_block(x, params, mask, literal_mode)
    result = InhibitionResult(gamma, positions, mask, f, record1)
    return out, result, record2
