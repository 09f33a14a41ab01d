"""Brute-force reference implementations and the agreement suites built on them.

Everything here is written with plain Python loops over lists and shares no
code with the production modules. Duplication is on purpose.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import attention, cmai, vmtc
from .linalg import Rng

MASKED = -1e30


def _mm(a, b):
    rows, inner, cols = len(a), len(b), len(b[0]) if b else 0
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            s = 0.0
            for k in range(inner):
                s += a[i][k] * b[k][j]
            out[i][j] = s
    return out


def naive_matmul(a, b):
    return np.array(_mm(np.asarray(a).tolist(), np.asarray(b).tolist())).reshape(len(a), np.shape(b)[1])


def _softmax_row(scores, mask_row):
    live = [s + m for s, m in zip(scores, mask_row) if m != MASKED]
    top = max(live)
    exps = [0.0 if m == MASKED else math.exp(s + m - top) for s, m in zip(scores, mask_row)]
    total = sum(exps)
    return [e / total for e in exps]


def naive_attention(x, params, mask, return_weights=False):
    """Per-head loops of ``softmax(Q K^T / sqrt(d_head) + M) V``, then the output projection."""
    x = np.asarray(x).tolist()
    mask = np.asarray(mask).tolist()
    seq = len(x)
    d = len(params.w_q)
    heads = params.n_heads
    dh = d // heads
    q = _mm(x, np.asarray(params.w_q).tolist())
    k = _mm(x, np.asarray(params.w_k).tolist())
    v = _mm(x, np.asarray(params.w_v).tolist())
    concat = [[0.0] * d for _ in range(seq)]
    per_head = []
    for h in range(heads):
        lo = h * dh
        w_h = []
        for i in range(seq):
            scores = []
            for j in range(seq):
                s = 0.0
                for t in range(dh):
                    s += q[i][lo + t] * k[j][lo + t]
                scores.append(s / math.sqrt(dh))
            w_h.append(_softmax_row(scores, mask[i]))
        per_head.append(w_h)
        for i in range(seq):
            for t in range(dh):
                s = 0.0
                for j in range(seq):
                    s += w_h[i][j] * v[j][lo + t]
                concat[i][lo + t] = s
    out = np.array(_mm(concat, np.asarray(params.w_o).tolist()))
    if return_weights:
        avg = [[sum(per_head[h][i][j] for h in range(heads)) / heads for j in range(seq)] for i in range(seq)]
        return out, np.array(avg)
    return out


def naive_layer_norm(x, scale, shift, eps=1e-5):
    out = []
    for row in np.asarray(x).tolist():
        n = len(row)
        mu = sum(row) / n
        var = sum((r - mu) ** 2 for r in row) / n
        out.append([(r - mu) / math.sqrt(var + eps) * scale[i] + shift[i] for i, r in enumerate(row)])
    return np.array(out)


def naive_gelu(x):
    return np.array([[v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0))) for v in row] for row in np.asarray(x).tolist()])


def naive_block(x, params, mask, literal_mode=False):
    """Step-by-step transcription of ``z' = MSA(z) + z``, ``z = MLP(z') + z'``."""
    x = np.asarray(x, dtype=float)
    h = x if literal_mode else naive_layer_norm(x, params.ln1_scale, params.ln1_shift)
    z_prime = naive_attention(h, params.attention, mask) + x
    h2 = z_prime if literal_mode else naive_layer_norm(z_prime, params.ln2_scale, params.ln2_shift)
    mlp = naive_matmul(naive_gelu(naive_matmul(h2, params.mlp_in)), params.mlp_out)
    return mlp + z_prime


def naive_n2i(a_t2n, a_t2i):
    """``A_n2i[j][k] = sum_h A_t2n[j][h] * A_t2i[h][k]`` as a literal triple loop."""
    a_t2n = np.asarray(a_t2n).tolist()
    a_t2i = np.asarray(a_t2i).tolist()
    m = len(a_t2n)
    n = len(a_t2i[0]) if a_t2i else 0
    out = [[0.0] * n for _ in range(m)]
    for j in range(m):
        for k in range(n):
            for h in range(m):
                out[j][k] += a_t2n[j][h] * a_t2i[h][k]
    return np.array(out).reshape(m, n)


def naive_quantile_select(row, gamma):
    n = len(row)
    q = min(int(math.floor(gamma * n)), n - 1) if n else 0
    pairs = sorted((float(v), i) for i, v in enumerate(row))
    return {i for _, i in pairs[:q]}


def _unit(v):
    norm = math.sqrt(sum(t * t for t in v))
    return [t / norm for t in v]


def partition_objective(tokens, labels):
    """Sum of ``1 - cos(token, normalized mean of its group)`` over unit-normalized tokens."""
    units = [_unit(t) for t in np.asarray(tokens).tolist()]
    total = 0.0
    for g in set(labels):
        members = [units[i] for i, lab in enumerate(labels) if lab == g]
        centre = _unit([sum(col) for col in zip(*members)])
        for u in members:
            total += 1.0 - sum(a * b for a, b in zip(u, centre))
    return total


def exhaustive_kmeans(tokens, c):
    """Globally optimal partition into at most ``c`` groups, by enumeration (r <= 10)."""
    units = [_unit(t) for t in np.asarray(tokens).tolist()]
    r = len(units)
    if r > 10:
        raise ValueError("exhaustive search limited to 10 tokens")
    # group cost depends only on the member set: |S| - ||sum of members||
    cost = {}
    for m in range(1, 1 << r):
        members = [units[i] for i in range(r) if m >> i & 1]
        total = [sum(col) for col in zip(*members)]
        cost[m] = len(members) - math.sqrt(sum(t * t for t in total))

    best = [math.inf, None]
    labels = [0] * r

    def walk(i, groups):
        if i == r:
            masks = [0] * groups
            for idx, lab in enumerate(labels):
                masks[lab] |= 1 << idx
            value = sum(cost[mk] for mk in masks)
            if value < best[0]:
                best[0], best[1] = value, list(labels)
            return
        for g in range(min(groups + 1, c)):
            labels[i] = g
            walk(i + 1, max(groups, g + 1))

    walk(0, 0)
    return best[1], best[0]


def naive_merge(tokens, clusters, ips):
    """One row per cluster: ``sum_j ips[j] * token_j`` with members in ascending order."""
    tokens = np.asarray(tokens).tolist()
    out = []
    for members in clusters:
        acc = [0.0] * len(tokens[0])
        for j in sorted(members):
            for t in range(len(acc)):
                acc[t] += ips[j] * tokens[j][t]
        out.append(acc)
    return np.array(out)


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    max_deviation: float = 0.0
    seconds: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return self.failures == 0


def _random_params(rng, d, heads, scale=0.5):
    return attention.AttentionParams(*(rng.normal(0, scale, (d, d)) for _ in range(4)), heads)


def suite_attention(cases=50, seed=0, tol=1e-9):
    res = SuiteResult("attention")
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        heads = int(rng.integers(1, 5))
        d = heads * int(rng.integers(1, 16 // heads + 1))
        seq = int(rng.integers(1, 9))
        params = _random_params(rng, d, heads)
        x = rng.normal(size=(seq, d))
        mask = attention.causal_mask(seq) if rng.random() < 0.5 else np.zeros((seq, seq))
        got, _ = attention.multi_head_self_attention(x, params, mask)
        dev = float(np.max(np.abs(got - naive_attention(x, params, mask))))
        res.cases += 1
        res.max_deviation = max(res.max_deviation, dev)
        res.failures += dev > tol
    return res


def suite_n2i(cases=50, seed=1, tol=1e-12):
    res = SuiteResult("n2i")
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        m, n = int(rng.integers(1, 10)), int(rng.integers(1, 14))
        a_t2n = np.tril(rng.random((m, m)), k=-1)
        a_t2i = rng.random((m, n))
        dev = float(np.max(np.abs(cmai.neighborhood_focus(a_t2n, a_t2i) - naive_n2i(a_t2n, a_t2i))))
        res.cases += 1
        res.max_deviation = max(res.max_deviation, dev)
        res.failures += dev > tol
    return res


def suite_quantile(cases=100, seed=2):
    res = SuiteResult("quantile")
    rng = np.random.default_rng(seed)
    for i in range(cases):
        n = int(rng.integers(1, 20))
        row = rng.random(n)
        if i % 3 == 0:
            row = np.round(row, 1)  # force ties
        gamma = float(rng.choice([0.0, 0.2, 0.4, 0.5, 0.6, 0.9, rng.random() * 0.999]))
        got = cmai.inhibition_positions(row[None, :], gamma)[0]
        res.cases += 1
        res.failures += set(got.tolist()) != naive_quantile_select(row, gamma)
    return res


def kmeans_instance(rng):
    c = int(rng.integers(2, 4))
    r = int(rng.integers(c + 1, 11))
    d = int(rng.integers(2, 6))
    centres = rng.normal(size=(c, d))
    tokens = centres[rng.integers(0, c, r)] + 0.5 * rng.normal(size=(r, d))
    return tokens, c


def suite_kmeans(cases=50, seed=3, quality=0.05, min_fraction=0.9):
    """Objective within ``quality`` of the optimum on at least ``min_fraction`` of cases,
    and non-increasing objective on every case."""
    res = SuiteResult("kmeans")
    rng = np.random.default_rng(seed)
    good = 0
    for case in range(cases):
        tokens, c = kmeans_instance(rng)
        got = vmtc.spherical_kmeans(tokens, c, Rng(case))
        obj = partition_objective(tokens, got.labels.tolist())
        _, best = exhaustive_kmeans(tokens, c)
        res.cases += 1
        res.max_deviation = max(res.max_deviation, obj - best)
        hist = got.objective_history
        monotone = all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
        if obj < best - 1e-9 or not monotone:
            res.failures += 1
        if obj <= best * (1.0 + quality) + 1e-12:
            good += 1
    res.notes.append(f"within {quality:.0%} of optimum: {good}/{cases}")
    if good < min_fraction * cases:
        res.failures += 1
    return res


def suite_merge(cases=50, seed=4, tol=1e-12):
    res = SuiteResult("merge")
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        n, d = int(rng.integers(2, 21)), int(rng.integers(1, 8))
        tokens = rng.normal(size=(n, d))
        ips = rng.random(n)
        redundant = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        s = int(rng.integers(1, len(redundant) + 1))
        labels = np.concatenate([np.arange(s), rng.integers(0, s, len(redundant) - s)])
        rng.shuffle(labels)
        assignment = vmtc.ClusterAssignment(s, labels, np.zeros((s, d)))
        got = vmtc.merge_clusters(tokens, redundant, assignment, ips)
        clusters = [redundant[labels == cid].tolist() for cid in range(s)]
        dev = float(np.max(np.abs(got - naive_merge(tokens, clusters, ips))))
        res.cases += 1
        res.max_deviation = max(res.max_deviation, dev)
        res.failures += dev > tol
    return res


SUITES = {
    "attention": suite_attention,
    "n2i": suite_n2i,
    "quantile": suite_quantile,
    "kmeans": suite_kmeans,
    "merge": suite_merge,
}


def run_suites(name):
    names = list(SUITES) if name == "all" else [name]
    results = []
    for n in names:
        start = time.perf_counter()
        r = SUITES[n]()
        r.seconds = time.perf_counter() - start
        results.append(r)
    return results


def format_table(results):
    lines = [f"{'suite':<10} {'cases':>5} {'fail':>4} {'max_dev':>10} {'secs':>6}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        extra = ("  " + "; ".join(r.notes)) if r.notes else ""
        lines.append(f"{r.name:<10} {r.cases:>5} {r.failures:>4} {r.max_deviation:>10.3g} {r.seconds:>6.2f}  {status}{extra}")
    return "\n".join(lines)

