"""Independent reference implementations used to freeze expected values.

Everything here is deliberately written the slow, obvious way (explicit
loops, textbook formulas, exact fractions, numerical quadrature) and shares
no code with the package under test.
"""

import math
from fractions import Fraction

import numpy as np


def loop_matmul(a, b):
    """Triple-nested-loop matrix product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def direct_softmax(row):
    """exp / normalize, computed straight from the definition."""
    row = [float(x) for x in row]
    exps = [math.exp(x) for x in row]
    total = sum(exps)
    return [e / total for e in exps]


def direct_layer_norm(row, gain, bias, eps=1e-5):
    """Mean/variance normalization from the definition (population variance)."""
    row = [float(x) for x in row]
    n = len(row)
    mean = sum(row) / n
    var = sum((x - mean) ** 2 for x in row) / n
    return [
        (x - mean) / math.sqrt(var + eps) * g + b
        for x, g, b in zip(row, gain, bias)
    ]


def loop_attention(q, k, v, mask=None):
    """Hand-looped scaled dot-product attention: logits -> softmax -> weighted sum."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lq, d = q.shape
    lk = k.shape[0]
    out = np.zeros((lq, v.shape[1]))
    for i in range(lq):
        logits = []
        for j in range(lk):
            if mask is not None and not mask[i][j]:
                logits.append(-math.inf)
            else:
                logits.append(sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d))
        top = max(logits)
        weights = [math.exp(x - top) for x in logits]
        total = sum(weights)
        weights = [w / total for w in weights]
        for j in range(lk):
            for t in range(v.shape[1]):
                out[i, t] += weights[j] * v[j, t]
    return out


def finite_difference_gradients(loss_fn, params, step=1e-3):
    """Central finite differences of a scalar function of named parameter tensors.

    ``loss_fn`` takes no arguments and reads the current parameter data;
    parameters are perturbed in place and restored.
    """
    grads = {}
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = loss_fn()
            flat[i] = original - step
            down = loss_fn()
            flat[i] = original
            grad[i] = (up - down) / (2.0 * step)
        grads[name] = grad.reshape(tensor.data.shape)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor) over all elements."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def adam_reference(x0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar Adam recurrence unrolled step by step from the update equations."""
    x = float(x0)
    m = 0.0
    v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(x)
    return trace


def count_and_clip_bleu(hypotheses, references, max_n=4, epsilon=Fraction(1, 10 ** 9)):
    """Corpus BLEU from first principles with exact Fraction arithmetic.

    Counts n-grams with plain dict loops, clips per pair against the single
    reference, aggregates corpus-level, applies the uniform geometric mean
    and the brevity penalty exp(1 - r/c) when c < r.
    """
    def grams(seq, n):
        counts = {}
        for i in range(len(seq) - n + 1):
            key = tuple(seq[i:i + n])
            counts[key] = counts.get(key, 0) + 1
        return counts

    clipped = [0] * max_n
    totals = [0] * max_n
    c_len = 0
    r_len = 0
    for hyp, ref in zip(hypotheses, references):
        c_len += len(hyp)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            h_counts = grams(hyp, n)
            r_counts = grams(ref, n)
            for gram, count in h_counts.items():
                clipped[n - 1] += min(count, r_counts.get(gram, 0))
                totals[n - 1] += count
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    scores = []
    for n in range(1, max_n + 1):
        log_sum = 0.0
        for order in range(n):
            numerator = clipped[order] if clipped[order] > 0 else epsilon
            denominator = totals[order] if totals[order] > 0 else 1
            log_sum += math.log(Fraction(numerator) / Fraction(denominator))
        scores.append(bp * math.exp(log_sum / n))
    return scores


def greedy_match_scores(hypothesis, reference, vectors):
    """Per-pair greedy-matching P/R with explicit loops over a token->vector map."""
    def cosine(a, b):
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        if na == 0 or nb == 0:
            return 0.0
        return sum(x * y for x, y in zip(a, b)) / (na * nb)

    p_terms = []
    for h in hypothesis:
        p_terms.append(max(cosine(vectors[h], vectors[r]) for r in reference))
    r_terms = []
    for r in reference:
        r_terms.append(max(cosine(vectors[r], vectors[h]) for h in hypothesis))
    return sum(p_terms) / len(p_terms), sum(r_terms) / len(r_terms)


def t_distribution_two_sided_p(t_value, df, grid=200001, span=400.0):
    """Two-sided p-value by Simpson integration of the t density."""
    def density(x):
        log_num = math.lgamma((df + 1) / 2.0)
        log_den = math.lgamma(df / 2.0) + 0.5 * math.log(df * math.pi)
        return math.exp(log_num - log_den) * (1 + x * x / df) ** (-(df + 1) / 2.0)

    a = abs(t_value)
    b = a + span
    xs = np.linspace(a, b, grid)
    ys = np.asarray([density(x) for x in xs])
    h = (b - a) / (grid - 1)
    tail = (h / 3.0) * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-2:2].sum())
    return 2.0 * tail


def paired_t_statistic(a, b):
    """Paired t statistic from the textbook formula."""
    diffs = [x - y for x, y in zip(a, b)]
    n = len(diffs)
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    return mean / math.sqrt(var / n)
