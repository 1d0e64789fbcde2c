"""Test-side oracles shared by several modules."""

import numpy as np

from regione.metrics import gaussian_window
from regione.models import _gelu, _layernorm, _noise_input, timestep_embedding
from regione.rikv import attention


def layer_qkv(weights, seq, t):
    """Per-layer (q, k, v, attention output) of a full plain forward."""
    x = np.concatenate([seq.prompt, _noise_input(weights, seq.noise, seq.instruction), seq.instruction])
    temb = timestep_embedding(t, weights.dim)
    out = []
    for layer in range(weights.n_layers):
        x = x + temb @ weights.temb[layer]
        h = _layernorm(x)
        q, k, v = h @ weights.wq[layer], h @ weights.wk[layer], h @ weights.wv[layer]
        a = attention(q, k, v, weights.n_heads)
        out.append((q, k, v, a))
        x = x + a @ weights.wo[layer]
        x = x + _gelu(_layernorm(x) @ weights.w1[layer]) @ weights.w2[layer]
    return out


def pe_rows(n_prompt, edited_index):
    return np.concatenate([np.arange(n_prompt), n_prompt + np.asarray(edited_index, dtype=np.int64)])


def brute_force_schedule(sched, gamma, delta, start):
    """Step indices below ``start`` at which criterion gating calls the model.

    From each anchor, every prefix of the following steps is scored from
    scratch; the skipped run is the longest prefix whose partial criteria
    all stay within ``delta``.
    """
    computes, anchor = [], start
    while anchor > 1:
        best = 0
        for k in range(1, anchor):
            prefix = range(anchor - 1, anchor - 1 - k, -1)
            partial = [
                1.0 - np.prod([(1.0 - (sched[m + 1] - sched[m])) * gamma[m] for m in prefix[: n + 1]])
                for n in range(k)
            ]
            if max(partial) <= delta:
                best = k
        nxt = anchor - 1 - best
        if nxt < 1:
            break
        computes.append(nxt)
        anchor = nxt
    return computes


def direct_ssim(a, b, k1=0.01, k2=0.03, L=1.0):
    g = gaussian_window(11, 1.5)
    w = np.outer(g, g)
    ma, mb = (w * a).sum(), (w * b).sum()
    va = (w * (a - ma) ** 2).sum()
    vb = (w * (b - mb) ** 2).sum()
    cab = (w * (a - ma) * (b - mb)).sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    return ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2))
