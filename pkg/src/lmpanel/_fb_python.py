"""Pure numpy scaled forward-backward pass, vectorized across subjects.

Subjects are processed in lock-step by occasion position, so the Python
loop runs over the longest sequence length rather than over subjects.
"""

import numpy as np


def forward_backward(log_m, pi, trans, offsets):
    log_m = np.asarray(log_m, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    N, k = log_m.shape
    starts = offsets[:-1]
    lengths = np.diff(offsets)
    n = len(lengths)

    shift = log_m.max(axis=1)
    dead_row = ~np.isfinite(shift)
    with np.errstate(invalid="ignore"):
        m = np.exp(log_m - np.where(dead_row, 0.0, shift)[:, None])
    m[dead_row] = 0.0

    alpha = np.zeros((N, k))
    scale = np.ones(N)
    t_max = int(lengths.max()) if n else 0
    with np.errstate(divide="ignore", invalid="ignore"):
        for p in range(t_max):
            active = lengths > p
            rows = starts[active] + p
            if p == 0:
                a = m[rows] * pi[active]
            else:
                a = m[rows] * np.einsum("nc,ncd->nd", alpha[rows - 1], trans[rows])
            tot = a.sum(axis=1)
            scale[rows] = tot
            alpha[rows] = a / tot[:, None]

        log_scale = np.log(scale) + np.where(dead_row, 0.0, shift)
        bad = ~(scale > 0) | dead_row
        loglik = np.add.reduceat(log_scale, starts) if n else np.zeros(0)
        loglik[np.add.reduceat(bad.astype(np.int64), starts) > 0] = -np.inf

        back = np.ones((N, k))
        pair = np.zeros((N, k, k))
        for p in range(t_max - 1, 0, -1):
            active = lengths > p
            rows = starts[active] + p
            mb = m[rows] * back[rows] / scale[rows][:, None]
            pair[rows] = alpha[rows - 1][:, :, None] * trans[rows] * mb[:, None, :]
            back[rows - 1] = np.einsum("ncd,nd->nc", trans[rows], mb)

        post = alpha * back
        post /= post.sum(axis=1, keepdims=True)
    dead_subject = ~np.isfinite(loglik)
    if dead_subject.any():
        mask = np.repeat(dead_subject, lengths)
        post[mask] = 0.0
        pair[mask] = 0.0
    return loglik, post, pair
