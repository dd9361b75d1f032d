"""Scalar pure-Python LSTM used as an independent oracle for the learner.

Written from the textbook equations with explicit loops, sharing no code
with ``swarmfl.learner``:

    i = sigma(x Wi + h Ui + bi)      f = sigma(x Wf + h Uf + bf)
    g = tanh(x Wg + h Ug + bg)       o = sigma(x Wo + h Uo + bo)
    c' = f c + i g                   h' = o tanh(c')
    y = h' D + d

The first ``input_horizon`` steps read the input sequence; each later step
reads the previous prediction.
"""

import math


def sigma(z):
    return 1.0 / (1.0 + math.exp(-z))


def split(w, I, H, O):
    k = 0

    def take(rows, cols):
        nonlocal k
        m = [[w[k + r * cols + c] for c in range(cols)] for r in range(rows)]
        k += rows * cols
        return m

    Wx = take(I, 4 * H)
    Wh = take(H, 4 * H)
    b = take(1, 4 * H)[0]
    D = take(H, O)
    d = take(1, O)[0]
    assert k == len(w)
    return Wx, Wh, b, D, d


def predict(w, inputs, I, H, O, target_horizon):
    Wx, Wh, b, D, d = split(w, I, H, O)
    h = [0.0] * H
    c = [0.0] * H
    outputs = []
    steps = len(inputs) + target_horizon - 1
    for s in range(steps):
        x = inputs[s] if s < len(inputs) else outputs[-1]
        z = []
        for col in range(4 * H):
            acc = b[col]
            for r in range(I):
                acc += x[r] * Wx[r][col]
            for r in range(H):
                acc += h[r] * Wh[r][col]
            z.append(acc)
        new_h, new_c = [], []
        for u in range(H):
            i_g = sigma(z[u])
            f_g = sigma(z[H + u])
            g_g = math.tanh(z[2 * H + u])
            o_g = sigma(z[3 * H + u])
            cu = f_g * c[u] + i_g * g_g
            new_c.append(cu)
            new_h.append(o_g * math.tanh(cu))
        h, c = new_h, new_c
        if s >= len(inputs) - 1:
            outputs.append([d[k] + sum(h[u] * D[u][k] for u in range(H)) for k in range(O)])
    return outputs
