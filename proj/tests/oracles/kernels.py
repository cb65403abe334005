"""Extended-precision references for log-softmax and a scalar Adam trace."""

import mpmath as mp

mp.mp.dps = 50


def log_softmax(values):
    values = [mp.mpf(v) for v in values]
    norm = mp.log(mp.fsum(mp.e ** v for v in values))
    return [v - norm for v in values]


def adam_trace(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    p, m, v = mp.mpf(p), mp.mpf(0), mp.mpf(0)
    out = []
    for t, g in enumerate(grads, start=1):
        g = mp.mpf(g)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - mp.mpf(b1) ** t)
        vhat = v / (1 - mp.mpf(b2) ** t)
        p = p - lr * mhat / (mp.sqrt(vhat) + eps)
        out.append(p)
    return out


if __name__ == "__main__":
    vec = [0.3, -1.7, 2.25, 0.0, 5.5, -0.125, 1.0]
    print("log_softmax", ", ".join(mp.nstr(x, 17) for x in log_softmax(vec)))
    grads = [0.5, -1.2, 0.3, 2.0, -0.7]
    print("adam", ", ".join(mp.nstr(x, 17) for x in adam_trace(1.0, grads, mp.mpf("0.01"))))
