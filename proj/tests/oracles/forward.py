"""Straight-line float64 reimplementation of the encoder and scoring path.

Every parameter is filled by a closed-form pattern, so the C++ test can
rebuild the same model without sharing any code with this script:

    value(name, r, c) = 0.5 * sin(0.7 r + 1.3 c + 0.1 h(name) + 0.05),
    h(name) = sum of the byte values of name, mod 101.

Layer-norm gains use 1 + value(...). Tiny config: V=8, k=4, one layer, one
head, FFN 6, max_len 10, m=2 relation tokens, untied MLM weights.
"""

import math

import numpy as np

V, K, FFN, MAX_LEN, M = 8, 4, 6, 10, 2
PAD, UNK, CLS, SEP = 0, 1, 2, 3


def h(name):
    return sum(name.encode()) % 101


def param(name, rows, cols):
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    value = 0.5 * np.sin(0.7 * r + 1.3 * c + 0.1 * h(name) + 0.05)
    if name.endswith(".gain"):
        value = 1.0 + value
    return value


def linear(x, name, n_in, n_out):
    return x @ param(name + ".weight", n_in, n_out) + param(name + ".bias", 1, n_out)


def gelu(x):
    return 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))


def mlp(x, name, n_in, hidden, n_out):
    return linear(gelu(linear(x, name + ".dense", n_in, hidden)), name + ".out", hidden, n_out)


def layer_norm(x, name):
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + 1e-5) * param(name + ".gain", 1, K) + param(name + ".bias", 1, K)


BANK = {"qq": "relation.qq", "qa": "relation.qa", "qi": "relation.qi"}


def embed(elements, qi=None):
    word = param("embeddings.word", V, K)
    pos = param("embeddings.position", MAX_LEN, K)
    rows = []
    for i, e in enumerate(elements):
        if isinstance(e, tuple):
            kind, slot = e
            bank = qi if (kind == "qi" and qi is not None) else param(BANK[kind], M, K)
            rows.append(bank[slot] + pos[i])
        else:
            rows.append(word[e] + pos[i])
    return np.array(rows)


def encode(x, pad):
    n = x.shape[0]
    q = linear(x, "encoder.0.query", K, K)
    k = linear(x, "encoder.0.key", K, K)
    v = linear(x, "encoder.0.value", K, K)
    scores = q @ k.T / math.sqrt(K)
    probs = np.zeros((n, n))
    for i in range(n):
        allowed = [j for j in range(n) if not pad[j]]
        s = np.array([scores[i, j] for j in allowed])
        e = np.exp(s - s.max())
        for j, p in zip(allowed, e / e.sum()):
            probs[i, j] = p
    attn = linear(probs @ v, "encoder.0.attn_out", K, K)
    h1 = layer_norm(x + attn, "encoder.0.ln1")
    ffn = linear(gelu(linear(h1, "encoder.0.ffn_in", K, FFN)), "encoder.0.ffn_out", FFN, K)
    return layer_norm(h1 + ffn, "encoder.0.ln2")


def pooled(elements, qi=None):
    return encode(embed(elements, qi), [False] * len(elements))[0:1]


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def intent_elements(query, name):
    return [CLS] + query + [("qi", j) for j in range(M)] + name + [SEP]


def fmt(values):
    return ", ".join(f"{v:.17g}" for v in np.ravel(values))


def main():
    # Relation prompt with padding: [CLS 5 6 Zqq0 Zqq1 7 SEP PAD PAD PAD].
    prompt = [CLS, 5, 6, ("qq", 0), ("qq", 1), 7, SEP, PAD, PAD, PAD]
    pad = [False] * 7 + [True] * 3
    hidden = encode(embed(prompt), pad)
    print("encoder hidden (10x4):", fmt(hidden))

    # Adapt head on the pooled vector of a bare text prompt.
    text = pooled([CLS, 5, 6, SEP])
    lam = softmax(mlp(text, "adapt_head", K, K, 2)[0])
    print("adapt weights:", fmt(lam))

    # Convex combination of the two banks.
    qq, qa = param("relation.qq", M, K), param("relation.qa", M, K)
    print("qi(0.3, 0.7):", fmt(0.3 * qq + 0.7 * qa))

    # Generator toy, k=2: hidden layer sums the two bank rows, output is identity.
    bank_qq = np.array([[0.5, -1.0], [2.0, 0.0]])
    bank_qa = np.array([[0.25, 0.5], [-1.0, 1.0]])
    print("mlp generator toy:", fmt(gelu(bank_qq + bank_qa)))

    # Intent scoring, C=3, query [5, 6].
    query = [5, 6]
    names = [[7], [5, 7], [6]]
    fresh = [mlp(pooled(intent_elements(query, n)), "class_head", K, K, 1)[0, 0] for n in names]
    print("fresh logits:", fmt(fresh))
    print("fresh probabilities:", fmt(softmax(np.array(fresh))))
    qi = lam[0] * qq + lam[1] * qa
    adapt = [mlp(pooled(intent_elements(query, n), qi), "class_head", K, K, 1)[0, 0] for n in names]
    print("queryadapt logits:", fmt(adapt))

    # Masked-token loss over three positions, V=11.
    logits = np.array([[math.sin(1.1 * r + 0.37 * c) * 2.0 for c in range(11)] for r in range(3)])
    targets = [4, 0, 10]
    nll = [-(logits[r, t] - np.log(np.exp(logits[r]).sum())) for r, t in enumerate(targets)]
    print("mlm loss:", f"{np.mean(nll):.17g}")


if __name__ == "__main__":
    main()
