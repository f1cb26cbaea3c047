"""Dense single-core transformer reference in float64.

Structured exactly like the distributed layer plans (pre-norm blocks, standard
multi-head attention with causal masking, ReLU feedforward, greedy LM head) so
distributed runs can be checked activation-by-activation and token-for-token.
"""

from __future__ import annotations

import numpy as np

RMS_EPS = 1e-5


def rmsnorm(x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    scale = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)
    return x / scale * gamma


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def split_heads(x: np.ndarray, heads: int) -> list[np.ndarray]:
    head_dim = x.shape[-1] // heads
    return [x[..., h * head_dim : (h + 1) * head_dim] for h in range(heads)]


def prefill_layer(x, w, heads):
    """Full-sequence pre-norm block; returns output and the layer's K/V rows."""
    h = rmsnorm(x, w.gamma1)
    q, k, v = h @ w.wq, h @ w.wk, h @ w.wv
    head_dim = q.shape[1] // heads
    outs = []
    ln = x.shape[0]
    mask = np.triu(np.ones((ln, ln), dtype=bool), k=1)
    for qh, kh, vh in zip(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)):
        scores = (qh @ kh.T) / np.sqrt(head_dim)
        scores = np.where(mask, -np.inf, scores)
        outs.append(softmax(scores) @ vh)
    x = x + np.concatenate(outs, axis=1) @ w.wo
    h2 = rmsnorm(x, w.gamma2)
    x = x + np.maximum(h2 @ w.win, 0.0) @ w.wout
    return x, k, v


def decode_layer(x, w, heads, k_cache, v_cache):
    """Single-token pre-norm block over the cached keys/values.

    Appends the new token's K/V to the caches and returns the block output.
    """
    h = rmsnorm(x, w.gamma1)
    q, k, v = h @ w.wq, h @ w.wk, h @ w.wv
    k_cache.append(np.asarray(k, dtype=np.float64).reshape(-1))
    v_cache.append(np.asarray(v, dtype=np.float64).reshape(-1))
    ks = np.stack(k_cache)
    vs = np.stack(v_cache)
    head_dim = q.shape[-1] // heads
    outs = []
    for qh, kh, vh in zip(split_heads(q.reshape(-1), heads),
                          split_heads(ks, heads), split_heads(vs, heads)):
        scores = (kh @ qh) / np.sqrt(head_dim)
        outs.append(softmax(scores) @ vh)
    x = x + np.concatenate(outs) @ w.wo
    h2 = rmsnorm(x, w.gamma2)
    x = x + np.maximum(h2 @ w.win, 0.0) @ w.wout
    return x


def generate(model, prompt: list[int], out_len: int):
    """Greedy generation; returns produced tokens and per-step final hiddens."""
    heads = model.shape.heads
    x = model.embed[np.asarray(prompt, dtype=int)].astype(np.float64)
    k_caches: list[list[np.ndarray]] = [[] for _ in model.layers]
    v_caches: list[list[np.ndarray]] = [[] for _ in model.layers]
    for li, w in enumerate(model.layers):
        x, k, v = prefill_layer(x, w, heads)
        for t in range(x.shape[0]):
            k_caches[li].append(np.asarray(k[t], dtype=np.float64))
            v_caches[li].append(np.asarray(v[t], dtype=np.float64))
    hidden = rmsnorm(x[-1], model.final_gamma)
    logits = hidden @ model.lm_head
    tokens = [int(np.argmax(logits))]
    hiddens = [hidden]
    while len(tokens) < out_len:
        x = model.embed[tokens[-1]].astype(np.float64)
        for li, w in enumerate(model.layers):
            x = decode_layer(x, w, heads, k_caches[li], v_caches[li])
        hidden = rmsnorm(x, model.final_gamma)
        logits = hidden @ model.lm_head
        tokens.append(int(np.argmax(logits)))
        hiddens.append(hidden)
    return tokens, hiddens
