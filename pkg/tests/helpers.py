"""Shared test utilities: dense views of models and hypergraph builders."""

import numpy as np

from lrinfer.hypergraph import DenseScore, Hyperedge, Hypergraph
from lrinfer.numeric import ScaledVector


def hmm_dense_tables(model):
    return model.start, model.transition.materialize(), model.emission.probs


def pcfg_dense_tables(model):
    return (
        model.start,
        model.rules_nn.materialize(),
        model.rules_np.materialize(),
        model.rules_pn.materialize(),
        model.rules_pp.materialize(),
        model.terminal,
    )


def hmm_chain_hypergraph(model, tokens):
    """HMM unrolled as a hypergraph: node 0 is a one-label super-root,
    nodes 1..T carry states, node T+1 is a one-label leaf."""
    start, trans, emis = hmm_dense_tables(model)
    tokens = list(tokens)
    T, L = len(tokens), start.size
    label_sizes = [1] + [L] * T + [1]
    edges = [Hyperedge(T, (T + 1,), DenseScore(emis[:, tokens[-1]].reshape(L, 1)))]
    for t in range(T - 1, 0, -1):
        scores = emis[:, tokens[t - 1]][:, None] * trans
        edges.append(Hyperedge(t, (t + 1,), DenseScore(scores)))
    first = start * emis[:, tokens[0]] if T == 1 else start
    edges.append(Hyperedge(0, (1,), DenseScore(first.reshape(1, L))))
    return Hypergraph(label_sizes, root=0, edges=edges)


def pcfg_span_hypergraph(model, tokens):
    """PCFG chart as a hypergraph with per-node label sizes.

    Width-one spans are preterminal leaves initialized from the terminal
    table; a one-label super-root applies the start distribution.
    Returns (graph, leaf_init).
    """
    tokens = list(tokens)
    T = len(tokens)
    node_of = {}
    label_sizes = []
    for width in range(1, T + 1):
        for i in range(T - width + 1):
            node_of[(i, i + width)] = len(label_sizes)
            label_sizes.append(model.n_preterminals if width == 1 else model.n_nonterminals)
    super_root = len(label_sizes)
    label_sizes.append(1)

    edges = []
    for width in range(2, T + 1):
        for i in range(T - width + 1):
            k = i + width
            for j in range(i + 1, k):
                if j - i == 1 and k - j == 1:
                    block = model.rules_pp
                elif j - i == 1:
                    block = model.rules_pn
                elif k - j == 1:
                    block = model.rules_np
                else:
                    block = model.rules_nn
                edges.append(Hyperedge(node_of[(i, k)], (node_of[(i, j)], node_of[(j, k)]), block))
    edges.append(
        Hyperedge(super_root, (node_of[(0, T)],), DenseScore(model.start.reshape(1, -1)))
    )
    leaf_init = {
        node_of[(i, i + 1)]: ScaledVector(model.terminal[:, tokens[i]].copy())
        for i in range(T)
    }
    return Hypergraph(label_sizes, root=super_root, edges=edges), leaf_init
