"""Line-oriented text formats for graphs, fitted parameters and masks.

Graph file (``#`` starts a comment)::

    mgcrf-graph 1
    dims <N> <T> <D> <K> <L>
    coord <i> <row> <col>            optional, one per node
    feat <t> <i> <x_1> ... <x_D>
    label <t> <i> <value|NA>
    pred <k> <t> <i> <value>         K unstructured prediction vectors
    edge <t|*> <l> <i> <j> <w>       undirected, i < j; * = same at every step

Parameter file::

    mgcrf-params 1
    K <K>
    L <L>
    log_alpha <v_1> ... <v_K>
    log_beta <v_1> ... <v_L>

Mask file lists the hidden (node, step) pairs::

    mgcrf-mask 1
    shape <T> <N>
    <node> <step>
"""

import numpy as np
import scipy.sparse as sp

from .graph import GcrfParams, LabelMask, TemporalAttributedGraph

MISSING = "NA"


class FormatError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _fmt(x):
    return repr(float(x))


def _lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def save_graph(path, graph, predictions=None):
    T, N, D = graph.features.shape
    r = np.zeros((0, T, N)) if predictions is None else np.asarray(predictions, dtype=float).reshape(-1, T, N)
    with open(path, "w") as fh:
        fh.write("mgcrf-graph 1\n")
        fh.write(f"dims {N} {T} {D} {r.shape[0]} {graph.n_layers}\n")
        if graph.coords is not None:
            for i, (row, col) in enumerate(graph.coords):
                fh.write(f"coord {i} {row} {col}\n")
        for t in range(T):
            for i in range(N):
                fh.write(f"feat {t} {i} " + " ".join(_fmt(v) for v in graph.features[t, i]) + "\n")
        for t in range(T):
            for i in range(N):
                v = graph.labels[t, i]
                fh.write(f"label {t} {i} {MISSING if np.isnan(v) else _fmt(v)}\n")
        for k in range(r.shape[0]):
            for t in range(T):
                for i in range(N):
                    fh.write(f"pred {k} {t} {i} {_fmt(r[k, t, i])}\n")
        for l, layer in enumerate(graph.similarity):
            static = all(m is layer[0] for m in layer)
            for t in ([None] if static else range(T)):
                S = sp.triu(layer[0 if t is None else t], k=1).tocoo()
                tag = "*" if t is None else str(t)
                for i, j, w in sorted(zip(S.row, S.col, S.data)):
                    fh.write(f"edge {tag} {l} {i} {j} {_fmt(w)}\n")


def load_graph(path, with_predictions=False):
    """Read a graph file; optionally also return the stored predictions (K, T, N)."""
    it = _lines(path)
    try:
        lineno, head = next(it)
    except StopIteration:
        raise FormatError(path, 0, "empty file")
    if head != ["mgcrf-graph", "1"]:
        raise FormatError(path, lineno, "expected header 'mgcrf-graph 1'")
    lineno, dims = next(it, (lineno, []))
    if len(dims) != 6 or dims[0] != "dims":
        raise FormatError(path, lineno, "expected 'dims N T D K L'")
    N, T, D, K, L = (int(v) for v in dims[1:])
    X = np.full((T, N, D), np.nan)
    y = np.full((T, N), np.nan)
    r = np.full((K, T, N), np.nan)
    coords = None
    edges = {}
    for lineno, tok in it:
        try:
            kind = tok[0]
            if kind == "coord":
                if coords is None:
                    coords = np.zeros((N, 2), dtype=int)
                coords[int(tok[1])] = int(tok[2]), int(tok[3])
            elif kind == "feat":
                if len(tok) != 3 + D:
                    raise ValueError(f"expected {D} feature values")
                X[int(tok[1]), int(tok[2])] = [float(v) for v in tok[3:]]
            elif kind == "label":
                y[int(tok[1]), int(tok[2])] = np.nan if tok[3] == MISSING else float(tok[3])
            elif kind == "pred":
                r[int(tok[1]), int(tok[2]), int(tok[3])] = float(tok[4])
            elif kind == "edge":
                key = (tok[1], int(tok[2]))
                if key[1] >= L:
                    raise ValueError("layer index out of range")
                edges.setdefault(key, []).append((int(tok[3]), int(tok[4]), float(tok[5])))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (ValueError, IndexError) as exc:
            raise FormatError(path, lineno, str(exc)) from None
    if np.isnan(X).any():
        raise FormatError(path, lineno, "some feature rows are missing")
    if np.isnan(r).any():
        raise FormatError(path, lineno, "some prediction rows are missing")

    def build(triples):
        if not triples:
            return sp.csr_matrix((N, N))
        i, j, w = map(np.asarray, zip(*triples))
        S = sp.coo_matrix((w, (i, j)), shape=(N, N))
        return (S + S.T).tocsr()

    similarity = []
    for l in range(L):
        if ("*", l) in edges or not any(k[1] == l for k in edges):
            similarity.append(build(edges.get(("*", l), [])))
        else:
            similarity.append(tuple(build(edges.get((str(t), l), [])) for t in range(T)))
    graph = TemporalAttributedGraph(X, y, tuple(similarity), coords)
    return (graph, r) if with_predictions else graph


def save_params(path, params):
    params = getattr(params, "params", params)
    with open(path, "w") as fh:
        fh.write("mgcrf-params 1\n")
        fh.write(f"K {params.n_predictors}\nL {params.n_layers}\n")
        fh.write("log_alpha " + " ".join(_fmt(v) for v in params.log_alpha) + "\n")
        fh.write("log_beta " + " ".join(_fmt(v) for v in params.log_beta) + "\n")


def load_params(path):
    rec = {}
    lines = list(_lines(path))
    if not lines or lines[0][1] != ["mgcrf-params", "1"]:
        raise FormatError(path, 1, "expected header 'mgcrf-params 1'")
    for lineno, tok in lines[1:]:
        rec[tok[0]] = (lineno, tok[1:])
    try:
        K = int(rec["K"][1][0])
        L = int(rec["L"][1][0])
        la = [float(v) for v in rec["log_alpha"][1]]
        lb = [float(v) for v in rec["log_beta"][1]]
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(path, 0, f"incomplete parameter file ({exc})") from None
    if len(la) != K or len(lb) != L:
        raise FormatError(path, rec["log_alpha"][0], "parameter counts disagree with K, L")
    return GcrfParams(la, lb)


def save_mask(path, mask):
    T, N = mask.shape
    with open(path, "w") as fh:
        fh.write(f"mgcrf-mask 1\nshape {T} {N}\n")
        steps, nodes = np.nonzero(~mask.observed)
        for t, i in sorted(zip(steps, nodes), key=lambda p: (p[1], p[0])):
            fh.write(f"{i} {t}\n")


def load_mask(path):
    lines = list(_lines(path))
    if len(lines) < 2 or lines[0][1] != ["mgcrf-mask", "1"] or lines[1][1][0] != "shape":
        raise FormatError(path, 1, "expected 'mgcrf-mask 1' and 'shape T N'")
    T, N = int(lines[1][1][1]), int(lines[1][1][2])
    observed = np.ones((T, N), dtype=bool)
    for lineno, tok in lines[2:]:
        try:
            observed[int(tok[1]), int(tok[0])] = False
        except (ValueError, IndexError) as exc:
            raise FormatError(path, lineno, str(exc)) from None
    return LabelMask(observed)


def save_provenance(path, **fields):
    with open(path, "w") as fh:
        for key, value in fields.items():
            fh.write(f"{key} = {value}\n")
