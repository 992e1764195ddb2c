"""Brute-force reference implementations built from scalar Python loops.

Nothing here touches :mod:`cecnet.tensor`; arrays are converted to nested
lists of floats and every sum, product, norm and softmax is an explicit loop.
Tests compare the main path against these values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OracleError, ParameterError

EPS = 1e-12
VALUE_TOL = 1e-9
GRAD_TOL = 1e-4


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return [float(v) for v in x]
    return [_rows(r) for r in x]


def _dot(u, v):
    total = 0.0
    for a, b in zip(u, v):
        total += a * b
    return total


def _unit(u, eps=EPS):
    norm = math.sqrt(_dot(u, u))
    denom = norm if norm > eps else eps
    return [a / denom for a in u]


def _softmax(values, temperature=1.0):
    scaled = [v / temperature for v in values]
    top = max(scaled)
    exps = [math.exp(v - top) for v in scaled]
    total = 0.0
    for e in exps:
        total += e
    return [e / total for e in exps]


def _apply(weight, u):
    """weight (a x b) times vector u (b): the row-vector form u @ weight^T."""
    return [_dot(row, u) for row in weight]


def _combine(weights, rows):
    out = [0.0] * len(rows[0])
    for w, row in zip(weights, rows):
        for j, v in enumerate(row):
            out[j] += w * v
    return out


# -- patch cluster ------------------------------------------------------------

def _cluster_fixed(Q, P, t, cosine):
    src = [_unit(p) for p in P] if cosine else P
    out = []
    for q in Q:
        ref = _unit(q) if cosine else q
        affinity = _softmax([_dot(ref, p) for p in src], t)
        out.append(_combine(affinity, P))
    return out


def _cluster_metagcn(Q, P, t, W, activation):
    pooled = _cluster_fixed(Q, P, t, cosine=True)
    out = []
    for row in pooled:
        # row @ W: column j of W against the row
        mixed = [0.0] * len(W[0])
        for i, v in enumerate(row):
            for j, w in enumerate(W[i]):
                mixed[j] += v * w
        if activation == "relu":
            out.append([v if v > 0 else 0.0 for v in mixed])
        else:
            out.append([1.0 / (1.0 + math.exp(-v)) for v in mixed])
    return out


def _cluster_transformer(Q, P, t, Wq, Wk, Wv, w1, b1, w2, b2):
    keys = [_apply(Wk, p) for p in P]
    values = [_apply(Wv, p) for p in P]
    out = []
    for q in Q:
        query = _apply(Wq, q)
        affinity = _softmax([_dot(query, k) for k in keys], t)
        pooled = _combine(affinity, values)
        hidden = [max(0.0, h + b) for h, b in zip(_apply(w1, pooled), b1)]
        ffn = [y + b for y, b in zip(_apply(w2, hidden), b2)]
        out.append([p + f for p, f in zip(pooled, ffn)])
    return out


def _cluster(Q, P, mode):
    kind = mode.get("mode", "C")
    t = float(mode.get("temperature", 1.0))
    if kind == "M":
        return _cluster_fixed(Q, P, t, cosine=False)
    if kind == "C":
        return _cluster_fixed(Q, P, t, cosine=True)
    if kind == "G":
        return _cluster_metagcn(Q, P, t, _rows(mode["W"]), mode.get("activation", "relu"))
    if kind == "T":
        return _cluster_transformer(Q, P, t, *(_rows(mode[k]) for k in
                                               ("Wq", "Wk", "Wv", "w1", "b1", "w2", "b2")))
    raise ParameterError(f"unknown mode {kind!r}")


# -- element connection and derived blocks ------------------------------------

def _relation(Q, C):
    return [_dot(_unit(q), _unit(c)) for q, c in zip(Q, C)]


def _connect(Q, C):
    scale = _softmax(_relation(Q, C))
    return [[(s + 1.0) * v for v in q] for s, q in zip(scale, Q)]


def _cec(Q, P, mode):
    return _connect(Q, _cluster(Q, P, mode))


def _cecd(Qb, Pb, mode):
    return _relation(Qb, _cluster(Qb, Pb, mode))


def _pooled_cosine(Qb, Pb):
    m = len(Pb)
    pooled = [sum(Pb[i][j] for i in range(m)) / m for j in range(len(Pb[0]))]
    return [_dot(_unit(q), _unit(pooled)) for q in Qb]


def _metric_probs(Qbars, Pbars, mode):
    relations = []
    for Qb, Pb in zip(Qbars, Pbars):
        relations.append(_pooled_cosine(Qb, Pb) if mode is None else _cecd(Qb, Pb, mode))
    m = len(relations[0])
    out = []
    for n in range(m):
        scores = [r[n] for r in relations]
        exps = [math.exp(s) for s in scores]
        total = 0.0
        for e in exps:
            total += e
        out.append([e / total for e in exps])
    return out


def _pce(logits, labels):
    total = 0.0
    for query, label in zip(logits, labels):
        for patch in query:
            top = max(patch)
            lse = top + math.log(sum(math.exp(v - top) for v in patch))
            total -= patch[int(label)] - lse
    return total / len(logits)


def _nll(probs, labels):
    total = 0.0
    for query, label in zip(probs, labels):
        for patch in query:
            total -= math.log(max(patch[int(label)], EPS))
    return total / len(probs)


def _multitask(L_M, L_G, L_R, lam, alpha_G, alpha_R):
    total = 0.5 * L_M
    for loss, alpha in ((L_G, alpha_G), (L_R, alpha_R)):
        coef = lam + 1.0 / (2.0 * alpha * alpha)
        total += coef * loss + math.log(1.0 / coef)
    return total


def naive_eval(equation_id: str, inputs: dict) -> np.ndarray:
    """Reference value of one equation of the CEC family.

    ``inputs`` holds numpy arrays; cluster settings go under ``"mode"`` as a
    dict ``{"mode": "M"|"C"|"G"|"T", "temperature": t, ...weights}``.
    """
    eq = equation_id.lower()
    mode = inputs.get("mode", {"mode": "C"})
    get = lambda key: _rows(inputs[key])  # noqa: E731
    if eq == "eq1":
        Q, P = get("Q"), get("P")
        Pn = [_unit(p) for p in P]
        out = []
        for q in Q:
            qn = _unit(q)
            out.append(sum(_dot(p, qn) for p in Pn) / len(Pn))
        return np.array(out)
    if eq in ("eq2", "eq3", "eq4", "eq5", "eq6"):
        fixed = {"eq3": "M", "eq4": "C", "eq5": "G", "eq6": "T"}
        if eq in fixed:
            mode = dict(mode, mode=fixed[eq])
        return np.array(_cluster(get("Q"), get("P"), mode))
    if eq == "eq7":
        return np.array(_connect(get("Q"), get("Cp")))
    if eq == "eq8":
        return np.array(_cec(get("Q"), get("P"), mode))
    if eq == "eq9":
        Q, P = get("Q"), get("P")
        return np.array(_cec(Q, P, mode) + _cec(P, Q, mode))
    if eq == "eq10":
        Q = get("Q")
        return np.array(_cec(Q, Q, mode))
    if eq == "eq11":
        return np.array(_cecd(get("Qb"), get("Pb"), mode))
    if eq == "eq12":
        metric = inputs.get("mode")
        return np.array(_metric_probs(get("Qbars"), get("Pbars"), metric))
    if eq == "eq13":
        return np.array(_pce(get("logits"), list(inputs["labels"])))
    if eq == "eq14":
        return np.array(_nll(get("probs"), list(inputs["labels"])))
    if eq == "eq15":
        return np.array(_multitask(*(float(inputs[k]) for k in
                                     ("L_M", "L_G", "L_R", "lam", "alpha_G", "alpha_R"))))
    if eq == "eq16":
        return np.array(_cec(get("Q"), get("W_E"), mode))
    if eq == "eq17":
        W = get("W")
        return np.array(_relation(W, _cluster(W, get("Q"), mode)))
    raise ParameterError(f"unsupported equation id {equation_id!r}")


def naive_relation(Q, Cp) -> np.ndarray:
    return np.array(_relation(_rows(Q), _rows(Cp)))


# -- gradients -----------------------------------------------------------------

def fd_gradient(f, params: dict, h: float = 1e-5) -> dict:
    """Central finite differences of scalar ``f(params)`` for every coordinate."""
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {}
    for name, array in base.items():
        grad = np.zeros_like(array)
        flat = array.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(f(base))
            flat[i] = old - h
            down = float(f(base))
            flat[i] = old
            if not (math.isfinite(up) and math.isfinite(down)):
                raise OracleError(f"non-finite evaluation while differentiating {name}[{i}]")
            grad.reshape(-1)[i] = (up - down) / (2.0 * h)
        grads[name] = grad
    return grads


def relative_error(a, b) -> float:
    """||a - b|| / max(||a||, ||b||), with a tiny floor for all-zero gradients."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


@dataclass
class OracleReport:
    name: str
    max_abs_err: float
    max_rel_err: float
    tolerance: float
    kind: str = "value"

    @property
    def passed(self) -> bool:
        err = self.max_abs_err if self.kind == "value" else self.max_rel_err
        return err <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max_abs={self.max_abs_err:.3e} "
                f"max_rel={self.max_rel_err:.3e} tol={self.tolerance:g}")


def compare(name: str, main, reference, tolerance: float = VALUE_TOL) -> OracleReport:
    main, reference = np.asarray(main, dtype=np.float64), np.asarray(reference, dtype=np.float64)
    if main.shape != reference.shape:
        raise OracleError(f"{name}: shape {main.shape} differs from oracle {reference.shape}")
    diff = np.abs(main - reference)
    rel = diff / np.maximum(np.abs(reference), 1e-12)
    return OracleReport(name, float(diff.max(initial=0.0)), float(rel.max(initial=0.0)), tolerance)
