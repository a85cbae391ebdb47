"""Brute-force reference executor of the jump recursion, pure Python.

Written straight from the algorithm's pseudocode, without importing the
package, so that agreement with ``build`` is evidence rather than tautology.
Inputs are plain lists: ``X`` (n rows of length d, orthonormal), ``W0`` (m
rows of length d), ``a0`` (m initial output weights) and ``y`` (n labels).
"""
import math


def _sign(v):
    return (v > 0) - (v < 0)


def _dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def run_recursion(X, y, W0, a0):
    n, m, d = len(X), len(W0), len(X[0])
    S = [{i for i in range(n) if _dot(W0[j], X[i]) > 0 and _sign(y[i]) == _sign(a0[j])}
         for j in range(m)]
    s = [_sign(a) for a in a0]
    t = [0.0]
    N_U = [set(range(m))]
    S_U = [set(range(n))]
    ell = [[-1.0] * m]
    D = []
    j_stars = []
    p = 0
    prev_D = [[0.0] * d for _ in range(m)]
    while any(S_U[p] & S[j] for j in N_U[p]):
        Dp = []
        for j in range(m):
            if j in N_U[p]:
                vec = [0.0] * d
                for i in sorted(S_U[p] & S[j]):
                    for c in range(d):
                        vec[c] += y[i] * X[i][c] / n
                Dp.append(vec)
            else:
                Dp.append(list(prev_D[j]))
        D.append(Dp)
        norms = [math.sqrt(_dot(v, v)) for v in Dp]
        best, j_star = -math.inf, None
        for j in sorted(N_U[p]):
            # a neuron with nothing left to fit can never be chosen
            r = ell[p][j] / norms[j] if norms[j] > 0 else -math.inf
            if r > best:
                best, j_star = r, j
        t_next = t[p] - ell[p][j_star] / norms[j_star]
        ell.append([min(0.0, ell[p][j] + (t_next - t[p]) * norms[j]) for j in range(m)])
        t.append(t_next)
        N_U.append(N_U[p] - {j_star})
        S_U.append(S_U[p] - S[j_star])
        j_stars.append(j_star)
        prev_D = Dp
        p += 1
    # terminal stage: unfitted neurons keep the (empty-overlap) definition
    Dp = []
    for j in range(m):
        if j in N_U[p]:
            vec = [0.0] * d
            for i in sorted(S_U[p] & S[j]):
                for c in range(d):
                    vec[c] += y[i] * X[i][c] / n
            Dp.append(vec)
        else:
            Dp.append(list(prev_D[j]))
    D.append(Dp)
    return {"S": S, "s": s, "t": t, "N_U": N_U, "S_U": S_U, "ell": ell, "D": D,
            "j_stars": j_stars, "p": p, "n": n, "m": m}


def limit_params(res, k):
    """``(a, W)`` of the limit process on ``[t_k, t_{k+1})`` as nested lists."""
    n, m = res["n"], res["m"]
    a, W = [], []
    for j in range(m):
        if j in res["N_U"][k]:
            a.append(0.0)
            W.append([0.0] * len(res["D"][k][j]))
            continue
        Dj = res["D"][k][j]
        nD = [n * v for v in Dj]
        root = math.sqrt(math.sqrt(_dot(nD, nD)))
        a.append(res["s"][j] * root)
        W.append([res["s"][j] * v / root for v in nD])
    return a, W


def predicted_sq_norm(res):
    a, W = limit_params(res, res["p"])
    return 0.5 * (sum(v * v for v in a) + sum(_dot(w, w) for w in W))
