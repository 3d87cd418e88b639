"""Independent reference implementations used as test oracles.

Plain Python lists and loops only, so they share no code path with the numpy
implementation under test.
"""

import math

QUARTER = math.pi / 2


def wrap(a):
    return (a + math.pi / 4) % QUARTER - math.pi / 4


def box_state(corners):
    (u0, v0), (u1, v1), (u2, v2), (u3, v3) = corners

    def dist(ax, ay, bx, by):
        return math.sqrt((ax - bx) ** 2 + (ay - by) ** 2)

    return (
        (u0 + u1 + u2 + u3) / 4,
        (v0 + v1 + v2 + v3) / 4,
        wrap(math.atan2(v1 - v0, u1 - u0)),
        0.5 * dist(u0, v0, u1, v1) + 0.5 * dist(u2, v2, u3, v3),
        0.5 * dist(u0, v0, u2, v2) + 0.5 * dist(u1, v1, u3, v3),
    )


def zeros(n, m):
    return [[0.0] * m for _ in range(n)]


def eye(n):
    out = zeros(n, n)
    for i in range(n):
        out[i][i] = 1.0
    return out


def matmul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    out = zeros(n, m)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def transpose(a):
    return [list(r) for r in zip(*a)]


def add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def sub(a, b):
    return [[x - y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def inverse(a):
    """Gauss-Jordan with partial pivoting."""
    n = len(a)
    m = [list(r) + e for r, e in zip(a, eye(n))]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(m[r][c]))
        m[c], m[p] = m[p], m[c]
        piv = m[c][c]
        m[c] = [x / piv for x in m[c]]
        for r in range(n):
            if r != c:
                f = m[r][c]
                m[r] = [x - f * y for x, y in zip(m[r], m[c])]
    return [r[n:] for r in m]


def cv_model(dt, psd, n=5):
    """Constant-velocity transition and white-acceleration noise, 2n states."""
    F = eye(2 * n)
    Q = zeros(2 * n, 2 * n)
    for i in range(n):
        F[i][i + n] = dt
        Q[i][i] = psd[i] * dt**3 / 3
        Q[i][i + n] = Q[i + n][i] = psd[i] * dt**2 / 2
        Q[i + n][i + n] = psd[i] * dt
    return F, Q


def kf_predict(x, P, dt, psd):
    F, Q = cv_model(dt, psd)
    x = [sum(F[i][j] * x[j] for j in range(len(x))) for i in range(len(x))]
    x[2] = wrap(x[2])
    P = add(matmul(matmul(F, P), transpose(F)), Q)
    return x, P


def kf_update(x, P, z, r_diag):
    n = len(x)
    H = zeros(5, n)
    for i in range(5):
        H[i][i] = 1.0
    R = zeros(5, 5)
    for i in range(5):
        R[i][i] = r_diag[i]
    y = [z[i] - x[i] for i in range(5)]
    y[2] = wrap(z[2] - x[2])
    S = add(matmul(matmul(H, P), transpose(H)), R)
    K = matmul(matmul(P, transpose(H)), inverse(S))
    x = [x[i] + sum(K[i][j] * y[j] for j in range(5)) for i in range(n)]
    x[2] = wrap(x[2])
    A = sub(eye(n), matmul(K, H))
    P = add(matmul(matmul(A, P), transpose(A)), matmul(matmul(K, R), transpose(K)))
    return x, P
