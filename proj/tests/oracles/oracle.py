"""Independent reference values for the C++ test suite.

Written without reference to the C++ sources: plain numpy / fractions
implementations of the standard carpet, its crosswire network, the
augmented exit-time walk, Philox4x32-10 and the Hilbert pencil. The printed
values are frozen into tests/*.cpp.

    python3 tests/oracles/oracle.py
"""

from fractions import Fraction

import numpy as np
import scipy.linalg


def sc_cells(n):
    side = 3**n
    out = []
    for x in range(side):
        for y in range(side):
            a, b, ok = x, y, True
            for _ in range(n):
                if a % 3 == 1 and b % 3 == 1:
                    ok = False
                a //= 3
                b //= 3
            if ok:
                out.append((x, y))
    return sorted(out)


def crosswire_resistance(n, exact=False):
    side = 3**n
    cells = sc_cells(n)
    corners = sorted({(x + dx, y + dy) for x, y in cells for dx in (0, 1) for dy in (0, 1)})
    index = {c: i for i, c in enumerate(corners)}
    nv = len(corners) + len(cells)
    zero = Fraction(0) if exact else 0.0
    L = [[zero] * nv for _ in range(nv)]
    for k, (x, y) in enumerate(cells):
        c = len(corners) + k
        for dx in (0, 1):
            for dy in (0, 1):
                v = index[(x + dx, y + dy)]
                L[c][c] += 1
                L[v][v] += 1
                L[c][v] -= 1
                L[v][c] -= 1
    a0 = [index[c] for c in corners if c[0] == 0]
    a1 = [index[c] for c in corners if c[0] == side]
    fixed = set(a0) | set(a1)
    free = [i for i in range(nv) if i not in fixed]
    if exact:
        # Gaussian elimination over the rationals.
        m = len(free)
        A = [[L[i][j] for j in free] + [-sum(L[i][j] for j in a1)] for i in free]
        for col in range(m):
            piv = next(r for r in range(col, m) if A[r][col] != 0)
            A[col], A[piv] = A[piv], A[col]
            for r in range(m):
                if r != col and A[r][col] != 0:
                    f = A[r][col] / A[col][col]
                    A[r] = [a - f * b for a, b in zip(A[r], A[col])]
        u = {free[i]: A[i][m] / A[i][i] for i in range(m)}
        for i in a0:
            u[i] = Fraction(0)
        for i in a1:
            u[i] = Fraction(1)
    else:
        Lm = np.array(L, dtype=float)
        b = -Lm[np.ix_(free, a1)].sum(axis=1)
        sol = np.linalg.solve(Lm[np.ix_(free, free)], b)
        u = {i: 0.0 for i in a0}
        u.update({i: 1.0 for i in a1})
        u.update(dict(zip(free, sol)))
    current = sum(L[i][j] * u[j] for i in a1 for j in range(nv))
    return 1 / current


def exit_time(n, start):
    """Mean exit steps of the lazy walk whose exits (faces of the unit square
    touched by a cell) carry weight 2, via the fundamental matrix."""
    side = 3**n
    cells = sc_cells(n)
    index = {c: i for i, c in enumerate(cells)}
    N = len(cells)
    Q = np.zeros((N, N))
    for (x, y), i in index.items():
        nbrs = [index[c] for c in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)) if c in index]
        outer = (x == 0) + (x == side - 1) + (y == 0) + (y == side - 1)
        W = len(nbrs) + 2 * outer
        Q[i, i] += 0.5
        for j in nbrs:
            Q[i, j] += 0.5 / W
    t = np.linalg.solve(np.eye(N) - Q, np.ones(N))
    return t[index[start]]


MASK = 0xFFFFFFFF


def philox(ctr, key):
    c = list(ctr)
    k0, k1 = key
    for r in range(10):
        if r:
            k0 = (k0 + 0x9E3779B9) & MASK
            k1 = (k1 + 0xBB67AE85) & MASK
        p0 = 0xD2511F53 * c[0]
        p1 = 0xCD9E8D57 * c[2]
        c = [((p1 >> 32) ^ c[1] ^ k0) & MASK, p1 & MASK, ((p0 >> 32) ^ c[3] ^ k1) & MASK, p0 & MASK]
    return c


def hilbert_bb_kz(n, rho):
    """h between the uniform form and the ancestor-weighted form on SC level n."""
    cells = sc_cells(n)
    index = {c: i for i, c in enumerate(cells)}
    N = len(cells)
    A = np.zeros((N, N))
    B = np.zeros((N, N))

    def sep(a, b):
        # first level (1..n) at which the ancestors differ
        for j in range(1, n + 1):
            s = 3 ** (n - j)
            if (a[0] // s, a[1] // s) != (b[0] // s, b[1] // s):
                return j
        return 0

    for (x, y), i in index.items():
        for c in ((x + 1, y), (x, y + 1)):
            if c in index:
                j = index[c]
                w = rho ** (sep((x, y), c) - 1)
                for M, v in ((A, 1.0), (B, w)):
                    M[i, i] += v
                    M[j, j] += v
                    M[i, j] -= v
                    M[j, i] -= v
    # restrict to the complement of constants with an explicit orthonormal basis
    basis = scipy.linalg.null_space(np.ones((1, N)))
    a = basis.T @ A @ basis
    b = basis.T @ B @ basis
    ev = scipy.linalg.eigh(b, a, eigvals_only=True)
    return np.log(ev.max() / ev.min())


def main():
    print("crosswire R_1 exact:", crosswire_resistance(1, exact=True))
    for n in range(0, 4):
        print(f"crosswire R_{n} = {crosswire_resistance(n):.15g}")
    print(f"exit level 1 from (0,1) = {exit_time(1, (0, 1)):.15g}")
    print(f"exit level 2 from (2,4) = {exit_time(2, (2, 4)):.15g}")
    kats = [
        ([0, 0, 0, 0], [0, 0]),
        ([MASK] * 4, [MASK, MASK]),
        ([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], [0xA4093822, 0x299F31D0]),
    ]
    for ctr, key in kats:
        print("philox", [hex(v) for v in philox(ctr, key)])
    print(f"h(bb, kz) level 2 rho 1.25 = {hilbert_bb_kz(2, 1.25):.15g}")
    print(f"h(bb, kz) level 3 rho 1.25 = {hilbert_bb_kz(3, 1.25):.15g}")


if __name__ == "__main__":
    main()
