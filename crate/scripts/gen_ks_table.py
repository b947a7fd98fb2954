#!/usr/bin/env python3
"""Regenerate crates/core/data/ks_critical.csv.

Critical values of the two-sample Kolmogorov-Smirnov statistic D under the
exact (no-ties) permutation null. For each (n1, n2, alpha) the cell holds the
smallest attainable D with P(D >= d) <= alpha, written as a reduced fraction.
Cells where even complete separation (D = 1) has tail probability above
alpha are written as `untestable`.
"""
from fractions import Fraction
from math import comb
import sys

MAX_N = 12
ALPHAS = ("0.05", "0.01")


def paths_below(n1, n2, num):
    # Lattice paths from (0,0) to (n1,n2) with |i*n2 - j*n1| < num at every node.
    ways = [[0] * (n2 + 1) for _ in range(n1 + 1)]
    for i in range(n1 + 1):
        for j in range(n2 + 1):
            if abs(i * n2 - j * n1) >= num:
                continue
            if i == 0 and j == 0:
                ways[i][j] = 1
                continue
            ways[i][j] = (ways[i - 1][j] if i else 0) + (ways[i][j - 1] if j else 0)
    return ways[n1][n2]


def critical(n1, n2, alpha):
    total = comb(n1 + n2, n1)
    values = sorted({abs(i * n2 - j * n1) for i in range(n1 + 1) for j in range(n2 + 1)})
    for num in values:
        if num == 0:
            continue
        tail = Fraction(total - paths_below(n1, n2, num), total)
        if tail <= alpha:
            return Fraction(num, n1 * n2)
    return None


def main(out):
    out.write("n1,n2,alpha,critical_d\n")
    for a in ALPHAS:
        alpha = Fraction(a)
        for n1 in range(1, MAX_N + 1):
            for n2 in range(1, MAX_N + 1):
                d = critical(n1, n2, alpha)
                cell = "untestable" if d is None else f"{d.numerator}/{d.denominator}"
                out.write(f"{n1},{n2},{a},{cell}\n")


if __name__ == "__main__":
    main(sys.stdout)
