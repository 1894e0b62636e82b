"""Freezes Welch t-test reference values computed at 60 significant digits.

Usage: python3 tools/welch_fixtures.py > crates/core/tests/data/welch_fixtures.json
"""
import json
import random

from mpmath import mp, mpf, betainc, sqrt

mp.dps = 60


def welch(a, b):
    a = [mpf(x) for x in a]
    b = [mpf(x) for x in b]
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1) / na
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1) / nb
    t = (ma - mb) / sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (na - 1) + vb**2 / (nb - 1))
    p = betainc(df / 2, mpf(1) / 2, 0, df / (df + t * t), regularized=True)
    return t, df, p


def main():
    rng = random.Random(20240611)
    fixtures = []
    for i in range(20):
        na = rng.choice([2, 3, 5, 5, 8, 12, 30])
        nb = rng.choice([2, 3, 5, 5, 8, 12, 30])
        scale_a = rng.choice([0.01, 0.1, 1.0, 10.0])
        scale_b = rng.choice([0.01, 0.1, 1.0, 10.0])
        shift = rng.choice([0.0, 0.05, 0.5, 2.0, 8.0])
        a = [round(rng.gauss(0.4, scale_a), 6) for _ in range(na)]
        b = [round(rng.gauss(0.4 + shift * scale_b, scale_b), 6) for _ in range(nb)]
        t, df, p = welch(a, b)
        fixtures.append({"a": a, "b": b, "t": float(t), "df": float(df), "p": float(p)})
    print(json.dumps(fixtures, indent=1))


if __name__ == "__main__":
    main()
