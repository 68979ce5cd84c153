"""Training and inference cost ratios of k-order models, in exact arithmetic.

With ``n`` isolated degradations, a k-order model is trained on every
combination of at most ``k`` of them, and removes a composite of order ``t``
in ``ceil(t / k)`` steps.  The inference ratio assumes every composite is
equally likely and that the model always removes the highest-order basis it
can.  All quantities are Python ints or ``fractions.Fraction``; floats only
appear in the CSV convenience columns.
"""

from __future__ import annotations

import csv
from fractions import Fraction
from math import comb
from pathlib import Path

MAX_N = 64


def _check(n: int, k: int) -> None:
    if not (isinstance(n, int) and isinstance(k, int)):
        raise TypeError("n and k must be integers")
    if not 1 <= k <= n <= MAX_N:
        raise ValueError(f"need 1 <= k <= n <= {MAX_N}, got n={n}, k={k}")


def phi(n: int, k: int) -> int:
    """Number of bases a k-order model is trained on."""
    _check(n, k)
    return sum(comb(n, t) for t in range(1, k + 1))


def varphi(n: int, k: int) -> int:
    """Total restoration steps a k-order model needs over all composites."""
    _check(n, k)
    return sum(comb(n, t) * (-(-t // k)) for t in range(1, n + 1))


def tr(n: int, k: int) -> Fraction:
    """Training cost of a k-order model relative to a 1-order model."""
    return Fraction(phi(n, k), n)


def ir(n: int, k: int) -> Fraction:
    """Inference cost of a k-order model relative to an n-order model."""
    return Fraction(varphi(n, k), 2**n - 1)


CSV_COLUMNS = [
    "k",
    "tr_exact_num",
    "tr_exact_den",
    "tr_float",
    "ir_exact_num",
    "ir_exact_den",
    "ir_float",
]


def curve_rows(n: int) -> list[dict]:
    if n < 2:
        raise ValueError("curves need n >= 2")
    rows = []
    for k in range(1, n + 1):
        t, i = tr(n, k), ir(n, k)
        rows.append(
            {
                "k": k,
                "tr_exact_num": t.numerator,
                "tr_exact_den": t.denominator,
                "tr_float": float(t),
                "ir_exact_num": i.numerator,
                "ir_exact_den": i.denominator,
                "ir_float": float(i),
            }
        )
    return rows


def emit_curves(n: int, path) -> Path:
    """Write the TR/IR curves for k = 1..n to a CSV file."""
    rows = curve_rows(n)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "tr_float": repr(row["tr_float"]), "ir_float": repr(row["ir_float"])})
    return path
