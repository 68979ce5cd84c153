"""Degradation labels and the basis algebra.

A label is an ordered sequence of isolated degradation symbols such as
``haze+rain+noise15``.  Labels compare as multisets, so ``rain+haze`` and
``haze+rain`` are the same degradation.  ``combine`` concatenates and
``decompose`` searches for the shortest exact cover of a label by a basis set.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

# name -> physical layering rank (low-light innermost, sensor noise outermost)
SYMBOLS: dict[str, int] = {
    "low": 0,
    "haze": 1,
    "rain": 2,
    "snow": 2,
    "noise15": 3,
    "noise25": 3,
    "noise50": 3,
}

ALIASES: dict[str, str] = {
    "l": "low",
    "h": "haze",
    "r": "rain",
    "s": "snow",
    "n1": "noise15",
    "n2": "noise25",
    "n5": "noise50",
    "noise": "noise25",
    "low-light": "low",
    "lowlight": "low",
}


def register_symbol(name: str, rank: int, aliases: Iterable[str] = ()) -> None:
    """Add a new isolated degradation symbol to the registry."""
    if name in SYMBOLS or name in ALIASES:
        raise ValueError(f"symbol {name!r} already registered")
    SYMBOLS[name] = rank
    for alias in aliases:
        if alias in SYMBOLS or alias in ALIASES:
            raise ValueError(f"alias {alias!r} already in use")
        ALIASES[alias] = name


def resolve_symbol(token: str) -> str:
    token = token.strip()
    name = ALIASES.get(token, token)
    if name not in SYMBOLS:
        raise ValueError(f"unknown degradation symbol {token!r}")
    return name


def physical_key(symbol: str) -> tuple[int, str]:
    return SYMBOLS[symbol], symbol


@dataclass(frozen=True, eq=False)
class Label:
    """A composite degradation ``s_1 + s_2 + ... + s_m``.

    Equality and hashing use the sorted multiset of parts, never the order.
    The canonical sort is composition order (physical rank, then name), so
    the canonical key reads the same as :attr:`name`.
    """

    parts: tuple[str, ...]

    def __post_init__(self):
        if not self.parts:
            raise ValueError("a degradation label needs at least one part")
        object.__setattr__(self, "parts", tuple(resolve_symbol(p) for p in self.parts))

    @property
    def key(self) -> tuple[str, ...]:
        return tuple(sorted(self.parts, key=physical_key))

    @property
    def order(self) -> int:
        return len(self.parts)

    def physical(self) -> tuple[str, ...]:
        """Parts sorted in composition order (innermost first)."""
        return self.key

    def counts(self) -> Counter:
        return Counter(self.parts)

    def __eq__(self, other):
        if not isinstance(other, Label):
            return NotImplemented
        return self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __lt__(self, other: "Label"):
        return (self.order, self.key) < (other.order, other.key)

    def __str__(self):
        return "+".join(self.parts)

    def __repr__(self):
        return f"Label({str(self)!r})"

    @property
    def name(self) -> str:
        """Text form in composition order, used for directory names."""
        return "+".join(self.physical())

    def contains(self, other: "Label") -> bool:
        mine = self.counts()
        return all(mine[s] >= c for s, c in other.counts().items())

    def minus(self, other: "Label") -> "Label | None":
        """Remove ``other`` from this label; None if nothing is left."""
        if not self.contains(other):
            raise ValueError(f"{other} is not part of {self}")
        rest = sorted((self.counts() - other.counts()).elements(), key=physical_key)
        return Label(tuple(rest)) if rest else None


def parse_label(text: str | Label) -> Label:
    if isinstance(text, Label):
        return text
    tokens = [t for t in str(text).split("+")]
    if any(not t.strip() for t in tokens):
        raise ValueError(f"malformed label {text!r}")
    return Label(tuple(tokens))


def as_label(value) -> Label:
    if isinstance(value, Label):
        return value
    if isinstance(value, str):
        return parse_label(value)
    return Label(tuple(value))


def combine(a: Label, b: Label) -> Label:
    """String concatenation of two labels; orders add."""
    return Label(as_label(a).parts + as_label(b).parts)


def equals(d1: Label, d2: Label) -> bool:
    """True iff one label is a permutation of the other."""
    return as_label(d1).key == as_label(d2).key


class BasisSet:
    """Set of bases, deduplicated under permutation equality."""

    def __init__(self, bases: Iterable = ()):
        seen: dict[Label, Label] = {}
        for b in bases:
            lab = as_label(b)
            seen.setdefault(lab, lab)
        self._bases = tuple(sorted(seen.values()))

    def __iter__(self):
        return iter(self._bases)

    def __len__(self):
        return len(self._bases)

    def __contains__(self, item):
        return as_label(item) in self._bases

    def __eq__(self, other):
        if not isinstance(other, BasisSet):
            return NotImplemented
        return set(self._bases) == set(other._bases)

    def __repr__(self):
        return f"BasisSet({[str(b) for b in self._bases]})"

    @property
    def max_order(self) -> int:
        return max((b.order for b in self._bases), default=0)

    def symbols(self) -> set[str]:
        return {s for b in self._bases for s in b.parts}


def decompose(d: Label, bases: BasisSet | Iterable) -> list[Label] | None:
    """Shortest list of bases whose combination equals ``d``, or None.

    Exhaustive search over multiset partitions of ``d``; bases may be reused
    when ``d`` repeats a symbol.  Ties on length go to the lexicographically
    smallest sorted list of canonical keys.
    """
    d = as_label(d)
    if not isinstance(bases, BasisSet):
        bases = BasisSet(bases)
    return _decompose(d.key, tuple(b.key for b in bases))


@lru_cache(maxsize=4096)
def _decompose(target: tuple[str, ...], basis_keys: tuple[tuple[str, ...], ...]):
    best = _cover(Counter(target), basis_keys, {})
    if best is None:
        return None
    return [Label(k) for k in best]


def _cover(rest: Counter, basis_keys, memo) -> tuple | None:
    if not rest:
        return ()
    state = tuple(sorted(rest.elements(), key=physical_key))
    if state in memo:
        return memo[state]
    first = state[0]
    best = None
    for key in basis_keys:
        if first not in key:
            continue
        need = Counter(key)
        if any(rest[s] < c for s, c in need.items()):
            continue
        sub = _cover(rest - need, basis_keys, memo)
        if sub is None:
            continue
        cand = tuple(sorted((key,) + sub))
        if best is None or (len(cand), cand) < (len(best), best):
            best = cand
    memo[state] = best
    return best


def enumerate_bases(n_isolated: int | Sequence[str], k: int) -> BasisSet:
    """Every label of order <= k drawn without repetition from the symbols.

    ``n_isolated`` is either a count (the first n registered symbols are
    used) or an explicit list of symbols.
    """
    if isinstance(n_isolated, int):
        if n_isolated < 1 or n_isolated > len(SYMBOLS):
            raise ValueError(f"need 1 <= n <= {len(SYMBOLS)}, got {n_isolated}")
        symbols = list(SYMBOLS)[:n_isolated]
    else:
        symbols = [resolve_symbol(s) for s in n_isolated]
        if len(set(symbols)) != len(symbols):
            raise ValueError("isolated symbols must be distinct")
    n = len(symbols)
    if not 1 <= k <= n:
        raise ValueError(f"order k must satisfy 1 <= k <= {n}, got {k}")
    return BasisSet(
        Label(combo) for t in range(1, k + 1) for combo in itertools.combinations(symbols, t)
    )
