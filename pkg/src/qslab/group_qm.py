"""Quasi-morphisms on free groups: counting fixtures, defects, homogenization,
pullback along maps and pushforward to quotients.

Words are reduced tuples of (generator, sign) letters.  The ASCII form uses
a..z for generators and capitals for their inverses, so "abA" is a b a^-1.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

Letter = tuple[int, int]
ALPHABET_SIZE = 26


class WordError(ValueError):
    pass


class DefectError(ValueError):
    pass


class WellDefinednessError(ValueError):
    """Raised when a quasi-morphism does not descend; carries the witnessing pair."""

    def __init__(self, message: str, witness: tuple | None = None):
        super().__init__(message)
        self.witness = witness


def reduce_word(letters: Iterable[Letter], rank: int = ALPHABET_SIZE) -> GroupWord:
    """Free reduction with a stack; rejects generators outside range(rank)."""
    out: list[Letter] = []
    for g, e in letters:
        g, e = int(g), int(e)
        if not 0 <= g < rank:
            raise WordError(f"generator index {g} outside alphabet of size {rank}")
        if e not in (1, -1):
            raise WordError(f"exponent sign must be +1 or -1, got {e}")
        if out and out[-1] == (g, -e):
            out.pop()
        else:
            out.append((g, e))
    return GroupWord(tuple(out))


@dataclass(frozen=True)
class GroupWord:
    letters: tuple[Letter, ...] = ()

    def __post_init__(self) -> None:
        for (g1, e1), (g2, e2) in zip(self.letters, self.letters[1:]):
            if g1 == g2 and e1 == -e2:
                raise WordError("word is not reduced; use reduce_word")

    @classmethod
    def parse(cls, text: str) -> GroupWord:
        letters = []
        for ch in text.strip():
            if ch in string.ascii_lowercase:
                letters.append((ord(ch) - ord("a"), 1))
            elif ch in string.ascii_uppercase:
                letters.append((ord(ch) - ord("A"), -1))
            elif ch in "e1" and len(text.strip()) == 1:
                continue
            else:
                raise WordError(f"bad letter {ch!r}")
        return reduce_word(letters)

    def __str__(self) -> str:
        if not self.letters:
            return "e"
        return "".join(chr((ord("a") if s > 0 else ord("A")) + g) for g, s in self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    def __mul__(self, other: GroupWord) -> GroupWord:
        return reduce_word(self.letters + other.letters)

    def inverse(self) -> GroupWord:
        return GroupWord(tuple((g, -e) for g, e in reversed(self.letters)))

    def __pow__(self, n: int) -> GroupWord:
        if n < 0:
            return self.inverse() ** (-n)
        u, c = self.cyclic_reduction()
        # g = c u c^-1 with u cyclically reduced, so g^n = c u^n c^-1 without cancellation inside u^n
        return reduce_word(c.letters + u.letters * n + c.inverse().letters)

    def cyclic_reduction(self) -> tuple[GroupWord, GroupWord]:
        """(u, c) with self = c u c^-1 and u cyclically reduced."""
        w = self.letters
        k = 0
        while k < len(w) - 1 - k and w[k] == (w[-1 - k][0], -w[-1 - k][1]):
            k += 1
        return GroupWord(w[k:len(w) - k]), GroupWord(w[:k])

    def exponent_sum(self, gen: int | None = None) -> int:
        return sum(e for g, e in self.letters if gen is None or g == gen)


IDENTITY = GroupWord()


def word(text: str) -> GroupWord:
    return GroupWord.parse(text)


@dataclass(frozen=True)
class QuasiMorphismHandle:
    evaluate: Callable[[GroupWord], float]
    defect_bound: float | None = None
    is_homogeneous: bool = False
    name: str = "mu"

    def __call__(self, g: GroupWord) -> float:
        return float(self.evaluate(g))


@dataclass(frozen=True)
class GroupMap:
    apply: Callable[[GroupWord], GroupWord]
    is_homomorphism: bool = True
    name: str = "phi"

    def __call__(self, g: GroupWord) -> GroupWord:
        return self.apply(g)


# -- counting quasi-morphisms --------------------------------------------------

def _count(letters: Sequence[Letter], pat: Sequence[Letter]) -> int:
    n, m = len(letters), len(pat)
    return sum(1 for i in range(n - m + 1) if tuple(letters[i:i + m]) == tuple(pat))


def _cyclic_count(letters: Sequence[Letter], pat: Sequence[Letter]) -> int:
    """Occurrences of pat in the bi-infinite periodic word, per period."""
    n, m = len(letters), len(pat)
    if n == 0:
        return 0
    return sum(1 for i in range(n) if all(letters[(i + j) % n] == pat[j] for j in range(m)))


def brooks_qm(pattern: GroupWord) -> QuasiMorphismHandle:
    """Overlapping occurrences of the pattern minus those of its inverse."""
    if len(pattern) == 0:
        raise WordError("Brooks pattern must be nonempty")
    p, q = pattern.letters, pattern.inverse().letters

    def h(g: GroupWord) -> float:
        return float(_count(g.letters, p) - _count(g.letters, q))

    # occurrences straddling each of the three junctions in the cancellation
    # picture g1 = x c, g2 = c^-1 y, g1 g2 = x y
    bound = 3.0 * (len(pattern) - 1)
    return QuasiMorphismHandle(h, bound, len(pattern) == 1, name=f"brooks({pattern})")


def homogenized_brooks_qm(pattern: GroupWord) -> QuasiMorphismHandle:
    """Exact homogenization: cyclic counts on the cyclic reduction."""
    if len(pattern) == 0:
        raise WordError("Brooks pattern must be nonempty")
    p, q = pattern.letters, pattern.inverse().letters

    def h(g: GroupWord) -> float:
        u, _ = g.cyclic_reduction()
        return float(_cyclic_count(u.letters, p) - _cyclic_count(u.letters, q))

    return QuasiMorphismHandle(h, 2.0 * 3.0 * (len(pattern) - 1), True, name=f"hbrooks({pattern})")


def exponent_sum_qm(gen: int | None = 0) -> QuasiMorphismHandle:
    """Homomorphism to Z; ``gen=None`` sums all exponents."""
    label = "all" if gen is None else chr(ord("a") + gen)
    return QuasiMorphismHandle(lambda g: float(g.exponent_sum(gen)), 0.0, True, name=f"expsum({label})")


# -- sampling and defects --------------------------------------------------------

class WordSampler:
    """Seeded generator of uniformly random reduced words."""

    def __init__(self, rank: int = 2, max_len: int = 20, seed: int = 0):
        if rank < 1 or max_len < 0:
            raise ValueError("need rank >= 1 and max_len >= 0")
        self.rank, self.max_len = rank, max_len
        self.rng = np.random.default_rng(seed)

    def __call__(self) -> GroupWord:
        n = int(self.rng.integers(0, self.max_len + 1))
        letters: list[Letter] = []
        while len(letters) < n:
            g = int(self.rng.integers(0, self.rank))
            e = 1 if self.rng.random() < 0.5 else -1
            if letters and letters[-1] == (g, -e):
                continue
            letters.append((g, e))
        return GroupWord(tuple(letters))

    def pairs(self, n: int) -> list[tuple[GroupWord, GroupWord]]:
        return [(self(), self()) for _ in range(n)]


def pair_defect(mu: QuasiMorphismHandle, g1: GroupWord, g2: GroupWord) -> float:
    return abs(mu(g1 * g2) - mu(g1) - mu(g2))


def defect_lower_bound(mu: QuasiMorphismHandle, sampler: WordSampler | Callable[[], GroupWord],
                       trials: int) -> float:
    """Largest observed |mu(g1 g2) - mu(g1) - mu(g2)|; a lower bound for the defect."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return max(pair_defect(mu, sampler(), sampler()) for _ in range(trials))


def exhaustive_defect(mu: QuasiMorphismHandle, rank: int, max_len: int) -> float:
    """Defect over all pairs of reduced words up to max_len (small cases only)."""
    words = all_words(rank, max_len)
    return max(pair_defect(mu, a, b) for a in words for b in words)


def all_words(rank: int, max_len: int) -> list[GroupWord]:
    out = [IDENTITY]
    frontier = [IDENTITY]
    for _ in range(max_len):
        nxt = []
        for w in frontier:
            for g in range(rank):
                for e in (1, -1):
                    if w.letters and w.letters[-1] == (g, -e):
                        continue
                    nxt.append(GroupWord(w.letters + ((g, e),)))
        out += nxt
        frontier = nxt
    return out


def homogenize(mu: QuasiMorphismHandle, g: GroupWord, N: int) -> tuple[float, float]:
    """mu(g^N)/N and the radius D/N within which the homogenization lies."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if mu.defect_bound is None:
        raise DefectError("homogenization needs a defect bound")
    return mu(g ** N) / N, mu.defect_bound / N


# -- maps ------------------------------------------------------------------------------

def identity_map() -> GroupMap:
    return GroupMap(lambda g: g, True, "id")


def conjugation_map(c: GroupWord) -> GroupMap:
    ci = c.inverse()
    return GroupMap(lambda g: c * g * ci, True, f"conj({c})")


def substitution_map(images: dict[int, GroupWord], name: str = "subst") -> GroupMap:
    """Homomorphism determined by generator images; unlisted generators are fixed."""
    def apply(g: GroupWord) -> GroupWord:
        letters: list[Letter] = []
        for gen, e in g.letters:
            img = images.get(gen, GroupWord(((gen, 1),)))
            letters.extend(img.letters if e > 0 else img.inverse().letters)
        return reduce_word(letters)
    return GroupMap(apply, True, name)


def collapse_map(gen: int) -> GroupMap:
    return substitution_map({gen: IDENTITY}, name=f"collapse({chr(ord('a') + gen)})")


def total_exponent_map() -> GroupMap:
    """F_n -> <a> = Z, every generator to a."""
    return GroupMap(lambda g: GroupWord(((0, 1 if g.exponent_sum() > 0 else -1),) * abs(g.exponent_sum())),
                    True, "total_exponent")


def right_multiplication_map(c: GroupWord) -> GroupMap:
    """h -> h c; not a homomorphism unless c = e."""
    return GroupMap(lambda g: g * c, len(c) == 0, f"rmul({c})")


def map_defect_bound(phi: GroupMap, mu: QuasiMorphismHandle, pairs: Iterable[tuple[GroupWord, GroupWord]]) -> float:
    """Sampled sup of |mu(phi(h1 h2)^-1 phi(h1) phi(h2))|."""
    return max((abs(mu(phi(a * b).inverse() * phi(a) * phi(b))) for a, b in pairs), default=0.0)


def pullback(phi: GroupMap, mu: QuasiMorphismHandle, D_phi_mu: float) -> QuasiMorphismHandle:
    """h -> mu(phi(h)) with defect at most D(phi, mu) + 2 D(mu)."""
    if mu.defect_bound is None:
        raise DefectError("pullback needs a defect bound on mu")
    if D_phi_mu < 0:
        raise ValueError("D(phi, mu) must be nonnegative")
    return QuasiMorphismHandle(lambda h: mu(phi(h)), D_phi_mu + 2.0 * mu.defect_bound,
                               mu.is_homogeneous and phi.is_homomorphism, name=f"{mu.name}∘{phi.name}")


@dataclass
class PushforwardReport:
    checked_points: int
    kernel_max: float
    witness: tuple | None = None
    notes: list[str] = field(default_factory=list)


def pushforward(phi: GroupMap, section: Callable[[GroupWord], GroupWord], mu: QuasiMorphismHandle,
                kernel_samples: Sequence[GroupWord], test_points: Sequence[GroupWord],
                alt_section: Callable[[GroupWord], GroupWord] | None = None,
                kernel_bound: float = 0.0, tol: float = 1e-9) -> tuple[QuasiMorphismHandle, PushforwardReport]:
    """Descend a homogeneous mu along a surjection via h -> mu(section(h)).

    Checks before returning: phi(section(h)) = h, mu(section(h)) agrees with
    mu(alt_section(h)) and with mu(section(h) k), and |mu| <= kernel_bound on the
    kernel samples (a homogeneous function bounded on a subgroup vanishes there).
    """
    if not mu.is_homogeneous:
        raise WellDefinednessError("pushforward requires a homogeneous quasi-morphism")
    report = PushforwardReport(len(test_points), 0.0)
    for h in test_points:
        if phi(section(h)) != h:
            raise WellDefinednessError(f"section is not a right inverse at {h}", (h, section(h)))
    for h in test_points:
        s = section(h)
        base = mu(s)
        others = [(k, s * k) for k in kernel_samples[:8]]
        if alt_section is not None:
            others.insert(0, (None, alt_section(h)))
        for k, s2 in others:
            if abs(mu(s2) - base) > tol:
                report.witness = (str(s), str(s2), base, mu(s2))
                raise WellDefinednessError(
                    f"two preimages of {h} disagree: mu({s}) = {base}, mu({s2}) = {mu(s2)}", report.witness)
    for k in kernel_samples:
        if len(phi(k)) != 0:
            raise WellDefinednessError(f"{k} is not in the kernel", (k,))
        v = abs(mu(k))
        report.kernel_max = max(report.kernel_max, v)
        if v > kernel_bound + tol:
            report.witness = (str(k), mu(k))
            raise WellDefinednessError(f"mu({k}) = {mu(k)} exceeds the kernel bound {kernel_bound}",
                                       report.witness)
    return QuasiMorphismHandle(lambda h: mu(section(h)), mu.defect_bound, True, name=f"{mu.name}_*"), report


def commutator(x: GroupWord, y: GroupWord) -> GroupWord:
    return x * y * x.inverse() * y.inverse()


def power_section(n_target: GroupWord) -> GroupWord:
    """Section of the total exponent map: a^n -> a^n."""
    return n_target


def mixed_section(n_target: GroupWord) -> GroupWord:
    """Another section of the total exponent map: a^n -> a^(n-1) b."""
    n = n_target.exponent_sum()
    return GroupWord(((0, 1),)) ** (n - 1) * GroupWord(((1, 1),))
