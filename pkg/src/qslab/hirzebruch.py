"""Integer intersection arithmetic for the Hirzebruch surfaces Sigma_k.

H_2 has basis F (fiber) and D (section at [0:0:1]), with F.F = 0, F.D = 1,
D.D = -k.  The restricted Kahler class pairs to 1 on F and k on D.  Classes
are integer coordinate vectors in this basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SurfaceClasses:
    k: int
    labels: tuple[str, str] = ("F", "D")

    def __post_init__(self) -> None:
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")

    @property
    def intersection_matrix(self) -> np.ndarray:
        return np.array([[0, 1], [1, -self.k]], dtype=np.int64)

    @property
    def area_vector(self) -> np.ndarray:
        return np.array([1, self.k], dtype=np.int64)

    def dot(self, a, b) -> int:
        return int(np.asarray(a, dtype=np.int64) @ self.intersection_matrix @ np.asarray(b, dtype=np.int64))

    def area(self, a) -> int:
        return int(self.area_vector @ np.asarray(a, dtype=np.int64))

    @property
    def determinant(self) -> int:
        m = self.intersection_matrix
        return int(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


@dataclass
class Classification:
    k: int
    l: int
    surface_type: str
    classes: dict[str, tuple[int, int]]
    areas: dict[str, int]

    def to_dict(self) -> dict:
        return {"k": self.k, "l": self.l, "type": self.surface_type,
                "classes": {n: list(c) for n, c in self.classes.items()}, "areas": dict(self.areas)}


def classify(k: int) -> Classification:
    """Symplectic type of Sigma_k with named sphere classes and their areas."""
    sc = SurfaceClasses(k)
    l, odd = divmod(k, 2)
    if odd:
        classes = {"L": (l + 1, 1), "E": (l, 1)}
        kind = "CP2#-CP2"
    else:
        classes = {"CP1xpt": (1, 0), "ptxCP1": (l, 1)}
        kind = "CP1xCP1"
    return Classification(k, l, kind, classes, {n: sc.area(c) for n, c in classes.items()})


@dataclass
class IdentityReport:
    k: int
    checks: dict[str, tuple[int, int]] = field(default_factory=dict)  # name -> (computed, expected)

    @property
    def passed(self) -> bool:
        return all(a == b for a, b in self.checks.values())


class ClassIdentityError(AssertionError):
    pass


def verify_class_identities(k: int) -> IdentityReport:
    sc = SurfaceClasses(k)
    c = classify(k).classes
    rep = IdentityReport(k)
    if k % 2:
        L, E = c["L"], c["E"]
        rep.checks = {"L.L": (sc.dot(L, L), 1), "E.E": (sc.dot(E, E), -1), "L.E": (sc.dot(L, E), 0)}
    else:
        A, B = c["CP1xpt"], c["ptxCP1"]
        rep.checks = {"A.A": (sc.dot(A, A), 0), "B.B": (sc.dot(B, B), 0), "A.B": (sc.dot(A, B), 1)}
    rep.checks["det"] = (sc.determinant, -1)
    if not rep.passed:
        bad = {n: v for n, v in rep.checks.items() if v[0] != v[1]}
        raise ClassIdentityError(f"class identities fail for k={k}: {bad}")
    return rep
