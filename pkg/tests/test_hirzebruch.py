import numpy as np
import pytest

from qslab.hirzebruch import ClassIdentityError, SurfaceClasses, classify, verify_class_identities


@pytest.mark.parametrize("k", range(1, 11))
def test_areas_match_closed_form(k):
    c = classify(k)
    l = k // 2
    if k % 2:
        assert c.surface_type == "CP2#-CP2"
        assert c.areas == {"L": 3 * l + 2, "E": 3 * l + 1}
    else:
        assert c.surface_type == "CP1xCP1"
        assert c.areas == {"CP1xpt": 1, "ptxCP1": 3 * l}


@pytest.mark.parametrize("k", range(1, 21))
def test_class_identities(k):
    assert verify_class_identities(k).passed


def test_intersection_form_is_unimodular():
    for k in range(1, 8):
        sc = SurfaceClasses(k)
        assert sc.determinant == -1
        assert sc.dot((1, 0), (1, 0)) == 0 and sc.dot((0, 1), (0, 1)) == -k


def test_areas_are_python_ints():
    c = classify(5)
    assert all(type(v) is int for v in c.areas.values())
    assert c.to_dict()["classes"]["L"] == [3, 1]


@pytest.mark.parametrize("bad", [0, -3, 2.0, "4", np.float64(3)])
def test_rejects_invalid_k(bad):
    with pytest.raises(ValueError):
        classify(bad)


def test_numpy_integer_accepted():
    assert classify(np.int64(4)).areas == {"CP1xpt": 1, "ptxCP1": 6}


def test_identity_error_is_assertion():
    assert issubclass(ClassIdentityError, AssertionError)
