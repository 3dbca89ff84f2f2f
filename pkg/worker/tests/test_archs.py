"""Architecture-string parsing tests for the worker."""

import pytest

from metaqnn_worker import ArchError, parse_arch


def test_parse_basic_terms():
    layers = parse_arch("[C(512,5,1), P(2,2), FC(128), SM(10)]")
    assert layers == [("C", 512, 5, 1), ("P", 2, 2), ("FC", 128), ("SM", 10)]


def test_parse_gap_termination():
    layers = parse_arch("[C(64,1,1), GAP(10), SM(10)]")
    assert layers[-2:] == [("GAP", 10), ("SM", 10)]


@pytest.mark.parametrize("text", [
    "C(64,3,1)",                      # missing brackets
    "[]",                             # empty
    "[C(64,3,1)]",                    # no termination
    "[SM(10), C(64,3,1), SM(10)]",    # SM not final
    "[GAP(10), C(64,3,1), SM(10)]",   # GAP not before SM
    "[C(64,3,2), SM(10)]",            # conv stride
    "[C(64,x,1), SM(10)]",            # bad integer
    "[Q(64), SM(10)]",                # unknown tag
    "[C(64,3), SM(10)]",              # arity
])
def test_parse_rejects_bad_strings(text):
    with pytest.raises(ArchError):
        parse_arch(text)
