"""Parser for the controller's architecture string notation.

Grammar: ``[`` term (``, `` term)* ``]`` with terms ``C(d,f,l)``, ``P(f,l)``,
``FC(d)``, ``GAP(k)``, ``SM(k)``. The worker only needs enough structure to
build a model, so this stays a thin tuple representation:

    ("C", filters, field, stride) | ("P", field, stride) | ("FC", neurons)
    | ("GAP", classes) | ("SM", classes)
"""

from __future__ import annotations

import re

Layer = tuple

_TERM = re.compile(r"(C|P|FC|GAP|SM)\((\d+(?:,\d+)*)\)$")
_ARITY = {"C": 3, "P": 2, "FC": 1, "GAP": 1, "SM": 1}


class ArchError(ValueError):
    """Unusable architecture string."""


def parse_arch(text: str) -> list[Layer]:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ArchError(f"expected a bracketed architecture, got {text!r}")
    body = text[1:-1].strip()
    layers: list[Layer] = []
    if not body:
        raise ArchError("empty architecture")
    for term in body.split(", "):
        match = _TERM.match(term.strip())
        if match is None:
            raise ArchError(f"bad layer term {term!r}")
        tag, arg_text = match.groups()
        args = [int(a) for a in arg_text.split(",")]
        if len(args) != _ARITY[tag]:
            raise ArchError(f"{tag} takes {_ARITY[tag]} argument(s): {term!r}")
        layers.append((tag, *args))
    check_structure(layers)
    return layers


def check_structure(layers: list[Layer]) -> None:
    """The worker only builds terminated sequences with a final softmax."""
    if layers[-1][0] != "SM":
        raise ArchError("architecture must end in SM")
    for i, layer in enumerate(layers):
        if layer[0] == "SM" and i != len(layers) - 1:
            raise ArchError("SM before the final position")
        if layer[0] == "GAP" and i != len(layers) - 2:
            raise ArchError("GAP must immediately precede the final SM")
        if layer[0] == "C" and layer[3] != 1:
            raise ArchError("convolution stride must be 1")
