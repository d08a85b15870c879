"""SMILES parsing, molecular graphs, and node/bond feature encodings.

The parser covers the organic subset (B, C, N, O, P, S, F, Cl, Br, I),
bracket atoms with charge and explicit hydrogen counts, single/double/
triple/aromatic bonds, branches, and ring closures including ``%nn``.
Stereo markers (``/``, ``\\``, ``@``) are accepted and discarded.
Aromaticity is taken literally from lowercase notation; Kekulé inputs
stay Kekulé. Hydrogens are implicit atom attributes, never graph nodes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import SmilesParseError

# Standard atomic weights (IUPAC 2021, abridged). Conventional values are
# used for elements with an interval weight.
ATOMIC_WEIGHTS = {
    "H": 1.008, "He": 4.0026, "Li": 6.94, "Be": 9.0122, "B": 10.81,
    "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998, "Ne": 20.180,
    "Na": 22.990, "Mg": 24.305, "Al": 26.982, "Si": 28.085, "P": 30.974,
    "S": 32.06, "Cl": 35.45, "Ar": 39.95, "K": 39.098, "Ca": 40.078,
    "Sc": 44.956, "Ti": 47.867, "V": 50.942, "Cr": 51.996, "Mn": 54.938,
    "Fe": 55.845, "Co": 58.933, "Ni": 58.693, "Cu": 63.546, "Zn": 65.38,
    "Ga": 69.723, "Ge": 72.630, "As": 74.922, "Se": 78.971, "Br": 79.904,
    "Kr": 83.798, "Rb": 85.468, "Sr": 87.62, "Y": 88.906, "Zr": 91.224,
    "Nb": 92.906, "Mo": 95.95, "Ru": 101.07, "Rh": 102.91, "Pd": 106.42,
    "Ag": 107.87, "Cd": 112.41, "In": 114.82, "Sn": 118.71, "Sb": 121.76,
    "Te": 127.60, "I": 126.904, "Xe": 131.29, "Cs": 132.91, "Ba": 137.33,
    "La": 138.91, "Ce": 140.12, "Gd": 157.25, "W": 183.84, "Re": 186.21,
    "Os": 190.23, "Ir": 192.22, "Pt": 195.08, "Au": 196.97, "Hg": 200.59,
    "Tl": 204.38, "Pb": 207.2, "Bi": 208.98,
}

# Default valences used to fill implicit hydrogens (Daylight convention:
# the smallest listed valence that accommodates the bond sum wins).
DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}

ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_SYMBOLS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}

# Feature schema v1: atomic weight / 100, element one-hot over the
# vocabulary below plus OTHER, degree one-hot 0-5, hydrogen-count one-hot
# 0-4, ring flag, aromatic flag. Degrees/H-counts above the cap land in
# the top bucket.
FEATURE_SCHEMA_VERSION = 1
ELEMENT_VOCABULARY = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Se",
                      "Br", "I")
_DEGREE_CAP = 5
_HCOUNT_CAP = 4
NUM_NODE_FEATURES = 1 + len(ELEMENT_VOCABULARY) + 1 + (_DEGREE_CAP + 1) + (_HCOUNT_CAP + 1) + 2


class BondKind(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"


_BOND_ORDER = {BondKind.SINGLE: 1.0, BondKind.DOUBLE: 2.0,
               BondKind.TRIPLE: 3.0, BondKind.AROMATIC: 1.5}
_BOND_SYMBOL = {"-": BondKind.SINGLE, "=": BondKind.DOUBLE,
                "#": BondKind.TRIPLE, ":": BondKind.AROMATIC}
BOND_KINDS = (BondKind.SINGLE, BondKind.DOUBLE, BondKind.TRIPLE,
              BondKind.AROMATIC)


def bond_features(kind: BondKind) -> np.ndarray:
    """One-hot encoding over (single, double, triple, aromatic)."""
    vec = np.zeros(len(BOND_KINDS))
    vec[BOND_KINDS.index(kind)] = 1.0
    return vec


@dataclass
class AtomRecord:
    """One heavy atom: element plus the attributes the encoder reads."""

    element: str
    atomic_weight: float
    degree: int = 0
    h_count: int = 0
    in_ring: bool = False
    aromatic: bool = False
    formal_charge: int = 0


@dataclass
class MoleculeGraph:
    """Parsed molecule: atoms as nodes, bonds as typed undirected edges."""

    atoms: list[AtomRecord]
    edges: list[tuple[int, int, BondKind]]
    smiles_source: str
    formula: dict[str, int] = field(default_factory=dict)
    schema_version: int = FEATURE_SCHEMA_VERSION

    def __post_init__(self):
        if not self.formula:
            self.formula = molecular_formula(self)

    @property
    def num_nodes(self) -> int:
        return len(self.atoms)

    @property
    def adjacency(self) -> np.ndarray:
        n = self.num_nodes
        a = np.zeros((n, n))
        for i, j, _ in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    @property
    def node_features(self) -> np.ndarray:
        return featurize(self, self.schema_version)

    def neighbors(self, i: int) -> list[tuple[int, BondKind]]:
        out = []
        for a, b, kind in self.edges:
            if a == i:
                out.append((b, kind))
            elif b == i:
                out.append((a, kind))
        return out


# -- parsing ----------------------------------------------------------------


class _PendingAtom:
    __slots__ = ("element", "aromatic", "charge", "explicit_h", "bracket",
                 "offset")

    def __init__(self, element, aromatic, charge, explicit_h, bracket, offset):
        self.element = element
        self.aromatic = aromatic
        self.charge = charge
        self.explicit_h = explicit_h
        self.bracket = bracket
        self.offset = offset


def parse_smiles(text: str) -> MoleculeGraph:
    """Parse SMILES text into a :class:`MoleculeGraph`.

    Raises :class:`SmilesParseError` (with the byte offset of the
    offending character) for unbalanced parentheses, unmatched ring
    closures, unknown elements, or valence overflow.
    """
    if not text:
        raise SmilesParseError("empty SMILES", 0)

    atoms: list[_PendingAtom] = []
    bonds: list[tuple[int, int, str | None, int]] = []  # i, j, symbol, offset
    anchor: int | None = None
    pending_bond: str | None = None
    pending_offset = 0
    branch_stack: list[tuple[int | None, int]] = []
    open_rings: dict[int, tuple[int, str | None, int]] = {}

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "(":
            if anchor is None:
                raise SmilesParseError("branch before any atom", i)
            branch_stack.append((anchor, i))
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesParseError("unbalanced ')'", i)
            anchor, _ = branch_stack.pop()
            i += 1
        elif ch in "-=#:":
            if pending_bond is not None:
                raise SmilesParseError("two bond symbols in a row", i)
            pending_bond = ch
            pending_offset = i
            i += 1
        elif ch in "/\\":
            # Stereo bond markers: treated as plain single bonds.
            if pending_bond is None:
                pending_bond = "-"
                pending_offset = i
            i += 1
        elif ch.isdigit() or ch == "%":
            if anchor is None:
                raise SmilesParseError("ring closure before any atom", i)
            if ch == "%":
                if i + 2 >= n or not text[i + 1: i + 3].isdigit():
                    raise SmilesParseError("'%' needs two digits", i)
                number = int(text[i + 1: i + 3])
                width = 3
            else:
                number = int(ch)
                width = 1
            if number in open_rings:
                j, open_bond, open_off = open_rings.pop(number)
                symbol = _merge_ring_bonds(open_bond, pending_bond, i)
                if j == anchor:
                    raise SmilesParseError("ring bond to the same atom", i)
                if any({a, b} == {j, anchor} for a, b, _, _ in bonds):
                    raise SmilesParseError("duplicate bond via ring closure", i)
                bonds.append((j, anchor, symbol, i))
            else:
                open_rings[number] = (anchor, pending_bond, i)
            pending_bond = None
            i += width
        elif ch == "[":
            atom, width = _parse_bracket_atom(text, i)
            i = _attach(atoms, bonds, atom, anchor, pending_bond, pending_offset, i, width)
            anchor = len(atoms) - 1
            pending_bond = None
        elif ch == ".":
            raise SmilesParseError("disconnected structures ('.') unsupported", i)
        else:
            atom, width = _parse_organic_atom(text, i)
            i = _attach(atoms, bonds, atom, anchor, pending_bond, pending_offset, i, width)
            anchor = len(atoms) - 1
            pending_bond = None

    if branch_stack:
        raise SmilesParseError("unbalanced '('", branch_stack[-1][1])
    if open_rings:
        number, (_, _, off) = min(open_rings.items(), key=lambda kv: kv[1][2])
        raise SmilesParseError(f"unmatched ring closure {number}", off)
    if pending_bond is not None:
        raise SmilesParseError("dangling bond symbol", pending_offset)
    if not atoms:
        raise SmilesParseError("no atoms", 0)

    return _build_graph(text, atoms, bonds)


def _merge_ring_bonds(open_sym: str | None, close_sym: str | None,
                      offset: int) -> str | None:
    if open_sym is None:
        return close_sym
    if close_sym is None or close_sym == open_sym:
        return open_sym
    raise SmilesParseError(
        f"conflicting ring bond symbols '{open_sym}' vs '{close_sym}'", offset)


def _attach(atoms, bonds, atom: _PendingAtom, anchor, pending_bond,
            pending_offset, i, width) -> int:
    atoms.append(atom)
    idx = len(atoms) - 1
    if anchor is not None:
        bonds.append((anchor, idx, pending_bond, pending_offset if pending_bond else i))
    elif pending_bond is not None:
        raise SmilesParseError("bond symbol before first atom", pending_offset)
    return i + width


def _parse_organic_atom(text: str, i: int) -> tuple[_PendingAtom, int]:
    two = text[i: i + 2]
    if two in ("Cl", "Br"):
        return _PendingAtom(two, False, 0, None, False, i), 2
    ch = text[i]
    if ch in AROMATIC_SYMBOLS:
        return _PendingAtom(AROMATIC_SYMBOLS[ch], True, 0, None, False, i), 1
    if ch in ("B", "C", "N", "O", "P", "S", "F", "I"):
        return _PendingAtom(ch, False, 0, None, False, i), 1
    raise SmilesParseError(f"unexpected character {ch!r}", i)


def _parse_bracket_atom(text: str, start: int) -> tuple[_PendingAtom, int]:
    end = text.find("]", start)
    if end < 0:
        raise SmilesParseError("unterminated bracket atom", start)
    body = text[start + 1: end]
    pos = 0
    # Isotope digits are accepted and dropped (isotopes are out of scope).
    while pos < len(body) and body[pos].isdigit():
        pos += 1
    if pos >= len(body):
        raise SmilesParseError("bracket atom without element", start)

    aromatic = False
    if body[pos].islower():
        sym = body[pos]
        if sym not in AROMATIC_SYMBOLS:
            raise SmilesParseError(f"unknown aromatic symbol {sym!r}", start + 1 + pos)
        element = AROMATIC_SYMBOLS[sym]
        aromatic = True
        pos += 1
    else:
        two = body[pos: pos + 2]
        if len(two) == 2 and two[1].islower() and two in ATOMIC_WEIGHTS:
            element = two
            pos += 2
        else:
            element = body[pos]
            pos += 1
            if element not in ATOMIC_WEIGHTS:
                raise SmilesParseError(f"unknown element {element!r}", start + 1 + pos - 1)
    if element not in ATOMIC_WEIGHTS:
        raise SmilesParseError(f"unknown element {element!r}", start + 1)

    while pos < len(body) and body[pos] == "@":
        pos += 1  # chirality marker, ignored

    explicit_h = 0
    if pos < len(body) and body[pos] == "H":
        pos += 1
        count = ""
        while pos < len(body) and body[pos].isdigit():
            count += body[pos]
            pos += 1
        explicit_h = int(count) if count else 1

    charge = 0
    if pos < len(body) and body[pos] in "+-":
        sign = 1 if body[pos] == "+" else -1
        symbol = body[pos]
        pos += 1
        digits = ""
        while pos < len(body) and body[pos].isdigit():
            digits += body[pos]
            pos += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while pos < len(body) and body[pos] == symbol:
                charge += sign
                pos += 1

    if pos != len(body):
        raise SmilesParseError(
            f"unexpected bracket content {body[pos:]!r}", start + 1 + pos)
    return _PendingAtom(element, aromatic, charge, explicit_h, True, start), end - start + 1


def _build_graph(text: str, pending: list[_PendingAtom],
                 raw_bonds) -> MoleculeGraph:
    edges: list[tuple[int, int, BondKind]] = []
    for a, b, symbol, offset in raw_bonds:
        if symbol is None:
            kind = (BondKind.AROMATIC
                    if pending[a].aromatic and pending[b].aromatic
                    else BondKind.SINGLE)
        else:
            kind = _BOND_SYMBOL[symbol]
        if kind is BondKind.AROMATIC and not (pending[a].aromatic
                                              and pending[b].aromatic):
            raise SmilesParseError(
                "aromatic bond between non-aromatic atoms", offset)
        lo, hi = (a, b) if a < b else (b, a)
        edges.append((lo, hi, kind))

    order_sum = [0.0] * len(pending)
    arom_bond_count = [0] * len(pending)
    degree = [0] * len(pending)
    for a, b, kind in edges:
        for node in (a, b):
            order_sum[node] += _BOND_ORDER[kind]
            degree[node] += 1
            if kind is BondKind.AROMATIC:
                arom_bond_count[node] += 1

    atoms: list[AtomRecord] = []
    for idx, p in enumerate(pending):
        if p.bracket:
            h = p.explicit_h or 0
        else:
            h = _implicit_hydrogens(p, degree[idx], order_sum[idx],
                                    arom_bond_count[idx])
        atoms.append(AtomRecord(
            element=p.element,
            atomic_weight=ATOMIC_WEIGHTS[p.element],
            degree=degree[idx],
            h_count=h,
            aromatic=p.aromatic,
            formal_charge=p.charge,
        ))

    graph = MoleculeGraph(atoms=atoms, edges=edges, smiles_source=text)
    _mark_rings(graph)
    for idx, atom in enumerate(graph.atoms):
        if atom.aromatic and not atom.in_ring:
            raise SmilesParseError("aromatic atom outside a ring",
                                   pending[idx].offset)
    graph.formula = molecular_formula(graph)
    return graph


def _implicit_hydrogens(p: _PendingAtom, degree: int, order_sum: float,
                        arom_bonds: int) -> int:
    valences = DEFAULT_VALENCES[p.element]
    if p.aromatic:
        # Aromatic bonds count one each plus one shared aromatic-system
        # contribution; clamp at zero for heteroatoms like thiophene S.
        if degree > max(valences):
            raise SmilesParseError("valence overflow", p.offset)
        return max(0, valences[0] - degree - 1)
    needed = int(np.ceil(order_sum))
    for v in valences:
        if needed <= v:
            return v - needed
    raise SmilesParseError("valence overflow", p.offset)


def _mark_rings(graph: MoleculeGraph) -> None:
    """Flag atoms with at least one incident cycle edge (non-bridge)."""
    n = graph.num_nodes
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for eid, (a, b, _) in enumerate(graph.edges):
        adj[a].append((b, eid))
        adj[b].append((a, eid))

    disc = [-1] * n
    low = [0] * n
    bridge = [False] * len(graph.edges)
    timer = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        while stack:
            node, in_edge, ptr = stack.pop()
            if ptr == 0:
                disc[node] = low[node] = timer
                timer += 1
            if ptr < len(adj[node]):
                stack.append((node, in_edge, ptr + 1))
                nxt, eid = adj[node][ptr]
                if eid == in_edge:
                    continue
                if disc[nxt] >= 0:
                    low[node] = min(low[node], disc[nxt])
                else:
                    stack.append((nxt, eid, 0))
            elif in_edge >= 0:
                a, b, _ = graph.edges[in_edge]
                parent = a if b == node else b
                low[parent] = min(low[parent], low[node])
                if low[node] > disc[parent]:
                    bridge[in_edge] = True

    for eid, (a, b, _) in enumerate(graph.edges):
        if not bridge[eid]:
            graph.atoms[a].in_ring = True
            graph.atoms[b].in_ring = True


# -- encodings ----------------------------------------------------------------


def featurize(graph: MoleculeGraph, schema_version: int = FEATURE_SCHEMA_VERSION) -> np.ndarray:
    """Node-feature matrix X (N x F) for the given schema version."""
    if schema_version != FEATURE_SCHEMA_VERSION:
        raise ValueError(f"unknown feature schema version {schema_version}")
    x = np.zeros((graph.num_nodes, NUM_NODE_FEATURES))
    for i, atom in enumerate(graph.atoms):
        col = 0
        x[i, col] = atom.atomic_weight / 100.0
        col += 1
        if atom.element in ELEMENT_VOCABULARY:
            x[i, col + ELEMENT_VOCABULARY.index(atom.element)] = 1.0
        else:
            x[i, col + len(ELEMENT_VOCABULARY)] = 1.0
        col += len(ELEMENT_VOCABULARY) + 1
        x[i, col + min(atom.degree, _DEGREE_CAP)] = 1.0
        col += _DEGREE_CAP + 1
        x[i, col + min(atom.h_count, _HCOUNT_CAP)] = 1.0
        col += _HCOUNT_CAP + 1
        x[i, col] = 1.0 if atom.in_ring else 0.0
        x[i, col + 1] = 1.0 if atom.aromatic else 0.0
    return x


def molecular_formula(graph: MoleculeGraph) -> dict[str, int]:
    """Element counts including implicit hydrogens."""
    counts: dict[str, int] = {}
    hydrogens = 0
    for atom in graph.atoms:
        counts[atom.element] = counts.get(atom.element, 0) + 1
        hydrogens += atom.h_count
    if hydrogens:
        counts["H"] = counts.get("H", 0) + hydrogens
    return counts


def formula_text(counts: dict[str, int]) -> str:
    """Hill-order rendering: C, H, then alphabetical (all alphabetical
    when carbon is absent)."""
    parts = []
    if "C" in counts:
        rest = sorted(k for k in counts if k not in ("C", "H"))
        order = ["C"] + (["H"] if "H" in counts else []) + rest
    else:
        order = sorted(counts)
    for sym in order:
        n = counts[sym]
        parts.append(sym if n == 1 else f"{sym}{n}")
    return "".join(parts)


# -- rendering ----------------------------------------------------------------


def render_smiles(graph: MoleculeGraph) -> str:
    """Write graph back to SMILES (supported subset only).

    Re-parsing the result yields a graph isomorphic to the input. Atoms
    are bracketed whenever charge, element, or hydrogen count cannot be
    reconstructed from the bare symbol.
    """
    n = graph.num_nodes
    adj: list[list[tuple[int, BondKind]]] = [[] for _ in range(n)]
    for a, b, kind in graph.edges:
        adj[a].append((b, kind))
        adj[b].append((a, kind))

    visited = [False] * n
    children: list[list[int]] = [[] for _ in range(n)]
    ring_bonds: list[list[tuple[int, int, BondKind]]] = [[] for _ in range(n)]
    seen_back: set[tuple[int, int]] = set()
    counter = [0]

    order = [0]
    visited[0] = True
    stack = [(0, -1)]
    while stack:
        node, parent = stack.pop()
        for nxt, kind in adj[node]:
            if nxt == parent:
                continue
            if visited[nxt]:
                key = (min(node, nxt), max(node, nxt))
                if key not in seen_back:
                    seen_back.add(key)
                    counter[0] += 1
                    if counter[0] > 99:
                        raise ValueError("too many ring closures to render")
                    ring_bonds[node].append((counter[0], nxt, kind))
                    ring_bonds[nxt].append((counter[0], node, kind))
            else:
                visited[nxt] = True
                children[node].append(nxt)
                stack.append((nxt, node))
    # Each tree edge reversed once so parents know their children; parent
    # stack order flips child order, which is harmless.
    if not all(visited):
        raise ValueError("cannot render a disconnected graph")

    edge_kind = {}
    for a, b, kind in graph.edges:
        edge_kind[(a, b)] = edge_kind[(b, a)] = kind

    def bond_token(kind: BondKind, a: int, b: int) -> str:
        if kind is BondKind.SINGLE:
            both_aromatic = graph.atoms[a].aromatic and graph.atoms[b].aromatic
            return "-" if both_aromatic else ""
        if kind is BondKind.AROMATIC:
            return ""
        return "=" if kind is BondKind.DOUBLE else "#"

    def atom_token(i: int) -> str:
        atom = graph.atoms[i]
        symbol = atom.element.lower() if atom.aromatic else atom.element
        plain_ok = (atom.formal_charge == 0
                    and atom.element in DEFAULT_VALENCES
                    and (not atom.aromatic or atom.element.lower() in AROMATIC_SYMBOLS))
        if plain_ok:
            order_sum = sum(_BOND_ORDER[k] for _, k in adj[i])
            shim = _PendingAtom(atom.element, atom.aromatic, 0, None, False, 0)
            try:
                implied = _implicit_hydrogens(shim, len(adj[i]), order_sum,
                                              sum(1 for _, k in adj[i]
                                                  if k is BondKind.AROMATIC))
            except SmilesParseError:
                implied = -1
            if implied == atom.h_count:
                return symbol
        h = "" if atom.h_count == 0 else ("H" if atom.h_count == 1 else f"H{atom.h_count}")
        if atom.formal_charge == 0:
            charge = ""
        elif atom.formal_charge == 1:
            charge = "+"
        elif atom.formal_charge == -1:
            charge = "-"
        else:
            charge = f"{atom.formal_charge:+d}"
        return f"[{symbol}{h}{charge}]"

    def ring_token(number: int) -> str:
        return str(number) if number < 10 else f"%{number:02d}"

    out: list[str] = []
    frames: list[tuple[str, int, int]] = [("atom", 0, -1)]
    while frames:
        kind_tag, node, parent = frames.pop()
        if kind_tag == "open":
            out.append("(")
            continue
        if kind_tag == "close":
            out.append(")")
            continue
        if parent >= 0:
            out.append(bond_token(edge_kind[(parent, node)], parent, node))
        out.append(atom_token(node))
        for number, other, kind in ring_bonds[node]:
            out.append(bond_token(kind, node, other) + ring_token(number))
        kids = children[node]
        # All children but the last are parenthesized branches. Frames are
        # pushed in reverse so they pop in writing order.
        for pos in range(len(kids) - 1, -1, -1):
            if pos == len(kids) - 1:
                frames.append(("atom", kids[pos], node))
            else:
                frames.append(("close", -1, -1))
                frames.append(("atom", kids[pos], node))
                frames.append(("open", -1, -1))
    return "".join(out)
