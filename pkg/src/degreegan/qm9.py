"""QM9 ingestion: V2000 SDF parsing, random splits and the dataset container."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container
from .graphs import GraphSample, check_graph

log = logging.getLogger(__name__)

EMPTY = "empty"
NO_EDGE = "no-edge"
BOND_ORDER_SYMBOLS = {1: "single", 2: "double", 3: "triple", 4: "aromatic"}
HYDROGENS = {"H", "D", "T"}


class ParseError(ValueError):
    def __init__(self, record: int, message: str):
        super().__init__(f"record {record}: {message}")
        self.record = record


class InsufficientRecordsError(ValueError):
    pass


@dataclass(frozen=True)
class VocabSpec:
    node_types: tuple[str, ...] = ("C", "N", "O", "F", EMPTY)
    edge_types: tuple[str, ...] = (NO_EDGE, "single", "double", "triple", "aromatic")
    max_nodes: int = 9

    def __post_init__(self):
        object.__setattr__(self, "node_types", tuple(self.node_types))
        object.__setattr__(self, "edge_types", tuple(self.edge_types))
        if self.node_types.count(EMPTY) != 1:
            raise ValueError(f"node types need exactly one {EMPTY!r} entry")
        if self.edge_types.count(NO_EDGE) != 1:
            raise ValueError(f"edge types need exactly one {NO_EDGE!r} entry")
        if len(set(self.node_types)) != len(self.node_types):
            raise ValueError("duplicate node type symbol")
        if len(set(self.edge_types)) != len(self.edge_types):
            raise ValueError("duplicate edge type symbol")
        if len(self.node_types) < 2 or len(self.edge_types) < 2 or self.max_nodes < 1:
            raise ValueError("need T >= 2, B >= 2 and N >= 1")

    @property
    def empty_index(self) -> int:
        return self.node_types.index(EMPTY)

    @property
    def no_edge_index(self) -> int:
        return self.edge_types.index(NO_EDGE)

    @property
    def n_node_types(self) -> int:
        return len(self.node_types)

    @property
    def n_edge_types(self) -> int:
        return len(self.edge_types)

    def graph(self, node_types: Sequence[int], edge_types: np.ndarray) -> GraphSample:
        return GraphSample.from_types(
            node_types,
            edge_types,
            self.n_node_types,
            self.n_edge_types,
            self.empty_index,
            self.no_edge_index,
        )

    def fits(self, g: GraphSample) -> bool:
        return (
            g.node_features.shape == (self.max_nodes, self.n_node_types)
            and g.n_edge_types == self.n_edge_types
            and g.empty_type == self.empty_index
            and g.no_edge_type == self.no_edge_index
        )


# ------------------------------------------------------------------ parsing


@dataclass
class ParseResult:
    samples: list[GraphSample]
    record_indices: list[int]
    n_records: int
    skipped: Counter = field(default_factory=Counter)


def _records(lines: list[str]):
    start = 0
    for i, line in enumerate(lines):
        if line.strip() == "$$$$":
            yield lines[start:i]
            start = i + 1
    tail = lines[start:]
    if any(line.strip() for line in tail):
        yield tail


def _int_field(text: str, record: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(record, f"bad {what} field {text!r}") from None


def _parse_record(block: list[str], k: int, vocab: VocabSpec) -> GraphSample | str:
    """Graph for one MOL block, or a skip reason string."""
    if len(block) < 4:
        raise ParseError(k, "missing header or counts line")
    counts = block[3]
    if "V3000" in counts:
        raise ParseError(k, "V3000 blocks are not supported")
    n_atoms = _int_field(counts[0:3], k, "atom count")
    n_bonds = _int_field(counts[3:6], k, "bond count")
    if n_atoms < 0 or n_bonds < 0:
        raise ParseError(k, "negative counts")
    atom_lines = block[4 : 4 + n_atoms]
    bond_lines = block[4 + n_atoms : 4 + n_atoms + n_bonds]
    if len(atom_lines) < n_atoms:
        raise ParseError(k, f"atom block truncated ({len(atom_lines)} of {n_atoms} lines)")
    if len(bond_lines) < n_bonds:
        raise ParseError(k, f"bond block truncated ({len(bond_lines)} of {n_bonds} lines)")

    symbols = []
    for line in atom_lines:
        sym = line[31:34].strip()
        if not sym:
            raise ParseError(k, f"atom line without symbol: {line!r}")
        symbols.append(sym)

    heavy = [i for i, s in enumerate(symbols) if s not in HYDROGENS]
    position = {atom: node for node, atom in enumerate(heavy)}
    bonds = []
    for line in bond_lines:
        a = _int_field(line[0:3], k, "bond atom")
        b = _int_field(line[3:6], k, "bond atom")
        order = _int_field(line[6:9], k, "bond type")
        if not (1 <= a <= n_atoms and 1 <= b <= n_atoms):
            raise ParseError(k, f"bond references atom outside 1..{n_atoms}: {a}-{b}")
        if a == b:
            raise ParseError(k, f"bond from atom {a} to itself")
        bonds.append((a - 1, b - 1, order))

    if len(heavy) > vocab.max_nodes:
        return "too many heavy atoms"
    if any(symbols[i] not in vocab.node_types or symbols[i] == EMPTY for i in heavy):
        return "atom outside vocabulary"

    edges = np.full((vocab.max_nodes, vocab.max_nodes), vocab.no_edge_index, dtype=np.int64)
    for a, b, order in bonds:
        if a not in position or b not in position:
            continue
        sym = BOND_ORDER_SYMBOLS.get(order)
        if sym is None or sym not in vocab.edge_types:
            return "bond type outside vocabulary"
        i, j = position[a], position[b]
        if edges[i, j] != vocab.no_edge_index:
            raise ParseError(k, f"duplicate bond between atoms {a + 1} and {b + 1}")
        edges[i, j] = edges[j, i] = vocab.edge_types.index(sym)

    node_types = [vocab.node_types.index(symbols[i]) for i in heavy]
    node_types += [vocab.empty_index] * (vocab.max_nodes - len(heavy))
    return vocab.graph(node_types, edges)


def read_sdf(path: str | Path, vocab: VocabSpec = VocabSpec()) -> ParseResult:
    """Parse every record of a V2000 SDF file, keeping source record indices."""
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(-1, f"cannot read {path}: {exc}") from exc
    result = ParseResult([], [], 0)
    for k, block in enumerate(_records(text.splitlines())):
        result.n_records += 1
        out = _parse_record(block, k, vocab)
        if isinstance(out, str):
            result.skipped[out] += 1
            continue
        result.samples.append(out)
        result.record_indices.append(k)
    if result.skipped:
        log.info("skipped %d records: %s", sum(result.skipped.values()), dict(result.skipped))
    return result


def parse_sdf(path: str | Path, vocab: VocabSpec = VocabSpec()) -> list[GraphSample]:
    return read_sdf(path, vocab).samples


# -------------------------------------------------------------------- split


@dataclass(eq=False)
class DatasetSplit:
    train: list[GraphSample]
    validation: list[GraphSample]
    seed: int
    vocab: VocabSpec
    train_indices: list[int]
    val_indices: list[int]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.vocab == other.vocab
            and self.train_indices == other.train_indices
            and self.val_indices == other.val_indices
            and self.train == other.train
            and self.validation == other.validation
        )


def sample_split(
    graphs: Sequence[GraphSample],
    train_n: int,
    val_n: int,
    seed: int,
    vocab: VocabSpec = VocabSpec(),
    source_indices: Sequence[int] | None = None,
) -> DatasetSplit:
    """Uniform sampling without replacement into disjoint train/validation sets."""
    if train_n < 0 or val_n < 0:
        raise ValueError("split sizes must be non-negative")
    if train_n + val_n > len(graphs):
        raise InsufficientRecordsError(
            f"need {train_n + val_n} records for the split, have {len(graphs)}"
        )
    if source_indices is None:
        source_indices = range(len(graphs))
    perm = np.random.default_rng(seed).permutation(len(graphs))
    tr, va = perm[:train_n], perm[train_n : train_n + val_n]
    return DatasetSplit(
        train=[graphs[i] for i in tr],
        validation=[graphs[i] for i in va],
        seed=seed,
        vocab=vocab,
        train_indices=[int(source_indices[i]) for i in tr],
        val_indices=[int(source_indices[i]) for i in va],
    )


# ---------------------------------------------------------------- container


def write_vocab(w: container.Writer, vocab: VocabSpec) -> None:
    w.u8(vocab.n_node_types)
    for s in vocab.node_types:
        w.text(s)
    w.u8(vocab.empty_index)
    w.u8(vocab.n_edge_types)
    for s in vocab.edge_types:
        w.text(s)
    w.u8(vocab.no_edge_index)
    w.u16(vocab.max_nodes)


def read_vocab(r: container.Reader) -> VocabSpec:
    nodes = tuple(r.text() for _ in range(r.u8()))
    empty = r.u8()
    edges = tuple(r.text() for _ in range(r.u8()))
    no_edge = r.u8()
    vocab = VocabSpec(nodes, edges, r.u16())
    if vocab.empty_index != empty or vocab.no_edge_index != no_edge:
        raise container.ContainerError(f"{r.source}: vocabulary index table is inconsistent")
    return vocab


def _write_graphs(w: container.Writer, gs: Sequence[GraphSample], vocab: VocabSpec) -> None:
    for g in gs:
        if not vocab.fits(g):
            raise ValueError("graph does not fit the vocabulary")
        w.u8_array(g.node_features)
        w.u8_array(g.adjacency)


def _read_graphs(r: container.Reader, n: int, vocab: VocabSpec) -> list[GraphSample]:
    N, T, B = vocab.max_nodes, vocab.n_node_types, vocab.n_edge_types
    out = []
    for _ in range(n):
        x = r.u8_array((N, T))
        a = r.u8_array((N, N, B))
        g = GraphSample(x, a, vocab.empty_index, vocab.no_edge_index)
        check_graph(g)
        out.append(g)
    return out


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    w = container.Writer(container.KIND_DATASET)
    write_vocab(w, split.vocab)
    w.i64(split.seed)
    w.u32(len(split.train))
    w.u32(len(split.validation))
    for i in split.train_indices + split.val_indices:
        w.u32(i)
    _write_graphs(w, split.train, split.vocab)
    _write_graphs(w, split.validation, split.vocab)
    w.save(path)


def load_dataset(path: str | Path) -> DatasetSplit:
    r = container.Reader.open(path, container.KIND_DATASET)
    vocab = read_vocab(r)
    seed = r.i64()
    n_train, n_val = r.u32(), r.u32()
    indices = [r.u32() for _ in range(n_train + n_val)]
    train = _read_graphs(r, n_train, vocab)
    val = _read_graphs(r, n_val, vocab)
    r.done()
    if set(indices[:n_train]) & set(indices[n_train:]):
        raise container.ContainerError(f"{path}: train and validation records overlap")
    return DatasetSplit(train, val, seed, vocab, indices[:n_train], indices[n_train:])


def save_samples(graphs: Sequence[GraphSample], vocab: VocabSpec, path: str | Path) -> None:
    w = container.Writer(container.KIND_SAMPLES)
    write_vocab(w, vocab)
    w.u32(len(graphs))
    _write_graphs(w, graphs, vocab)
    w.save(path)


def load_samples(path: str | Path) -> tuple[list[GraphSample], VocabSpec]:
    r = container.Reader.open(path, container.KIND_SAMPLES)
    vocab = read_vocab(r)
    graphs = _read_graphs(r, r.u32(), vocab)
    r.done()
    return graphs, vocab
