import numpy as np
import pytest

from degreegan import container
from degreegan.graphs import average_node_degree, check_graph
from degreegan.qm9 import (
    InsufficientRecordsError,
    ParseError,
    VocabSpec,
    load_dataset,
    load_samples,
    parse_sdf,
    read_sdf,
    sample_split,
    save_dataset,
    save_samples,
)


def mol_block(name, symbols, bonds):
    lines = [name, "  test", "", f"{len(symbols):3d}{len(bonds):3d}  0  0  0  0  0  0  0  0999 V2000"]
    for s in symbols:
        lines.append(f"{0.0:10.4f}{0.0:10.4f}{0.0:10.4f} {s:<3} 0  0  0  0  0  0  0  0  0  0  0  0")
    for a, b, order in bonds:
        lines.append(f"{a:3d}{b:3d}{order:3d}  0")
    lines += ["M  END", "$$$$"]
    return "\n".join(lines) + "\n"


METHANE = mol_block("methane", ["C", "H", "H", "H", "H"], [(1, k, 1) for k in range(2, 6)])
ETHANE = mol_block(
    "ethane",
    ["C", "C"] + ["H"] * 6,
    [(1, 2, 1), (1, 3, 1), (1, 4, 1), (1, 5, 1), (2, 6, 1), (2, 7, 1), (2, 8, 1)],
)
CHLOROMETHANE = mol_block("chloromethane", ["C", "Cl", "H", "H", "H"], [(1, 2, 1), (1, 3, 1), (1, 4, 1), (1, 5, 1)])
DECANE = mol_block("decane", ["C"] * 10, [(k, k + 1, 1) for k in range(1, 10)])


def write(tmp_path, text, name="mols.sdf"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_methane_keeps_one_carbon(tmp_path):
    (g,) = parse_sdf(write(tmp_path, METHANE))
    vocab = VocabSpec()
    assert g.node_types.tolist() == [0] + [vocab.empty_index] * 8
    assert (g.edge_types == vocab.no_edge_index).all()
    assert average_node_degree(g) == 0.0


def test_ethane_tensor_by_hand(tmp_path):
    (g,) = parse_sdf(write(tmp_path, ETHANE))
    x = np.zeros((9, 5), dtype=np.uint8)
    x[0, 0] = x[1, 0] = 1
    x[2:, 4] = 1
    a = np.zeros((9, 9, 5), dtype=np.uint8)
    a[:, :, 0] = 1
    a[0, 1] = a[1, 0] = [0, 1, 0, 0, 0]
    assert np.array_equal(g.node_features, x)
    assert np.array_equal(g.adjacency, a)
    assert average_node_degree(g) == 1.0


def test_bond_to_atom_zero_is_a_parse_error(tmp_path):
    bad = mol_block("broken", ["C", "C"], [(0, 2, 1)])
    with pytest.raises(ParseError, match="record 1") as info:
        parse_sdf(write(tmp_path, METHANE + bad))
    assert info.value.record == 1


@pytest.mark.parametrize(
    "text, message",
    [
        ("x\n\n\nabcdef\n$$$$\n", "atom count"),
        ("x\n\n\n  3  0  0  0  0  0  0  0  0  0999 V2000\n"
         "    0.0000    0.0000    0.0000 C   0  0\n$$$$\n", "atom block truncated"),
        ("x\n\n\n  2  2  0  0  0  0  0  0  0  0999 V2000\n"
         "    0.0000    0.0000    0.0000 C   0  0\n"
         "    0.0000    0.0000    0.0000 C   0  0\n  1  2  1  0\n$$$$\n", "bond block truncated"),
    ],
)
def test_malformed_records(tmp_path, text, message):
    with pytest.raises(ParseError, match=message):
        parse_sdf(write(tmp_path, text))


def test_unreadable_file(tmp_path):
    with pytest.raises(ParseError):
        parse_sdf(tmp_path / "missing.sdf")


def test_out_of_vocabulary_and_oversized_records_are_skipped(tmp_path):
    result = read_sdf(write(tmp_path, METHANE + CHLOROMETHANE + DECANE + ETHANE))
    assert result.n_records == 4
    assert result.record_indices == [0, 3]
    assert result.skipped == {"atom outside vocabulary": 1, "too many heavy atoms": 1}


def test_fixture_parses_completely(fixture_sdf):
    result = read_sdf(fixture_sdf)
    assert result.n_records == 30
    assert len(result.samples) == 30 and not result.skipped
    assert result.record_indices == list(range(30))
    for g in result.samples:
        check_graph(g)


def test_hydrogen_removal_keeps_heavy_connectivity(fixture_sdf):
    # count heavy-heavy bonds straight from the text
    blocks = fixture_sdf.read_text().split("$$$$")[:-1]
    for block, g in zip(blocks, parse_sdf(fixture_sdf)):
        lines = block.strip("\n").splitlines()
        n_atoms, n_bonds = int(lines[3][:3]), int(lines[3][3:6])
        symbols = [ln[31:34].strip() for ln in lines[4 : 4 + n_atoms]]
        heavy_bonds = 0
        for ln in lines[4 + n_atoms : 4 + n_atoms + n_bonds]:
            a, b = int(ln[:3]), int(ln[3:6])
            heavy_bonds += symbols[a - 1] != "H" and symbols[b - 1] != "H"
        assert np.triu(g.edge_types != 0, 1).sum() == heavy_bonds


def test_vocab_validation():
    with pytest.raises(ValueError):
        VocabSpec(("C", "N"))
    with pytest.raises(ValueError):
        VocabSpec(edge_types=("single", "double"))
    v = VocabSpec()
    assert (v.n_node_types, v.n_edge_types, v.max_nodes) == (5, 5, 9)
    assert v.empty_index == 4 and v.no_edge_index == 0


def many_graphs(fixture_sdf, n):
    base = parse_sdf(fixture_sdf)
    return [base[i % len(base)] for i in range(n)]


def test_split_sizes_and_determinism(fixture_sdf):
    gs = many_graphs(fixture_sdf, 7000)
    a = sample_split(gs, 5000, 1664, seed=11)
    b = sample_split(gs, 5000, 1664, seed=11)
    assert len(a.train) == 5000 and len(a.validation) == 1664
    assert a == b
    assert not set(a.train_indices) & set(a.val_indices)
    assert sample_split(gs, 5000, 1664, seed=12).train_indices != a.train_indices


def test_split_needs_enough_records(fixture_sdf):
    with pytest.raises(InsufficientRecordsError):
        sample_split(parse_sdf(fixture_sdf), 25, 6, seed=0)


def test_dataset_round_trip(tmp_path, fixture_sdf):
    result = read_sdf(fixture_sdf)
    split = sample_split(result.samples, 20, 5, seed=3, source_indices=result.record_indices)
    path = tmp_path / "data.ggan"
    save_dataset(split, path)
    loaded = load_dataset(path)
    assert loaded == split
    save_dataset(loaded, tmp_path / "again.ggan")
    assert path.read_bytes() == (tmp_path / "again.ggan").read_bytes()


def test_dataset_container_errors(tmp_path, fixture_sdf):
    split = sample_split(parse_sdf(fixture_sdf), 4, 2, seed=0)
    path = tmp_path / "data.ggan"
    save_dataset(split, path)
    blob = bytearray(path.read_bytes())

    corrupt = bytearray(blob)
    corrupt[40] ^= 0xFF
    (tmp_path / "corrupt").write_bytes(corrupt)
    with pytest.raises(container.ChecksumError):
        load_dataset(tmp_path / "corrupt")

    future = bytearray(blob)
    future[4] = container.FORMAT_VERSION + 1
    (tmp_path / "future").write_bytes(future)
    with pytest.raises(container.VersionError):
        load_dataset(tmp_path / "future")

    (tmp_path / "short").write_bytes(blob[:7])
    with pytest.raises(container.TruncatedError):
        load_dataset(tmp_path / "short")

    # valid checksum over a body that stops early
    w = container.Writer(container.KIND_DATASET)
    w.raw(bytes(blob[6:30]))
    (tmp_path / "cut").write_bytes(w.getvalue())
    with pytest.raises(container.TruncatedError):
        load_dataset(tmp_path / "cut")


def test_dataset_header_layout(tmp_path, fixture_sdf):
    split = sample_split(parse_sdf(fixture_sdf), 2, 1, seed=0)
    save_dataset(split, tmp_path / "d")
    blob = (tmp_path / "d").read_bytes()
    assert blob[:4] == b"GGAN"
    assert blob[4] == container.FORMAT_VERSION
    assert blob[6] == 5 and blob[7:9] == b"\x01\x00" and blob[9:10] == b"C"


def test_samples_round_trip(tmp_path, fixture_sdf):
    gs = parse_sdf(fixture_sdf)[:7]
    save_samples(gs, VocabSpec(), tmp_path / "s")
    loaded, vocab = load_samples(tmp_path / "s")
    assert loaded == gs and vocab == VocabSpec()
    with pytest.raises(container.ContainerError, match="kind"):
        load_dataset(tmp_path / "s")
