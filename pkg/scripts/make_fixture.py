"""Regenerate src/degreegan/data/fixture.sdf.

Each molecule lists heavy atoms as (symbol, attached hydrogens) and heavy-atom
bonds as (i, j, order) with 0-based indices; order 4 is aromatic.  Hydrogens
are written explicitly so the file looks like a QM9 record.  Coordinates are
zero; nothing here reads them.
"""
from pathlib import Path

MOLECULES = [
    ("methane", [("C", 4)], []),
    ("ammonia", [("N", 3)], []),
    ("water", [("O", 2)], []),
    ("ethane", [("C", 3), ("C", 3)], [(0, 1, 1)]),
    ("ethylene", [("C", 2), ("C", 2)], [(0, 1, 2)]),
    ("acetylene", [("C", 1), ("C", 1)], [(0, 1, 3)]),
    ("hydrogen_cyanide", [("C", 1), ("N", 0)], [(0, 1, 3)]),
    ("methanol", [("C", 3), ("O", 1)], [(0, 1, 1)]),
    ("formaldehyde", [("C", 2), ("O", 0)], [(0, 1, 2)]),
    ("fluoromethane", [("C", 3), ("F", 0)], [(0, 1, 1)]),
    ("acetonitrile", [("C", 3), ("C", 0), ("N", 0)], [(0, 1, 1), (1, 2, 3)]),
    ("propane", [("C", 3), ("C", 2), ("C", 3)], [(0, 1, 1), (1, 2, 1)]),
    ("ethanol", [("C", 3), ("C", 2), ("O", 1)], [(0, 1, 1), (1, 2, 1)]),
    ("dimethyl_ether", [("C", 3), ("O", 0), ("C", 3)], [(0, 1, 1), (1, 2, 1)]),
    ("propyne", [("C", 3), ("C", 0), ("C", 1)], [(0, 1, 1), (1, 2, 3)]),
    ("cyclopropane", [("C", 2), ("C", 2), ("C", 2)], [(0, 1, 1), (1, 2, 1), (2, 0, 1)]),
    ("oxirane", [("C", 2), ("C", 2), ("O", 0)], [(0, 1, 1), (1, 2, 1), (2, 0, 1)]),
    ("trifluoromethane", [("C", 1), ("F", 0), ("F", 0), ("F", 0)], [(0, 1, 1), (0, 2, 1), (0, 3, 1)]),
    ("acetone", [("C", 3), ("C", 0), ("O", 0), ("C", 3)], [(0, 1, 1), (1, 2, 2), (1, 3, 1)]),
    ("acetic_acid", [("C", 3), ("C", 0), ("O", 0), ("O", 1)], [(0, 1, 1), (1, 2, 2), (1, 3, 1)]),
    ("urea", [("N", 2), ("C", 0), ("O", 0), ("N", 2)], [(0, 1, 1), (1, 2, 2), (1, 3, 1)]),
    ("isobutane", [("C", 1), ("C", 3), ("C", 3), ("C", 3)], [(0, 1, 1), (0, 2, 1), (0, 3, 1)]),
    (
        "glycine",
        [("N", 2), ("C", 2), ("C", 0), ("O", 0), ("O", 1)],
        [(0, 1, 1), (1, 2, 1), (2, 3, 2), (2, 4, 1)],
    ),
    (
        "butanone",
        [("C", 3), ("C", 2), ("C", 0), ("O", 0), ("C", 3)],
        [(0, 1, 1), (1, 2, 1), (2, 3, 2), (2, 4, 1)],
    ),
    (
        "furan",
        [("C", 1), ("C", 1), ("C", 1), ("C", 1), ("O", 0)],
        [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 4, 4), (4, 0, 4)],
    ),
    (
        "pyrrole",
        [("C", 1), ("C", 1), ("C", 1), ("C", 1), ("N", 1)],
        [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 4, 4), (4, 0, 4)],
    ),
    (
        "cyclohexane",
        [("C", 2)] * 6,
        [(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 5, 1), (5, 0, 1)],
    ),
    (
        "benzene",
        [("C", 1)] * 6,
        [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 4, 4), (4, 5, 4), (5, 0, 4)],
    ),
    (
        "pyridine",
        [("C", 1), ("C", 1), ("C", 1), ("N", 0), ("C", 1), ("C", 1)],
        [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 4, 4), (4, 5, 4), (5, 0, 4)],
    ),
    (
        "acetophenone",
        [("C", 3), ("C", 0), ("O", 0)] + [("C", 0)] + [("C", 1)] * 5,
        [(0, 1, 1), (1, 2, 2), (1, 3, 1), (3, 4, 4), (4, 5, 4), (5, 6, 4), (6, 7, 4), (7, 8, 4), (8, 3, 4)],
    ),
]


def mol_block(name, atoms, bonds):
    symbols = [s for s, _ in atoms]
    all_bonds = list(bonds)
    for i, (_, nh) in enumerate(atoms):
        for _ in range(nh):
            symbols.append("H")
            all_bonds.append((i, len(symbols) - 1, 1))
    lines = [name, "  fixture", ""]
    lines.append(f"{len(symbols):3d}{len(all_bonds):3d}  0  0  0  0  0  0  0  0999 V2000")
    for s in symbols:
        lines.append(f"{0.0:10.4f}{0.0:10.4f}{0.0:10.4f} {s:<3} 0  0  0  0  0  0  0  0  0  0  0  0")
    for i, j, order in all_bonds:
        lines.append(f"{i + 1:3d}{j + 1:3d}{order:3d}  0")
    lines.append("M  END")
    lines.append(f">  <name>\n{name}\n")
    lines.append("$$$$")
    return "\n".join(lines)


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "degreegan" / "data" / "fixture.sdf"
    out.write_text("\n".join(mol_block(*m) for m in MOLECULES) + "\n")
    print(f"wrote {len(MOLECULES)} molecules to {out}")
