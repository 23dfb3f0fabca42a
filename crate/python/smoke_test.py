"""Smoke test for the molfuse_py extension module.

Build first with `cargo build -p molfuse-py` (add `--release` and set
MOLFUSE_PY_LIB for a release build), then run `python3 python/smoke_test.py`.
"""

import importlib.util
import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def find_library():
    explicit = os.environ.get("MOLFUSE_PY_LIB")
    if explicit:
        return Path(explicit)
    for name in ("libmolfuse_py.so", "libmolfuse_py.dylib", "molfuse_py.dll"):
        candidate = ROOT / "target" / "debug" / name
        if candidate.exists():
            return candidate
    sys.exit("molfuse_py library not found; run `cargo build -p molfuse-py` first")


def load_module(tmp):
    target = Path(tmp) / "molfuse_py.so"
    shutil.copy(find_library(), target)
    module_spec = importlib.util.spec_from_file_location("molfuse_py", target)
    module = importlib.util.module_from_spec(module_spec)
    module_spec.loader.exec_module(module)
    return module


def main():
    with tempfile.TemporaryDirectory() as tmp:
        mf = load_module(tmp)

        mols = mf.synth_corpus(12, seed=3)
        assert len(mols) == 12
        m = mols[0]
        back = mf.parse_xyz(m.to_xyz())
        assert back.elements == m.elements
        assert back.coords == m.coords
        assert back.targets == m.targets
        assert m.inchi.startswith("InChI=1S/")
        t = m.targets
        assert abs(t["gap"] - (t["lumo"] - t["homo"])) < 1e-6

        g = m.graph()
        assert g.n_nodes == len(m)
        assert g.n_edges == len(g.edges) == len(g.distances) == len(g.rbf)
        assert all(len(row) == 50 for row in g.rbf)
        assert max(mf.rbf_expand(2.5, cutoff=5.0, n_centers=11)) == 1.0

        folds = mf.split_folds(10, 3, 0)
        assert sorted(len(f) for f in folds) == [3, 3, 4]
        assert sorted(i for f in folds for i in f) == list(range(10))

        assert mf.format_change(mf.percent_change(1.0, 0.7964)) == "+20.36% ↑"
        assert mf.format_change(mf.percent_change(1.0, 1.146)) == "−14.60% ↓"

        geo = mf.Model(modality="geometry-only", seed=1)
        preds, gates = geo.predict(mols)
        assert len(preds) == 12 and gates == []
        shifted = [x.translated([3.0, -2.0, 1.0]) for x in mols]
        preds2, _ = geo.predict(shifted)
        assert all(abs(a - b) <= 1e-9 * max(1.0, abs(a)) for a, b in zip(preds, preds2))

        multi = mf.Model(seed=1)
        text = [[math.sin(i + k) for k in range(mf.TEXT_DIM)] for i in range(12)]
        preds, gates = multi.predict(mols, text)
        assert len(gates) == 12 and all(0.0 < v < 1.0 for row in gates for v in row)

        fused = multi.fuse([0.5 * k for k in range(16)], [1.0] * 16)
        for lo_hi, f in zip(zip(fused["g_tilde"], fused["t_tilde"]), fused["f"]):
            assert min(lo_hi) - 1e-12 <= f <= max(lo_hi) + 1e-12

        path = Path(tmp) / "model.ckpt"
        multi.save(path)
        again = mf.Model.load(path)
        assert again.predict(mols, text)[0] == preds

        desc = mf.Descriptors.from_json(json.dumps({
            "cid": 297, "iupac_name": "methane", "molecular_formula": "CH4",
            "molecular_weight": 16.043, "xlogp": 0.6, "hbond_donors": 0,
            "hbond_acceptors": 0, "rotatable_bonds": 0, "tpsa": 0.0,
            "formal_charge": 0, "synonyms": ["methane", "marsh gas"],
            "fetched_at": "2024-01-01T00:00:00Z", "source_url": "",
        }))
        text_line = desc.description()
        assert "methane" in text_line
        assert len(desc.featurize()) == mf.TEXT_DIM

        emb = Path(tmp) / "emb.jsonl"
        record = {"cid": 297, "text_sha256": mf.sha256_hex(text_line), "vector": [0.25] * mf.TEXT_DIM}
        emb.write_text("# model: stand-in\n" + json.dumps(record) + "\n")
        loaded = mf.load_embeddings(emb)
        assert loaded[297][0] == record["text_sha256"]
        assert loaded[297][1] == record["vector"]

    print("python smoke test passed")


if __name__ == "__main__":
    main()
