"""Write in-memory fixture datasets to disk as a manifest plus PNGs."""

from pathlib import Path

from PIL import Image

from crispbench.edgemap import save_gray
from crispbench.manifest import dump_manifest


def write_dataset(dataset, root, bits=8) -> Path:
    root = Path(root)
    (root / "pred").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(exist_ok=True)
    entries = []
    for i, (pred, ann) in enumerate(dataset):
        ident = f"img{i:03d}"
        save_gray(pred, root / "pred" / f"{ident}.png", bits=bits)
        gts = []
        for j, m in enumerate(ann.maps):
            name = f"gt/{ident}_{j}.png"
            Image.fromarray(m.bits.astype("uint8") * 255, mode="L").save(root / name)
            gts.append(name)
        entries.append((ident, f"pred/{ident}.png", gts))
    manifest = root / "manifest.jsonl"
    manifest.write_text(dump_manifest(entries, {"name": root.name}))
    return manifest
