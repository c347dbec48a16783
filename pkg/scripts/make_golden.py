"""Regenerate the golden model, images and bitstreams under tests/data.

Only needed when the bitstream format changes on purpose; the committed
files are the reference that every platform must reproduce.
"""

import json
import sys
from pathlib import Path

import numpy as np
import skimage.data

from ntc.codec import compress, decompress
from ntc.container import CodecModel, ModelRegistry
from ntc.imageio import write_image
from ntc.trainer import TrainConfig, preprocess_dataset, train
from ntc.transforms import preset

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests" / "data")

images = [skimage.data.camera(), skimage.data.moon(), skimage.data.coins(), skimage.data.text(), skimage.data.brick()]
patches = preprocess_dataset(images, 0, patches_per_image=16) / 255.0
result = train(TrainConfig(lmbda=1e-3, initial_step=1e-3, max_steps=400, seed=0), patches, preset("desk"))
registry = ModelRegistry({7: CodecModel.from_training(result, preset="desk")})
OUT.mkdir(parents=True, exist_ok=True)
registry.save(OUT / "golden_model.ntc1")
registry = ModelRegistry.load(OUT / "golden_model.ntc1")

cases = {
    "gray_crop": skimage.data.camera()[100:181, 200:299],  # odd size, exercises padding
    "tiny": np.full((1, 1), 77, np.uint8),
    "grass": skimage.data.grass()[:64, :48],
}
manifest = {}
for name, img in cases.items():
    write_image(OUT / f"{name}.png", img)
    data = compress(img, 7, registry)
    (OUT / f"{name}.ntcb").write_bytes(data)
    write_image(OUT / f"{name}_decoded.png", decompress(data, registry))
    manifest[name] = {"width": img.shape[1], "height": img.shape[0], "bytes": len(data)}
(OUT / "golden.json").write_text(json.dumps(manifest, indent=2) + "\n")
print(json.dumps(manifest))
