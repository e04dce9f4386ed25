"""Generate captioned shape scenes, render them, and show that the
classification oracle inverts the renderer exactly.

Run from the repo root:  python3 demos/02_scenes_and_oracle.py
It writes scene_sheet.png next to this script.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from bridgediff.evalmetrics import alignment_score, classify_image
from bridgediff.scenes import generate_scene, render
from bridgediff.utils import image_grid

rng = np.random.default_rng(0)

print("sampled scenes:")
images, pairs = [], []
for _ in range(8):
    spec, caption = generate_scene(rng)
    img = render(spec, 32)
    images.append(img)
    pairs.append((caption, img))
    recovered = classify_image(img)
    print(f"  {caption:45s} oracle round-trip: {recovered == spec}")

report = alignment_score(pairs)
print("\nalignment on perfect renders:")
print(report.to_text())

# a quick exactness sweep, small version of the 10k acceptance check
ok = 0
for _ in range(500):
    spec, _ = generate_scene(rng)
    ok += classify_image(render(spec, 32)) == spec
print(f"\ninverse-oracle sweep: {ok}/500 exact")

out = Path(__file__).parent / "scene_sheet.png"
Image.fromarray(image_grid(images, cols=4), mode="RGB").save(out)
print(f"wrote {out}")
