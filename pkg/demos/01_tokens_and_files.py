"""Core data types, the token codec, and the canonical corpus file format.

Run:  python3 demos/01_tokens_and_files.py
"""

import tempfile

from layoutdiff import (
    BoundingBox,
    DatasetConfig,
    Layout,
    detokenize_layout,
    load_canonical,
    save_canonical,
    tokenize_layout,
)

# A layout is a scene (H, W) plus category-labeled boxes anchored at their
# bottom-left corner, in scene units.
layout = Layout(
    H=256.0,
    W=256.0,
    boxes=(
        BoundingBox(x=32.0, y=160.0, h=64.0, w=192.0, c=2),   # title
        BoundingBox(x=32.0, y=32.0, h=112.0, w=88.0, c=1),    # text column
        BoundingBox(x=136.0, y=32.0, h=112.0, w=88.0, c=3),   # figure
    ),
)
cfg = DatasetConfig(n_max=8, num_categories=5, h_max=256.0, w_max=256.0)

# tokenize_layout turns the layout into a fixed-size (n_max, 16) matrix with
# every entry in [-1, 1]: 4 box coords, 2 scene dims, 2 filler entries, and
# an 8-entry sign code for the category. Unused rows are PAD (category 0).
tokens = tokenize_layout(layout, cfg)
print("token matrix shape:", tokens.shape)
print("first token:", tokens[0].round(3))
print("a PAD row:   ", tokens[-1].round(3))

back = detokenize_layout(tokens, cfg)
print("roundtrip equals original:", back == layout)

# Corpora live in a line-oriented JSON file: header first, one record per
# line, with normalized key order so reload + resave is byte-identical.
with tempfile.NamedTemporaryFile(suffix=".jsonl", mode="r") as f:
    save_canonical(f.name, cfg, [layout])
    print("\ncanonical file:")
    print(open(f.name).read(), end="")
    cfg2, records = load_canonical(f.name)
    print("loaded records equal originals:", records == [layout])
