#!/usr/bin/env python3
"""Render audit thumbnails for the 17-set catalog into docs/catalog/.

Writes base/context/composite PNGs per set plus an index.md table, so the
reconstructed glyph geometry can be reviewed visually.
"""

import os
import sys

from gestalt_probe.canvas import Polarity, RenderStyle, render, write_png
from gestalt_probe.pomerantz import all_sets


def main(out_dir="docs/catalog", size=160):
    os.makedirs(out_dir, exist_ok=True)
    style = RenderStyle(polarity=Polarity.BLACK_ON_WHITE)
    lines = [
        "# Stimulus catalog",
        "",
        "Reconstructed vector glyphs for the 17 discrimination sets,",
        "rendered black-on-white. Composites are the primitive-list union of",
        "base and context.",
        "",
        "| set | base a | base b | context | composite a | composite b |",
        "|-----|--------|--------|---------|-------------|-------------|",
    ]
    for s in all_sets():
        cells = []
        images = {
            "base_a": s.base_glyphs[0],
            "base_b": s.base_glyphs[1],
            "context": s.context_glyph,
            "composite_a": s.composite_glyphs[0],
            "composite_b": s.composite_glyphs[1],
        }
        for tag, glyph in images.items():
            fname = f"set{s.set_id:02d}_{tag}.png"
            write_png(render(glyph, style, size), os.path.join(out_dir, fname))
            cells.append(f"![{tag}]({fname})")
        lines.append(f"| {s.set_id} | " + " | ".join(cells) + " |")
    with open(os.path.join(out_dir, "index.md"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {17 * 5} thumbnails to {out_dir}")


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:]))
