"""
Rendering of attention dumps as CSV matrices, SVG heatmaps and PNG images.
"""

import logging
import os
import typing as t

import imageio.v3 as imageio
import numpy as np

from analysis.attention import AttentionDump

FORMATS = ("csv", "svg", "png")
SVG_CELL_SIZE = 4
PNG_CELL_SIZE = 4


def _gray_levels(weights: np.ndarray) -> np.ndarray:
    """0 (black) for the largest weight of the matrix, 255 (white) for zero"""
    peak = float(weights.max())
    if peak <= 0:
        return np.full(weights.shape, 255, dtype=np.uint8)
    return np.rint(255.0 * (1.0 - weights / peak)).astype(np.uint8)


def write_csv(dump: AttentionDump, path: str):
    np.savetxt(path, dump.weights, fmt="%.6g", delimiter=",")


def render_svg(dump: AttentionDump, cell_size: int = SVG_CELL_SIZE) -> str:
    rows, cols = dump.weights.shape
    levels = _gray_levels(dump.weights)
    lines = [
        '<svg xmlns="http://www.w3.org/2000/svg"'
        f' width="{cols * cell_size}" height="{rows * cell_size}">',
        f"<title>{dump.name}</title>",
    ]
    for i in range(rows):
        for j in range(cols):
            level = int(levels[i, j])
            lines.append(
                f'<rect x="{j * cell_size}" y="{i * cell_size}" width="{cell_size}"'
                f' height="{cell_size}" fill="rgb({level},{level},{level})"/>'
            )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(dump: AttentionDump, path: str):
    with open(path, "w", encoding="utf-8") as file:
        file.write(render_svg(dump))


def write_png(dump: AttentionDump, path: str, cell_size: int = PNG_CELL_SIZE):
    image = np.kron(_gray_levels(dump.weights), np.ones((cell_size, cell_size)))
    imageio.imwrite(path, image.astype(np.uint8))


WRITERS = {"csv": write_csv, "svg": write_svg, "png": write_png}


def write_heatmaps(
    dumps: t.Iterable[AttentionDump],
    out_dir: str,
    formats: t.Sequence[str] = FORMATS,
) -> t.List[str]:
    """
    Write every dump in every format as {stage}_{module}_L{layer}_H{head}.{ext}
    :return: The written paths
    """
    unknown = set(formats) - set(WRITERS)
    if unknown:
        raise ValueError(f"Unknown heatmap formats {sorted(unknown)}")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for dump in dumps:
        for extension in formats:
            path = os.path.join(out_dir, f"{dump.name}.{extension}")
            WRITERS[extension](dump, path)
            paths.append(path)
    logging.info(f"Wrote {len(paths)} heatmap files to {out_dir}")
    return paths
