"""Minimal scatter renderers: SVG through lxml, PNG through Pillow.

Plot data is always written as CSV first; these renderers only give a
quick visual check of t-SNE maps and distance scatters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from lxml import etree as ET
from PIL import Image, ImageDraw

from ..errors import ConfigError, ShapeError
from .color_utils import hex_to_rgb, label_palette

logger = logging.getLogger(__name__)

__all__ = ["PlotStyle", "render_svg", "render_png", "render_scatter"]

SVG_NS = "http://www.w3.org/2000/svg"


@dataclass(frozen=True)
class PlotStyle:
    width: int = 640
    height: int = 480
    margin: int = 40
    radius: int = 4
    background: str = "#ffffff"
    axis: str = "#333333"
    show_labels: bool = True
    font_size: int = 10


def _pixels(points: np.ndarray, style: PlotStyle) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError(f"scatter needs two columns, got shape {pts.shape}")
    lo = pts.min(axis=0)
    span = np.ptp(pts, axis=0)
    span[span == 0] = 1.0
    inner = np.array([style.width - 2 * style.margin, style.height - 2 * style.margin], dtype=np.float64)
    scaled = (pts - lo) / span * inner
    x = style.margin + scaled[:, 0]
    y = style.height - style.margin - scaled[:, 1]
    return np.column_stack([x, y])


def _colours(labels: Sequence[str], palette: Optional[Dict[str, str]]) -> List[str]:
    palette = palette or label_palette(labels)
    return [palette.get(str(l), "#000000") for l in labels]


def render_svg(
    points: np.ndarray,
    labels: Sequence[str],
    path: Union[str, Path],
    title: str = "",
    palette: Optional[Dict[str, str]] = None,
    style: PlotStyle = PlotStyle(),
) -> Path:
    pix = _pixels(points, style)
    colours = _colours(labels, palette)
    svg = ET.Element(f"{{{SVG_NS}}}svg", nsmap={None: SVG_NS},
                     width=str(style.width), height=str(style.height))
    ET.SubElement(svg, f"{{{SVG_NS}}}rect", width="100%", height="100%", fill=style.background)
    ET.SubElement(svg, f"{{{SVG_NS}}}rect", x=str(style.margin), y=str(style.margin),
                  width=str(style.width - 2 * style.margin), height=str(style.height - 2 * style.margin),
                  fill="none", stroke=style.axis)
    if title:
        heading = ET.SubElement(svg, f"{{{SVG_NS}}}text", x=str(style.margin), y=str(style.margin // 2),
                                fill=style.axis)
        heading.set("font-size", str(style.font_size + 2))
        heading.text = title
    for (x, y), colour, label in zip(pix, colours, labels):
        dot = ET.SubElement(svg, f"{{{SVG_NS}}}circle", cx=f"{x:.2f}", cy=f"{y:.2f}",
                            r=str(style.radius), fill=colour)
        tooltip = ET.SubElement(dot, f"{{{SVG_NS}}}title")
        tooltip.text = str(label)
        if style.show_labels:
            text = ET.SubElement(svg, f"{{{SVG_NS}}}text", x=f"{x + style.radius + 1:.2f}", y=f"{y:.2f}",
                                 fill=style.axis)
            text.set("font-size", str(style.font_size))
            text.text = str(label)
    path = Path(path)
    ET.ElementTree(svg).write(str(path), xml_declaration=True, encoding="utf-8", pretty_print=True)
    return path


def render_png(
    points: np.ndarray,
    labels: Sequence[str],
    path: Union[str, Path],
    title: str = "",
    palette: Optional[Dict[str, str]] = None,
    style: PlotStyle = PlotStyle(),
) -> Path:
    pix = _pixels(points, style)
    colours = _colours(labels, palette)
    img = Image.new("RGB", (style.width, style.height), hex_to_rgb(style.background))
    draw = ImageDraw.Draw(img)
    draw.rectangle([style.margin, style.margin, style.width - style.margin, style.height - style.margin],
                   outline=hex_to_rgb(style.axis))
    if title:
        draw.text((style.margin, style.margin // 4), title, fill=hex_to_rgb(style.axis))
    r = style.radius
    for (x, y), colour, label in zip(pix, colours, labels):
        draw.ellipse([x - r, y - r, x + r, y + r], fill=hex_to_rgb(colour))
        if style.show_labels:
            draw.text((x + r + 1, y - r), str(label), fill=hex_to_rgb(style.axis))
    path = Path(path)
    img.save(path, format="PNG")
    return path


def render_scatter(
    points: np.ndarray,
    labels: Sequence[str],
    base_path: Union[str, Path],
    formats: Sequence[str] = ("svg",),
    title: str = "",
    palette: Optional[Dict[str, str]] = None,
    style: PlotStyle = PlotStyle(),
) -> List[Path]:
    """Render one file per requested format next to *base_path* (suffix replaced)."""
    renderers = {"svg": render_svg, "png": render_png}
    written = []
    for fmt in formats:
        if fmt not in renderers:
            raise ConfigError(f"unknown plot format '{fmt}'")
        target = Path(base_path).with_suffix(f".{fmt}")
        written.append(renderers[fmt](points, labels, target, title, palette, style))
        logger.debug("Rendered %s", target)
    return written
