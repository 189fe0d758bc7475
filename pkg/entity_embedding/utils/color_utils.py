"""Colour assignment for scatter plots.

Labels get evenly spaced hues on the HSV wheel; the ``analysis.palette``
config section can pin individual labels to fixed hex colours.
"""

from __future__ import annotations

import colorsys
from typing import Dict, Iterable, Mapping, Optional, Tuple

from ..errors import ConfigError

__all__ = ["hex_to_rgb", "rgb_to_hex", "label_palette"]


def hex_to_rgb(value: str) -> Tuple[int, int, int]:
    """Parse ``#rrggbb`` into an RGB triple."""
    text = value.strip().lower()
    if not (text.startswith("#") and len(text) == 7):
        raise ConfigError(f"expected a #rrggbb colour, got {value!r}")
    try:
        return int(text[1:3], 16), int(text[3:5], 16), int(text[5:7], 16)
    except ValueError as exc:
        raise ConfigError(f"expected a #rrggbb colour, got {value!r}") from exc


def rgb_to_hex(rgb: Tuple[int, int, int]) -> str:
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def label_palette(
    labels: Iterable[str],
    overrides: Optional[Mapping[str, str]] = None,
    saturation: float = 0.65,
    value: float = 0.85,
) -> Dict[str, str]:
    """Map each distinct label to a hex colour.

    Distinct labels are ordered by first appearance and spread evenly over
    the hue circle. Overrides win over the generated colours.
    """
    ordered = list(dict.fromkeys(str(l) for l in labels))
    palette: Dict[str, str] = {}
    for k, label in enumerate(ordered):
        r, g, b = colorsys.hsv_to_rgb(k / max(len(ordered), 1), saturation, value)
        palette[label] = rgb_to_hex((round(r * 255), round(g * 255), round(b * 255)))
    for label, colour in (overrides or {}).items():
        palette[str(label)] = rgb_to_hex(hex_to_rgb(colour))
    return palette
