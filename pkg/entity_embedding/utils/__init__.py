"""Numerics, file formats, data sources and plot rendering helpers."""