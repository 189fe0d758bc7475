"""Local and remote CSV sources.

Remote sources (``http://`` / ``https://``) are downloaded once into a
cache directory and read from there afterwards.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Union
from urllib.parse import urlparse

import requests

from ..errors import DataSourceError

logger = logging.getLogger(__name__)

__all__ = ["is_remote", "download_csv", "resolve_source"]

USER_AGENT = "entity-embedding-toolkit"


def is_remote(source: Union[str, Path]) -> bool:
    return urlparse(str(source)).scheme in ("http", "https")


def _cache_name(url: str) -> str:
    parsed = urlparse(url)
    base = parsed.path.rstrip("/").split("/")[-1] or "data"
    if not base.lower().endswith(".csv"):
        base += ".csv"
    digest = hashlib.sha1(url.encode("utf-8")).hexdigest()[:12]
    return f"{digest}_{base}"


def download_csv(url: str, cache_dir: Union[str, Path], timeout: float = 30.0) -> Path:
    """Download *url* into *cache_dir* unless a cached copy exists.

    Raises:
        DataSourceError: The request failed or returned an error status.
    """
    cache_dir = Path(cache_dir)
    target = cache_dir / _cache_name(url)
    if target.is_file():
        logger.info("Using cached download %s", target)
        return target

    domain = urlparse(url).netloc or "unknown"
    logger.info("Downloading CSV from %s...", domain)
    try:
        response = requests.get(url, timeout=timeout, headers={"User-Agent": USER_AGENT})
        response.raise_for_status()
    except requests.RequestException as exc:
        raise DataSourceError(f"failed to download {url}: {exc}") from exc

    content_type = response.headers.get("content-type", "").lower()
    if "html" in content_type:
        raise DataSourceError(f"{url} returned HTML, not CSV")
    cache_dir.mkdir(parents=True, exist_ok=True)
    partial = target.with_suffix(".part")
    partial.write_bytes(response.content)
    partial.replace(target)
    logger.info("Saved %s bytes to %s", len(response.content), target)
    return target


def resolve_source(source: Union[str, Path], cache_dir: Union[str, Path]) -> Path:
    """Local path of *source*, downloading it first when it is a URL.

    Raises:
        FileNotFoundError: Local file does not exist.
    """
    if is_remote(source):
        return download_csv(str(source), cache_dir)
    path = Path(source)
    if not path.is_file():
        raise FileNotFoundError(f"CSV file not found: {path}")
    return path
