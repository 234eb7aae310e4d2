"""Dataset manifests and PNG decoding.

A manifest is a JSON file ``{"name": str, "entries": [{"image": path,
"mask": path, "id": str}]}``; one entry per instance, so multi-instance
images appear as several entries. Masks are 8-bit grayscale PNGs binarized
at pixel value >= 128. Relative paths resolve against the manifest's
directory. Decoding is lazy; per-entry problems surface as EntryError so a
run can collect them instead of dying on the first bad file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["EntryError", "DatasetEntry", "DatasetManifest", "load_manifest"]

MASK_THRESHOLD = 128


class EntryError(RuntimeError):
    def __init__(self, image_id: str, message: str):
        super().__init__(f"{image_id}: {message}")
        self.image_id = image_id


@dataclass
class DatasetEntry:
    image_id: str
    image_path: Path
    mask_path: Path

    def load(self) -> tuple[np.ndarray, np.ndarray]:
        """Decode to (image float (H, W, 3) in [0, 1], mask bool (H, W))."""
        try:
            with Image.open(self.image_path) as im:
                image = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        except FileNotFoundError:
            raise EntryError(self.image_id, f"missing image {self.image_path}") from None
        except Exception as exc:
            raise EntryError(self.image_id, f"undecodable image: {exc}") from exc
        try:
            with Image.open(self.mask_path) as im:
                mask = np.asarray(im.convert("L")) >= MASK_THRESHOLD
        except FileNotFoundError:
            raise EntryError(self.image_id, f"missing mask {self.mask_path}") from None
        except Exception as exc:
            raise EntryError(self.image_id, f"undecodable mask: {exc}") from exc
        if mask.shape != image.shape[:2]:
            raise EntryError(self.image_id,
                             f"mask {mask.shape} does not match image {image.shape[:2]}")
        return image, mask


@dataclass
class DatasetManifest:
    name: str
    entries: list[DatasetEntry]

    def by_id(self, image_id: str) -> DatasetEntry:
        for entry in self.entries:
            if entry.image_id == image_id:
                return entry
        raise KeyError(image_id)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict) or "entries" not in data:
        raise ValueError(f"{path}: manifest must be an object with 'entries'")
    base = path.parent
    entries = []
    seen: set[str] = set()
    for i, raw in enumerate(data["entries"]):
        try:
            image_id = str(raw["id"])
            image_path = base / raw["image"]
            mask_path = base / raw["mask"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: entry {i} malformed: {exc}") from exc
        if image_id in seen:
            raise ValueError(f"{path}: duplicate entry id {image_id!r}")
        seen.add(image_id)
        entries.append(DatasetEntry(image_id=image_id, image_path=image_path, mask_path=mask_path))
    return DatasetManifest(name=str(data.get("name", path.stem)), entries=entries)
