"""Dataset and image I/O.

Formats:

* Pascal VOC XML.  VOC pixels are 1-based and inclusive; a ``bndbox`` of
  ``(xmin, ymin, xmax, ymax)`` becomes the continuous box
  ``(xmin - 1, ymin - 1, xmax, ymax)``.  Mixup weights go in an optional
  ``<weight>`` child of ``<object>``.
* COCO JSON.  ``[x, y, w, h]`` becomes ``(x, y, x + w, y + h)``; category
  ids are remapped to dense 0-based ids in ascending id order.  ``iscrowd``
  maps to the difficult flag and an optional ``"weight"`` key carries mixup
  weights.
* Detections as JSON lines ``{"image_id", "class_id", "bbox", "score"}``.

Images are written as PNG so blended pixels survive exactly.
"""
from __future__ import annotations

import decimal
import hashlib
import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import BBox, DomainError, ObjectLabel
from .evaluate import DetectionRecord, GroundTruthRecord

log = logging.getLogger(__name__)

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat",
    "chair", "cow", "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)
IMAGE_DIRS = ("images", "JPEGImages", ".")


class ParseError(DomainError):
    pass


class CodecError(DomainError):
    pass


@dataclass(frozen=True)
class ImageMeta:
    filename: str
    width: int
    height: int
    depth: int = 3


@dataclass
class DatasetEntry:
    image_id: Hashable
    file_name: str
    width: int
    height: int
    labels: list[ObjectLabel] = field(default_factory=list)


@dataclass
class DatasetIndex:
    class_names: tuple[str, ...]
    entries: list[DatasetEntry]
    source_format: str
    category_ids: Optional[tuple[int, ...]] = None
    root: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if len(set(self.class_names)) != len(self.class_names):
            raise DomainError(f"duplicate class names in {self.class_names}")
        k = len(self.class_names)
        for e in self.entries:
            for lab in e.labels:
                if lab.class_id >= k:
                    raise DomainError(f"{e.file_name}: class id {lab.class_id} >= {k}")

    def records(self) -> list[GroundTruthRecord]:
        return [GroundTruthRecord(e.image_id, lab.bbox, lab.class_id, lab.difficult, lab.weight)
                for e in self.entries for lab in e.labels]

    def image_path(self, entry: DatasetEntry) -> Path:
        if self.root is None:
            raise DomainError("dataset has no root directory")
        for d in IMAGE_DIRS:
            p = self.root / d / entry.file_name
            if p.exists():
                return p
        raise CodecError(f"{entry.file_name}: image not found under {self.root}")


# --- numbers -----------------------------------------------------------------

_CTX = decimal.Context(prec=1200)


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _voc_corner_out(x: float) -> str:
    """Text for a 1-based VOC corner that parses back to exactly ``x``."""
    short = _num(x + 1.0)
    if float(_CTX.subtract(decimal.Decimal(short), 1)) == x:
        return short
    return format(_CTX.add(decimal.Decimal(x), 1), "f")


def _voc_corner_in(text: str) -> float:
    return float(_CTX.subtract(decimal.Decimal(text.strip()), 1))


def _coco_extent(lo: float, hi: float) -> float:
    """A width ``w`` such that ``lo + w == hi`` in float arithmetic."""
    w = hi - lo
    cands = [w]
    up = down = w
    for _ in range(16):
        up, down = math.nextafter(up, math.inf), math.nextafter(down, -math.inf)
        cands += [up, down]
    for c in cands:
        if lo + c == hi:
            return c
    raise DomainError(f"cannot represent extent [{lo}, {hi}] exactly")


# --- VOC ---------------------------------------------------------------------

def _child(el: ET.Element, tag: str, path: str) -> ET.Element:
    c = el.find(tag)
    if c is None:
        raise ParseError(f"missing element {path}/{tag}")
    return c


def _text(el: ET.Element, tag: str, path: str) -> str:
    c = _child(el, tag, path)
    if c.text is None or not c.text.strip():
        raise ParseError(f"empty element {path}/{tag}")
    return c.text.strip()


def parse_voc_xml(document, classes: Sequence[str] = VOC_CLASSES,
                  strict: bool = True) -> tuple[ImageMeta, list[GroundTruthRecord]]:
    """Parse one VOC annotation document (text or bytes)."""
    try:
        root = ET.fromstring(document)
    except ET.ParseError as e:
        raise ParseError(f"malformed XML: {e}") from None
    path = root.tag
    size = _child(root, "size", path)
    try:
        meta = ImageMeta(
            filename=(root.findtext("filename") or "").strip(),
            width=int(float(_text(size, "width", f"{path}/size"))),
            height=int(float(_text(size, "height", f"{path}/size"))),
            depth=int(float(size.findtext("depth") or 3)),
        )
    except ValueError as e:
        raise ParseError(f"{path}/size: {e}") from None
    image_id = Path(meta.filename).stem if meta.filename else ""
    lookup = {name: i for i, name in enumerate(classes)}
    records = []
    for n, obj in enumerate(root.findall("object"), start=1):
        opath = f"{path}/object[{n}]"
        name = _text(obj, "name", opath)
        if name not in lookup:
            raise ParseError(f"{opath}: unknown class {name!r}; vocabulary: {list(classes)}")
        bnd = _child(obj, "bndbox", opath)
        bpath = f"{opath}/bndbox"
        try:
            xmin = _voc_corner_in(_text(bnd, "xmin", bpath))
            ymin = _voc_corner_in(_text(bnd, "ymin", bpath))
            xmax = float(_text(bnd, "xmax", bpath))
            ymax = float(_text(bnd, "ymax", bpath))
            difficult = bool(int(float(obj.findtext("difficult") or 0)))
            weight = float(obj.findtext("weight") or 1.0)
        except (ValueError, decimal.InvalidOperation) as e:
            raise ParseError(f"{bpath}: {e}") from None
        try:
            box = BBox(xmin, ymin, xmax, ymax)
        except DomainError as e:
            if strict:
                raise ParseError(f"{bpath}: {e}") from None
            log.warning("skipping %s: %s", bpath, e)
            continue
        records.append(GroundTruthRecord(image_id, box, lookup[name], difficult, weight))
    return meta, records


def voc_xml(entry: DatasetEntry, class_names: Sequence[str]) -> str:
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = entry.file_name
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(entry.width)
    ET.SubElement(size, "height").text = str(entry.height)
    ET.SubElement(size, "depth").text = "3"
    for lab in entry.labels:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = class_names[lab.class_id]
        ET.SubElement(obj, "difficult").text = "1" if lab.difficult else "0"
        if lab.weight != 1.0:
            ET.SubElement(obj, "weight").text = repr(float(lab.weight))
        bnd = ET.SubElement(obj, "bndbox")
        b = lab.bbox
        ET.SubElement(bnd, "xmin").text = _voc_corner_out(b.xmin)
        ET.SubElement(bnd, "ymin").text = _voc_corner_out(b.ymin)
        ET.SubElement(bnd, "xmax").text = _num(b.xmax)
        ET.SubElement(bnd, "ymax").text = _num(b.ymax)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def read_voc_dir(path, classes: Optional[Sequence[str]] = None, strict: bool = True) -> DatasetIndex:
    """Read ``Annotations/*.xml`` (or ``*.xml`` directly under ``path``).

    The vocabulary comes from ``classes``, else ``labels.txt`` in the
    directory, else the 20 VOC classes.
    """
    root = Path(path)
    if classes is None:
        lt = root / "labels.txt"
        classes = tuple(lt.read_text().split()) if lt.exists() else VOC_CLASSES
    ann_dir = root / "Annotations" if (root / "Annotations").is_dir() else root
    entries = []
    for xml_path in sorted(ann_dir.glob("*.xml")):
        try:
            meta, recs = parse_voc_xml(xml_path.read_bytes(), classes, strict)
        except ParseError as e:
            raise ParseError(f"{xml_path}: {e}") from None
        image_id = Path(meta.filename).stem if meta.filename else xml_path.stem
        labels = [ObjectLabel(r.bbox, r.class_id, r.weight, r.difficult) for r in recs]
        entries.append(DatasetEntry(image_id, meta.filename or xml_path.stem + ".jpg",
                                    meta.width, meta.height, labels))
    return DatasetIndex(tuple(classes), entries, "voc", None, root)


# --- COCO --------------------------------------------------------------------

def parse_coco_json(document, strict: bool = False) -> tuple[DatasetIndex, list[GroundTruthRecord]]:
    data = json.loads(document) if isinstance(document, (str, bytes)) else document
    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise ParseError(f"COCO document lacks {key!r}")
    cats = sorted(data["categories"], key=lambda c: c["id"])
    cat_ids = tuple(int(c["id"]) for c in cats)
    dense = {cid: i for i, cid in enumerate(cat_ids)}
    entries = {}
    for img in data["images"]:
        entries[img["id"]] = DatasetEntry(img["id"], img["file_name"], int(img["width"]), int(img["height"]))
    for n, ann in enumerate(data["annotations"]):
        where = f"annotations[{n}]"
        if ann["image_id"] not in entries:
            raise ParseError(f"{where}: unknown image id {ann['image_id']}")
        if ann["category_id"] not in dense:
            raise ParseError(f"{where}: unknown category id {ann['category_id']}; known: {list(cat_ids)}")
        x, y, w, h = (float(v) for v in ann["bbox"])
        if w <= 0 or h <= 0:
            if strict:
                raise ParseError(f"{where}: non-positive box size {ann['bbox']}")
            log.warning("skipping %s: non-positive box size %s", where, ann["bbox"])
            continue
        lab = ObjectLabel(BBox(x, y, x + w, y + h), dense[ann["category_id"]],
                          float(ann.get("weight", 1.0)), bool(ann.get("iscrowd", 0)))
        entries[ann["image_id"]].labels.append(lab)
    index = DatasetIndex(tuple(c["name"] for c in cats), list(entries.values()), "coco", cat_ids)
    return index, index.records()


def coco_json(index: DatasetIndex) -> dict:
    cat_ids = index.category_ids or tuple(range(1, len(index.class_names) + 1))
    images, anns = [], []
    for e in index.entries:
        images.append({"id": e.image_id, "file_name": e.file_name, "width": e.width, "height": e.height})
        for lab in e.labels:
            b = lab.bbox
            w, h = _coco_extent(b.xmin, b.xmax), _coco_extent(b.ymin, b.ymax)
            ann = {"id": len(anns) + 1, "image_id": e.image_id, "category_id": cat_ids[lab.class_id],
                   "bbox": [b.xmin, b.ymin, w, h], "area": w * h, "iscrowd": int(lab.difficult)}
            if lab.weight != 1.0:
                ann["weight"] = lab.weight
            anns.append(ann)
    cats = [{"id": cid, "name": name} for cid, name in zip(cat_ids, index.class_names)]
    return {"images": images, "annotations": anns, "categories": cats}


def read_coco(path, strict: bool = False) -> DatasetIndex:
    """Read a COCO JSON file; images are looked up next to it."""
    p = Path(path)
    if p.is_dir():
        p = p / "annotations.json"
    index, _ = parse_coco_json(p.read_bytes(), strict)
    index.root = p.parent
    return index


def read_dataset(path, classes: Optional[Sequence[str]] = None, strict: bool = False) -> DatasetIndex:
    """COCO when ``path`` is a JSON file or holds ``annotations.json``, else VOC."""
    p = Path(path)
    if not p.exists():
        raise DomainError(f"{p}: no such dataset")
    if p.suffix == ".json" or (p / "annotations.json").exists():
        return read_coco(p, strict)
    return read_voc_dir(p, classes, strict)


# --- images ------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as e:
        raise CodecError(f"{path}: cannot decode image ({e})") from None
    return arr / 255.0


def load_mask(path) -> np.ndarray:
    """Single-channel mask in [0, 1] from any image (converted to grayscale)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise CodecError(f"{path}: cannot decode mask ({e})") from None


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Quantize intensities with round-half-up: ``floor(v * 255 + 0.5)``."""
    return np.clip(np.floor(np.asarray(img) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_image(img: np.ndarray, path, lossy: bool = False) -> Path:
    path = Path(path)
    ext = path.suffix.lower()
    if ext in (".jpg", ".jpeg") and not lossy:
        raise CodecError(f"{path}: JPEG output requires lossy=True")
    if ext not in (".png", ".jpg", ".jpeg"):
        raise CodecError(f"{path}: unsupported image format {ext!r}")
    try:
        Image.fromarray(to_bytes(img), "RGB").save(path)
    except OSError as e:
        raise CodecError(f"{path}: cannot write image ({e})") from None
    return path


# --- datasets out ------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def write_dataset(index: DatasetIndex, images: Optional[Sequence[np.ndarray]], out_dir,
                  fmt: str = "voc", lossy: bool = False) -> dict:
    """Write annotations (and images, if given) plus a hashed ``manifest.json``.

    Image file names are rewritten to ``<stem>.png`` (``.jpg`` with
    ``lossy=True``).  Returns the manifest.
    """
    if fmt not in ("voc", "coco"):
        raise DomainError(f"unknown dataset format {fmt!r}")
    if images is not None and len(images) != len(index.entries):
        raise DomainError("one image per dataset entry required")
    out = Path(out_dir)
    ext = ".jpg" if lossy else ".png"
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        entries = []
        for i, e in enumerate(index.entries):
            name = Path(e.file_name).stem + ext
            entries.append(DatasetEntry(e.image_id, name, e.width, e.height, list(e.labels)))
            if images is not None:
                save_image(images[i], out / "images" / name, lossy)
        written = DatasetIndex(index.class_names, entries, fmt, index.category_ids, out)
        if fmt == "voc":
            (out / "Annotations").mkdir(exist_ok=True)
            (out / "labels.txt").write_text("\n".join(index.class_names) + "\n")
            for e in entries:
                (out / "Annotations" / f"{Path(e.file_name).stem}.xml").write_text(
                    voc_xml(e, index.class_names))
        else:
            _dump_json(coco_json(written), out / "annotations.json")
    except OSError as e:
        raise DomainError(f"{getattr(e, 'filename', out)}: {e.strerror or e}") from None
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "format": fmt,
        "num_images": len(entries),
        "files": [{"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p)} for p in files],
    }
    _dump_json(manifest, out / "manifest.json")
    return manifest


# --- detections --------------------------------------------------------------

def parse_detections(lines: Iterable[str]) -> list[DetectionRecord]:
    out = []
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            d = json.loads(line)
            out.append(DetectionRecord(d["image_id"], BBox(*d["bbox"]), int(d["class_id"]), float(d["score"])))
        except (ValueError, KeyError, TypeError) as e:
            raise ParseError(f"line {n}: {e}") from None
    return out


def read_detections(path) -> list[DetectionRecord]:
    with open(path) as f:
        return parse_detections(f)


def detections_jsonl(dets: Iterable[DetectionRecord]) -> str:
    return "".join(
        json.dumps({"image_id": d.image_id, "class_id": d.class_id,
                    "bbox": list(d.bbox.as_tuple()), "score": d.score}) + "\n"
        for d in dets)
