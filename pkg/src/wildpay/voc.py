"""PASCAL VOC annotation XML: parsing and serialization.

Covers the subset of the format the pipeline produces and consumes —
``filename``, image ``size`` and a list of ``object`` entries, each with a
class name, optional pose/truncated/difficult flags and an integer
``bndbox``.  ``parse_voc_xml(serialize_voc_xml(doc))`` returns an equal
document.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .geometry import BoundingBox


class VocError(ValueError):
    """Malformed or incomplete VOC annotation XML."""


@dataclass(frozen=True)
class VocObject:
    """One annotated object with 1-based inclusive integer pixel bounds."""

    name: str
    xmin: int
    ymin: int
    xmax: int
    ymax: int
    pose: str = "Unspecified"
    truncated: int = 0
    difficult: int = 0

    def __post_init__(self) -> None:
        if not self.name:
            raise VocError("object name must be non-empty")
        if self.xmax < self.xmin or self.ymax < self.ymin:
            raise VocError(
                f"inverted bndbox ({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})"
            )

    def to_bounding_box(self) -> BoundingBox:
        return BoundingBox(float(self.xmin), float(self.ymin), float(self.xmax), float(self.ymax))


@dataclass(frozen=True)
class AnnotationDoc:
    """A VOC annotation file: image identity, dimensions and objects."""

    filename: str
    width: int
    height: int
    depth: int = 3
    folder: str = ""
    objects: tuple[VocObject, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.filename:
            raise VocError("filename must be non-empty")
        if self.width < 1 or self.height < 1 or self.depth < 1:
            raise VocError(
                f"size must be positive, got {self.width}x{self.height}x{self.depth}"
            )
        for index, obj in enumerate(self.objects):
            if obj.xmin < 0 or obj.ymin < 0 or obj.xmax > self.width or obj.ymax > self.height:
                raise VocError(
                    f"object {index} ({obj.name!r}) box "
                    f"({obj.xmin}, {obj.ymin}, {obj.xmax}, {obj.ymax}) "
                    f"lies outside the {self.width}x{self.height} image"
                )

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(obj.name for obj in self.objects)


def _child_text(parent: ET.Element, tag: str, context: str) -> str:
    node = parent.find(tag)
    if node is None or node.text is None:
        raise VocError(f"missing <{tag}> in <{context}>")
    return node.text.strip()


def _child_int(parent: ET.Element, tag: str, context: str) -> int:
    text = _child_text(parent, tag, context)
    try:
        return int(text)
    except ValueError:
        raise VocError(f"<{tag}> in <{context}> is not an integer: {text!r}") from None


def _optional_int(parent: ET.Element, tag: str, default: int) -> int:
    node = parent.find(tag)
    if node is None or node.text is None or not node.text.strip():
        return default
    try:
        return int(node.text.strip())
    except ValueError:
        raise VocError(f"<{tag}> is not an integer: {node.text!r}") from None


def parse_voc_xml(xml_text: str | bytes) -> AnnotationDoc:
    """Parse VOC annotation XML into an :class:`AnnotationDoc`.

    Raises :class:`VocError` for malformed XML, a root other than
    ``<annotation>``, or missing/non-integer required fields.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise VocError(f"malformed XML: {exc}") from exc
    if root.tag != "annotation":
        raise VocError(f"expected <annotation> root, got <{root.tag}>")

    filename = _child_text(root, "filename", "annotation")
    size = root.find("size")
    if size is None:
        raise VocError("missing <size> in <annotation>")
    width = _child_int(size, "width", "size")
    height = _child_int(size, "height", "size")
    depth = _optional_int(size, "depth", 3)

    folder_node = root.find("folder")
    folder = folder_node.text.strip() if folder_node is not None and folder_node.text else ""

    objects: list[VocObject] = []
    for index, obj in enumerate(root.findall("object")):
        name = _child_text(obj, "name", "object")
        bndbox = obj.find("bndbox")
        if bndbox is None:
            raise VocError(f"missing <bndbox> in object {name!r}")
        pose_node = obj.find("pose")
        pose = (
            pose_node.text.strip()
            if pose_node is not None and pose_node.text and pose_node.text.strip()
            else "Unspecified"
        )
        try:
            objects.append(
                VocObject(
                    name=name,
                    xmin=_child_int(bndbox, "xmin", "bndbox"),
                    ymin=_child_int(bndbox, "ymin", "bndbox"),
                    xmax=_child_int(bndbox, "xmax", "bndbox"),
                    ymax=_child_int(bndbox, "ymax", "bndbox"),
                    pose=pose,
                    truncated=_optional_int(obj, "truncated", 0),
                    difficult=_optional_int(obj, "difficult", 0),
                )
            )
        except VocError as exc:
            raise VocError(f"object {index} ({name!r}): {exc}") from exc
    return AnnotationDoc(
        filename=filename,
        width=width,
        height=height,
        depth=depth,
        folder=folder,
        objects=tuple(objects),
    )


def serialize_voc_xml(doc: AnnotationDoc) -> str:
    """Render an :class:`AnnotationDoc` as indented VOC XML."""
    root = ET.Element("annotation")
    if doc.folder:
        ET.SubElement(root, "folder").text = doc.folder
    ET.SubElement(root, "filename").text = doc.filename
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(doc.width)
    ET.SubElement(size, "height").text = str(doc.height)
    ET.SubElement(size, "depth").text = str(doc.depth)
    for obj in doc.objects:
        node = ET.SubElement(root, "object")
        ET.SubElement(node, "name").text = obj.name
        ET.SubElement(node, "pose").text = obj.pose
        ET.SubElement(node, "truncated").text = str(obj.truncated)
        ET.SubElement(node, "difficult").text = str(obj.difficult)
        bndbox = ET.SubElement(node, "bndbox")
        ET.SubElement(bndbox, "xmin").text = str(obj.xmin)
        ET.SubElement(bndbox, "ymin").text = str(obj.ymin)
        ET.SubElement(bndbox, "xmax").text = str(obj.xmax)
        ET.SubElement(bndbox, "ymax").text = str(obj.ymax)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"
