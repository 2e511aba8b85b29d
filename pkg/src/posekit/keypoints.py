"""18-point body keypoints: parsing, left-to-right ordering, body-part boxes."""
import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ParseError

log = logging.getLogger(__name__)

SLOTS = ("nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow",
         "l_wrist", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
         "r_eye", "l_eye", "r_ear", "l_ear")
NUM_SLOTS = len(SLOTS)
_S = {name: i for i, name in enumerate(SLOTS)}

PART_GROUPS = {
    "face": (_S["nose"], _S["r_eye"], _S["l_eye"], _S["r_ear"], _S["l_ear"]),
    "upper_body": (_S["neck"], _S["r_shoulder"], _S["l_shoulder"], _S["r_hip"], _S["l_hip"]),
    "lower_body": (_S["r_hip"], _S["l_hip"], _S["r_knee"], _S["l_knee"], _S["r_ankle"],
                   _S["l_ankle"]),
    "left_arm": (_S["l_shoulder"], _S["l_elbow"], _S["l_wrist"]),
    "right_arm": (_S["r_shoulder"], _S["r_elbow"], _S["r_wrist"]),
    "full_body": tuple(range(NUM_SLOTS)),
}
PART_LABELS = tuple(PART_GROUPS)

MIN_BOX_AREA = 600.0
BOX_MARGIN = 0.10
# half-width given to a dimension in which all member keypoints coincide
ZERO_SPAN_HALF_WIDTH = 12.5


class Box(NamedTuple):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return max(self.width, 0.0) * max(self.height, 0.0)

    def contains(self, other, tol=1e-9):
        return (other.x_min >= self.x_min - tol and other.y_min >= self.y_min - tol
                and other.x_max <= self.x_max + tol and other.y_max <= self.y_max + tol)

    def intersect(self, other):
        return Box(max(self.x_min, other.x_min), max(self.y_min, other.y_min),
                   min(self.x_max, other.x_max), min(self.y_max, other.y_max))


@dataclass(frozen=True)
class BodyPartBoxes:
    face: Optional[Box] = None
    upper_body: Optional[Box] = None
    lower_body: Optional[Box] = None
    left_arm: Optional[Box] = None
    right_arm: Optional[Box] = None
    full_body: Optional[Box] = None

    def present(self):
        return {k: getattr(self, k) for k in PART_LABELS if getattr(self, k) is not None}


@dataclass
class KeypointSet:
    """Persons as an (N, 18, 2) array; missing keypoints are NaN."""
    persons: np.ndarray
    width: int
    height: int
    timestamp: float = 0.0
    image: str = ""
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.persons)

    @property
    def image_size(self):
        return (self.width, self.height)

    def visible(self, person):
        return ~np.isnan(self.persons[person, :, 0])


def _representative(person):
    vis = ~np.isnan(person[:, 0])
    return person[vis].mean(axis=0)


def sort_left_to_right(persons):
    """Order persons by mean x of visible keypoints; ties by mean y, then input order."""
    keys = [(*_representative(p), i) for i, p in enumerate(persons)]
    order = sorted(range(len(persons)), key=lambda i: keys[i])
    return persons[order] if len(persons) else persons


def _number(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{what} must be a number, got {v!r}")
    if not np.isfinite(v):
        raise ParseError(f"{what} is not finite")
    return float(v)


def parse_keypoints(raw):
    """Parse a keypoint document (dict or JSON text) into a sorted KeypointSet."""
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ParseError("keypoint document must be a JSON object")
    for key in ("width", "height", "people"):
        if key not in raw:
            raise ParseError(f"missing field {key!r}")
    width, height = raw["width"], raw["height"]
    if not (isinstance(width, int) and isinstance(height, int)) or width < 1 or height < 1:
        raise ParseError("width and height must be positive integers")
    timestamp = _number(raw.get("timestamp", 0.0), "timestamp")
    image = raw.get("image", "")
    if not isinstance(image, str):
        raise ParseError("image must be a string")
    people = raw["people"]
    if not isinstance(people, list):
        raise ParseError("people must be a list")

    warnings = []
    persons = []
    for pi, person in enumerate(people):
        if not isinstance(person, dict) or "keypoints" not in person:
            raise ParseError(f"person {pi} lacks a keypoints list")
        kps = person["keypoints"]
        if not isinstance(kps, list) or len(kps) != NUM_SLOTS:
            n = len(kps) if isinstance(kps, list) else "?"
            raise ParseError(f"person {pi} has {n} keypoints; only the 18-point layout is supported")
        arr = np.full((NUM_SLOTS, 2), np.nan)
        for si, pt in enumerate(kps):
            if not isinstance(pt, (list, tuple)) or len(pt) != 2:
                raise ParseError(f"person {pi} slot {si} is not an [x, y] pair")
            x = _number(pt[0], f"person {pi} slot {si} x")
            y = _number(pt[1], f"person {pi} slot {si} y")
            if x == -1 and y == -1:
                continue
            if not (0 <= x < width and 0 <= y < height):
                warnings.append(f"person {pi} slot {si} outside the image; treated as missing")
                continue
            arr[si] = (x, y)
        if np.all(np.isnan(arr[:, 0])):
            warnings.append(f"person {pi} has no visible keypoints; dropped")
            continue
        persons.append(arr)
    for w in warnings:
        log.warning(w)
    persons = np.array(persons).reshape(-1, NUM_SLOTS, 2)
    return KeypointSet(sort_left_to_right(persons), width, height, timestamp, image, warnings)


def serialize_keypoints(kps):
    people = []
    for person in kps.persons:
        pts = [[-1, -1] if np.isnan(x) else [float(x), float(y)] for x, y in person]
        people.append({"keypoints": pts})
    return {"image": kps.image, "width": int(kps.width), "height": int(kps.height),
            "timestamp": float(kps.timestamp), "people": people}


def _span_box(pts):
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = hi - lo
    pad = np.where(span > 0, BOX_MARGIN * span, 0.0)
    lo, hi = lo - pad, hi + pad
    mid = (lo + hi) / 2.0
    flat = span == 0
    lo = np.where(flat, mid - ZERO_SPAN_HALF_WIDTH, lo)
    hi = np.where(flat, mid + ZERO_SPAN_HALF_WIDTH, hi)
    return Box(lo[0], lo[1], hi[0], hi[1])


def extract_boxes(person, image_size, min_area=MIN_BOX_AREA):
    """Six body-part boxes for one person (an 18x2 array, NaN = missing).

    A group needs two visible members; each box spans its members plus 10%
    of the span per side, is clipped to the full-body box and the image, and
    is dropped when its area is below ``min_area``.
    """
    person = np.asarray(person, dtype=float)
    vis = ~np.isnan(person[:, 0])
    if vis.sum() < 2:
        return BodyPartBoxes()
    w, h = image_size
    frame = Box(0.0, 0.0, float(w - 1), float(h - 1))
    full = _span_box(person[vis]).intersect(frame)
    boxes = {}
    for label, members in PART_GROUPS.items():
        m = [i for i in members if vis[i]]
        if len(m) < 2:
            continue
        box = full if label == "full_body" else _span_box(person[m]).intersect(full)
        if box.width > 0 and box.height > 0 and box.area >= min_area:
            boxes[label] = Box(*(float(v) for v in box))
    return BodyPartBoxes(**boxes)
