"""Synthetic fixtures shared by several test modules."""
import json

import numpy as np

from ctbkit.dataset import ContextualBlock, Dataset, ImageAnnotation, IntegralUnit, PredictionSet
from ctbkit.geometry import Polygon


def rect(x1, y1, x2, y2):
    return Polygon([(x1, y1), (x2, y1), (x2, y2), (x1, y2)])


def block_page(image_id, origins, lines=2, words=2, w=40, h=20, gap=4, lead=6, width=2000, height=2000):
    """Blocks of ``lines x words`` word boxes whose reading order is row-major."""
    units, blocks = [], []
    for b, (ox, oy) in enumerate(origins):
        ids = []
        for li in range(lines):
            for wi in range(words):
                uid = f"{image_id}_b{b}_u{li}{wi}"
                x1 = ox + wi * (w + gap)
                y1 = oy + li * (h + lead)
                units.append(IntegralUnit(uid, rect(x1, y1, x1 + w, y1 + h)))
                ids.append(uid)
        blocks.append(ContextualBlock(f"b{b}", tuple(ids)))
    return ImageAnnotation(image_id, width, height, tuple(units), tuple(blocks))


def random_image(rng, image_id, max_units=6, width=400, height=300, integer=True):
    """Random non-overlapping-ish word boxes partitioned into random ordered blocks."""
    n = int(rng.integers(1, max_units + 1))
    units = []
    for k in range(n):
        x1 = float(rng.integers(0, width - 60)) if integer else rng.uniform(0, width - 60)
        y1 = float(rng.integers(0, height - 30)) if integer else rng.uniform(0, height - 30)
        ww = float(rng.integers(10, 60))
        hh = float(rng.integers(8, 30))
        units.append(IntegralUnit(f"u{k}", rect(x1, y1, x1 + ww, y1 + hh)))
    order = [u.unit_id for u in units]
    rng.shuffle(order)
    blocks, k, b = [], 0, 0
    while k < n:
        size = int(rng.integers(1, n - k + 1))
        blocks.append(ContextualBlock(f"b{b}", tuple(order[k : k + size])))
        k += size
        b += 1
    return ImageAnnotation(image_id, width, height, tuple(units), tuple(blocks))


def random_dataset(seed, n_images=3, max_units=6):
    rng = np.random.default_rng(seed)
    return Dataset(tuple(random_image(rng, f"img{i}", max_units) for i in range(n_images)))


def perturb_predictions(rng, gt: Dataset, jitter=6.0, drop=0.2, false_alarms=2):
    """Noisy predictions: jittered boxes, dropped units, false alarms, shuffled blocks."""
    images = []
    for im in gt.images:
        units = []
        for u in im.units:
            if rng.random() < drop:
                continue
            x1, y1 = u.polygon.vertices[0]
            x2, y2 = u.polygon.vertices[2]
            d = rng.uniform(-jitter, jitter, size=4)
            nx1, ny1 = min(x1 + d[0], x2 + d[2] - 1), min(y1 + d[1], y2 + d[3] - 1)
            units.append(IntegralUnit(f"d_{u.unit_id}", rect(nx1, ny1, x2 + d[2], y2 + d[3])))
        for k in range(int(rng.integers(0, false_alarms + 1))):
            x, y = rng.uniform(0, im.width - 40), rng.uniform(0, im.height - 20)
            units.append(IntegralUnit(f"fa{k}", rect(x, y, x + 30, y + 15)))
        ids = [u.unit_id for u in units]
        rng.shuffle(ids)
        blocks, k, b = [], 0, 0
        while k < len(ids):
            size = int(rng.integers(1, len(ids) - k + 1))
            blocks.append(ContextualBlock(f"p{b}", tuple(ids[k : k + size])))
            k += size
            b += 1
        perm = rng.permutation(len(units))
        images.append(ImageAnnotation(im.image_id, None, None, tuple(units[i] for i in perm), tuple(blocks)))
    return PredictionSet(tuple(images))


def gt_doc(images):
    """Minimal JSON document builder from plain python structures."""
    return json.dumps({"images": images}).encode()
