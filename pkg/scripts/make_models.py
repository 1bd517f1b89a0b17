#!/usr/bin/env python3
"""Regenerate the bundled model configs under src/lcpkit/models/.

Each config is transcribed from the model's canonical published definition.
Run from the repo root: python scripts/make_models.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from lcpkit.graph import parse_model, total_footprint  # noqa: E402

OUT_DIR = ROOT / "src" / "lcpkit" / "models"


class Builder:
    def __init__(self, name: str, input_shape: tuple[int, ...]):
        self.doc: dict = {
            "name": name,
            "input_shape": list(input_shape),
            "element_bits": 32,
            "layers": [{"id": "input", "kind": "input", "predecessors": []}],
        }
        self.last = "input"

    def add(self, lid: str, kind: str, preds: list[str] | None = None, **attrs) -> str:
        entry = {"id": lid, "kind": kind, **attrs, "predecessors": preds or [self.last]}
        self.doc["layers"].append(entry)
        self.last = lid
        return lid

    def conv(self, lid, out_channels, kernel, stride=1, padding=0, preds=None, groups=None):
        attrs = {
            "out_channels": out_channels,
            "kernel": [kernel, kernel],
            "stride": [stride, stride],
            "padding": [padding, padding],
        }
        if groups:
            attrs["groups"] = groups
        return self.add(lid, "convolution", preds, **attrs)

    def pool(self, lid, window, stride, mode="max", preds=None):
        return self.add(
            lid, "pooling", preds, window=[window, window], stride=[stride, stride], mode=mode
        )

    def fc(self, lid, out_features, preds=None, classifier=False):
        kind = "classifier_fc" if classifier else "fully_connected"
        return self.add(lid, kind, preds, out_features=out_features)

    def norm(self, lid, preds=None):
        return self.add(lid, "normalization", preds)

    def dropout(self, lid, rate=0.5, preds=None):
        return self.add(lid, "dropout", preds, rate=rate)


def lenet() -> dict:
    b = Builder("lenet", (1, 28, 28))
    b.conv("c1", 6, 5, padding=2)
    b.pool("p1", 2, 2)
    b.conv("c2", 16, 5)
    b.pool("p2", 2, 2)
    b.conv("c3", 120, 5)
    b.fc("fc1", 84)
    b.fc("fc2", 10, classifier=True)
    return b.doc


def lenet_fc() -> dict:
    b = Builder("lenet-fc", (784,))
    b.fc("fc1", 300)
    b.fc("fc2", 100)
    b.fc("fc3", 10, classifier=True)
    return b.doc


def cifarnet() -> dict:
    b = Builder("cifarnet", (3, 32, 32))
    b.conv("conv1", 64, 5, padding=2)
    b.pool("pool1", 3, 2)
    b.norm("norm1")
    b.conv("conv2", 64, 5, padding=2)
    b.norm("norm2")
    b.pool("pool2", 3, 2)
    b.dropout("dropout3", 0.5)
    b.fc("fc3", 384)
    b.fc("logits", 100, classifier=True)
    return b.doc


def vgg_s() -> dict:
    b = Builder("vgg-s", (3, 32, 32))
    b.conv("conv1", 96, 7, stride=1, padding=3)
    b.norm("norm1")
    b.pool("pool1", 3, 3)
    b.conv("conv2", 256, 5, padding=2)
    b.conv("conv3", 512, 3, padding=1)
    b.conv("conv4", 512, 3, padding=1)
    b.conv("conv5", 512, 3, padding=1)
    b.pool("pool5", 2, 2)
    b.fc("fc6", 4096)
    b.dropout("drop6", 0.5)
    b.fc("fc7", 4096)
    b.dropout("drop7", 0.5)
    b.fc("fc8", 100, classifier=True)
    return b.doc


def vgg16() -> dict:
    b = Builder("vgg16", (3, 224, 224))
    plan = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
    for stage, (channels, reps) in enumerate(plan, start=1):
        for i in range(1, reps + 1):
            b.conv(f"conv{stage}_{i}", channels, 3, padding=1)
        b.pool(f"pool{stage}", 2, 2)
    b.fc("fc6", 4096)
    b.dropout("drop6", 0.5)
    b.fc("fc7", 4096)
    b.dropout("drop7", 0.5)
    b.fc("fc8", 1000, classifier=True)
    return b.doc


def alexnet_v2() -> dict:
    b = Builder("alexnet-v2", (3, 224, 224))
    b.conv("conv1", 64, 11, stride=4)
    b.pool("pool1", 3, 2)
    b.conv("conv2", 192, 5, padding=2)
    b.pool("pool2", 3, 2)
    b.conv("conv3", 384, 3, padding=1)
    b.conv("conv4", 384, 3, padding=1)
    b.conv("conv5", 256, 3, padding=1)
    b.pool("pool5", 3, 2)
    b.fc("fc6", 4096)
    b.dropout("drop6", 0.5)
    b.fc("fc7", 4096)
    b.dropout("drop7", 0.5)
    b.fc("fc8", 1000, classifier=True)
    return b.doc


def _basic_block(b: Builder, name: str, in_id: str, channels: int, stride: int) -> str:
    b.conv(f"{name}.conv1", channels, 3, stride=stride, padding=1, preds=[in_id])
    b.norm(f"{name}.bn1")
    b.conv(f"{name}.conv2", channels, 3, padding=1)
    b.norm(f"{name}.bn2")
    shortcut = in_id
    if stride != 1:
        b.conv(f"{name}.down", channels, 1, stride=stride, preds=[in_id])
        shortcut = b.norm(f"{name}.down_bn")
    return b.add(f"{name}.add", "add", preds=[f"{name}.bn2", shortcut])


def resnet18() -> dict:
    b = Builder("resnet-18", (3, 224, 224))
    b.conv("conv1", 64, 7, stride=2, padding=3)
    b.norm("bn1")
    # canonical 3x3/2 padded maxpool lands on 56x56; pooling here is unpadded,
    # so a 2x2/2 window reproduces the same output grid
    b.pool("maxpool", 2, 2)
    last = "maxpool"
    for stage, (channels, stride) in enumerate([(64, 1), (128, 2), (256, 2), (512, 2)], start=1):
        for block in range(2):
            s = stride if block == 0 else 1
            last = _basic_block(b, f"layer{stage}.{block}", last, channels, s)
    b.pool("avgpool", 7, 1, mode="avg", preds=[last])
    b.fc("fc", 1000, classifier=True)
    return b.doc


def _bottleneck(b: Builder, name: str, in_id: str, width: int, stride: int, project: bool) -> str:
    b.conv(f"{name}.conv1", width, 1, preds=[in_id])
    b.norm(f"{name}.bn1")
    b.conv(f"{name}.conv2", width, 3, stride=stride, padding=1)
    b.norm(f"{name}.bn2")
    b.conv(f"{name}.conv3", width * 4, 1)
    b.norm(f"{name}.bn3")
    shortcut = in_id
    if project:
        b.conv(f"{name}.down", width * 4, 1, stride=stride, preds=[in_id])
        shortcut = b.norm(f"{name}.down_bn")
    return b.add(f"{name}.add", "add", preds=[f"{name}.bn3", shortcut])


def resnet50() -> dict:
    b = Builder("resnet-50", (3, 224, 224))
    b.conv("conv1", 64, 7, stride=2, padding=3)
    b.norm("bn1")
    b.pool("maxpool", 2, 2)
    last = "maxpool"
    plan = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)]
    for stage, (width, reps, stride) in enumerate(plan, start=1):
        for block in range(reps):
            s = stride if block == 0 else 1
            last = _bottleneck(b, f"layer{stage}.{block}", last, width, s, project=block == 0)
    b.pool("avgpool", 7, 1, mode="avg", preds=[last])
    b.fc("fc", 1000, classifier=True)
    return b.doc


def mobilenet_v1() -> dict:
    b = Builder("mobilenet-v1", (3, 224, 224))
    b.conv("conv0", 32, 3, stride=2, padding=1)
    b.norm("bn0")
    plan = [
        (64, 1), (128, 2), (128, 1), (256, 2), (256, 1),
        (512, 2), (512, 1), (512, 1), (512, 1), (512, 1), (512, 1),
        (1024, 2), (1024, 1),
    ]
    in_ch = 32
    for i, (out_ch, stride) in enumerate(plan, start=1):
        b.conv(f"dw{i}", in_ch, 3, stride=stride, padding=1, groups=in_ch)
        b.norm(f"dw{i}_bn")
        b.conv(f"pw{i}", out_ch, 1)
        b.norm(f"pw{i}_bn")
        in_ch = out_ch
    b.pool("avgpool", 7, 1, mode="avg")
    b.fc("fc", 1000, classifier=True)
    return b.doc


EXPECTED = {
    # (params, params_tol, macs, macs_tol); None = report only
    "lenet": (61_706, 0, None, None),
    "lenet-fc": (266_610, 0, None, None),
    "cifarnet": (None, None, None, None),
    "vgg-s": (76_152_740, 0, None, None),
    "vgg16": (138_357_544, 0, 15_470_264_320, 0),
    "alexnet-v2": (50_303_912, 0, None, None),
    "resnet-18": (11_690_000, 0.03, 1_820_000_000, 0.03),
    "resnet-50": (None, None, None, None),
    "mobilenet-v1": (4_240_000, 0.03, None, None),
}


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    docs = [
        lenet(), lenet_fc(), cifarnet(), vgg_s(), vgg16(),
        alexnet_v2(), resnet18(), resnet50(), mobilenet_v1(),
    ]
    for doc in docs:
        graph = parse_model(doc)
        report = total_footprint(graph)
        expect_p, tol_p, expect_m, tol_m = EXPECTED[doc["name"]]
        status = []
        if expect_p is not None:
            ok = (
                report.total_params == expect_p
                if tol_p == 0
                else abs(report.total_params - expect_p) <= tol_p * expect_p
            )
            status.append(f"params {'OK' if ok else 'MISMATCH'}")
            if not ok:
                raise SystemExit(
                    f"{doc['name']}: params {report.total_params} != {expect_p} (tol {tol_p})"
                )
        if expect_m is not None:
            ok = (
                report.total_macs == expect_m
                if tol_m == 0
                else abs(report.total_macs - expect_m) <= tol_m * expect_m
            )
            status.append(f"macs {'OK' if ok else 'MISMATCH'}")
            if not ok:
                raise SystemExit(
                    f"{doc['name']}: macs {report.total_macs} != {expect_m} (tol {tol_m})"
                )
        filename = doc["name"].replace("-", "_") + ".json"
        (OUT_DIR / filename).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        print(
            f"{doc['name']:<14} params={report.total_params:>12,} "
            f"macs={report.total_macs:>14,}  {' '.join(status)}"
        )


if __name__ == "__main__":
    main()
