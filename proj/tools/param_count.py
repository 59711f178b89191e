#!/usr/bin/env python3
"""Closed-form parameter count for an EfficientTempNet stage table.

Usage: param_count.py [STAGES] [--in C] [--out C] [--stem C] [--head C] [--se R]
STAGES uses the CLI syntax, e.g. simple:24:1:2,mbconv:128:4:4
"""
import argparse
import math

DEFAULT = "simple:24:1:2,simple:48:4:4,simple:64:4:3,mbconv:128:4:4,mbconv:256:6:8"


def conv(c_in, c_out, k):
    return c_out * c_in * k * k + c_out


def simple(c_in, c_out, e):
    hidden = e * c_out
    return conv(c_in, hidden, 3) + conv(hidden, c_out, 1)


def mbconv(c_in, c_out, e, se):
    hidden = e * c_in
    squeeze = max(1, math.ceil(se * hidden))
    depthwise = hidden * 9 + hidden
    return (conv(c_in, hidden, 1) + depthwise + conv(hidden, squeeze, 1)
            + conv(squeeze, hidden, 1) + conv(hidden, c_out, 1))


def count(stages, c_in=2, c_out=1, stem=24, head=64, se=0.25):
    total = conv(c_in, stem, 3)
    prev = stem
    for kind, ch, e, layers in stages:
        for _ in range(layers):
            total += simple(prev, ch, e) if kind == "simple" else mbconv(prev, ch, e, se)
            prev = ch
    return total + conv(prev, head, 3) + conv(head, c_out, 1)


def parse(text):
    out = []
    for item in text.split(","):
        kind, ch, e, layers = item.split(":")
        out.append((kind, int(ch), int(e), int(layers)))
    return out


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("stages", nargs="?", default=DEFAULT)
    ap.add_argument("--in", dest="c_in", type=int, default=2)
    ap.add_argument("--out", dest="c_out", type=int, default=1)
    ap.add_argument("--stem", type=int, default=24)
    ap.add_argument("--head", type=int, default=64)
    ap.add_argument("--se", type=float, default=0.25)
    a = ap.parse_args()
    print(count(parse(a.stages), a.c_in, a.c_out, a.stem, a.head, a.se))
