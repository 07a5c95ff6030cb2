import struct
import sys
import zlib

import numpy as np
import pytest

from cidmp.classifiers import forest_train
from cidmp.datagen import SynthParams, synth_corpus
from cidmp.features import extract_features


def decode_png(path):
    """Minimal PNG reader (8-bit gray/RGB/RGBA, non-interlaced) used as an independent oracle."""
    data = open(path, "rb").read()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    pos, idat, header = 8, b"", None
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat += body
        elif ctype == b"IEND":
            break
    width, height, depth, color, _, _, interlace = header
    assert depth == 8 and interlace == 0
    channels = {0: 1, 2: 3, 6: 4}[color]
    raw = zlib.decompress(idat)
    stride = width * channels
    out = np.zeros((height, stride), dtype=np.int64)
    prev = np.zeros(stride, dtype=np.int64)
    for row in range(height):
        ftype = raw[row * (stride + 1)]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=row * (stride + 1) + 1).astype(np.int64)
        cur = np.zeros(stride, dtype=np.int64)
        for i in range(stride):
            a = cur[i - channels] if i >= channels else 0
            b = prev[i]
            c = prev[i - channels] if i >= channels else 0
            if ftype == 0:
                pred = 0
            elif ftype == 1:
                pred = a
            elif ftype == 2:
                pred = b
            elif ftype == 3:
                pred = (a + b) // 2
            else:
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if pa <= pb and pa <= pc else (b if pb <= pc else c)
            cur[i] = (line[i] + pred) & 0xFF
        out[row] = cur
        prev = cur
    return out.reshape(height, width, channels).astype(np.uint8)


@pytest.fixture(scope="session")
def corpus():
    return synth_corpus(SynthParams(), 500, 0.5, seed=11)


@pytest.fixture(scope="session")
def corpus_xy(corpus):
    X = np.array([extract_features(s.image).as_array() for s in corpus])
    y = np.array([int(s.infected) for s in corpus])
    return X, y


@pytest.fixture(scope="session")
def trained_forest(corpus_xy):
    X, y = corpus_xy
    return forest_train(X, y, n_estimators=25, seed=5)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
