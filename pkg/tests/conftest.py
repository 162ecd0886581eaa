import struct
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def wav_bytes(samples_bytes, channels, rate, bits, fmt_tag=1):
    """A minimal RIFF/WAVE file assembled by hand (independent of any WAV library)."""
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(samples_bytes)) + samples_bytes
    return b"RIFF" + struct.pack("<I", len(body)) + body


def pcm24(values):
    out = bytearray()
    for v in values:
        out += int(v).to_bytes(3, "little", signed=True)
    return bytes(out)


@pytest.fixture
def tmp_wav(tmp_path):
    def make(data: bytes, name="x.wav"):
        path = tmp_path / name
        path.write_bytes(data)
        return path
    return make


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
