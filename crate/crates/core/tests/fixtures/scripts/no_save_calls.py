# Writes bytes named like frames but never calls a save or display API.
import os
import struct
import zlib


def emit(path, shade):
    width, height = 8, 8
    raw = (b"\x00" + bytes([shade, shade, shade]) * width) * height

    def chunk(tag, data):
        crc = zlib.crc32(tag + data) & 0xFFFFFFFF
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", crc)

    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    blob = b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")
    with open(path, "wb") as f:
        f.write(blob)


for k in range(int(os.environ["FRAME_COUNT"])):
    emit(os.path.join(os.environ["FRAMES_DIR"], "frame_%03d.png" % k), k * 20)
