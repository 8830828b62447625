"""Binary image and volume containers used by the pipeline stages.

* PPM (P6) for 8-bit color, PGM (P5) for binary masks.
* "FRAS": flat float32 raster with a 16-byte header (magic, width, height,
  channels), row-major data.
* "IVOL": flat float32 volume with a 64-byte header (magic, channel count,
  dims, origin, cell size), channel-major data.
"""

import struct

import numpy as np

from .errors import SplatFormatError

RASTER_MAGIC = b"FRAS"
VOLUME_MAGIC = b"IVOL"


def write_ppm(path, image):
    """8-bit color PPM; input (H, W, 3) floats in [0, 1] (clipped)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("PPM output requires an (H, W, 3) image")
    data = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise SplatFormatError("not a binary PPM (P6) file")
        dims = f.readline().split()
        while dims and dims[0].startswith(b"#"):
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        raw = f.read(w * h * 3)
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / maxval


def write_pgm(path, mask):
    """Binary mask as 8-bit PGM: nonzero -> 255."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("PGM output requires an (H, W) mask")
    data = np.where(mask > 0, 255, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise SplatFormatError("not a binary PGM (P5) file")
        dims = f.readline().split()
        while dims and dims[0].startswith(b"#"):
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        f.readline()  # maxval
        raw = f.read(w * h)
    return (np.frombuffer(raw, dtype=np.uint8).reshape(h, w) > 0).astype(np.uint8)


def write_float_raster(path, image):
    """Float32 raster with 16-byte header: magic, int32 width/height/channels."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    with open(path, "wb") as f:
        f.write(RASTER_MAGIC + struct.pack("<iii", w, h, c))
        f.write(np.ascontiguousarray(image).tobytes())


def read_float_raster(path):
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16 or head[:4] != RASTER_MAGIC:
            raise SplatFormatError("not a float raster file (bad magic)")
        w, h, c = struct.unpack("<iii", head[4:])
        raw = f.read(w * h * c * 4)
    if len(raw) != w * h * c * 4:
        raise SplatFormatError("truncated float raster data")
    return np.frombuffer(raw, dtype=np.float32).reshape(h, w, c).astype(np.float64)


def write_volume(path, fields, origin, cell):
    """Float32 volume container; `fields` is a (C, nx, ny, nz) stack."""
    fields = np.asarray(fields, dtype=np.float32)
    if fields.ndim == 3:
        fields = fields[None]
    c, nx, ny, nz = fields.shape
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    header = VOLUME_MAGIC + struct.pack("<iiiii", c, nx, ny, nz, 0)
    header += struct.pack("<ddd", *origin) + struct.pack("<d", float(cell))
    header += b"\x00" * (64 - len(header))
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(fields).tobytes())


def read_volume(path):
    """Returns (fields (C, nx, ny, nz) float64, origin, cell)."""
    with open(path, "rb") as f:
        header = f.read(64)
        if len(header) != 64 or header[:4] != VOLUME_MAGIC:
            raise SplatFormatError("not a volume file (bad magic)")
        c, nx, ny, nz, _ = struct.unpack("<iiiii", header[4:24])
        origin = np.array(struct.unpack("<ddd", header[24:48]))
        cell = struct.unpack("<d", header[48:56])[0]
        raw = f.read(c * nx * ny * nz * 4)
    if len(raw) != c * nx * ny * nz * 4:
        raise SplatFormatError("truncated volume data")
    fields = np.frombuffer(raw, dtype=np.float32).reshape(c, nx, ny, nz).astype(np.float64)
    return fields, origin, cell
