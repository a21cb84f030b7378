"""Minimal NIfTI-1 reader/writer and multi-modal case assembly.

Supports the single-file ``.nii`` layout (magic ``n+1\\0`` or ``ni1\\0``,
348-byte header, voxel payload at ``vox_offset``) plus gzip-compressed
``.nii.gz``. Only uint8 / int16 / float32 voxels are accepted; anything else
is rejected loudly. Written files are always float32 with slope 1 / inter 0,
the canonical internal form. Voxel data is stored on disk in the standard
NIfTI order (first axis fastest).

Cases follow the naming convention ``<case_id>-{t1,t1ce,t2,flair,seg}.nii``.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    HeaderError,
    LabelError,
    TruncatedDataError,
    UnsupportedDataTypeError,
)

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

MODALITIES = ("t1", "t1ce", "t2", "flair")
VALID_LABELS = (0, 1, 2, 3)

# NIfTI datatype codes we accept.
_CODE_TO_DTYPE = {2: np.uint8, 4: np.int16, 16: np.float32}
_DTYPE_TO_CODE = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.float32): 16}
_BITPIX = {2: 8, 4: 16, 16: 32}

# Full NIfTI-1 header layout; offsets are fixed by the standard.
_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]


def _header_dtype(byte_order: str) -> np.dtype:
    return np.dtype([(name, byte_order + fmt, *rest) for name, fmt, *rest in _HEADER_FIELDS])


@dataclass
class VolumeHeader:
    """Decoded subset of a NIfTI-1 header."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    datatype: str = "float32"
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    byte_order: str = "<"
    vox_offset: int = DEFAULT_VOX_OFFSET

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise HeaderError(f"dims must be 3 positive voxel counts, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise HeaderError(f"spacing must be positive, got {self.spacing}")
        if self.datatype not in ("uint8", "int16", "float32"):
            raise UnsupportedDataTypeError(f"unsupported datatype {self.datatype!r}")
        if self.vox_offset < HEADER_SIZE + 4:
            raise HeaderError(f"vox_offset {self.vox_offset} < {HEADER_SIZE + 4}")

    @property
    def voxel_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def voxel_volume(self) -> float:
        """Volume of one voxel in mm^3."""
        return float(np.prod(self.spacing))


@dataclass
class Volume:
    """One modality's scalar grid plus its header metadata."""

    header: VolumeHeader
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != tuple(self.header.dims):
            raise AlignmentError(
                f"data shape {self.data.shape} != header dims {self.header.dims}"
            )

    @classmethod
    def from_array(cls, data: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> "Volume":
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 3:
            raise AlignmentError(f"expected a 3-D array, got shape {data.shape}")
        hdr = VolumeHeader(dims=data.shape, spacing=tuple(float(s) for s in spacing))
        return cls(header=hdr, data=data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.header.dims)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(self.header.spacing)


@dataclass
class SegmentationMask:
    """Integer label grid over {0=BG, 1=NCR/NET, 2=ED, 3=ET}."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise AlignmentError(f"expected a 3-D label grid, got shape {self.labels.shape}")
        if not np.isin(self.labels, VALID_LABELS).all():
            bad = sorted(set(np.unique(self.labels)) - set(VALID_LABELS))
            raise LabelError(f"mask contains labels outside {{0,1,2,3}}: {bad}")
        self.labels = self.labels.astype(np.uint8)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass
class MultiModalCase:
    """Aligned T1/T1CE/T2/FLAIR volumes (+ optional label mask) for one subject."""

    case_id: str
    modalities: dict[str, Volume] = field(default_factory=dict)
    label: SegmentationMask | None = None

    def __post_init__(self):
        missing = [m for m in MODALITIES if m not in self.modalities]
        if missing:
            raise AlignmentError(f"case {self.case_id}: missing modalities {missing}")
        dims = {m: v.dims for m, v in self.modalities.items()}
        spacings = {m: v.spacing for m, v in self.modalities.items()}
        if len(set(dims.values())) != 1:
            raise AlignmentError(f"case {self.case_id}: modality dims differ: {dims}")
        if len(set(spacings.values())) != 1:
            raise AlignmentError(f"case {self.case_id}: modality spacings differ: {spacings}")
        if self.label is not None and self.label.dims != self.dims:
            raise AlignmentError(
                f"case {self.case_id}: label dims {self.label.dims} != image dims {self.dims}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.modalities[MODALITIES[0]].dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.modalities[MODALITIES[0]].spacing

    def stack(self) -> np.ndarray:
        """Channel-stacked (4, D, H, W) float32 array in T1/T1CE/T2/FLAIR order."""
        return np.stack([self.modalities[m].data for m in MODALITIES], axis=0)


def parse_header(buf: bytes) -> VolumeHeader:
    """Decode a 348-byte NIfTI-1 header, detecting endianness from sizeof_hdr."""
    if len(buf) < HEADER_SIZE:
        raise HeaderError(f"header needs {HEADER_SIZE} bytes, got {len(buf)}")
    raw = None
    byte_order = "<"
    for order in ("<", ">"):
        candidate = np.frombuffer(buf[:HEADER_SIZE], dtype=_header_dtype(order))[0]
        if int(candidate["sizeof_hdr"]) == HEADER_SIZE:
            raw, byte_order = candidate, order
            break
    if raw is None:
        raise HeaderError("sizeof_hdr != 348 under either byte order; not a NIfTI-1 file")
    magic = bytes(raw["magic"]).ljust(4, b"\x00")  # numpy strips trailing NULs
    if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
        raise HeaderError(f"bad magic {magic!r}; expected {MAGIC_SINGLE!r} or {MAGIC_PAIR!r}")
    code = int(raw["datatype"])
    if code not in _CODE_TO_DTYPE:
        raise UnsupportedDataTypeError(
            f"datatype code {code} unsupported; only uint8(2)/int16(4)/float32(16)"
        )
    ndim = int(raw["dim"][0])
    if ndim < 3:
        raise HeaderError(f"need at least 3 spatial dims, header declares {ndim}")
    dims = tuple(int(d) for d in raw["dim"][1:4])
    if any(int(d) > 1 for d in raw["dim"][4 : 1 + ndim]):
        raise HeaderError(f"only 3-D volumes supported, dim field is {list(raw['dim'])}")
    if any(d < 1 for d in dims):
        raise HeaderError(f"nonpositive dims {dims}")
    spacing = tuple(float(s) for s in raw["pixdim"][1:4])
    if any(s <= 0 for s in spacing):
        raise HeaderError(f"nonpositive spacing {spacing}")
    vox_offset = int(raw["vox_offset"])
    if magic == MAGIC_PAIR:
        vox_offset = max(vox_offset, 0)
    slope = float(raw["scl_slope"])
    return VolumeHeader(
        dims=dims,
        spacing=spacing,
        datatype=np.dtype(_CODE_TO_DTYPE[code]).name,
        scl_slope=1.0 if slope == 0.0 else slope,
        scl_inter=float(raw["scl_inter"]),
        byte_order=byte_order,
        vox_offset=max(vox_offset, HEADER_SIZE + 4),
    )


def read_volume(buf: bytes) -> Volume:
    """Decode a full single-file NIfTI-1 buffer into a float32 Volume."""
    header = parse_header(buf)
    voxel_dtype = np.dtype(header.datatype).newbyteorder(header.byte_order)
    nbytes = header.voxel_count * voxel_dtype.itemsize
    payload = buf[header.vox_offset : header.vox_offset + nbytes]
    if len(payload) < nbytes:
        raise TruncatedDataError(
            f"payload truncated: need {nbytes} bytes at offset {header.vox_offset}, "
            f"got {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype=voxel_dtype).reshape(header.dims, order="F")
    data = raw.astype(np.float32)
    if header.scl_slope != 1.0 or header.scl_inter != 0.0:
        data = data * np.float32(header.scl_slope) + np.float32(header.scl_inter)
    canonical = VolumeHeader(dims=header.dims, spacing=header.spacing)
    return Volume(header=canonical, data=np.ascontiguousarray(data))


def _encode(data: np.ndarray, spacing, datatype_code: int) -> bytes:
    hdr = np.zeros(1, dtype=_header_dtype("<"))[0]
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"][:] = [3, *data.shape, 1, 1, 1, 1]
    hdr["datatype"] = datatype_code
    hdr["bitpix"] = _BITPIX[datatype_code]
    hdr["pixdim"][:] = [1.0, *spacing, 0.0, 0.0, 0.0, 0.0]
    hdr["vox_offset"] = float(DEFAULT_VOX_OFFSET)
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["magic"] = MAGIC_SINGLE
    pad = b"\x00" * (DEFAULT_VOX_OFFSET - HEADER_SIZE)
    payload = np.asfortranarray(data).tobytes(order="F")
    return hdr.tobytes() + pad + payload


def write_volume(volume: Volume) -> bytes:
    """Serialize a Volume as canonical float32 NIfTI-1 (slope 1, inter 0)."""
    if not np.isfinite(volume.data).all():
        raise ValueError("volume contains non-finite values; refusing to write")
    data = np.ascontiguousarray(volume.data, dtype="<f4")
    return _encode(data, volume.spacing, _DTYPE_TO_CODE[np.dtype(np.float32)])


def write_mask(mask: SegmentationMask) -> bytes:
    """Serialize a SegmentationMask as uint8 NIfTI-1."""
    return _encode(mask.labels.astype(np.uint8), mask.spacing, _DTYPE_TO_CODE[np.dtype(np.uint8)])


def read_mask(buf: bytes, remap_label_4: bool = True) -> SegmentationMask:
    """Decode a segmentation file, optionally remapping legacy label 4 -> 3."""
    vol = read_volume(buf)
    labels = vol.data
    rounded = np.rint(labels)
    if not np.array_equal(labels, rounded):
        raise LabelError("segmentation contains non-integer values")
    labels = rounded.astype(np.int64)
    if remap_label_4:
        labels[labels == 4] = 3
    if not np.isin(labels, VALID_LABELS).all():
        bad = sorted(set(np.unique(labels)) - set(VALID_LABELS))
        raise LabelError(f"segmentation contains invalid labels {bad}")
    return SegmentationMask(labels=labels.astype(np.uint8), spacing=vol.spacing)


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def load_volume(path) -> Volume:
    """Read a .nii or .nii.gz file from disk."""
    return read_volume(_read_bytes(Path(path)))


def save_volume(path, volume: Volume) -> None:
    """Write a volume to .nii or .nii.gz; compression follows the suffix."""
    _write_file(Path(path), write_volume(volume))


def save_mask(path, mask: SegmentationMask) -> None:
    _write_file(Path(path), write_mask(mask))


def load_mask(path, remap_label_4: bool = True) -> SegmentationMask:
    return read_mask(_read_bytes(Path(path)), remap_label_4=remap_label_4)


def _write_file(path: Path, buf: bytes) -> None:
    if path.suffix == ".gz":
        # mtime pinned so identical volumes produce identical bytes
        with open(path, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(buf)
    else:
        path.write_bytes(buf)


def _find_file(directory: Path, stem: str) -> Path | None:
    for suffix in (".nii", ".nii.gz"):
        candidate = directory / (stem + suffix)
        if candidate.exists():
            return candidate
    return None


def load_case(directory, case_id: str, remap_label_4: bool = True) -> MultiModalCase:
    """Assemble a MultiModalCase from ``<case_id>-<mod>.nii[.gz]`` files.

    All four modalities must be present and aligned; ``<case_id>-seg`` is
    optional. Raises FileNotFoundError for a missing modality, AlignmentError
    for dim/spacing mismatches and LabelError for out-of-range labels.
    """
    directory = Path(directory)
    modalities = {}
    for mod in MODALITIES:
        path = _find_file(directory, f"{case_id}-{mod}")
        if path is None:
            raise FileNotFoundError(f"missing file {directory / (case_id + '-' + mod)}.nii[.gz]")
        modalities[mod] = load_volume(path)
    label = None
    seg_path = _find_file(directory, f"{case_id}-seg")
    if seg_path is not None:
        label = load_mask(seg_path, remap_label_4=remap_label_4)
    return MultiModalCase(case_id=case_id, modalities=modalities, label=label)


def list_case_ids(directory) -> list[str]:
    """Case ids inferred from ``*-t1.nii[.gz]`` files, sorted."""
    directory = Path(directory)
    ids = set()
    for path in directory.iterdir():
        name = path.name
        for suffix in ("-t1.nii.gz", "-t1.nii"):
            if name.endswith(suffix):
                ids.add(name[: -len(suffix)])
    return sorted(ids)


def save_case(directory, case: MultiModalCase, compress: bool = False) -> None:
    """Write all modalities (and label, if any) of a case to a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = ".nii.gz" if compress else ".nii"
    for mod in MODALITIES:
        save_volume(directory / f"{case.case_id}-{mod}{ext}", case.modalities[mod])
    if case.label is not None:
        save_mask(directory / f"{case.case_id}-seg{ext}", case.label)
