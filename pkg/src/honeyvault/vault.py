"""The biometric password file: records, the HFV1 format, inflation, username fabrication."""
from __future__ import annotations

import bisect
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from honeyvault.authn import enrollment_template
from honeyvault.errors import (
    DimensionError,
    DuplicateUsernameError,
    ExhaustionError,
    FormatError,
)
from honeyvault.facespace import FaceSpace
from honeyvault.streams import substream
from honeyvault.synth import (
    DEFAULT_MAX_ATTEMPTS,
    GenerationStats,
    SeparationIndex,
    generate_honey,
)

HFV_MAGIC = b"HFV1"
HFV_VERSION = 1
DIGEST_SIZE = 16
MAX_USERNAME_BYTES = 255
_HFV_HEADER = struct.Struct(f"<4sI{DIGEST_SIZE}sIQ")
_LEN = struct.Struct("<H")
DEFAULT_MAX_SUFFIX = 9999

DEFAULT_GIVEN_NAMES = (
    "Aaron Abigail Adam Alice Amir Ana Andrew Anna Ben Carla Carlos Chen Chloe Daniel David "
    "Diana Elena Emily Emma Eric Fatima Felix George Grace Hana Hassan Ivan Jack James Jane "
    "Jin John Jose Julia Karim Kate Laura Leo Liam Lina Lucas Maria Mark Maya Mei Michael "
    "Mohammed Nadia Noah Nora Oliver Omar Paul Priya Rachel Ravi Rosa Ryan Sara Sofia "
    "Thomas Tom Victor Wei Yara Yusuf Zoe"
).split()
DEFAULT_FAMILY_NAMES = (
    "Abbott Ahmed Alvarez Anderson Bauer Brown Campbell Chen Cohen Cruz Davis Diaz Dubois "
    "Evans Fischer Garcia Gonzalez Green Gupta Hall Harris Hernandez Hill Ito Jackson Jones "
    "Kaur Khan Kim Klein Kowalski Lee Levi Lewis Lopez Martin Martinez Miller Moore Muller "
    "Murphy Nakamura Nguyen Novak Okafor Olsen Park Patel Perez Petrov Quinn Reyes Roberts "
    "Rossi Russo Sato Schmidt Silva Singh Smith Suzuki Taylor Thomas Walker Wang Weber "
    "White Williams Wilson Wright Yamamoto Young Zhang"
).split()

USERNAME_PATTERN = re.compile(r"^[a-z][a-z]+[0-9]*$")


def _username_bytes(name: str) -> bytes:
    raw = name.encode("utf-8")
    if not raw:
        raise ValueError("username must be non-empty")
    if len(raw) > MAX_USERNAME_BYTES:
        raise ValueError(f"username {name!r} exceeds {MAX_USERNAME_BYTES} UTF-8 bytes")
    return raw


@dataclass(frozen=True, eq=False)
class Vault:
    """Immutable, username-sorted collection of ``(username, template)`` records.

    Nothing in a record says whether it is real or synthetic; that
    knowledge lives only in the honeychecker.
    """

    space_id: bytes
    usernames: tuple
    templates: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.space_id) != DIGEST_SIZE:
            raise FormatError(f"space_id must be {DIGEST_SIZE} bytes")
        templates = np.array(self.templates, dtype=np.float64, copy=True)
        if templates.ndim != 2 or templates.shape[0] != len(self.usernames):
            raise DimensionError("templates must be an (N, d) array matching the usernames")
        names = tuple(self.usernames)
        for name in names:
            _username_bytes(name)
        for a, b in zip(names, names[1:]):
            if a == b:
                raise DuplicateUsernameError(a)
            if a > b:
                raise FormatError("vault records must be sorted by username")
        templates.setflags(write=False)
        object.__setattr__(self, "usernames", names)
        object.__setattr__(self, "templates", templates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vault):
            return NotImplemented
        return (
            self.space_id == other.space_id
            and self.usernames == other.usernames
            and self.templates.shape == other.templates.shape
            and bool(np.array_equal(self.templates, other.templates))
        )

    __hash__ = None

    @classmethod
    def from_records(cls, space_id: bytes, records, dim: int) -> Vault:
        """Vault from ``(username, template)`` pairs in any order."""
        records = sorted(records, key=lambda r: r[0])
        names = [r[0] for r in records]
        for a, b in zip(names, names[1:]):
            if a == b:
                raise DuplicateUsernameError(a)
        templates = np.array([r[1] for r in records], dtype=np.float64).reshape(len(records), dim)
        return cls(space_id, tuple(names), templates)

    @property
    def dim(self) -> int:
        return self.templates.shape[1]

    def __len__(self) -> int:
        return len(self.usernames)

    def __contains__(self, username) -> bool:
        return self.index_of(username) is not None

    def index_of(self, username: str) -> int | None:
        i = bisect.bisect_left(self.usernames, username)
        if i < len(self.usernames) and self.usernames[i] == username:
            return i
        return None

    def get_template(self, username: str) -> np.ndarray | None:
        i = self.index_of(username)
        return None if i is None else self.templates[i]

    def records(self):
        return zip(self.usernames, self.templates)

    def payload_bytes(self) -> int:
        """Bytes taken by the records alone (excluding the file header)."""
        name_bytes = sum(len(n.encode("utf-8")) for n in self.usernames)
        return len(self) * (_LEN.size + 8 * self.dim) + name_bytes


def record_size(username: str, dim: int) -> int:
    return _LEN.size + len(_username_bytes(username)) + 8 * dim


def create_vault(space: FaceSpace, real_entries) -> Vault:
    """Enroll ``(username, shape, texture)`` entries into a new vault."""
    entries = list(real_entries)
    seen = set()
    records = []
    for username, shape, texture in entries:
        _username_bytes(username)
        if username in seen:
            raise DuplicateUsernameError(username)
        seen.add(username)
        records.append((username, enrollment_template(space, shape, texture)))
    return Vault.from_records(space.digest(), records, space.dim)


def _base_username(given: str, family: str) -> str:
    g = re.sub(r"[^a-z]", "", given.lower())
    f = re.sub(r"[^a-z]", "", family.lower())
    if not g or not f:
        raise ValueError(f"cannot form a username from {given!r} {family!r}")
    return g[0] + f


def username_for(given: str, family: str, taken, max_suffix: int = DEFAULT_MAX_SUFFIX) -> str:
    """First initial plus family name, with the smallest free numeric suffix if needed."""
    base = _base_username(given, family)
    if base not in taken:
        return base
    for suffix in range(1, max_suffix + 1):
        name = f"{base}{suffix}"
        if name not in taken:
            return name
    raise ExhaustionError(f"all suffixes up to {max_suffix} are taken for {base!r}")


def fabricate_usernames(
    count: int,
    name_corpus=None,
    seed: int = 0,
    taken=(),
    max_suffix: int = DEFAULT_MAX_SUFFIX,
    *,
    stream: str = "usernames",
) -> list[str]:
    """``count`` fresh usernames in the first-initial + family-name convention.

    ``name_corpus`` is a sequence of ``(given, family)`` pairs; given and
    family names are drawn independently from it. Names already in
    ``taken`` (and earlier fabrications) are avoided by numeric suffixing.
    """
    if name_corpus is None:
        givens, families = list(DEFAULT_GIVEN_NAMES), list(DEFAULT_FAMILY_NAMES)
    else:
        pairs = list(name_corpus)
        if not pairs:
            raise ValueError("name corpus is empty")
        givens = sorted({g for g, _ in pairs})
        families = sorted({f for _, f in pairs})
    bases = {_base_username(g, f) for g in givens for f in families}
    taken = set(taken)
    capacity = len(bases) * (max_suffix + 1)
    if count + len(taken) > capacity:
        raise ExhaustionError(
            f"name corpus yields at most {capacity} usernames with suffixes up to {max_suffix}"
        )
    rng = substream(seed, stream)
    out = []
    for _ in range(count):
        while True:
            g = givens[rng.integers(len(givens))]
            f = families[rng.integers(len(families))]
            try:
                name = username_for(g, f, taken, max_suffix)
            except ExhaustionError:
                continue
            break
        taken.add(name)
        out.append(name)
    return out


@dataclass
class HoneyBatch:
    usernames: list
    templates: np.ndarray
    stats: GenerationStats


def generate_honey_records(
    vault: Vault,
    space: FaceSpace,
    count: int,
    min_dist: float,
    seed: int,
    *,
    name_corpus=None,
    max_attempts_per_face: int = DEFAULT_MAX_ATTEMPTS,
    backend: str | None = None,
) -> HoneyBatch:
    """Separated synthetic templates and fresh usernames for ``vault``."""
    if vault.dim != space.dim:
        raise DimensionError("vault and face space dimensions differ")
    if vault.space_id != space.digest():
        raise FormatError("vault was not built with this face space")
    index = SeparationIndex(space.dim, min_dist, backend)
    if len(vault):
        index.extend(vault.templates)
    templates, stats = generate_honey(
        space, index, count, min_dist, seed, max_attempts_per_face, first_face=len(vault)
    )
    names = fabricate_usernames(count, name_corpus, seed, taken=vault.usernames, stream="honey-usernames")
    return HoneyBatch(names, templates, stats)


def inflate(
    vault: Vault,
    space: FaceSpace,
    target_count: int,
    min_dist: float,
    seed: int,
    *,
    name_corpus=None,
    max_attempts_per_face: int = DEFAULT_MAX_ATTEMPTS,
    backend: str | None = None,
) -> Vault:
    """New vault padded with honey records up to ``target_count``."""
    if target_count < len(vault):
        raise ValueError("target_count is below the current record count")
    if target_count == len(vault):
        return vault
    batch = generate_honey_records(
        vault, space, target_count - len(vault), min_dist, seed,
        name_corpus=name_corpus, max_attempts_per_face=max_attempts_per_face, backend=backend,
    )
    return merge_records(vault, batch.usernames, batch.templates)


def merge_records(vault: Vault, usernames, templates) -> Vault:
    records = list(vault.records()) + list(zip(usernames, np.asarray(templates)))
    return Vault.from_records(vault.space_id, records, vault.dim)


def serialize(vault: Vault) -> bytes:
    parts = [_HFV_HEADER.pack(HFV_MAGIC, HFV_VERSION, vault.space_id, vault.dim, len(vault))]
    le = vault.templates.astype("<f8", copy=False)
    for name, template in zip(vault.usernames, le):
        raw = _username_bytes(name)
        parts.append(_LEN.pack(len(raw)))
        parts.append(raw)
        parts.append(template.tobytes())
    return b"".join(parts)


def deserialize(data: bytes) -> Vault:
    data = bytes(data)
    if len(data) < _HFV_HEADER.size:
        raise FormatError("truncated HFV1 header")
    magic, version, space_id, dim, count = _HFV_HEADER.unpack_from(data)
    if magic != HFV_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != HFV_VERSION:
        raise FormatError(f"unsupported HFV1 version {version}")
    if dim < 1:
        raise FormatError("vault dimension must be positive")
    width = 8 * dim
    pos = _HFV_HEADER.size
    if count * (_LEN.size + 1 + width) > len(data) - pos:
        raise FormatError("record count exceeds file size")
    names = []
    templates = np.empty((count, dim))
    for i in range(count):
        if pos + _LEN.size > len(data):
            raise FormatError("truncated record length")
        (n,) = _LEN.unpack_from(data, pos)
        pos += _LEN.size
        if n == 0 or n > MAX_USERNAME_BYTES:
            raise FormatError(f"invalid username length {n}")
        end = pos + n + width
        if end > len(data):
            raise FormatError("truncated record")
        try:
            names.append(data[pos : pos + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError("username is not valid UTF-8") from exc
        templates[i] = np.frombuffer(data, dtype="<f8", count=dim, offset=pos + n)
        pos = end
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last record")
    try:
        return Vault(space_id, tuple(names), templates)
    except DuplicateUsernameError as exc:
        raise FormatError(f"duplicate username {exc.args[0]!r}") from exc


def save_vault(vault: Vault, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(vault))


def load_vault(path) -> Vault:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
