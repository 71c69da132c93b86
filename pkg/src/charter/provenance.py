"""Detached signatures over chart archives, stored in ``.prov`` sidecars.

A ``.prov`` file looks like::

    web
    0.1.0
    sha256:<hex> web-0.1.0.tgz
    -----BEGIN SIGNATURE-----
    Algorithm: ed25519
    Signer: 3f2a9c01d4e5b6a7

    <base64 signature>
    -----END SIGNATURE-----

The first three lines are exactly the signed payload.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import textwrap
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, NoEncryption, PrivateFormat, PublicFormat

from charter.chart import ChartArchive, load_archive
from charter.errors import (
    DigestMismatch,
    IoError,
    KeyUnusable,
    MalformedProvenance,
    MissingProvenance,
    SignatureInvalid,
)

BEGIN = "-----BEGIN SIGNATURE-----"
END = "-----END SIGNATURE-----"


class SignatureProvider(Protocol):
    algorithm: str

    def public_from_private(self, private_key: bytes) -> bytes: ...

    def sign(self, private_key: bytes, payload: bytes) -> bytes: ...

    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool: ...


class Ed25519Provider:
    algorithm = "ed25519"

    def public_from_private(self, private_key: bytes) -> bytes:
        key = Ed25519PrivateKey.from_private_bytes(private_key)
        return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def sign(self, private_key: bytes, payload: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private_key).sign(payload)

    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, payload)
        except (InvalidSignature, ValueError):
            return False
        return True


PROVIDERS: dict[str, SignatureProvider] = {"ed25519": Ed25519Provider()}
DEFAULT_PROVIDER = PROVIDERS["ed25519"]


def fingerprint(public_key: bytes) -> str:
    return hashlib.sha256(public_key).hexdigest()[:16]


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes | None = None

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.public_key)

    @classmethod
    def generate(cls, provider: SignatureProvider = DEFAULT_PROVIDER) -> KeyPair:
        private = Ed25519PrivateKey.generate().private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
        return cls(provider.public_from_private(private), private)

    def public_only(self) -> KeyPair:
        return KeyPair(self.public_key)

    # On disk a private key file holds seed || public (64 bytes); a public
    # key file holds just the 32 public bytes.
    def private_bytes(self) -> bytes:
        if self.private_key is None:
            raise KeyUnusable("key has no private part")
        return self.private_key + self.public_key

    @classmethod
    def from_bytes(cls, data: bytes) -> KeyPair:
        if len(data) == 64:
            return cls(data[32:], data[:32])
        if len(data) == 32:
            return cls(data)
        raise KeyUnusable(f"key file must be 32 (public) or 64 (private) bytes, got {len(data)}")


def load_key(path: str | Path) -> KeyPair:
    try:
        return KeyPair.from_bytes(Path(path).read_bytes())
    except OSError as exc:
        raise IoError(f"{path}: {exc.strerror or exc}") from None


def write_keypair(key: KeyPair, base: str | Path) -> tuple[Path, Path]:
    """Write ``<base>.key`` (private) and ``<base>.pub`` (public)."""
    base = Path(base)
    priv = base.with_name(base.name + ".key")
    pub = base.with_name(base.name + ".pub")
    priv.write_bytes(key.private_bytes())
    priv.chmod(0o600)
    pub.write_bytes(key.public_key)
    return priv, pub


@dataclass(frozen=True)
class ProvenanceRecord:
    chart_name: str
    chart_version: str
    digest_line: str
    signature: bytes
    signer_id: str
    algorithm: str = "ed25519"

    @property
    def digest_hex(self) -> str:
        head = self.digest_line.split(" ", 1)[0]
        return head.removeprefix("sha256:")

    def payload(self) -> bytes:
        return canonical_payload(self.chart_name, self.chart_version, self.digest_line)

    def serialize(self) -> str:
        sig = "\n".join(textwrap.wrap(base64.b64encode(self.signature).decode("ascii"), 64))
        return (
            self.payload().decode("utf-8")
            + f"{BEGIN}\nAlgorithm: {self.algorithm}\nSigner: {self.signer_id}\n\n{sig}\n{END}\n"
        )

    @classmethod
    def parse(cls, text: str) -> ProvenanceRecord:
        lines = text.splitlines()
        try:
            name, version, digest_line = lines[0], lines[1], lines[2]
            if lines[3] != BEGIN:
                raise ValueError("missing signature block")
            end = lines.index(END, 4)
        except (IndexError, ValueError) as exc:
            raise MalformedProvenance(f"malformed .prov file: {exc}") from None
        block = lines[4:end]
        headers: dict[str, str] = {}
        i = 0
        while i < len(block) and block[i].strip():
            key, sep, value = block[i].partition(":")
            if not sep:
                raise MalformedProvenance(f"malformed .prov header {block[i]!r}")
            headers[key.strip()] = value.strip()
            i += 1
        try:
            signature = base64.b64decode("".join(block[i:]).strip(), validate=True)
        except binascii.Error as exc:
            raise MalformedProvenance(f"malformed signature: {exc}") from None
        if not digest_line.startswith("sha256:"):
            raise MalformedProvenance(f"digest line must start with sha256:, got {digest_line!r}")
        return cls(
            chart_name=name,
            chart_version=version,
            digest_line=digest_line,
            signature=signature,
            signer_id=headers.get("Signer", ""),
            algorithm=headers.get("Algorithm", "ed25519"),
        )


def canonical_payload(name: str, version: str, digest_line: str) -> bytes:
    return f"{name}\n{version}\n{digest_line}\n".encode("utf-8")


def sign(archive: ChartArchive, key: KeyPair, provider: SignatureProvider = DEFAULT_PROVIDER) -> ProvenanceRecord:
    if key.private_key is None:
        raise KeyUnusable("signing needs a private key")
    meta = load_archive(archive).metadata
    digest_line = f"sha256:{archive.digest} {archive.filename}"
    payload = canonical_payload(meta.name, meta.version, digest_line)
    try:
        signature = provider.sign(key.private_key, payload)
    except ValueError as exc:
        raise KeyUnusable(str(exc)) from None
    return ProvenanceRecord(meta.name, meta.version, digest_line, signature, key.fingerprint, provider.algorithm)


def provenance_path(archive_path: str | Path) -> Path:
    archive_path = Path(archive_path)
    return archive_path.with_name(archive_path.name + ".prov")


def write_provenance(record: ProvenanceRecord, archive_path: str | Path) -> Path:
    target = provenance_path(archive_path)
    target.write_text(record.serialize(), encoding="utf-8")
    return target


def read_provenance(archive_path: str | Path) -> ProvenanceRecord:
    target = provenance_path(archive_path)
    try:
        text = target.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingProvenance(f"no provenance file {target}") from None
    except OSError as exc:
        raise IoError(f"{target}: {exc.strerror or exc}") from None
    return ProvenanceRecord.parse(text)


@dataclass(frozen=True)
class VerificationResult:
    signer_id: str
    chart_name: str
    chart_version: str
    digest: str


def verify(
    archive: ChartArchive,
    record: ProvenanceRecord | None,
    trusted_keys: Iterable[KeyPair | bytes],
) -> VerificationResult:
    """Check the archive digest, then the signature against each trusted key."""
    if record is None:
        raise MissingProvenance(f"no provenance record for {archive.filename}")
    if archive.digest != record.digest_hex:
        raise DigestMismatch(f"{archive.filename}: sha256 {archive.digest} does not match provenance {record.digest_hex}")
    provider = PROVIDERS.get(record.algorithm)
    if provider is None:
        raise SignatureInvalid(f"unsupported signature algorithm {record.algorithm!r}")
    payload = record.payload()
    for key in trusted_keys:
        public = key.public_key if isinstance(key, KeyPair) else key
        if provider.verify(public, payload, record.signature):
            return VerificationResult(fingerprint(public), record.chart_name, record.chart_version, archive.digest)
    raise SignatureInvalid(f"{archive.filename}: no trusted key verifies the signature")
