"""Address and prefix arithmetic, and the binary trie every table is built on."""

from dataclasses import dataclass
from typing import Any, Iterator

import netaddr

from errors import PrefixParseError, UsageError

MAX_WIDTH = 128

# Marks a trie node that exists only as a path to longer prefixes.
_EMPTY = object()


def _check_width(width: int) -> None:
    if not isinstance(width, int) or width < 1 or width > MAX_WIDTH:
        raise UsageError(f"Address width must be between 1 and {MAX_WIDTH}, got: {width}")


@dataclass(frozen=True, order=True)
class Prefix:
    """
    A bit-string of `length` significant bits over a `width`-bit address space.

    `bits` holds the prefix left-aligned in `width` bits with every
    non-significant bit zero, so equality and hashing are structural.
    """

    width: int
    length: int
    bits: int

    def __post_init__(self):
        _check_width(self.width)
        if self.length < 0 or self.length > self.width:
            raise UsageError(
                f"Prefix length must be between 0 and {self.width}, got: {self.length}"
            )
        if self.bits < 0 or self.bits >> self.width:
            raise UsageError(f"Prefix bits exceed width {self.width}")
        if self.bits & self.host_mask:
            raise UsageError("Prefix bits beyond length must be zero")

    @classmethod
    def make(cls, width: int, length: int, bits: int) -> "Prefix":
        """Build a prefix, clearing any bits beyond `length`."""
        _check_width(width)
        host = (1 << (width - length)) - 1 if 0 <= length <= width else 0
        return cls(width, length, bits & ~host & ((1 << width) - 1))

    @classmethod
    def wildcard(cls, width: int) -> "Prefix":
        return cls(width, 0, 0)

    @classmethod
    def from_cidr(cls, text: str) -> "Prefix":
        """Ingest IPv4/IPv6 CIDR notation (W = 32 or 128)."""
        try:
            network = netaddr.IPNetwork(text)
        except (netaddr.AddrFormatError, ValueError, TypeError) as e:
            raise PrefixParseError(f"Invalid CIDR prefix: '{text}'", text=text) from e
        width = 32 if network.version == 4 else 128
        return cls(width, network.prefixlen, int(network.network))

    @classmethod
    def parse(cls, text: str, width: int) -> "Prefix":
        """
        Parse a prefix in one of the accepted text forms.

        - star form: significant digits padded with '*' to the width ("101*")
        - slash form: width binary digits and a length ("1010/3")
        - "*" alone for the full wildcard
        - CIDR notation ("10.0.0.0/8") when width is 32 or 128
        """
        _check_width(width)
        text = text.strip()
        if not text:
            raise PrefixParseError("Empty prefix", text=text)

        if text == "*":
            return cls.wildcard(width)

        if "." in text or ":" in text:
            prefix = cls.from_cidr(text)
            if prefix.width != width:
                raise PrefixParseError(
                    f"Prefix '{text}' has width {prefix.width}, expected {width}", text=text
                )
            return prefix

        if "/" in text:
            digits, _, length_str = text.partition("/")
            if not digits or set(digits) - {"0", "1"} or len(digits) > width:
                raise PrefixParseError(f"Invalid prefix bits: '{text}'", text=text)
            try:
                length = int(length_str)
            except ValueError:
                raise PrefixParseError(f"Invalid prefix length: '{text}'", text=text)
            if length < 0 or length > width:
                raise PrefixParseError(
                    f"Prefix length {length} out of range for width {width}", text=text
                )
            bits = int(digits, 2) << (width - len(digits))
            if bits & ((1 << (width - length)) - 1):
                raise PrefixParseError(f"Prefix '{text}' has bits set beyond its length", text=text)
            return cls(width, length, bits)

        if len(text) != width:
            raise PrefixParseError(
                f"Prefix '{text}' must have {width} positions", text=text
            )
        significant = text.rstrip("*")
        if set(significant) - {"0", "1"}:
            raise PrefixParseError(f"Invalid prefix: '{text}'", text=text)
        length = len(significant)
        bits = int(significant, 2) << (width - length) if significant else 0
        return cls(width, length, bits)

    @property
    def host_mask(self) -> int:
        return (1 << (self.width - self.length)) - 1

    @property
    def sort_key(self) -> tuple[int, int]:
        """Trie preorder: by bits, shorter prefixes before their extensions."""
        return (self.bits, self.length)

    @property
    def is_wildcard(self) -> bool:
        return self.length == 0

    def bit(self, index: int) -> int:
        """Bit `index` counted from the most significant position."""
        return (self.bits >> (self.width - 1 - index)) & 1

    def child(self, bit: int) -> "Prefix":
        if self.length == self.width:
            raise UsageError(f"Prefix {self} has no children")
        return Prefix(self.width, self.length + 1, self.bits | (bit << (self.width - self.length - 1)))

    def parent(self) -> "Prefix | None":
        """The prefix one bit shorter, regardless of what is stored anywhere."""
        if self.length == 0:
            return None
        return Prefix.make(self.width, self.length - 1, self.bits)

    def is_prefix_of(self, other: "Prefix") -> bool:
        if other.width != self.width:
            raise UsageError(f"Width mismatch: {self.width} vs {other.width}")
        if self.length > other.length:
            return False
        shift = self.width - self.length
        return (other.bits >> shift) == (self.bits >> shift)

    def matches(self, address: "Address") -> bool:
        if address.width != self.width:
            raise UsageError(f"Width mismatch: prefix {self.width} vs address {address.width}")
        shift = self.width - self.length
        return (address.bits >> shift) == (self.bits >> shift)

    def to_bytes(self) -> bytes:
        """Canonical byte serialization used for fingerprints."""
        size = (self.width + 7) // 8
        return bytes([self.width, self.length]) + self.bits.to_bytes(size, "big")

    def star(self) -> str:
        if self.length == 0:
            return "*" * self.width
        return format(self.bits >> (self.width - self.length), f"0{self.length}b") + "*" * (
            self.width - self.length
        )

    def __str__(self) -> str:
        return f"{self.bits:0{self.width}b}/{self.length}"


@dataclass(frozen=True, order=True)
class Address:
    """A full `width`-bit destination or source address."""

    width: int
    bits: int

    def __post_init__(self):
        _check_width(self.width)
        if self.bits < 0 or self.bits >> self.width:
            raise UsageError(f"Address bits exceed width {self.width}")

    @classmethod
    def parse(cls, text: str, width: int) -> "Address":
        text = text.strip()
        if "." in text or ":" in text:
            try:
                ip = netaddr.IPAddress(text)
            except (netaddr.AddrFormatError, ValueError) as e:
                raise PrefixParseError(f"Invalid address: '{text}'", text=text) from e
            ip_width = 32 if ip.version == 4 else 128
            if ip_width != width:
                raise PrefixParseError(
                    f"Address '{text}' has width {ip_width}, expected {width}", text=text
                )
            return cls(width, int(ip))
        if len(text) != width or set(text) - {"0", "1"}:
            raise PrefixParseError(
                f"Address '{text}' must be {width} binary digits", text=text
            )
        return cls(width, int(text, 2))

    @classmethod
    def all_addresses(cls, width: int) -> Iterator["Address"]:
        for bits in range(1 << width):
            yield cls(width, bits)

    def bit(self, index: int) -> int:
        return (self.bits >> (self.width - 1 - index)) & 1

    def __str__(self) -> str:
        return f"{self.bits:0{self.width}b}"


def matches(prefix: Prefix, address: Address) -> bool:
    """True iff the first `prefix.length` bits of `address` equal the prefix."""
    return prefix.matches(address)


class _Node:
    __slots__ = ("children", "prefix", "payload")

    def __init__(self, prefix: Prefix):
        self.children: list[_Node | None] = [None, None]
        self.prefix = prefix
        self.payload: Any = _EMPTY

    @property
    def stored(self) -> bool:
        return self.payload is not _EMPTY


class PrefixTrie:
    """
    Binary trie keyed by prefix bits.

    A prefix is present iff its node carries a payload; payloads may be None.
    Read operations are safe to share once construction is done.
    """

    def __init__(self, width: int):
        _check_width(width)
        self.width = width
        self._root = _Node(Prefix.wildcard(width))
        self._size = 0

    def _check(self, width: int) -> None:
        if width != self.width:
            raise UsageError(f"Width mismatch: trie {self.width} vs {width}")

    def _find(self, prefix: Prefix) -> _Node | None:
        self._check(prefix.width)
        node = self._root
        for i in range(prefix.length):
            node = node.children[prefix.bit(i)]
            if node is None:
                return None
        return node

    def insert(self, prefix: Prefix, payload: Any = None) -> bool:
        """Store `payload` at `prefix`. Returns True if the prefix was new."""
        self._check(prefix.width)
        node = self._root
        for i in range(prefix.length):
            b = prefix.bit(i)
            nxt = node.children[b]
            if nxt is None:
                nxt = _Node(node.prefix.child(b))
                node.children[b] = nxt
            node = nxt
        is_new = not node.stored
        node.payload = payload
        if is_new:
            self._size += 1
        return is_new

    def remove(self, prefix: Prefix) -> Any:
        """Remove `prefix` and return its payload; prunes dead path nodes."""
        self._check(prefix.width)
        path = [self._root]
        node = self._root
        for i in range(prefix.length):
            node = node.children[prefix.bit(i)]
            if node is None:
                raise KeyError(prefix)
            path.append(node)
        if not node.stored:
            raise KeyError(prefix)
        payload = node.payload
        node.payload = _EMPTY
        self._size -= 1

        for depth in range(len(path) - 1, 0, -1):
            child = path[depth]
            if child.stored or child.children[0] or child.children[1]:
                break
            path[depth - 1].children[prefix.bit(depth - 1)] = None
        return payload

    def get(self, prefix: Prefix, default: Any = None) -> Any:
        node = self._find(prefix)
        if node is None or not node.stored:
            return default
        return node.payload

    def __getitem__(self, prefix: Prefix) -> Any:
        node = self._find(prefix)
        if node is None or not node.stored:
            raise KeyError(prefix)
        return node.payload

    def __contains__(self, prefix: object) -> bool:
        if not isinstance(prefix, Prefix) or prefix.width != self.width:
            return False
        node = self._find(prefix)
        return node is not None and node.stored

    def __len__(self) -> int:
        return self._size

    def _preorder(self, start: _Node) -> Iterator[_Node]:
        stack = [start]
        while stack:
            node = stack.pop()
            yield node
            for child in (node.children[1], node.children[0]):
                if child is not None:
                    stack.append(child)

    def __iter__(self) -> Iterator[Prefix]:
        for node in self._preorder(self._root):
            if node.stored:
                yield node.prefix

    def items(self) -> Iterator[tuple[Prefix, Any]]:
        for node in self._preorder(self._root):
            if node.stored:
                yield node.prefix, node.payload

    def walk(self) -> Iterator[tuple[Prefix, Any, Prefix | None]]:
        """Preorder over stored prefixes with each one's nearest stored ancestor."""
        stack: list[tuple[_Node, Prefix | None]] = [(self._root, None)]
        while stack:
            node, ancestor = stack.pop()
            if node.stored:
                yield node.prefix, node.payload, ancestor
                ancestor = node.prefix
            for child in (node.children[1], node.children[0]):
                if child is not None:
                    stack.append((child, ancestor))

    def lmf_entry(self, address: Address) -> tuple[Prefix, Any] | None:
        """Longest stored prefix matching `address`, with its payload."""
        self._check(address.width)
        node = self._root
        best = node if node.stored else None
        for i in range(self.width):
            node = node.children[address.bit(i)]
            if node is None:
                break
            if node.stored:
                best = node
        if best is None:
            return None
        return best.prefix, best.payload

    def lmf_match(self, address: Address) -> Prefix | None:
        entry = self.lmf_entry(address)
        return entry[0] if entry else None

    def parent_of(self, prefix: Prefix) -> Prefix | None:
        """Longest stored strict prefix of `prefix`; `prefix` need not be stored."""
        self._check(prefix.width)
        node = self._root
        best = None
        for i in range(prefix.length):
            if node.stored:
                best = node.prefix
            node = node.children[prefix.bit(i)]
            if node is None:
                break
        return best

    def _stored_below(self, start: _Node) -> list[Prefix]:
        found = []
        stack = [c for c in (start.children[1], start.children[0]) if c is not None]
        while stack:
            node = stack.pop()
            if node.stored:
                found.append(node.prefix)
                continue
            for child in (node.children[1], node.children[0]):
                if child is not None:
                    stack.append(child)
        return found

    def children_of(self, prefix: Prefix) -> list[Prefix]:
        """Stored prefixes whose nearest stored strict ancestor is `prefix`."""
        node = self._find(prefix)
        if node is None:
            return []
        return self._stored_below(node)

    def roots(self) -> list[Prefix]:
        """Stored prefixes with no stored ancestor (one root unless it is a forest)."""
        if self._root.stored:
            return [self._root.prefix]
        return self._stored_below(self._root)

    def descendants(self, prefix: Prefix) -> list[Prefix]:
        """All stored strict extensions of `prefix`, in preorder."""
        node = self._find(prefix)
        if node is None:
            return []
        return [n.prefix for n in self._preorder(node) if n.stored and n is not node]


def lmf_match(trie: PrefixTrie, address: Address) -> Prefix | None:
    return trie.lmf_match(address)


def parent_of(trie: PrefixTrie, prefix: Prefix) -> Prefix | None:
    return trie.parent_of(prefix)
