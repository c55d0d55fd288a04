import hashlib


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any mix of ints and strings.

    Per-item seeds come from (global seed, item id), so results do not depend
    on processing order or worker count.
    """
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little") >> 1
