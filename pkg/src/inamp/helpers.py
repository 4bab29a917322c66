"""Helper functions."""

from typing import Any, Iterable, List, Mapping, Tuple

TRUTH_TEXT = frozenset(("t", "true", "y", "yes", "on", "1"))
FALSE_TEXT = frozenset(("f", "false", "n", "no", "off", "0", ""))


class AttributeDict(dict):
    """Dictionary subclass enabling attribute lookup/assignment of keys/values."""

    def __getattr__(self, key: Any) -> Any:  # noqa: D105
        try:
            return self[key]
        except KeyError:
            # __getattr__ must raise AttributeError
            raise AttributeError(key) from None

    def __setattr__(self, key: Any, value: Any) -> None:  # noqa: D105
        self[key] = value


def as_bool(s: Any) -> bool:
    """Boolean value from an object.

    Return the boolean value ``True`` if the case-lowered value of string
    input ``s`` is a `truthy string`. If ``s`` is already one of the
    boolean values ``True`` or ``False``, return it.
    """
    if s is None:
        return False
    if isinstance(s, bool):
        return s
    s = str(s).strip().lower()
    if s not in TRUTH_TEXT and s not in FALSE_TEXT:
        raise ValueError("Expected a valid True or False expression.")
    return s in TRUTH_TEXT


def as_list(s: Any, item: type = str) -> List[Any]:
    """List value from a comma separated string or an iterable.

    Params:
        s: value to convert.
        item: type each element is converted to.
    """
    if s is None:
        return []
    if isinstance(s, str):
        parts: Iterable[Any] = [x.strip() for x in s.split(",") if x.strip()]
    elif isinstance(s, Iterable):
        parts = s
    else:
        parts = [s]
    if item is bool:
        return [as_bool(x) for x in parts]
    return [item(x) for x in parts]


def parse_kv_line(line: str) -> Tuple[str, str]:
    """Split a ``key = value`` line into key and value."""
    try:
        key, value = tuple(y.strip() for y in line.split("=", 1))
    except ValueError:
        raise ValueError("Invalid line %s" % line) from None
    if not key:
        raise ValueError("Invalid line %s" % line)
    return key, value


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` text, skipping blank lines and ``#`` comments."""
    return dict(
        parse_kv_line(x)
        for x in (y.strip() for y in text.splitlines())
        if x and not x.startswith("#")
    )


def format_value(value: Any) -> str:
    """Text form of a value as written to key=value files."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def dump_kv(d: Mapping[str, Any]) -> str:
    """Render a flat mapping as sorted ``key=value`` lines."""
    return "".join(
        "{}={}\n".format(k, format_value(v)) for k, v in sorted(d.items())
    )
