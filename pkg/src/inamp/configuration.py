"""Configuration classes and loaders.

Every tunable structure of the package (the synthetic generator, training
schedule, InAmp and classifier structure) reads its values from a
[Configuration][inamp.configuration.Configuration]. Keys are dotted
(``train.batch_size``) and values may come from dictionaries, ``key = value``
files, TOML files or ``INAMP__`` environment variables. A
[ConfigurationSet][inamp.configuration.ConfigurationSet] layers several of them,
the first one taking precedence.
"""

import logging
import os
import sys
from copy import deepcopy
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, TextIO, Union

from .errors import ConfigError
from .helpers import AttributeDict, as_bool, as_list, parse_kv

if sys.version_info < (3, 11):  # pragma: no cover
    try:
        import tomli as toml
    except ImportError:
        toml = None  # type: ignore
else:  # pragma: no cover
    import tomllib as toml

logger = logging.getLogger(__name__)

ENV_PREFIX = "INAMP"

# value kinds understood by `Configuration.resolve`
KINDS = ("int", "float", "bool", "str", "ints", "floats", "strs")


class Configuration:
    """Configuration class.

    The Configuration class takes a dictionary input with keys such as

        - ``train.batch_size``
        - ``train.initial_lr``
        - ``inamp.out_channels``

    Nested mappings are flattened into dotted keys.
    """

    def __init__(self, config_: Mapping[str, Any], lowercase_keys: bool = True):
        """Class Constructor.

        Params:
            config_: a mapping of configuration values. Keys need to be strings.
            lowercase_keys: whether to convert every key to lower case.
        """
        self._lowercase = lowercase_keys
        self._config: Dict[str, Any] = self._flatten_dict(config_)

    def _flatten_dict(self, d: Mapping[str, Any]) -> Dict[str, Any]:
        """Flatten one level of a dictionary.

        Params:
            d: dict.

        Returns:
            a flattened dict.
        """
        nested = {k for k, v in d.items() if isinstance(v, (Mapping, Configuration))}
        result = {
            k + "." + ki: vi
            for k in nested
            for ki, vi in self._flatten_dict(
                d[k].as_dict() if isinstance(d[k], Configuration) else d[k],
            ).items()
        }
        result.update(
            (k, v)
            for k, v in d.items()
            if not isinstance(v, (Mapping, Configuration))
        )
        if self._lowercase:
            result = {k.lower(): v for k, v in result.items()}
        return result

    def _get_subset(self, prefix: str) -> Union[Dict[str, Any], Any]:
        """Return the subset of the config dictionary whose keys start with `prefix`.

        Params:
            prefix: string.

        Returns:
            dict, or the value itself for a leaf key.
        """
        if self._lowercase:
            prefix = prefix.lower()
        d = {
            k[(len(prefix) + 1) :]: v
            for k, v in self._config.items()
            if k.startswith(prefix + ".")
        }
        if not d:
            return deepcopy(self._config.get(prefix, {}))
        return d

    def __getitem__(self, item: str) -> Union["Configuration", Any]:  # noqa: D105
        v = self._get_subset(item)
        if v == {}:
            raise KeyError(item)
        if isinstance(v, Mapping):
            return Configuration(v, lowercase_keys=self._lowercase)
        return v

    def __contains__(self, prefix: str) -> bool:  # noqa: D105
        try:
            self[prefix]
            return True
        except KeyError:
            return False

    def __len__(self) -> int:  # noqa: D105
        return len(self._config)

    def get(self, key: str, default: Any = None) -> Union[dict, Any]:
        """Get the configuration values corresponding to `key`.

        Params:
            key: key to retrieve.
            default: default value in case the key is missing.

        Returns:
            the value found or a default.
        """
        try:
            return self[key]
        except KeyError:
            return default

    def as_dict(self) -> dict:
        """Return the representation as a dictionary."""
        return self._config

    def as_attrdict(self) -> AttributeDict:
        """Return the representation as an attribute dictionary."""
        result = AttributeDict()
        for key, value in self.as_dict().items():
            node = result
            *parents, leaf = key.split(".")
            for p in parents:
                node = node.setdefault(p, AttributeDict())
            node[leaf] = value
        return result

    def get_bool(self, item: str) -> bool:
        """Get the item value as a bool.

        Params:
            item: key
        """
        return as_bool(self[item])

    def get_str(self, item: str, fmt: str = "{}") -> str:
        """Get the item value as a string.

        Params:
            item: key
            fmt: format to use
        """
        return fmt.format(self[item])

    def get_int(self, item: str) -> int:
        """Get the item value as an int.

        Params:
            item: key
        """
        value = self[item]
        if isinstance(value, float) and not value.is_integer():
            raise ValueError("Expected an integer for %s, got %r" % (item, value))
        return int(value)

    def get_float(self, item: str) -> float:
        """Get the item value as a float.

        Params:
            item: key
        """
        return float(self[item])

    def get_list(self, item: str, type_: type = str) -> List[Any]:
        """Get the item value as a list.

        Comma separated strings are split.

        Params:
            item: key
            type_: element type
        """
        return as_list(self[item], type_)

    def update(self, other: Mapping[str, Any]) -> None:
        """Update the Configuration with another Configuration object or Mapping."""
        if isinstance(other, Configuration):
            other = other.as_dict()
        self._config.update(self._flatten_dict(other))

    def resolve(
        self,
        kinds: Mapping[str, str],
        defaults: Mapping[str, Any],
        schema: Optional[Mapping[str, Any]] = None,
    ) -> Dict[str, Any]:
        """Read typed values for the given keys, falling back to defaults.

        Unknown keys in this configuration are rejected so that typos do not go
        unnoticed.

        Params:
            kinds: key to kind (one of ``KINDS``).
            defaults: key to default value.
            schema: optional JSON schema the typed values must satisfy.

        Returns:
            a dictionary of typed values for every key in ``kinds``.
        """
        unknown = sorted(set(self._config) - set(kinds))
        if unknown:
            raise ConfigError("Unknown configuration keys: %s" % ", ".join(unknown))
        result: Dict[str, Any] = {}
        for key, kind in kinds.items():
            if key not in self._config:
                result[key] = deepcopy(defaults.get(key))
                continue
            try:
                result[key] = self._typed(key, kind)
            except (TypeError, ValueError) as err:
                raise ConfigError("Invalid value for %s: %s" % (key, err)) from None
        if schema is not None:
            check_schema(result, schema)
        return result

    def _typed(self, key: str, kind: str) -> Any:
        if kind == "int":
            return self.get_int(key)
        if kind == "float":
            return self.get_float(key)
        if kind == "bool":
            return self.get_bool(key)
        if kind == "str":
            return self.get_str(key)
        if kind == "ints":
            return self.get_list(key, int)
        if kind == "floats":
            return self.get_list(key, float)
        if kind == "strs":
            return self.get_list(key, str)
        raise ValueError('Invalid value kind "%s"' % kind)

    def validate(
        self,
        schema: Any,
        raise_on_error: bool = False,
        nested: bool = False,
    ) -> bool:
        """Validate the current config using JSONSchema."""
        from jsonschema import ValidationError, validate

        try:
            validate(self.as_attrdict() if nested else self.as_dict(), schema)
        except ValidationError as err:
            if raise_on_error:
                raise err
            return False
        return True

    def __repr__(self) -> str:  # noqa: D105
        return "<%s: %s>" % (type(self).__name__, hex(id(self)))

    def __str__(self) -> str:  # noqa: D105
        return str(dict(sorted(self.as_dict().items())))


class ConfigurationSet(Configuration):
    """Configuration Sets.

    A class that combines multiple [Configuration][inamp.configuration.Configuration]
    instances in a hierarchical manner: values in earlier configurations
    override values in later ones.
    """

    def __init__(self, *configs: Configuration):  # noqa: D107
        if not all(isinstance(x, Configuration) for x in configs):
            raise ValueError(
                "configs should be an iterable of Configuration objects",
            )
        self._configs: List[Configuration] = list(configs)
        self._lowercase = True

    @property
    def configs(self) -> List[Configuration]:
        """List of underlying configuration objects."""
        return list(self._configs)

    @property
    def _config(self) -> Dict[str, Any]:  # type: ignore
        result: Dict[str, Any] = {}
        for config_ in self._configs[::-1]:
            result.update(config_.as_dict())
        return result

    def as_dict(self) -> dict:
        """Return the representation as a dictionary."""
        return self._config

    def update(self, other: Mapping[str, Any]) -> None:
        """Add a new highest-priority layer."""
        if not isinstance(other, Configuration):
            other = Configuration(other)
        self._configs.insert(0, other)

    def __repr__(self) -> str:  # noqa: D105
        return "<ConfigurationSet: %s>" % hex(id(self))


def check_schema(values: Mapping[str, Any], schema: Mapping[str, Any]) -> None:
    """Validate typed values against a JSON schema, raising ConfigError."""
    from jsonschema import ValidationError

    try:
        Configuration(values, lowercase_keys=False).validate(
            schema, raise_on_error=True, nested=True,
        )
    except ValidationError as err:
        where = ".".join(str(p) for p in err.absolute_path) or "configuration"
        raise ConfigError("%s: %s" % (where, err.message)) from None


def _read(data: Union[str, Path, TextIO], read_from_file: bool) -> str:
    if read_from_file:
        if isinstance(data, (str, Path)):
            with open(data, "rt", encoding="utf-8") as f:
                return f.read()
        return data.read()
    if not isinstance(data, str):
        return data.read()  # type: ignore
    return data


def config_from_dict(data: Mapping[str, Any]) -> Configuration:
    """Create a [Configuration][inamp.configuration.Configuration] from a mapping.

    Params:
        data: mapping, possibly nested.

    Returns:
        a [Configuration][inamp.configuration.Configuration] instance.
    """
    return Configuration(data)


def config_from_kv(
    data: Union[str, Path, TextIO],
    read_from_file: bool = False,
    *,
    prefix: str = "",
) -> Configuration:
    """Create a [Configuration][inamp.configuration.Configuration] from key=value text.

    Lines starting with a # are ignored and treated as comments.

    Params:
        data: path to a key=value file or its contents.
        read_from_file: whether to read from a file path or to interpret
            the `data` as the contents of the file.
        prefix: dotted prefix prepended to every key.

    Returns:
        a [Configuration][inamp.configuration.Configuration] instance.
    """  # noqa: E501
    result = parse_kv(_read(data, read_from_file))
    if prefix:
        result = {prefix + "." + k: v for k, v in result.items()}
    return Configuration(result)


def config_from_toml(
    data: Union[str, Path, TextIO],
    read_from_file: bool = False,
) -> Configuration:
    """Create a [Configuration][inamp.configuration.Configuration] from a TOML file.

    Params:
        data: path to a TOML file or its contents.
        read_from_file: whether to read from a file path or to interpret
            the `data` as the contents of the TOML file.

    Returns:
        a [Configuration][inamp.configuration.Configuration] instance.
    """
    if toml is None:  # pragma: no cover
        raise ImportError(
            "Dependency <tomli> is not found, but required by this class.",
        )
    return Configuration(toml.loads(_read(data, read_from_file)))


def config_from_env(prefix: str = ENV_PREFIX, separator: str = "__") -> Configuration:
    """Create a [Configuration][inamp.configuration.Configuration] from the environment.

    ``INAMP__TRAIN__BATCH_SIZE=8`` becomes the key ``train.batch_size``.

    Params:
        prefix: prefix to filter environment variables with.
        separator: separator to replace by dots.

    Returns:
        a [Configuration][inamp.configuration.Configuration] instance.
    """  # noqa: E501
    result = {
        key[len(prefix) :].replace(separator, ".").strip("."): value
        for key, value in os.environ.items()
        if key.startswith(prefix + separator)
    }
    return Configuration(result)


def config_from_file(path: Union[str, Path]) -> Configuration:
    """Load a configuration file, choosing the format from its suffix.

    ``.toml`` files are parsed as TOML, anything else as ``key = value`` text.
    """
    path = Path(path)
    logger.debug("loading configuration from %s", path)
    if path.suffix == ".toml":
        return config_from_toml(path, read_from_file=True)
    return config_from_kv(path, read_from_file=True)


def layered(
    overrides: Optional[Mapping[str, Any]] = None,
    path: Optional[Union[str, Path]] = None,
    section: str = "",
    use_env: bool = True,
) -> Configuration:
    """Combine flag overrides, environment, and a file into one configuration.

    Precedence is overrides > environment > file. When ``section`` is given, only
    the keys under that prefix are kept and the prefix is stripped.
    """
    layers: List[Configuration] = []
    if overrides:
        layers.append(Configuration(dict(overrides)))
    if use_env:
        layers.append(_section(config_from_env(), section))
    if path is not None:
        layers.append(_section(config_from_file(path), section))
    return ConfigurationSet(*layers)


def _section(cfg: Configuration, section: str) -> Configuration:
    if not section:
        return cfg
    sub = cfg.get(section)
    return sub if isinstance(sub, Configuration) else Configuration({})
