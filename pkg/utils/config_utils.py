import dataclasses


class ConfigError(ValueError):
    pass


def section_from_dict(cls, cfg, section_name):
    """
    Build the dataclass `cls` from one config section.

    Args:
        cls (type): Dataclass describing the section.
        cfg (dict): Raw section values; missing keys keep their defaults.
        section_name (str): Name used in error messages.

    Output:
        obj (cls): The validated section.
    """
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise ConfigError(
            f'{section_name} must be a mapping, got {type(cfg).__name__}')

    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(cfg) - set(fields))
    if unknown:
        raise ConfigError(f'unknown key(s) in {section_name}: {unknown}')

    kwargs = {}
    for key, value in cfg.items():
        default = fields[key].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value

    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f'{section_name}: {e}') from e


def section_to_dict(obj):
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            value = section_to_dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[f.name] = value

    return out
