"""
Configuration for the Volterra control toolkit
Process settings come from the environment (with .env support); run settings
come from a TOML file parsed into a RunConfig.
"""
import os
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import tomli_w

VERSION = "0.1.0"


# Load .env file if it exists
def _load_dotenv():
    """Load environment variables from .env file"""
    env_file = Path(__file__).parent.parent / ".env"
    if env_file.exists():
        with open(env_file) as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith('#') and '=' in line:
                    key, value = line.split('=', 1)
                    if key not in os.environ:  # Don't override existing env vars
                        os.environ[key] = value

_load_dotenv()

# =============================================================================
# Process settings (configurable via environment variables)
# =============================================================================

# Where run artifacts go when neither the config nor --out names a directory
OUTPUT_DIR = os.getenv("VOLTERRA_OUTPUT_DIR", "output")

LOG_LEVEL = os.getenv("VOLTERRA_LOG_LEVEL", "INFO").upper()

# Threads used for path generation; results do not depend on it
WORKERS = int(os.getenv("VOLTERRA_WORKERS", "1"))

DEFAULT_SEED = int(os.getenv("VOLTERRA_DEFAULT_SEED", "42"))

# Paths per RNG stream block; changing it changes the sampled paths
BLOCK_SIZE = int(os.getenv("VOLTERRA_BLOCK_SIZE", "1024"))

# Regressions above this condition number are logged as ill-conditioned
COND_WARN = float(os.getenv("VOLTERRA_COND_WARN", "1e10"))

# =============================================================================
# Preset Schema (names accepted in run configs)
# =============================================================================

CONFIG_SCHEMA = {
    "kernel": ["constant", "exp_decay", "poly"],
    "theta": ["constant", "linear_brownian", "quadratic_brownian"],
    "policy": ["zero", "atom", "uniform", "reflected", "coupled"],
    "price_mode": ["density_dependent", "log", "density_independent"],
    "solver_method": ["regression", "closed_form"],
    "duality": ["terminal_value", "terminal_square", "wiener_integral", "exp_wiener", "constant"],
    "filtration": ["full"],
}

# Number of parameters each preset takes
PRESET_ARITY = {
    "kernel": {"constant": (1,), "exp_decay": (2,), "poly": tuple(range(1, 9))},
    "theta": {"constant": (1,), "linear_brownian": (2,), "quadratic_brownian": (2,)},
    "policy": {"zero": (0,), "atom": (2,), "uniform": (1,), "reflected": (0,), "coupled": (0,)},
}


class ConfigError(Exception):
    """Invalid run configuration; carries the dotted key path and source line when known"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.key = key
        self.line = line


# =============================================================================
# RunConfig
# =============================================================================

@dataclass(frozen=True)
class PresetSpec:
    kind: str
    params: Tuple[float, ...] = ()


@dataclass(frozen=True)
class GridConfig:
    T: float = 1.0
    N: int = 128


@dataclass(frozen=True)
class EnsembleConfig:
    M: int = 10000
    seed: int = DEFAULT_SEED
    workers: int = WORKERS


@dataclass(frozen=True)
class ModelConfig:
    x0: float = 1.0
    b0: PresetSpec = PresetSpec("constant", (0.0,))
    sigma0: PresetSpec = PresetSpec("constant", (0.2,))
    h: PresetSpec = PresetSpec("constant", (1.0,))
    policy: PresetSpec = PresetSpec("zero")
    filtration: str = "full"


@dataclass(frozen=True)
class PriceConfig:
    mode: str = "density_independent"
    rho: float = 1.0
    theta: PresetSpec = PresetSpec("constant", (2.0,))


@dataclass(frozen=True)
class SolverConfig:
    method: str = "regression"
    degree: int = 2
    psi_tol: float = 1e-10
    epsilon: float = 1e-4
    lam: float = 1e-4
    max_iter: int = 50
    damping: float = 0.5
    fixed_point_tol: float = 1e-8


DEFAULT_ALTERNATIVES = (
    PresetSpec("zero"),
    PresetSpec("atom", (0.0, 0.1)),
    PresetSpec("atom", (0.2, 0.1)),
    PresetSpec("atom", (0.4, 0.2)),
    PresetSpec("atom", (0.6, 0.2)),
    PresetSpec("atom", (0.8, 0.3)),
    PresetSpec("uniform", (0.2,)),
)


@dataclass(frozen=True)
class ChecksConfig:
    n_se: float = 3.0
    abs_tol: float = 1e-8
    alternatives: Tuple[PresetSpec, ...] = DEFAULT_ALTERNATIVES
    duality: Tuple[str, ...] = ("terminal_value", "terminal_square", "wiener_integral")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = OUTPUT_DIR


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    price: PriceConfig = field(default_factory=PriceConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    checks: ChecksConfig = field(default_factory=ChecksConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> Dict[str, Any]:
        return _plain(asdict(self))

    def with_overrides(self, seed=None, paths=None, steps=None, out=None, workers=None) -> "RunConfig":
        """Apply command-line overrides, validating them like file values."""
        cfg = self
        if seed is not None:
            _check(seed >= 0, "ensemble.seed", "must be a nonnegative integer")
            cfg = replace(cfg, ensemble=replace(cfg.ensemble, seed=int(seed)))
        if paths is not None:
            _check(paths >= 1, "ensemble.M", "must be at least 1")
            cfg = replace(cfg, ensemble=replace(cfg.ensemble, M=int(paths)))
        if workers is not None:
            _check(workers >= 1, "ensemble.workers", "must be at least 1")
            cfg = replace(cfg, ensemble=replace(cfg.ensemble, workers=int(workers)))
        if steps is not None:
            _check(steps >= 1, "grid.N", "must be at least 1")
            cfg = replace(cfg, grid=replace(cfg.grid, N=int(steps)))
        if out is not None:
            cfg = replace(cfg, output=OutputConfig(str(out)))
        return cfg


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# =============================================================================
# Parsing
# =============================================================================

_SECTIONS = {
    "grid": GridConfig,
    "ensemble": EnsembleConfig,
    "model": ModelConfig,
    "price": PriceConfig,
    "solver": SolverConfig,
    "checks": ChecksConfig,
    "output": OutputConfig,
}

_TOML_LINE = re.compile(r"line (\d+)")


def _check(ok: bool, key: str, message: str):
    if not ok:
        raise ConfigError(f"{key} {message}", key=key)


def _locate(text: str, section: str, key: Optional[str]) -> Optional[int]:
    """Best-effort source line of [section] key (or of the section header)."""
    current = None
    header_line = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and not line.startswith("[["):
            current = line.strip("[] ")
            if current == section:
                header_line = lineno
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*=", line):
            return lineno
    return header_line


def _number(value, key: str, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
    if integer:
        if int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
        return int(value)
    return float(value)


def _choice(value, key: str, schema: str) -> str:
    if value not in CONFIG_SCHEMA[schema]:
        raise ConfigError(
            f"{key} = {value!r} is not one of {', '.join(CONFIG_SCHEMA[schema])}", key=key
        )
    return value


def _preset(value, key: str, schema: str) -> PresetSpec:
    if isinstance(value, str):
        value = {"kind": value}
    if not isinstance(value, dict):
        raise ConfigError(f"{key} must be a table with 'kind' and 'params'", key=key)
    extra = set(value) - {"kind", "params"}
    if extra:
        raise ConfigError(f"unknown key {key}.{sorted(extra)[0]}", key=f"{key}.{sorted(extra)[0]}")
    kind = _choice(value.get("kind"), f"{key}.kind", schema)
    params = value.get("params", [])
    if not isinstance(params, list):
        raise ConfigError(f"{key}.params must be a list of numbers", key=f"{key}.params")
    params = tuple(_number(p, f"{key}.params") for p in params)
    if len(params) not in PRESET_ARITY[schema][kind]:
        raise ConfigError(
            f"{key} preset {kind!r} takes {PRESET_ARITY[schema][kind]} parameters, got {len(params)}", key=f"{key}.params"
        )
    return PresetSpec(kind, params)


def _section(cls, table: Dict[str, Any], name: str):
    known = {f.name: f for f in fields(cls)}
    values = {}
    for key, raw in table.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}", key=f"{name}.{key}")
        values[key] = _convert(name, key, raw)
    return cls(**values)


def _convert(section: str, key: str, raw):
    path = f"{section}.{key}"
    if section == "grid":
        if key == "T":
            value = _number(raw, path)
            _check(value > 0, path, "must be positive")
            return value
        value = _number(raw, path, integer=True)
        _check(value >= 1, path, "must be at least 1")
        return value
    if section == "ensemble":
        value = _number(raw, path, integer=True)
        _check(value >= (0 if key == "seed" else 1), path, "is out of range")
        return value
    if section == "model":
        if key == "x0":
            value = _number(raw, path)
            _check(value > 0, path, "must be positive")
            return value
        if key == "filtration":
            return _choice(raw, path, "filtration")
        if key == "policy":
            return _preset(raw, path, "policy")
        return _preset(raw, path, "kernel")
    if section == "price":
        if key == "mode":
            return _choice(raw, path, "price_mode")
        if key == "rho":
            value = _number(raw, path)
            _check(value > 0, path, "must be positive")
            return value
        return _preset(raw, path, "theta")
    if section == "solver":
        if key == "method":
            return _choice(raw, path, "solver_method")
        if key in ("degree", "max_iter"):
            value = _number(raw, path, integer=True)
            _check(0 <= value <= 5 if key == "degree" else value >= 1, path, "is out of range")
            return value
        value = _number(raw, path)
        if key == "damping":
            _check(0.0 <= value < 1.0, path, "must lie in [0, 1)")
        elif key == "psi_tol":
            _check(0.0 < value < 1.0, path, "must lie in (0, 1)")
        else:
            _check(value > 0, path, "must be positive")
        return value
    if section == "checks":
        if key == "alternatives":
            if not isinstance(raw, list):
                raise ConfigError(f"{path} must be a list of policy tables", key=path)
            specs = tuple(_preset(item, f"{path}[{i}]", "policy") for i, item in enumerate(raw))
            for i, spec in enumerate(specs):
                _check(spec.kind in ("zero", "atom", "uniform"), f"{path}[{i}]", "must be zero, atom or uniform")
            return specs
        if key == "duality":
            if not isinstance(raw, list):
                raise ConfigError(f"{path} must be a list of preset names", key=path)
            return tuple(_choice(item, path, "duality") for item in raw)
        value = _number(raw, path)
        _check(value > 0 if key == "n_se" else value >= 0, path, "is out of range")
        return value
    if not isinstance(raw, str) or not raw:
        raise ConfigError(f"{path} must be a nonempty string", key=path)
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a fully resolved RunConfig."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = _TOML_LINE.search(str(e))
        raise ConfigError(f"syntax error: {e}", line=int(match.group(1)) if match else None) from e

    sections = {}
    for name, table in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]", key=name, line=_locate(text, name, None))
        if not isinstance(table, dict):
            raise ConfigError(f"{name} must be a table", key=name)
        try:
            sections[name] = _section(_SECTIONS[name], table, name)
        except ConfigError as e:
            if e.line is None and e.key:
                key = e.key.split(".")[1].split("[")[0] if "." in e.key else None
                e.line = _locate(text, name, key)
            raise
    return RunConfig(**sections)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def dump_config(cfg: RunConfig) -> str:
    """Re-emit a resolved config as TOML; parse_config(dump_config(c)) == c."""
    return tomli_w.dumps(cfg.to_dict())
