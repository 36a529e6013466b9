"""Run configuration: JSON file + command-line overrides + environment key."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from ..analysis import DEFAULT_L_VALUES
from ..core import MIN_KEY_BYTES, WatermarkError, WatermarkParams
from ..providers import VARIANTS, BigramProvider, StaticProvider, SyntheticLM
from .remote import HttpProvider

KEY_ENV = "MCMARK_KEY"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    secret_key: Optional[str] = None
    l: int = 20
    n: int = 2
    p0: float = 0.01
    vocab_size: Optional[int] = None
    provider: Optional[str] = None
    seed: int = 0
    num_sequences: int = 10
    length: int = 200
    prompt_len: int = 2
    epsilon: float = 0.1
    out: Optional[str] = None
    l_values: list = field(default_factory=lambda: list(DEFAULT_L_VALUES))
    epsilons: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    trials: int = 500
    fpr: float = 0.001
    alphas: list = field(default_factory=lambda: [0.3, 0.4, 0.5])
    plot: Optional[str] = None

    def key_bytes(self) -> bytes:
        if not self.secret_key:
            raise ConfigError(f"a secret key is required (--key, config 'secret_key' or ${KEY_ENV})")
        try:
            key = bytes.fromhex(self.secret_key)
        except ValueError:
            raise ConfigError("secret key must be a hex string") from None
        if len(key) < MIN_KEY_BYTES:
            raise ConfigError(f"secret key must be at least {MIN_KEY_BYTES} bytes ({2 * MIN_KEY_BYTES} hex digits)")
        return key

    def params(self) -> WatermarkParams:
        try:
            return WatermarkParams(self.key_bytes(), l=self.l, n=self.n, p0=self.p0)
        except WatermarkError as exc:
            raise ConfigError(str(exc)) from None

    def echo(self) -> dict:
        """Resolved config with the key replaced by a short fingerprint."""
        d = asdict(self)
        key = d.pop("secret_key")
        d["key_id"] = hashlib.sha256(bytes.fromhex(key)).hexdigest()[:16] if key else None
        return d

    def config_hash(self) -> str:
        """Hash of everything that determines the outputs (output paths excluded)."""
        d = {k: v for k, v in self.echo().items() if k not in ("out", "plot")}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


_FIELDS = {f.name for f in fields(RunConfig)}
_INT = {"l", "n", "vocab_size", "seed", "num_sequences", "length", "prompt_len", "trials"}
_FLOAT = {"p0", "epsilon", "fpr"}


def load_config(path: Optional[str], overrides: dict, environ=os.environ) -> RunConfig:
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(raw) - _FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if not raw.get("secret_key") and environ.get(KEY_ENV):
        raw["secret_key"] = environ[KEY_ENV]
    cfg = RunConfig(**raw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    for name in _INT:
        v = getattr(cfg, name)
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, np.integer))):
            raise ConfigError(f"{name} must be an integer, got {v!r}")
    for name in _FLOAT:
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{name} must be a number, got {v!r}")
    if cfg.l < 2:
        raise ConfigError("l must be >= 2")
    if cfg.n < 1:
        raise ConfigError("n must be >= 1")
    if not 0 < cfg.p0 < 1 or not 0 < cfg.fpr < 1:
        raise ConfigError("p0 and fpr must lie in (0, 1)")
    if cfg.vocab_size is not None and cfg.vocab_size < 2:
        raise ConfigError("vocab_size must be >= 2")
    if cfg.vocab_size is not None and cfg.l > cfg.vocab_size:
        raise ConfigError(f"l={cfg.l} exceeds vocab_size={cfg.vocab_size}")
    if min(cfg.num_sequences, cfg.length, cfg.prompt_len) < 0 or cfg.trials < 1:
        raise ConfigError("num_sequences, length and prompt_len must be >= 0 and trials >= 1")
    for e in [cfg.epsilon, *cfg.epsilons]:
        if not 0 <= e <= 1:
            raise ConfigError(f"epsilon values must lie in [0, 1], got {e!r}")
    if cfg.secret_key is not None:
        cfg.key_bytes()


def _parse_knobs(text: str) -> dict:
    knobs = {}
    for item in filter(None, text.split(",")):
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"provider knob {item!r} is not name=value")
        knobs[name.strip().replace("-", "_")] = value.strip()
    return knobs


def build_provider(cfg: RunConfig):
    """Instantiate the provider named by ``cfg.provider``.

    Accepted forms: ``dirichlet-iid[:knob=value,...]``,
    ``zipf-markov[:knob=value,...]``, ``file:<path>`` (a ``.npy`` or JSON
    array; 1-D is a static distribution, 2-D a bigram table) and an
    ``http(s)://`` URL.
    """
    spec = cfg.provider or "dirichlet-iid"
    if spec.startswith(("http://", "https://")):
        if cfg.vocab_size is None:
            raise ConfigError("a remote provider needs vocab_size")
        return HttpProvider(spec, cfg.vocab_size)
    if spec.startswith("file:"):
        return _file_provider(spec[5:], cfg)
    variant, _, rest = spec.partition(":")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown provider {spec!r}")
    if cfg.vocab_size is None:
        raise ConfigError("a synthetic provider needs vocab_size")
    knobs = _parse_knobs(rest)
    types = {"concentration": float, "exponent": float, "order": int, "seed": int}
    kwargs = {"seed": cfg.seed}
    for name, value in knobs.items():
        if name not in types:
            raise ConfigError(f"unknown provider knob {name!r}")
        try:
            kwargs[name] = types[name](value)
        except ValueError:
            raise ConfigError(f"provider knob {name}={value!r} is not a {types[name].__name__}") from None
    try:
        return SyntheticLM(variant=variant, vocab_size=cfg.vocab_size, **kwargs)
    except WatermarkError as exc:
        raise ConfigError(str(exc)) from None


def _file_provider(path: str, cfg: RunConfig):
    try:
        if path.endswith(".npy"):
            arr = np.load(path)
        else:
            arr = np.asarray(json.loads(Path(path).read_text()), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load provider file {path}: {exc}") from None
    try:
        prov = StaticProvider(arr) if arr.ndim == 1 else BigramProvider(arr)
    except WatermarkError as exc:
        raise ConfigError(f"provider file {path}: {exc}") from None
    if cfg.vocab_size is not None and cfg.vocab_size != prov.vocab_size:
        raise ConfigError(f"provider file has {prov.vocab_size} tokens but vocab_size={cfg.vocab_size}")
    cfg.vocab_size = prov.vocab_size
    return prov
