"""Scenario configuration, factor level table and the key = value loader."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from medtour.agents import AdherenceParams, BehaviourParams
from medtour.casedata import BASELINE_BEDS, BASELINE_SLOT_MINUTES, BASELINE_SPECIALISTS

FACTORS = tuple("ABCDEFGHIJKLMNOP")

# (low, high) per factor
LEVELS: dict[str, tuple[float, float]] = {
    "A": (32, 52),
    "B": (40, 65),
    "C": (56, 91),
    "D": (16, 26),
    "E": (48, 78),
    "F": (1, 2),
    "G": (4, 8),
    "H": (1, 3),
    "I": (1, 3),
    "J": (2, 4),
    "K": (20, 60),
    "L": (10, 40),
    "M": (0, 1),
    "N": (0, 1),
    "O": (0, 1),
    "P": (2, 5),
}

FINAL_CODED = dict(zip(FACTORS, (+1,) * 5 + (-1,) * 5 + (+1, -1, +1, -1, -1, -1)))

HYBRID = "hybrid"
DES_ONLY = "des-only"
MODES = (HYBRID, DES_ONLY)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ProcessParams:
    """Process-layer constants the case data leaves open."""

    gp_count: int = 3
    triage_minutes: tuple[float, float] = (5.0, 10.0)
    # inpatient length of stay, days (min, mode, max)
    los_days: tuple[float, float, float] = (40.0, 90.0, 140.0)
    home_course_days: tuple[float, float, float] = (5.0, 10.0, 15.0)
    ward_review_minutes: tuple[float, float] = (3.0, 5.0)
    # (discharge, home treatment, hospitalise) after each consultation kind
    initial_outcome: tuple[float, float, float] = (0.25, 0.45, 0.30)
    revisit_outcome: tuple[float, float, float] = (0.60, 0.20, 0.20)
    emergency_outcome: tuple[float, float, float] = (0.10, 0.40, 0.50)
    critical_hospitalise: float = 0.8
    revise_after_recheck: float = 0.5
    online_pref_shift: float = 0.10
    online_pref_true: float = 0.5
    hosp_pref_true: float = 0.4
    female_share: float = 0.5
    trait_mix: tuple[float, float, float] = (0.3, 0.5, 0.2)
    initial_health: tuple[float, float, float] = (0.7, 0.25, 0.05)
    adult_age: tuple[int, int] = (18, 85)
    child_age: tuple[int, int] = (1, 17)
    bed_call_minute: float = 8 * 60.0


@dataclass
class ScenarioConfig:
    beds: tuple[int, ...] = BASELINE_BEDS
    specialists: tuple[int, ...] = BASELINE_SPECIALISTS
    K: float = 40.0
    L: float = 25.0
    M: int = 0
    N: int = 0
    O: int = 0
    P: float = BASELINE_SLOT_MINUTES
    horizon_days: float = 300.0
    warmup_days: float = 10.0
    mode: str = HYBRID
    replications: int = 1
    master_seed: int | None = None
    arrival_rate_per_day: float = 10.0
    tourist_ratio: float = 10.0
    tourist_rule: str = "1/11"
    adherence_path: str | None = None
    behaviour: BehaviourParams = field(default_factory=BehaviourParams)
    process: ProcessParams = field(default_factory=ProcessParams)

    def __post_init__(self):
        self.beds = tuple(int(b) for b in self.beds)
        self.specialists = tuple(int(s) for s in self.specialists)
        self.validate()

    def validate(self) -> None:
        if len(self.beds) != 5:
            raise ConfigError("beds", "need five sections")
        for i, b in enumerate(self.beds, 1):
            if b < 0:
                raise ConfigError(f"beds.section{i}", f"must be non-negative, got {b}")
        if len(self.specialists) != 5:
            raise ConfigError("specialists", "need five sections")
        for i, s in enumerate(self.specialists, 1):
            if s < 1:
                raise ConfigError(f"specialists.section{i}", f"need at least one doctor, got {s}")
        for name in ("K", "L"):
            v = getattr(self, name)
            if not 0 <= v <= 100:
                raise ConfigError(name, f"share must be a percentage, got {v}")
        for name in ("M", "N", "O"):
            if getattr(self, name) not in (0, 1):
                raise ConfigError(name, "policy must be 0 or 1")
        if not self.P > 0:
            raise ConfigError("P", "slot interval must be positive")
        if self.horizon_days < 0:
            raise ConfigError("horizon_days", "must be non-negative")
        if self.warmup_days < 0:
            raise ConfigError("warmup_days", "must be non-negative")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        if self.replications < 1:
            raise ConfigError("replications", "must be at least 1")
        if not self.arrival_rate_per_day > 0:
            raise ConfigError("arrival_rate_per_day", "must be positive")
        if not self.tourist_ratio > 0:
            raise ConfigError("tourist_ratio", "must be positive")
        if self.tourist_rule not in ("1/11", "1/10"):
            raise ConfigError("tourist_rule", "must be 1/11 or 1/10")
        pp = self.process
        for name in ("los_days", "home_course_days"):
            lo, mode, hi = getattr(pp, name)
            if not 0 <= lo <= mode <= hi:
                raise ConfigError(f"process.{name}", "need 0 <= min <= mode <= max")
        for name in ("triage_minutes", "ward_review_minutes", "adult_age", "child_age"):
            lo, hi = getattr(pp, name)
            if not 0 <= lo <= hi:
                raise ConfigError(f"process.{name}", "need 0 <= min <= max")
        for name in ("initial_outcome", "revisit_outcome", "emergency_outcome", "trait_mix", "initial_health"):
            probs = getattr(pp, name)
            if len(probs) != 3 or min(probs) < 0 or not sum(probs) > 0:
                raise ConfigError(f"process.{name}", "need three non-negative weights")
        if pp.gp_count < 1:
            raise ConfigError("process.gp_count", "need at least one GP")

    @property
    def hybrid(self) -> bool:
        return self.mode == HYBRID

    @property
    def tourist_probability(self) -> float:
        # 1:10 read as one tourist in every eleven arrivals by default
        if self.tourist_rule == "1/10":
            return 1.0 / self.tourist_ratio
        return 1.0 / (self.tourist_ratio + 1.0)

    def decoded(self) -> dict[str, float]:
        values = dict(zip("ABCDE", self.beds))
        values.update(zip("FGHIJ", self.specialists))
        values.update(K=self.K, L=self.L, M=self.M, N=self.N, O=self.O, P=self.P)
        return values

    def coded_factors(self) -> dict[str, float]:
        """Linear coding of each factor on its (low, high) range."""
        out = {}
        for name, v in self.decoded().items():
            lo, hi = LEVELS[name]
            out[name] = (2.0 * v - lo - hi) / (hi - lo)
        return out

    def adherence(self) -> AdherenceParams:
        if self.adherence_path:
            return AdherenceParams.load(self.adherence_path)
        return AdherenceParams.default()

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return dataclasses.replace(self, master_seed=int(seed))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def decode_run(row: Mapping[str, int] | Sequence[int], base: ScenarioConfig | None = None,
               levels: Mapping[str, tuple[float, float]] = LEVELS) -> ScenarioConfig:
    """Map one coded design row (-1/+1 per factor) onto a scenario."""
    if not isinstance(row, Mapping):
        row = list(row)
        if len(row) != len(FACTORS):
            raise ValueError(f"design row needs {len(FACTORS)} entries, got {len(row)}")
        row = dict(zip(FACTORS, row))
    values = {}
    for name, code in row.items():
        if name not in levels:
            raise KeyError(f"unknown factor {name!r}")
        if code not in (-1, 1):
            raise ValueError(f"factor {name}: coded level must be -1 or +1, got {code}")
        lo, hi = levels[name]
        values[name] = hi if code > 0 else lo
    base = base or ScenarioConfig()
    cur = base.decoded()
    cur.update(values)
    return dataclasses.replace(
        base,
        beds=tuple(int(cur[c]) for c in "ABCDE"),
        specialists=tuple(int(cur[c]) for c in "FGHIJ"),
        K=float(cur["K"]), L=float(cur["L"]),
        M=int(cur["M"]), N=int(cur["N"]), O=int(cur["O"]),
        P=float(cur["P"]),
    )


def preset(name: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Named settings: baseline, final, low (all -1), high (all +1)."""
    base = base or ScenarioConfig()
    if name == "baseline":
        return base
    if name == "final":
        return decode_run(FINAL_CODED, base)
    if name == "low":
        return decode_run({f: -1 for f in FACTORS}, base)
    if name == "high":
        return decode_run({f: +1 for f in FACTORS}, base)
    raise ConfigError("preset", f"unknown preset {name!r}")


PRESETS = ("baseline", "final", "low", "high")

_TOP_LEVEL = {
    "K": float, "L": float, "M": int, "N": int, "O": int, "P": float,
    "horizon_days": float, "warmup_days": float, "mode": str, "replications": int,
    "seed": int, "arrival_rate_per_day": float, "tourist_ratio": float, "tourist_rule": str,
    "preset": str,
}


def _convert(field_name: str, raw: str, kind) -> Any:
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if kind is tuple:
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError:
        raise ConfigError(field_name, f"cannot read {raw!r} as {getattr(kind, '__name__', kind)}") from None


def parse_config_text(text: str, source: str = "<config>") -> ScenarioConfig:
    """Parse line-oriented ``key = value`` text.

    Unset keys keep their baseline defaults.  Dotted keys address the
    nested sections: ``beds.section3``, ``specialists.section2``,
    ``coded.K``, ``behaviour.anxious_factor``, ``process.los_days`` and
    ``adherence.path``.
    """
    entries: list[tuple[str, str]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value' in {source}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(key, "given twice")
        seen.add(key)
        entries.append((key, value))

    cfg = ScenarioConfig()
    for key, value in entries:
        if key == "preset":
            cfg = preset(value)
    beds = list(cfg.beds)
    specialists = list(cfg.specialists)
    top: dict[str, Any] = {}
    coded: dict[str, int] = {}
    behaviour = dataclasses.replace(cfg.behaviour)
    process = dataclasses.replace(cfg.process)
    adherence_path = cfg.adherence_path
    bfields = {f.name: f for f in dataclasses.fields(BehaviourParams)}
    pfields = {f.name: f for f in dataclasses.fields(ProcessParams)}

    for key, value in entries:
        if key == "preset":
            continue
        if key in _TOP_LEVEL:
            top[key] = _convert(key, value, _TOP_LEVEL[key])
        elif key.startswith(("beds.section", "specialists.section")):
            group, idx = key.split(".section")
            if idx not in {"1", "2", "3", "4", "5"}:
                raise ConfigError(key, "section index must be 1..5")
            target = beds if group == "beds" else specialists
            target[int(idx) - 1] = _convert(key, value, int)
        elif key.startswith("coded."):
            name = key[len("coded."):]
            if name not in LEVELS:
                raise ConfigError(key, "unknown factor")
            coded[name] = _convert(key, value, int)
        elif key.startswith("behaviour."):
            name = key[len("behaviour."):]
            if name not in bfields:
                raise ConfigError(key, "unknown behaviour constant")
            kind = type(getattr(behaviour, name))
            setattr(behaviour, name, _convert(key, value, kind))
        elif key.startswith("process."):
            name = key[len("process."):]
            if name not in pfields:
                raise ConfigError(key, "unknown process constant")
            cur = getattr(process, name)
            new = _convert(key, value, type(cur))
            if isinstance(cur, tuple) and len(new) != len(cur):
                raise ConfigError(key, f"expected {len(cur)} numbers")
            setattr(process, name, new)
        elif key == "adherence.path":
            adherence_path = value
        else:
            raise ConfigError(key, "unknown key")

    seed = top.pop("seed", cfg.master_seed)
    try:
        cfg = dataclasses.replace(
            cfg, beds=tuple(beds), specialists=tuple(specialists), behaviour=behaviour,
            process=process, adherence_path=adherence_path, master_seed=seed, **top,
        )
        if coded:
            cfg = decode_run(coded, cfg)
    except ConfigError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError("coded", str(exc)) from None
    if adherence_path:
        try:
            cfg.adherence()
        except (OSError, ValueError) as exc:
            raise ConfigError("adherence.path", str(exc)) from None
    return cfg


def load_config(path: str) -> ScenarioConfig:
    """Load a scenario from a file path or a preset name."""
    if path in PRESETS and not os.path.exists(path):
        return preset(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, source=path)
