"""INI scenario configuration.

Grammar (all values SI; frequencies in Hz, converted once here)::

    [mode1] / [mode2]   mass_kg, freq_hz, q_factor, gamma_eff_hz, temperature_k
    [drive]             exactly one of gbar | k_mod_n_per_m; dtheta_rms_rad
    [burst]             rate_hz, duty, n_bursts, sample_rate_hz, lockin_tau_s, on_time_s
    [run]               seed, workers, out_path
    [sweep]             gbar_list, mc, mc_records
    [fullband]          freq_scale, n_traj, duration_s, steps_per_period,
                        lockin_tau_s, lockin_order, snapshot_interval_s

[mode1], [mode2] and [drive] are required; the other sections and every
key marked optional below fall back to the reference-device defaults.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

from .model import CoupledPair, OscillatorMode, build_pair
from .sim import BurstSchedule


class ConfigError(ValueError):
    pass


REQUIRED = object()

SCHEMA = {
    "mode1": {
        "mass_kg": (float, REQUIRED),
        "freq_hz": (float, REQUIRED),
        "q_factor": (float, REQUIRED),
        "gamma_eff_hz": (float, REQUIRED),
        "temperature_k": (float, REQUIRED),
    },
    "drive": {
        "gbar": (float, None),
        "k_mod_n_per_m": (float, None),
        "dtheta_rms_rad": (float, 0.0),
    },
    "burst": {
        "rate_hz": (float, 50.0),
        "duty": (float, 0.5),
        "n_bursts": (int, 5000),
        "sample_rate_hz": (float, 2e5),
        "lockin_tau_s": (float, 4e-5),
        "on_time_s": (float, None),
    },
    "run": {
        "seed": (int, 0),
        "workers": (int, 1),
        "out_path": (str, None),
    },
    "sweep": {
        "gbar_list": (str, "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.85,0.9,0.95,0.97,0.99"),
        "mc": (bool, False),
        "mc_records": (int, 200),
    },
    "fullband": {
        "freq_scale": (float, 1e-3),
        "n_traj": (int, 2000),
        "duration_s": (float, 3.3),
        "steps_per_period": (int, 64),
        "lockin_tau_s": (float, 0.03),
        "lockin_order": (int, 1),
        "snapshot_interval_s": (float, 0.3),
    },
}
SCHEMA["mode2"] = SCHEMA["mode1"]
REQUIRED_SECTIONS = ("mode1", "mode2", "drive")


def _convert(kind, raw, path):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {raw!r} as {kind.__name__}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    values: dict = field(repr=False)

    def __getitem__(self, section):
        return self.values[section]

    # --- derived objects -------------------------------------------------

    def mode(self, name: str) -> OscillatorMode:
        s = self.values[name]
        try:
            return OscillatorMode.from_hz(
                s["mass_kg"], s["freq_hz"], s["q_factor"], s["gamma_eff_hz"], s["temperature_k"]
            )
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None

    def pair(self) -> CoupledPair:
        d = self.values["drive"]
        m1, m2 = self.mode("mode1"), self.mode("mode2")
        try:
            if d["gbar"] is not None:
                return build_pair(m1, m2, gbar=d["gbar"])
            return build_pair(m1, m2, d["k_mod_n_per_m"])
        except ValueError as exc:
            raise ConfigError(f"[drive] {exc}") from None

    def schedule(self, drive_gbar=None) -> BurstSchedule:
        b = self.values["burst"]
        try:
            return BurstSchedule(
                burst_rate=b["rate_hz"],
                duty_cycle=b["duty"],
                n_bursts=b["n_bursts"],
                sample_rate=b["sample_rate_hz"],
                lockin_tau=b["lockin_tau_s"],
                drive_gbar=drive_gbar,
                on_duration=b["on_time_s"],
            )
        except ValueError as exc:
            raise ConfigError(f"[burst] {exc}") from None

    @property
    def dtheta_rms(self) -> float:
        return self.values["drive"]["dtheta_rms_rad"]

    def gbar_list(self):
        raw = self.values["sweep"]["gbar_list"]
        try:
            return [float(x) for x in raw.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"sweep.gbar_list: cannot parse {raw!r}") from None

    # --- serialization ---------------------------------------------------

    def with_overrides(self, **section_keys) -> "ScenarioConfig":
        """``with_overrides(run={"seed": 3})`` returns an updated copy."""
        values = {s: dict(v) for s, v in self.values.items()}
        for section, updates in section_keys.items():
            for key, val in updates.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}: unknown key")
                values[section][key] = val
        return ScenarioConfig(_validated(values))

    def canonical(self) -> str:
        """Deterministic text form; ``run.out_path`` and ``run.workers`` excluded
        since they do not affect results."""
        lines = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                if section == "run" and key in ("out_path", "workers"):
                    continue
                lines.append(f"{section}.{key}={self.values[section][key]!r}")
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section, keys in self.values.items():
            cp[section] = {k: str(v) for k, v in keys.items() if v is not None}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _validated(values):
    d = values["drive"]
    if (d["gbar"] is None) == (d["k_mod_n_per_m"] is None):
        raise ConfigError("[drive]: exactly one of gbar or k_mod_n_per_m must be given")
    if d["dtheta_rms_rad"] < 0:
        raise ConfigError("drive.dtheta_rms_rad: must be >= 0")
    if values["run"]["workers"] < 1:
        raise ConfigError("run.workers: must be >= 1")
    return values


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"[{section}]: unknown section")
    for section in REQUIRED_SECTIONS:
        if not cp.has_section(section):
            raise ConfigError(f"[{section}]: missing required section")
    values = {}
    for section, schema in SCHEMA.items():
        given = dict(cp[section]) if cp.has_section(section) else {}
        for key in given:
            if key not in schema:
                raise ConfigError(f"{section}.{key}: unknown key")
        out = {}
        for key, (kind, default) in schema.items():
            if key in given:
                out[key] = _convert(kind, given[key], f"{section}.{key}")
            elif default is REQUIRED:
                raise ConfigError(f"{section}.{key}: missing required key")
            else:
                out[key] = default
        values[section] = out
    return ScenarioConfig(_validated(values))


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


DEFAULT_CONFIG = """\
[mode1]
mass_kg = 250e-9
freq_hz = 172e3
q_factor = 5e4
gamma_eff_hz = 500
temperature_k = 300

[mode2]
mass_kg = 100e-9
freq_hz = 225e3
q_factor = 5e4
gamma_eff_hz = 500
temperature_k = 300

[drive]
gbar = 1.30
dtheta_rms_rad = 0.070

[burst]
rate_hz = 50
duty = 0.15
n_bursts = 5000
sample_rate_hz = 2e5
lockin_tau_s = 4e-5

[run]
seed = 20150101
workers = 1
"""


def default_config() -> ScenarioConfig:
    return parse_config(DEFAULT_CONFIG)
