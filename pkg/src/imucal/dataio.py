"""File formats: dataset CSV, ground-truth/estimate JSON, run configs.

Dataset files are plain CSV with exactly four header lines (format tag,
shape line, noise line, column names) followed by one row per (sample,
IMU) pair in sample-major order.  All floats are written with repr
precision so a write/read round trip is exact.  Every writer goes through
a temp file + rename so readers never observe partial files.
"""
from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass

import jsonschema
import numpy as np

from .imu_model import ImuNoiseSpec
from .problem import ProblemOptions
from .simulator import (
    ExcitationProfile,
    ExtrinsicSet,
    GroundTruthLog,
    MeasurementSeries,
    RigScenario,
    Trajectory,
    make_constant_acceleration_trajectory,
    make_excitation_trajectory,
    make_single_axis_rotation_trajectory,
    perturb_extrinsics,
    reference_extrinsics,
    reference_noise_spec,
)
from .so3 import quat_from_euler_xyz, quat_normalize
from .solver import SolverOptions

FORMAT_VERSION = 1

_DATASET_COLUMNS = "t,imu,ax,ay,az,gx,gy,gz"


def atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# dataset CSV


def write_dataset(path: str, series: MeasurementSeries) -> None:
    k_num = series.num_samples
    num_imus = series.num_imus
    noise_json = json.dumps(
        [spec.to_dict() for spec in series.noise] if series.noise else None,
        sort_keys=True,
    )
    lines = [
        f"# imucal dataset format_version={FORMAT_VERSION}",
        f"# num_imus={num_imus} num_samples={k_num} dt={series.dt!r}",
        f"# noise={noise_json}",
        _DATASET_COLUMNS,
    ]
    for k in range(k_num):
        t_txt = f"{series.t[k]:.17g}"
        for n in range(num_imus):
            a = series.accel[k, n]
            g = series.gyro[k, n]
            vals = ",".join(f"{v:.17g}" for v in (*a, *g))
            lines.append(f"{t_txt},{n},{vals}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_dataset(path: str) -> MeasurementSeries:
    with open(path, "r", encoding="utf-8") as fh:
        tag = fh.readline().strip()
        shape_line = fh.readline().strip()
        noise_line = fh.readline().strip()
        columns = fh.readline().strip()
        body = np.loadtxt(fh, delimiter=",", ndmin=2)

    m = re.fullmatch(r"# imucal dataset format_version=(\d+)", tag)
    if not m:
        raise ValueError(f"{path}: not an imucal dataset")
    if int(m.group(1)) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported dataset format_version {m.group(1)}")
    m = re.fullmatch(r"# num_imus=(\d+) num_samples=(\d+) dt=([^ ]+)", shape_line)
    if not m:
        raise ValueError(f"{path}: malformed shape line")
    num_imus, k_num, dt = int(m.group(1)), int(m.group(2)), float(m.group(3))
    if not noise_line.startswith("# noise="):
        raise ValueError(f"{path}: malformed noise line")
    noise_raw = json.loads(noise_line[len("# noise="):])
    noise = [ImuNoiseSpec.from_dict(d) for d in noise_raw] if noise_raw else []
    if columns != _DATASET_COLUMNS:
        raise ValueError(f"{path}: unexpected column header")
    if body.shape != (k_num * num_imus, 8):
        raise ValueError(
            f"{path}: expected {k_num * num_imus} data rows of 8 columns, got {body.shape}"
        )
    imu_col = body[:, 1].reshape(k_num, num_imus)
    if not np.array_equal(imu_col, np.broadcast_to(np.arange(num_imus), (k_num, num_imus))):
        raise ValueError(f"{path}: rows are not in sample-major IMU order")
    t = body[::num_imus, 0].copy()
    accel = body[:, 2:5].reshape(k_num, num_imus, 3).copy()
    gyro = body[:, 5:8].reshape(k_num, num_imus, 3).copy()
    return MeasurementSeries(t=t, accel=accel, gyro=gyro, dt=dt, noise=noise)


# ---------------------------------------------------------------------------
# ground truth / estimate JSON


def _extrinsics_to_dict(ext: ExtrinsicSet) -> dict:
    return {"p": ext.p.tolist(), "q": ext.q.tolist(), "mis": ext.mis.tolist()}


def _extrinsics_from_dict(d: dict) -> ExtrinsicSet:
    return ExtrinsicSet(
        p=np.asarray(d["p"], float),
        q=np.asarray(d["q"], float),
        mis=np.asarray(d["mis"], float),
    )


def write_ground_truth(path: str, log: GroundTruthLog) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "seed": log.seed,
        "extrinsics": _extrinsics_to_dict(log.extrinsics),
        "accel_bias": log.accel_bias.tolist(),
        "gyro_bias": log.gyro_bias.tolist(),
        "alpha": log.alpha.tolist(),
    }
    atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def read_ground_truth(path: str) -> GroundTruthLog:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported ground-truth format_version")
    return GroundTruthLog(
        extrinsics=_extrinsics_from_dict(payload["extrinsics"]),
        accel_bias=np.asarray(payload["accel_bias"], float),
        gyro_bias=np.asarray(payload["gyro_bias"], float),
        alpha=np.asarray(payload["alpha"], float),
        seed=int(payload["seed"]),
    )


def estimate_to_dict(
    extrinsics: ExtrinsicSet,
    report: dict | None = None,
    aux_initial: dict | None = None,
    aux_final: dict | None = None,
    options: dict | None = None,
) -> dict:
    def _aux(d):
        if d is None:
            return None
        return {key: np.asarray(val, float).tolist() for key, val in d.items()}

    return {
        "format_version": FORMAT_VERSION,
        "extrinsics": _extrinsics_to_dict(extrinsics),
        "solver_report": report,
        "aux_initial": _aux(aux_initial),
        "aux_final": _aux(aux_final),
        "options": options,
    }


def write_estimate(path: str, payload: dict) -> None:
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError("estimate payload missing format_version")
    atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def read_estimate(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported estimate format_version")
    payload["extrinsics"] = _extrinsics_from_dict(payload["extrinsics"])
    for key in ("aux_initial", "aux_final"):
        if payload.get(key) is not None:
            payload[key] = {k: np.asarray(v, float) for k, v in payload[key].items()}
    return payload


# ---------------------------------------------------------------------------
# run configuration

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NON_NEGATIVE = {"type": "number", "minimum": 0}
_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_QUAT = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}

_NOISE_SCHEMA = {
    "type": "object",
    "properties": {
        "sigma_a": _POSITIVE,
        "sigma_g": _POSITIVE,
        "sigma_ba": _POSITIVE,
        "sigma_bg": _POSITIVE,
    },
    "required": ["sigma_a", "sigma_g", "sigma_ba", "sigma_bg"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "duration": _POSITIVE,
        "dt": _POSITIVE,
        "gravity": {"type": "number"},
        "num_imus": {"type": "integer", "minimum": 2, "maximum": 16},
        "trajectory": {
            "enum": ["excitation", "constant_acceleration", "single_axis_rotation"]
        },
        "noise": {
            "oneOf": [
                {"type": "null"},
                {"const": "reference"},
                _NOISE_SCHEMA,
                {"type": "array", "items": _NOISE_SCHEMA, "minItems": 1},
            ]
        },
        "extrinsics": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "properties": {
                        "p_mm": {"type": "array", "items": _VEC3, "minItems": 1},
                        "euler_xyz_deg": {"type": "array", "items": _VEC3, "minItems": 1},
                        "q": {"type": "array", "items": _QUAT, "minItems": 1},
                        "mis_q": {"type": "array", "items": _QUAT, "minItems": 1},
                    },
                    "required": ["p_mm"],
                    "additionalProperties": False,
                },
            ]
        },
        "misalignment_std_deg": _NON_NEGATIVE,
        "estimate_misalignment": {"type": "boolean"},
        "sigma_a_alt": {"type": "boolean"},
        "guess": {
            "type": "object",
            "properties": {
                "position_offset_mm": _NON_NEGATIVE,
                "orientation_offset_deg": _NON_NEGATIVE,
                "fixed_magnitude": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 1},
                "cost_tolerance": _POSITIVE,
                "gradient_tolerance": _POSITIVE,
                "initial_damping": _POSITIVE,
            },
            "additionalProperties": False,
        },
        "excitation": {
            "type": "object",
            "properties": {
                "omega_amplitude": _VEC3,
                "omega_frequency": _VEC3,
                "omega_phase": _VEC3,
                "accel_amplitude": _VEC3,
                "accel_frequency": _VEC3,
                "accel_phase": _VEC3,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULT_CONFIG = {
    "seed": 0,
    "duration": 30.0,
    "dt": 0.01,
    "gravity": 9.81,
    "num_imus": 4,
    "trajectory": "excitation",
    "noise": "reference",
    "extrinsics": None,
    "misalignment_std_deg": 1.0,
    "estimate_misalignment": True,
    "sigma_a_alt": False,
    "guess": {
        "position_offset_mm": 5.0,
        "orientation_offset_deg": 5.0,
        "fixed_magnitude": False,
    },
    "solver": {},
    "excitation": {},
}


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValueError(f"invalid config: {exc.message}") from exc


def merge_config(user_cfg: dict | None) -> dict:
    """Overlay a user config onto the defaults and validate the result."""
    merged = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, value in (user_cfg or {}).items():
        if key in ("guess", "solver", "excitation") and isinstance(value, dict):
            merged[key] = {**merged.get(key, {}), **value}
        else:
            merged[key] = value
    validate_config(merged)
    return merged


def load_config(path: str | None) -> dict:
    if path is None:
        return merge_config(None)
    with open(path, "r", encoding="utf-8") as fh:
        user_cfg = json.load(fh)
    return merge_config(user_cfg)


@dataclass(frozen=True)
class GuessSpec:
    """How the initial extrinsic guess is derived from the true layout."""

    position_offset_m: float = 0.005
    orientation_offset_rad: float = math.radians(5.0)
    fixed_magnitude: bool = False

    def draw(self, truth: ExtrinsicSet, rng: np.random.Generator) -> ExtrinsicSet:
        return perturb_extrinsics(
            truth,
            rng,
            position_std_m=self.position_offset_m,
            orientation_std_rad=self.orientation_offset_rad,
            fixed_magnitude=self.fixed_magnitude,
        )


def noise_from_config(cfg: dict) -> list[ImuNoiseSpec] | None:
    noise = cfg["noise"]
    dt = cfg["dt"]
    num_imus = cfg["num_imus"]
    if noise is None:
        return None
    if noise == "reference":
        return [reference_noise_spec(dt)] * num_imus
    if isinstance(noise, dict):
        noise = [noise]
    specs = [ImuNoiseSpec(dt=dt, **entry) for entry in noise]
    if len(specs) == 1:
        specs = specs * num_imus
    if len(specs) != num_imus:
        raise ValueError(f"need 1 or {num_imus} noise entries, got {len(noise)}")
    return specs


def extrinsics_from_config(cfg: dict) -> ExtrinsicSet:
    ext_cfg = cfg["extrinsics"]
    num_imus = cfg["num_imus"]
    if ext_cfg is None:
        return reference_extrinsics(num_imus)
    p = np.asarray(ext_cfg["p_mm"], float) / 1000.0
    n = num_imus - 1
    if p.shape != (n, 3):
        raise ValueError(f"extrinsics.p_mm must have {n} rows for num_imus={num_imus}")
    has_euler = "euler_xyz_deg" in ext_cfg
    has_q = "q" in ext_cfg
    if has_euler == has_q:
        raise ValueError("extrinsics needs exactly one of euler_xyz_deg or q")
    if has_euler:
        euler = np.radians(np.asarray(ext_cfg["euler_xyz_deg"], float))
        if euler.shape != (n, 3):
            raise ValueError("extrinsics.euler_xyz_deg has the wrong shape")
        q = np.stack([quat_from_euler_xyz(e) for e in euler])
    else:
        q = quat_normalize(np.asarray(ext_cfg["q"], float))
        if q.shape != (n, 4):
            raise ValueError("extrinsics.q has the wrong shape")
    if "mis_q" in ext_cfg:
        mis = quat_normalize(np.asarray(ext_cfg["mis_q"], float))
        if mis.shape != (num_imus, 4):
            raise ValueError("extrinsics.mis_q needs one quaternion per IMU (base included)")
    else:
        ident = ExtrinsicSet.identity(num_imus)
        mis = ident.mis
    return ExtrinsicSet(p=p, q=q, mis=mis)


def scenario_from_config(cfg: dict, seed: int | None = None) -> RigScenario:
    mis_std = math.radians(cfg["misalignment_std_deg"])
    return RigScenario(
        extrinsics=extrinsics_from_config(cfg),
        noise=noise_from_config(cfg),
        duration=cfg["duration"],
        dt=cfg["dt"],
        seed=cfg["seed"] if seed is None else seed,
        gravity=cfg["gravity"],
        misalignment_sample_std_rad=mis_std if mis_std > 0 else None,
    )


def trajectory_from_config(cfg: dict) -> Trajectory:
    kind = cfg["trajectory"]
    if kind == "excitation":
        profile = ExcitationProfile(**{k: tuple(v) for k, v in cfg["excitation"].items()})
        return make_excitation_trajectory(cfg["duration"], cfg["dt"], profile, cfg["gravity"])
    if cfg["excitation"]:
        raise ValueError("excitation settings only apply to the excitation trajectory")
    if kind == "constant_acceleration":
        return make_constant_acceleration_trajectory(cfg["duration"], cfg["dt"], gravity=cfg["gravity"])
    return make_single_axis_rotation_trajectory(cfg["duration"], cfg["dt"], gravity=cfg["gravity"])


def problem_options_from_config(cfg: dict) -> ProblemOptions:
    noise = noise_from_config(cfg)
    # the noiseless path still needs a whitening scale for the solver
    whitening = [reference_noise_spec(cfg["dt"])] * cfg["num_imus"] if noise is None else None
    return ProblemOptions(
        estimate_misalignment=cfg["estimate_misalignment"],
        sigma_a_alt=cfg["sigma_a_alt"],
        noise=whitening,
    )


def solver_options_from_config(cfg: dict) -> SolverOptions:
    return SolverOptions(**cfg["solver"])


def guess_spec_from_config(cfg: dict) -> GuessSpec:
    guess = cfg["guess"]
    return GuessSpec(
        position_offset_m=guess["position_offset_mm"] / 1000.0,
        orientation_offset_rad=math.radians(guess["orientation_offset_deg"]),
        fixed_magnitude=guess["fixed_magnitude"],
    )
