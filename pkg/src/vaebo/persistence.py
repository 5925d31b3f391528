"""Campaign directories: result CSVs, resumable state and a checksummed manifest.

Layout of a campaign directory::

    manifest.json   format/version, file names, seed, sha256 of every file below
    space.cfg       design space (YAML)
    campaign.cfg    campaign config plus the simulator spec (YAML)
    vae.npz         frozen VAE checkpoint
    state.json      records, iteration counter, RNG states, failures
    history.csv     one row per evaluation
    pareto.csv      non-dominated rows (best rows for single-objective runs)
    latent.csv      encoder mean of every evaluated design
    timing.csv      wall-clock seconds per evaluation

Everything except ``timing.csv`` is a deterministic function of the inputs and
the seed, so two runs with equal flags produce byte-identical CSVs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path

import yaml

from . import vae as vaelib
from .bo import CampaignConfig, CampaignState, Record, non_dominated
from .design_space import DesignSpace, space_from_dict

MANIFEST_FORMAT = "vaebo-campaign"
MANIFEST_VERSION = 1
FILES = {
    "space": "space.cfg",
    "campaign": "campaign.cfg",
    "vae": "vae.npz",
    "state": "state.json",
    "history": "history.csv",
    "pareto": "pareto.csv",
    "latent": "latent.csv",
    "timing": "timing.csv",
}


class CampaignFileError(RuntimeError):
    """Missing, corrupt, tampered or version-mismatched campaign files."""


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def objective_names(arity: int) -> list[str]:
    return ["f"] if arity == 1 else [f"f{j + 1}" for j in range(arity)]


def history_csv(state: CampaignState) -> str:
    space = state.space
    header = ["iteration", *space.names, *objective_names(state.config.arity), "acquisition_score", "fallback"]
    rows = []
    for r in state.records:
        p = space.point(r.indices)
        score = "" if r.acquisition is None else repr(float(r.acquisition))
        rows.append([r.iteration, *(_fmt(v) for v in p.values), *(repr(float(f)) for f in r.objectives),
                     score, int(r.fallback)])
    return _csv_text(header, rows)


def pareto_rows(state: CampaignState) -> list[int]:
    if not state.records:
        return []
    F = state.objectives
    if state.config.arity == 1:
        best = F[:, 0].min()
        return [i for i, f in enumerate(F[:, 0]) if f == best]
    return non_dominated(F)


def pareto_csv(state: CampaignState) -> str:
    space = state.space
    header = ["row", "iteration", *space.names, *objective_names(state.config.arity)]
    rows = []
    for i in pareto_rows(state):
        r = state.records[i]
        rows.append([i, r.iteration, *(_fmt(v) for v in space.point(r.indices).values),
                     *(repr(float(f)) for f in r.objectives)])
    return _csv_text(header, rows)


def latent_csv(state: CampaignState) -> str:
    space = state.space
    dim = len(state.records[0].z) if state.records else 0
    header = ["row", "iteration", *space.names, *(f"z{j}" for j in range(dim))]
    rows = []
    for i, r in enumerate(state.records):
        if len(r.z) != dim:
            continue
        rows.append([i, r.iteration, *(_fmt(v) for v in space.point(r.indices).values),
                     *(repr(float(v)) for v in r.z)])
    return _csv_text(header, rows)


def timing_csv(state: CampaignState) -> str:
    return _csv_text(["row", "iteration", "wall_time"],
                     [[i, r.iteration, f"{r.wall_time:.6f}"] for i, r in enumerate(state.records)])


def state_to_json(state: CampaignState) -> str:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "iteration": state.iteration,
        "rng_state": state.rng_state,
        "init_rng_state": state.init_rng_state,
        "records": [{"indices": list(r.indices), "z": list(r.z), "objectives": list(r.objectives),
                     "iteration": r.iteration, "acquisition": r.acquisition, "fallback": r.fallback,
                     "wall_time": r.wall_time} for r in state.records],
        "failures": state.failures,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def state_from_json(text: str, space: DesignSpace, config: CampaignConfig) -> CampaignState:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CampaignFileError(f"state file is not valid JSON: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT or doc.get("version") != MANIFEST_VERSION:
        raise CampaignFileError(f"unsupported state format/version {doc.get('format')!r}/{doc.get('version')!r}")
    records = [Record(tuple(r["indices"]), tuple(r["z"]), tuple(r["objectives"]), r["iteration"],
                      r["acquisition"], bool(r["fallback"]), r.get("wall_time", 0.0)) for r in doc["records"]]
    return CampaignState(space, config, records, doc["iteration"], doc["rng_state"],
                         doc["init_rng_state"], doc.get("failures", []))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_campaign(out_dir, state: CampaignState, simulator_spec: str,
                   vae: vaelib.VaeModel | None = None) -> Path:
    """Write (or refresh) every campaign file and then the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / FILES["space"], yaml.safe_dump(state.space.to_config(), sort_keys=False))
    campaign_doc = {"simulator": simulator_spec, **state.config.to_dict()}
    atomic_write_text(out / FILES["campaign"], yaml.safe_dump(campaign_doc, sort_keys=False))
    if vae is not None:
        tmp = out / (FILES["vae"] + ".tmp")
        vaelib.save_model(vae, tmp)
        os.replace(tmp, out / FILES["vae"])
    atomic_write_text(out / FILES["state"], state_to_json(state))
    atomic_write_text(out / FILES["history"], history_csv(state))
    atomic_write_text(out / FILES["pareto"], pareto_csv(state))
    atomic_write_text(out / FILES["latent"], latent_csv(state))
    atomic_write_text(out / FILES["timing"], timing_csv(state))

    checksums = {key: _sha256(out / name) for key, name in FILES.items()
                 if key != "timing" and (out / name).exists()}
    manifest = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "files": FILES,
                "seed": state.config.seed, "checksums": checksums}
    path = out / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_campaign(manifest_path):
    """Verify a manifest and restore ``(state, vae, simulator_spec, out_dir)``."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CampaignFileError(f"manifest not found: {manifest_path}") from exc
    except json.JSONDecodeError as exc:
        raise CampaignFileError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise CampaignFileError(f"{manifest_path}: not a campaign manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise CampaignFileError(f"{manifest_path}: unsupported manifest version {manifest.get('version')!r}")
    out = manifest_path.parent
    files = manifest["files"]
    for key in ("space", "campaign", "vae", "state", "history"):
        path = out / files[key]
        if not path.exists():
            raise CampaignFileError(f"missing campaign file: {path}")
        expected = manifest["checksums"].get(key)
        if expected is None or _sha256(path) != expected:
            raise CampaignFileError(f"checksum mismatch for {path}; refusing to resume")

    space = space_from_dict(yaml.safe_load((out / files["space"]).read_text(encoding="utf-8")))
    doc = yaml.safe_load((out / files["campaign"]).read_text(encoding="utf-8"))
    simulator_spec = doc.pop("simulator")
    config = CampaignConfig.from_dict(doc)
    state = state_from_json((out / files["state"]).read_text(encoding="utf-8"), space, config)
    vae = vaelib.load_model(out / files["vae"])
    if vae.space != space:
        raise CampaignFileError("VAE checkpoint does not match the campaign's design space")
    if history_csv(state) != (out / files["history"]).read_text(encoding="utf-8"):
        raise CampaignFileError("history.csv disagrees with state.json")
    return state, vae, simulator_spec, out
