"""Run manifests: every artifact is accompanied by a small JSON record of
the subcommand, resolved configuration, seed, input hashes, tool version
and wall time, written atomically into the artifact's directory."""

import hashlib
import json
import os
import tempfile

MANIFEST_NAME = "run_manifest.json"


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: str, data) -> None:
    """Write via a sibling temp file and rename, so readers never observe
    a half-written artifact."""
    if isinstance(data, str):
        data = data.encode()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_manifest(subcommand: str, config: dict, seed, inputs: dict,
                   outputs: list, wall_time_s: float) -> dict:
    from . import __version__

    return {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "inputs": {name: sha256_file(path) for name, path in sorted(inputs.items())},
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "version": __version__,
        "wall_time_s": wall_time_s,
    }


def write_manifest(manifest: dict, artifact_paths: list) -> list:
    """Drop run_manifest.json next to every artifact; one copy per
    distinct directory. Returns the manifest paths written."""
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    written = []
    for directory in sorted({os.path.dirname(os.path.abspath(p)) for p in artifact_paths}):
        path = os.path.join(directory, MANIFEST_NAME)
        write_atomic(path, text)
        written.append(path)
    return written
