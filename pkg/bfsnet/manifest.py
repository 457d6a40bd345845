"""
Run manifests - record what a command did so it can be replayed.
Uses a JSON file per run, written next to the first output.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from dateutil.parser import parse
from dateutil.tz import UTC

from . import __version__
from .containers import sha256_file
from .errors import DataError, UsageError

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


@dataclass
class RunRecord:
    """One artifact-producing command invocation."""

    command: str
    argv: list
    params: dict
    seed: int
    workers: int
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


def default_manifest_path(run):
    if not run.outputs:
        raise UsageError(f"{run.command} produced no output to attach a manifest to")
    first = Path(run.outputs[0])
    return first.with_name(first.name + MANIFEST_SUFFIX)


class RunManifest:
    """Manifest of one run: resolved parameters plus input and output hashes."""

    def __init__(self, manifest_file, load=True):
        """
        Args:
            manifest_file: Path of the JSON manifest
            load: Read an existing file (False starts empty)
        """
        self.manifest_file = Path(manifest_file)
        self.data = self.load_data() if load else {}

    def load_data(self):
        """Load the manifest if it exists."""
        if self.manifest_file.exists():
            try:
                with open(self.manifest_file, "r") as f:
                    return json.load(f)
            except json.JSONDecodeError as e:
                raise DataError(f"manifest {self.manifest_file} is not valid JSON: {e}") from e
        return {}

    def save_data(self):
        """Write the manifest; an unwritable directory is an error."""
        try:
            with open(self.manifest_file, "w") as f:
                json.dump(self.data, f, indent=2, sort_keys=True, default=str)
        except OSError as e:
            raise UsageError(f"cannot write manifest {self.manifest_file}: {e}") from e

    def record(self, run):
        """Fill the manifest from a finished run."""
        self.data = {
            "tool": "bfsnet",
            "version": __version__,
            "command": run.command,
            "argv": list(run.argv),
            "params": run.params,
            "seed": run.seed,
            "workers": run.workers,
            "inputs": {str(p): sha256_file(p) for p in run.inputs},
            "outputs": {str(p): sha256_file(p) for p in run.outputs},
            "created_at": datetime.now(UTC).isoformat(),
        }

    @property
    def argv(self):
        if "argv" not in self.data:
            raise DataError(f"manifest {self.manifest_file} has no recorded command line")
        return list(self.data["argv"])

    @property
    def created_at(self):
        stamp = self.data.get("created_at")
        return parse(stamp) if stamp else None

    def missing_inputs(self):
        return [p for p in self.data.get("inputs", {}) if not os.path.exists(p)]

    def changed_inputs(self):
        """Inputs whose content no longer matches the recorded hash."""
        return [
            p for p, digest in self.data.get("inputs", {}).items()
            if os.path.exists(p) and sha256_file(p) != digest
        ]

    def verify_outputs(self):
        """
        Compare current output files with the recorded hashes.

        Returns:
            List of output paths that are missing or differ
        """
        mismatched = []
        for p, digest in self.data.get("outputs", {}).items():
            if not os.path.exists(p) or sha256_file(p) != digest:
                mismatched.append(p)
        return mismatched


def write_manifest(run, path=None):
    """
    Write the manifest of a run.

    Args:
        run: RunRecord whose outputs already exist
        path: Manifest path (default: <first output>.manifest.json)

    Returns:
        Path of the written manifest
    """
    path = Path(path) if path else default_manifest_path(run)
    manifest = RunManifest(path, load=False)
    manifest.record(run)
    manifest.save_data()
    logger.info("manifest written to %s", path)
    return path
