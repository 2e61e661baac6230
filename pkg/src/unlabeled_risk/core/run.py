import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from time import time
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from unlabeled_risk.core.errors import ConfigError, DataError
from unlabeled_risk.utils.constants import FLOAT_FORMAT

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    """
    Record of one CLI run, written as ``manifest.json`` next to its outputs.
    """

    subcommand: str
    config: dict
    seed: Optional[int]
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    wall_time: float = 0.0


class Run:
    def __init__(self, subcommand: str, out_dir: str, config: dict, seed: Optional[int] = None):
        """
        Initialize a Run.

        Args:
            subcommand (str): Name of the CLI workflow.
            out_dir (str): Directory for every output file; created if missing.
            config (dict): Fully resolved configuration of the run.
            seed (int, optional): Seed the run was started with.
        """
        self._validate_out_dir(out_dir)
        self._out_dir = self._create_output_dir(out_dir)
        self._start_time = time()
        self.manifest = RunManifest(subcommand=subcommand, config=to_jsonable(config), seed=seed)

    @property
    def out_dir(self) -> str:
        return self._out_dir

    def path(self, filename: str) -> str:
        return os.path.join(self._out_dir, filename)

    def register_input(self, path: str) -> str:
        """
        Record the SHA-256 digest of an input file.
        """
        digest = file_digest(path)
        self.manifest.inputs[str(path)] = digest
        return digest

    def write_json(self, filename: str, payload: dict) -> str:
        path = self.path(filename)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(to_jsonable(payload), f, indent=2, allow_nan=False)
            f.write("\n")
        return self._register_output(path)

    def write_csv(self, filename: str, table: pd.DataFrame) -> str:
        path = self.path(filename)
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
        return self._register_output(path)

    def add_output(self, path: str) -> str:
        """
        Register a file written by a module helper.
        """
        return self._register_output(path)

    def finish(self) -> str:
        """
        Write the manifest; call once after every output is written.
        """
        self.manifest.wall_time = time() - self._start_time
        path = self.path(MANIFEST_NAME)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(to_jsonable(asdict(self.manifest)), f, indent=2, allow_nan=False)
            f.write("\n")
        return path

    def _register_output(self, path: str) -> str:
        self.manifest.outputs.append(os.path.basename(path))
        return path

    @staticmethod
    def _validate_out_dir(out_dir: str) -> None:
        if not out_dir:
            raise ConfigError("No output directory provided. Please pass --out-dir.")
        if os.path.exists(out_dir) and not os.path.isdir(out_dir):
            raise ConfigError(f"Output path {out_dir} exists and is not a directory.")

    @staticmethod
    def _create_output_dir(out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        return out_dir


def file_digest(path: str) -> str:
    if not os.path.isfile(path):
        raise DataError(f"{path}: no such file.")
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def to_jsonable(value):
    """
    Convert configs, enums and numpy values into JSON types. Non-finite
    floats become null.
    """
    if is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(asdict(value))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value
