"""
Output Manager for HeatCluster
All result files go through this layer: fixed column order, fixed row order,
round-trip float formatting and LF line endings, so that a rerun of the same
configuration reproduces the same bytes.
"""

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union, Any, Dict

import numpy as np

from models.records import FieldSample, RateReport
from utils.config import get_config
from utils.logger import get_logger, get_error_logger


PathLike = Union[str, Path]

FIELD_HEADER = ["x", "y", "z", "t", "u"]
ALPHAS_HEADER = ["i", "t_k", "alpha"]
DENSITY_HEADER = ["panel_id", "value", "area"]
CLUSTER_HEADER = ["j", "z_x", "z_y", "z_z", "eps"]
SIGMA_HEADER = ["i", "j", "k", "x", "y", "z", "sigma", "gamma"]
RATE_HEADER = ["level", "error"]


class OutputManager:
    """
    Deterministic CSV/JSON writer.

    Relative paths are taken relative to the working directory; `default_path`
    places a bare file name under the configured result directory.
    """

    def __init__(self):
        self.config = get_config()
        self.logger = get_logger()
        self.error_logger = get_error_logger()
        self.float_format = self.config.output.float_format
        self.written: List[Path] = []

    def default_path(self, name: str) -> Path:
        return self.config.get_full_output_dir() / name

    def _format(self, value: Any) -> str:
        if isinstance(value, (bool, np.bool_)):
            return "1" if value else "0"
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return self.float_format % float(value)
        return str(value)

    def _write_rows(self, path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(header)
                count = 0
                for row in rows:
                    writer.writerow([self._format(v) for v in row])
                    count += 1
        except OSError as e:
            self.error_logger.log_io_error(str(path), e)
            raise

        self.written.append(path)
        self.logger.info("Result written", path=str(path), rows=count)
        return path

    # ==========================================
    # RESULT FILES
    # ==========================================

    def write_field(self, samples: Sequence[FieldSample], path: PathLike) -> Path:
        """x, y, z, t, u"""
        return self._write_rows(path, FIELD_HEADER, (s.to_row() for s in samples))

    def write_alphas(self, history, path: PathLike) -> Path:
        """i, t_k, alpha in (i, k) order"""
        nodes = history.grid.nodes

        def rows():
            for i, row in enumerate(history.alphas):
                for t_k, value in zip(nodes, row):
                    yield i, t_k, value

        return self._write_rows(path, ALPHAS_HEADER, rows())

    def write_density(self, density, path: PathLike) -> Path:
        """panel_id, value, area for a piecewise-constant surface density"""
        rows = zip(range(len(density.values)), density.values, density.mesh.areas)
        return self._write_rows(path, DENSITY_HEADER, rows)

    def write_cluster(self, cluster, path: PathLike) -> Path:
        """j, z_x, z_y, z_z, eps"""
        rows = ((j, z[0], z[1], z[2], cluster.eps) for j, z in enumerate(cluster.centers))
        return self._write_rows(path, CLUSTER_HEADER, rows)

    def write_sigma(self, coefficients, path: PathLike) -> Path:
        """i, j, k, x, y, z, sigma, gamma over every grid cell in C order"""
        grid = coefficients.grid
        centers = grid.centers
        sigma = coefficients.sigma_field.ravel()
        gamma = coefficients.gamma_field.ravel()

        def rows():
            for flat, (i, j, k) in enumerate(np.ndindex(*grid.shape)):
                x, y, z = centers[flat]
                yield i, j, k, x, y, z, sigma[flat], gamma[flat]

        return self._write_rows(path, SIGMA_HEADER, rows())

    def write_rate_report(self, report: RateReport, path: PathLike) -> Path:
        """level, error rows plus a JSON summary next to the CSV"""
        csv_path = self._write_rows(path, RATE_HEADER, zip(report.levels, report.errors))
        self.write_json(report.to_dict(), Path(csv_path).with_suffix('.json'))
        return csv_path

    def write_json(self, data: Dict[str, Any], path: PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='\n') as f:
                json.dump(data, f, indent=2, sort_keys=True)
                f.write('\n')
        except OSError as e:
            self.error_logger.log_io_error(str(path), e)
            raise
        self.written.append(path)
        return path

    # ==========================================
    # MANIFEST
    # ==========================================

    @staticmethod
    def sha256(path: PathLike) -> str:
        digest = hashlib.sha256()
        with open(path, 'rb') as f:
            for chunk in iter(lambda: f.read(65536), b''):
                digest.update(chunk)
        return digest.hexdigest()

    def write_manifest(self, paths: Sequence[PathLike], path: Optional[PathLike] = None) -> Path:
        """
        SHA-256 digest of every file, keyed by file name.

        Args:
            paths: Files to fingerprint
            path: Manifest location; defaults to manifest.json beside the first file
        """
        paths = [Path(p) for p in paths]
        if path is None:
            path = paths[0].parent / "manifest.json"
        entries = {p.name: self.sha256(p) for p in sorted(paths, key=lambda p: p.name)}
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='\n') as f:
                json.dump({'files': entries}, f, indent=2, sort_keys=True)
                f.write('\n')
        except OSError as e:
            self.error_logger.log_io_error(str(path), e)
            raise
        self.logger.info("Manifest written", path=str(path), files=len(entries))
        return path

    def reset(self) -> List[Path]:
        """Return and forget the files written so far"""
        written, self.written = self.written, []
        return written


# Global output manager instance
_output_manager: Optional[OutputManager] = None


def get_output_manager() -> OutputManager:
    """Get the global output manager"""
    global _output_manager
    if _output_manager is None:
        _output_manager = OutputManager()
    return _output_manager


def write_manifest(paths: Sequence[PathLike], path: Optional[PathLike] = None) -> Path:
    return get_output_manager().write_manifest(paths, path)
