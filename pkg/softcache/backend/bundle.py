import base64
import json

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from scipy import sparse

from ..catalog import Catalog, Mode, UtilityModel, Variant
from ..network import CoverageModel
from ..utils import bytes_to_dict, dict_to_bytes


BUNDLE_KINDS = ("catalog", "instance", "failure")


def _encode_array(array: np.ndarray) -> Dict[str, Any]:
    array = np.ascontiguousarray(array)
    if array.dtype.kind in "iu":
        array = array.astype("<i8")
    else:
        array = array.astype("<f8")

    return {
        "dtype": array.dtype.str,
        "shape": list(array.shape),
        "data": base64.b64encode(array.tobytes()).decode("ascii"),
    }


def _decode_array(data: Dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(data["data"])
    return np.frombuffer(raw, dtype=np.dtype(data["dtype"])).reshape(data["shape"]).copy()


def _encode_csr(matrix: sparse.csr_matrix) -> Dict[str, Any]:
    return {
        "shape": list(matrix.shape),
        "data": _encode_array(matrix.data),
        "indices": _encode_array(matrix.indices),
        "indptr": _encode_array(matrix.indptr),
    }


def _decode_csr(data: Dict[str, Any]) -> sparse.csr_matrix:
    return sparse.csr_matrix(
        (_decode_array(data["data"]), _decode_array(data["indices"]), _decode_array(data["indptr"])),
        shape=tuple(data["shape"])
    )


def encode_catalog(catalog: Catalog) -> Dict[str, Any]:
    return {
        "sizes": _encode_array(catalog.sizes),
        "demand": _encode_array(catalog.demand),
        "user_shares": _encode_array(catalog.user_shares),
    }


def decode_catalog(data: Dict[str, Any]) -> Catalog:
    return Catalog(
        sizes=_decode_array(data["sizes"]),
        demand=_decode_array(data["demand"]),
        user_shares=_decode_array(data["user_shares"])
    )


def encode_utility(model: UtilityModel) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "num_contents": model.num_contents,
        "variant": model.variant.value,
        "mode": model.mode.value,
        "u_max": model.u_max,
    }

    if model.is_shared:
        data["shared"] = _encode_csr(model.matrix())
    else:
        data["per_user"] = [_encode_csr(model.matrix(i)) for i in range(model.num_users)]

    if model.variant is Variant.DISTRIBUTIONAL:
        data["distributions"] = [
            {"pair": [k, n], "support": _encode_array(support), "probs": _encode_array(probs)}
            for (k, n), (support, probs) in sorted(model.distributions().items())
        ]

    return data


def decode_utility(data: Dict[str, Any]) -> UtilityModel:
    distributions = None
    if "distributions" in data:
        distributions = {
            tuple(entry["pair"]): (_decode_array(entry["support"]), _decode_array(entry["probs"]))
            for entry in data["distributions"]
        }

    return UtilityModel(
        num_contents=data["num_contents"],
        variant=Variant(data["variant"]),
        mode=Mode(data["mode"]),
        u_max=data["u_max"],
        shared=_decode_csr(data["shared"]) if "shared" in data else None,
        per_user=[_decode_csr(m) for m in data["per_user"]] if "per_user" in data else None,
        distributions=distributions
    )


def encode_coverage(model: CoverageModel) -> Dict[str, Any]:
    data = {
        "q": _encode_array(model.q),
        "cache_capacities": _encode_array(model.cache_capacities),
        "capacity_unit": model.capacity_unit,
    }
    for name in ("user_positions", "cell_positions"):
        positions = getattr(model, name)
        if positions is not None:
            data[name] = _encode_array(positions)
    return data


def decode_coverage(data: Dict[str, Any]) -> CoverageModel:
    return CoverageModel(
        q=_decode_array(data["q"]),
        cache_capacities=_decode_array(data["cache_capacities"]),
        capacity_unit=data["capacity_unit"],
        user_positions=_decode_array(data["user_positions"]) if "user_positions" in data else None,
        cell_positions=_decode_array(data["cell_positions"]) if "cell_positions" in data else None
    )


@dataclass
class Bundle:
    """Versioned JSON container for a catalog, its utilities and optionally a network.

    Arrays travel as base64 little-endian payloads, so floats round-trip
    bit-exactly.
    """

    kind: str
    catalog: Catalog
    utility: UtilityModel
    coverage: Optional[CoverageModel] = None
    params: Dict[str, Any] = field(default_factory=dict)
    format_version: Optional[str] = None
    format_id: Optional[int] = None

    def __post_init__(self):
        if self.kind not in BUNDLE_KINDS:
            raise ValueError(f"Unknown bundle kind: {self.kind}")

        if self.format_version is None:
            from ..version import package_version
            self.format_version = package_version

        if self.format_id is None:
            from ..version import bundle_format_id
            self.format_id = bundle_format_id

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "format_version": self.format_version,
            "format_id": self.format_id,
            "kind": self.kind,
            "catalog": encode_catalog(self.catalog),
            "utility": encode_utility(self.utility),
            "params": self.params,
        }

        if self.coverage is not None:
            data["coverage"] = encode_coverage(self.coverage)

        return data

    def to_bytes(self) -> bytes:
        return dict_to_bytes(self.to_dict())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bundle":
        try:
            json_data = bytes_to_dict(data)
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"Not a bundle: {e}") from e

        from ..version import bundle_format_id
        if json_data.get("format_id") != bundle_format_id:
            raise ValueError(
                f"Bundle format {json_data.get('format_id')} is not supported (expected {bundle_format_id})"
            )

        return cls(
            kind=json_data["kind"],
            catalog=decode_catalog(json_data["catalog"]),
            utility=decode_utility(json_data["utility"]),
            coverage=decode_coverage(json_data["coverage"]) if "coverage" in json_data else None,
            params=json_data.get("params", {}),
            format_version=json_data.get("format_version"),
            format_id=json_data.get("format_id")
        )

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Bundle":
        return cls.from_bytes(Path(path).read_bytes())


def create_failure_bundle(
    suite: str,
    message: str,
    catalog: Catalog,
    utility: UtilityModel,
    coverage: Optional[CoverageModel] = None,
    **params: Any
) -> Bundle:
    return Bundle(
        kind="failure",
        catalog=catalog,
        utility=utility,
        coverage=coverage,
        params={"suite": suite, "error": message, **params}
    )
