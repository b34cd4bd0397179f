"""Run-environment capture for reproducible reports."""

import os
import platform
import subprocess
from contextlib import contextmanager
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List

import numpy as np
import torch

from guided_augmentation.errors import GuidedAugmentationError


class EnvironmentCollectionError(GuidedAugmentationError):
    """Raised when GPU information cannot be collected."""

    code = "environment_error"


def cuda_version_string(raw: int) -> str:
    """``12040`` -> ``"12.4"``; a non-zero patch digit is kept (``11021`` -> ``"11.2.1"``)."""
    parts = [raw // 1000, (raw % 1000) // 10]
    if raw % 10:
        parts.append(raw % 10)
    return ".".join(str(part) for part in parts)


def _text(value: Any) -> str:
    return value.decode("utf-8") if isinstance(value, bytes) else str(value)


def _or_unknown(query: Callable[[], Any], convert: Callable[[Any], str] = _text) -> str:
    try:
        return convert(query())
    except Exception:
        return "unknown"


@contextmanager
def _nvml() -> Iterator[Any]:
    try:
        import pynvml
    except ImportError as exc:
        raise EnvironmentCollectionError("install the gpu extra (nvidia-ml-py)") from exc
    try:
        pynvml.nvmlInit()
    except Exception as exc:
        raise EnvironmentCollectionError(f"NVML unavailable: {exc}") from exc
    try:
        yield pynvml
    finally:
        try:
            pynvml.nvmlShutdown()
        except Exception:
            pass


def collect_gpu_environment() -> Dict[str, Any]:
    """Driver, CUDA version and device names, as reported by NVML."""
    with _nvml() as nvml:
        try:
            devices: List[Dict[str, Any]] = []
            for index in range(nvml.nvmlDeviceGetCount()):
                handle = nvml.nvmlDeviceGetHandleByIndex(index)
                name = _or_unknown(partial(nvml.nvmlDeviceGetName, handle))
                devices.append({"index": index, "name": name})
        except Exception as exc:
            raise EnvironmentCollectionError(f"NVML query failed: {exc}") from exc
        return {
            "driver_version": _or_unknown(nvml.nvmlSystemGetDriverVersion),
            "cuda_version": _or_unknown(
                nvml.nvmlSystemGetCudaDriverVersion, lambda raw: cuda_version_string(int(raw))
            ),
            "gpu_count": len(devices),
            "gpus": devices,
        }


def collect_runtime_environment() -> Dict[str, Any]:
    """Describe the interpreter, libraries and hardware of this run.

    A missing GPU or a missing NVML binding is recorded, never raised:
    every computation in this package runs on CPU.
    """
    environment: Dict[str, Any] = {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "torch_threads": torch.get_num_threads(),
    }
    try:
        environment["gpu"] = collect_gpu_environment()
    except EnvironmentCollectionError as exc:
        environment["gpu"] = {"gpu_count": 0, "unavailable": str(exc)}
    return environment


def describe_version() -> str:
    """Package version, plus ``git describe`` output inside a checkout."""
    from guided_augmentation import __version__

    repo_root = Path(__file__).resolve().parents[2]
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=repo_root,
            capture_output=True,
            text=True,
            timeout=5,
            env={**os.environ, "GIT_TERMINAL_PROMPT": "0"},
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    if described.returncode != 0 or not described.stdout.strip():
        return __version__
    return f"{__version__}+{described.stdout.strip()}"
