#!/usr/bin/env python3
"""
Dependency checker for FLOSS
Compares installed versions against requirements.txt and checks the numerics
"""

import importlib
import os
import re
import sys
from importlib import metadata
from typing import Dict, List, Optional, Tuple

# distribution name -> import name
IMPORT_NAMES = {
    "pyyaml": "yaml",
    "python-dotenv": "dotenv",
    "pytest-cov": "pytest_cov",
}
DEV_PACKAGES = {"pytest", "pytest-cov", "hypothesis", "black", "flake8"}
REQUIREMENT = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*(?:>=\s*([0-9][0-9.]*))?")


def read_requirements(path: str) -> List[Tuple[str, Optional[str]]]:
    """(name, minimum version) pairs from a requirements file"""
    requirements = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0]
            match = REQUIREMENT.match(line)
            if match:
                requirements.append((match.group(1).lower(), match.group(2)))
    return requirements


def _version_tuple(version: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in re.findall(r"\d+", version)[:3])


def check_package(name: str, minimum: Optional[str]) -> Tuple[bool, str]:
    """Import the package and compare its version with the minimum"""
    try:
        importlib.import_module(IMPORT_NAMES.get(name, name))
    except ImportError:
        return False, "❌ Missing"
    except Exception as e:
        return False, f"⚠️  Error: {str(e)[:50]}"

    try:
        installed = metadata.version(name)
    except metadata.PackageNotFoundError:
        return True, "✅ Installed"
    if minimum and _version_tuple(installed) < _version_tuple(minimum):
        return False, f"⚠️  {installed} < {minimum}"
    return True, f"✅ {installed}"


def check_python_version() -> bool:
    version = sys.version_info
    print(f"🐍 Python Version: {version.major}.{version.minor}.{version.micro}")
    if version.major != 3 or version.minor < 9:
        print("❌ Python 3.9+ is required")
        return False
    print("✅ Python version is compatible")
    return True


def check_numerics() -> Dict[str, bool]:
    """float64 autograd, torch.stft and libsndfile are what FLOSS leans on"""
    results = {}
    try:
        import torch
        x = torch.ones(4, dtype=torch.float64, requires_grad=True)
        (x * x).sum().backward()
        results["float64 autograd"] = bool(torch.equal(x.grad, 2 * torch.ones(4, dtype=torch.float64)))
        window = torch.hamming_window(320, periodic=True, dtype=torch.float64)
        spec = torch.stft(torch.randn(1600, dtype=torch.float64), 320, 160, window=window, return_complex=True)
        results["torch.stft"] = spec.shape[0] == 161
        print(f"🧵 Torch threads: {torch.get_num_threads()}")
    except ImportError:
        print("🧮 Cannot check numerics (PyTorch not installed)")
    try:
        import soundfile
        print(f"🎵 libsndfile: {soundfile.__libsndfile_version__}")
        results["libsndfile"] = True
    except (ImportError, OSError):
        results["libsndfile"] = False
    for name, ok in results.items():
        print(f"{'✅' if ok else '❌'} {name}")
    return results


def main() -> bool:
    print("🔍 FLOSS Dependency Checker")
    print("=" * 50)

    if not check_python_version():
        print("\n❌ Python version check failed")
        return False

    root = os.path.dirname(os.path.abspath(__file__))
    requirements = read_requirements(os.path.join(root, "requirements.txt"))

    missing = []
    for title, dev in (("Required", False), ("Development", True)):
        print(f"\n📋 {title} Packages:")
        print("-" * 30)
        for name, minimum in requirements:
            if (name in DEV_PACKAGES) != dev:
                continue
            ok, status = check_package(name, minimum)
            print(f"{status:20} {name}")
            if not ok and not dev:
                missing.append(f"{name}>={minimum}" if minimum else name)

    print("\n🧮 Numerics:")
    print("-" * 20)
    numerics_ok = all(check_numerics().values())

    print("\n📊 Summary:")
    print("-" * 10)
    if missing:
        print(f"❌ {len(missing)} required package(s) missing or too old")
        print(f"   pip install {' '.join(repr(m) for m in missing)}")
        print("   or: pip install -r requirements.txt")
        return False
    if not numerics_ok:
        print("❌ Packages are installed but a numerics check failed")
        return False

    print("✅ All required packages are installed!")
    print("\n🚀 Next steps:")
    print("   python run_floss.py selftest")
    print("   python run_floss.py train --config config/config.yaml")
    return True


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
