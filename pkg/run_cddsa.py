"""
Quick start script for the CDDSA experiments

This script:
1. Generates the synthetic dataset if it is not on disk yet
2. Passes any arguments on to the command-line interface

Usage: python run_cddsa.py [gen-data|train|eval|reconstruct|augment|report] [options]
"""

import logging
import sys
from pathlib import Path

from medical_dg.config import Config


def ensure_dataset(data_dir: Path) -> bool:
    """Render the default synthetic dataset when data_dir holds none."""
    from medical_dg.config import load_experiment_config
    from medical_dg.data.ingestion import MANIFEST_NAME, save_dataset
    from medical_dg.data.synthetic import build_dataset
    from medical_dg.errors import CDDSAError

    if (data_dir / MANIFEST_NAME).exists():
        print(f"✅ Dataset found at {data_dir}")
        return True
    print(f"🧪 No dataset at {data_dir}, generating the default synthetic set...")
    try:
        config = load_experiment_config()
        save_dataset(build_dataset(config.generator), data_dir, config.generator)
    except CDDSAError as e:
        print(f"❌ Could not generate the dataset: {e}")
        return False
    print(f"✅ Dataset written to {data_dir}")
    return True


def main():
    logging.basicConfig(level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO))
    from medical_dg.cli import app

    if len(sys.argv) > 1:
        app()
        return

    print("=" * 60)
    print("🧠 CDDSA - Quick Start")
    print("=" * 60)
    if not ensure_dataset(Path(Config.DATA_DIR)):
        sys.exit(3)
    print("\nNext: python run_cddsa.py train --mode cddsa --holdout 3\n")
    app(["--help"])


if __name__ == "__main__":
    main()
