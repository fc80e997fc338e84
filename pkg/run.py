"""
Command-line entry point: python run.py <mode> [options].

    python run.py run-pmd --env four_rooms --map negentropy
    python run.py compare --env maze --maps negentropy,l2 --seeds 5
    python run.py evolve --strategy sep-cma --generations 50
"""
import sys
from pathlib import Path

# Add project root to path so the pmdlab package can be imported
sys.path.insert(0, str(Path(__file__).parent))

from pmdlab.harness.cli import main

if __name__ == "__main__":
    main()
