"""Regenerate the controller files shipped in src/indihinf/data/controllers."""
from pathlib import Path

from indihinf.synthesis.design import write_shipped_controllers

if __name__ == "__main__":
    target = Path(__file__).resolve().parents[1] / "src" / "indihinf" / "data" / "controllers"
    for p in write_shipped_controllers(target):
        print(p.name)
