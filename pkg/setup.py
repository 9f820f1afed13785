"""
Setup script pour CSNet
"""

from setuptools import setup, find_packages
from pathlib import Path

# Lire le README
readme_file = Path(__file__).parent / "README.md"
long_description = readme_file.read_text(encoding="utf-8") if readme_file.exists() else ""

# Lire les requirements
requirements_file = Path(__file__).parent / "requirements.txt"
requirements = []
if requirements_file.exists():
    requirements = requirements_file.read_text().strip().split("\n")
    requirements = [req.strip() for req in requirements if req.strip() and not req.startswith("#")]
    requirements = [req for req in requirements if req not in ("pytest", "black", "flake8")]

setup(
    name="csnet",
    version="1.0.0",
    description="Détection d'objets saillants ultra-légère: gOctConv, décroissance dynamique et élagage de canaux",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="Nicolas",
    packages=find_packages(exclude=("tests", "tests.*", "examples", "examples.*")),
    python_requires=">=3.8",
    install_requires=requirements,
    extras_require={"dev": ["pytest", "black", "flake8"]},
    entry_points={
        "console_scripts": [
            "csnet=csnet.main:cli_main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
    keywords="salient object detection, octave convolution, channel pruning, weight decay, numpy",
)
