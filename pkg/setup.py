"""Setup script for the X-VFL Simulator"""

from setuptools import setup, find_packages
from pathlib import Path

# Read README
readme = Path(__file__).parent / "QUICK_START.md"
long_description = readme.read_text(encoding="utf-8") if readme.exists() else ""

setup(
    name="xvfl-simulator",
    version="0.1.0",
    description="Vertical federated learning simulator with feature completion and decision subspace alignment",
    long_description=long_description,
    long_description_content_type="text/markdown",

    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*", "docs"]),

    python_requires=">=3.10",

    install_requires=[
        "numpy>=1.24",
        "pandas>=2.0",
        "scikit-learn>=1.2",
        "pyyaml>=6.0",
        "click>=8.0",
        "networkx>=3.0",
        "rich>=13.0",
    ],

    extras_require={
        "dev": [
            "pytest>=7.0.0",
        ],
    },

    entry_points={
        "console_scripts": [
            "xvfl=cli.xvfl_cli:main",
        ],
    },

    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],

    keywords="vertical-federated-learning split-learning feature-completion sgd page simulation",
)
