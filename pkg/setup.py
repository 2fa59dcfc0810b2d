"""
Setup configuration for power-constrained-downloads

    pip install -e .           # development install, provides download-sched
    pip install -e ".[dev]"    # with test and lint tooling
"""

from pathlib import Path

from setuptools import find_packages, setup

HERE = Path(__file__).parent

# Runtime requirements are the non-tooling lines of requirements.txt
TOOLING = ("pytest", "black", "flake8", "mypy", "setuptools", "wheel")
with open(HERE / "requirements.txt") as f:
    requirements = [
        line.strip()
        for line in f
        if line.strip() and not line.startswith("#") and not line.strip().startswith(TOOLING)
    ]

guide = HERE / "docs" / "DEPLOYMENT.md"

setup(
    name="power-constrained-downloads",
    version="0.1.0",
    description="Drift-plus-penalty and indexing schedulers for power-constrained file downloads",
    long_description=guide.read_text(encoding="utf-8") if guide.exists() else "",
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "docs", "examples", "examples.*"]),
    py_modules=["download_experiments"],
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
            "pytest-benchmark>=4.0.0",
            "black>=23.0.0",
            "flake8>=6.0.0",
            "mypy>=1.5.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "download-sched=download_experiments:main",
        ],
    },
    package_data={"": ["*.json"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Intended Audience :: Telecommunications Industry",
        "Topic :: System :: Networking",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Programming Language :: Python :: 3",
    ],
    keywords=["scheduling", "lyapunov-optimization", "drift-plus-penalty", "constrained-mdp", "linear-programming"],
    zip_safe=False,
)
