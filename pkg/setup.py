from os import path
from setuptools import setup

# the jerkgrpo version
__version__ = "0.1.0"

# get the absolute path of this project
here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

# the standard setup info
setup(
    name="jerkgrpo",
    version=__version__,
    description="Smoothness-aware GRPO for a planar reaching arm.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: MIT License",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Programming Language :: Python :: 3.7",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
    ],
    keywords=["reinforcement", "learning", "grpo", "jerk", "smoothness", "manipulator"],
    packages=["jerkgrpo"],
    python_requires=">=3.7, <4",
    install_requires=["numpy", "xarray", "scipy", "PyYAML"],
    extras_require={
        "test": [
            "pytest",
            "black",
            "mypy",
            "coverage",
            "pytest-cov",
            "flake8",
            "isort",
        ],
    },
    entry_points={"console_scripts": ["jerkgrpo = jerkgrpo.cli:main"]},
    package_data={"jerkgrpo": ["py.typed"]},
    include_package_data=True,
    zip_safe=False,
)
