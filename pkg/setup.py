"""A setuptools setup module for prodloom"""

# Standard
import os

# Third Party
from setuptools import setup

# Read the README to provide the long description
python_base = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(python_base, "README.md"), "r") as handle:
    long_description = handle.read()

# Read the runtime requirements
with open(os.path.join(python_base, "requirements.txt"), "r") as handle:
    install_requires = [
        line.strip() for line in handle if line.strip() and not line.startswith("#")
    ]

# Read version from the env
version = os.environ.get("RELEASE_VERSION")
assert version is not None, "Must set RELEASE_VERSION"

setup(
    name="prodloom",
    version=version,
    description="Multi-product production function estimation with nested-logit "
    "demand, purchase-share instrument exclusion and threshold sweeps",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering",
    ],
    keywords=["production function", "nested logit", "gmm", "markups", "tfpr"],
    packages=["prodloom"],
    python_requires=">=3.8",
    install_requires=install_requires,
    entry_points={"console_scripts": ["prodloom = prodloom.__main__:main"]},
)
