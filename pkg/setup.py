"""Setup file for the rex Python package"""
from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="rex-explain",
    version="0.1.0",
    description="Relevant explanations for knowledge-graph hypotheses via reinforcement learning",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["rex", "rex.*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires=">=3.9",
    install_requires=[
        "pydantic>=2.0.0",
        "python-dotenv>=1.0.0",
        "numpy>=1.22",
        "networkx>=2.8",
        "pandas>=1.5",
        "tqdm>=4.60",
    ],
    extras_require={
        "dev": ["pytest>=7.0.0"],
    },
    entry_points={
        "console_scripts": ["rex=rex.interfaces.cli:main"],
    },
)
