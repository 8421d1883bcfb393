#!/usr/bin/env python3
"""
Setup script for the lowres-tts toolkit.
"""
from setuptools import setup, find_packages

setup(
    name="lowres-tts",
    version="1.0.0",
    description="Low-resource text-to-speech: corpus prep, Tacotron-style training and transfer",
    packages=find_packages(exclude=("tests",)),
    py_modules=["tts_app"],
    install_requires=[
        "numpy",
        "scipy",
        "librosa",
        "soundfile",
        "torch",
        "matplotlib",
        "cryptography",
        "tomli; python_version < '3.11'",
    ],
    entry_points={
        "console_scripts": [
            "lowres-tts=tts_app:main",
        ],
    },
    python_requires=">=3.9",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Topic :: Multimedia :: Sound/Audio :: Speech",
    ],
)
