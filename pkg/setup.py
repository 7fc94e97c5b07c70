#!/usr/bin/env python

from setuptools import setup, find_packages

setup(
    name = "FocalSplat",
    version = open('version.txt').read().strip(),
    author = "FocalSplat contributors",
    description = "Defocus-aware Gaussian splat rendering and depth from defocus.",
    long_description = open('README.txt').read(),
    platforms = [],
    keywords = "defocus depth-of-field gaussian-splatting depth-estimation",
    classifiers = [],
    license = "GPL",
    scripts = ['bin/focalsplat.py'],
    packages = find_packages(exclude=['examples', 'examples.*']),
    package_data = {
      '':['*.txt'],
      },
    install_requires = [
      'numpy',
      'scipy',
      'Pillow',
      'scikit-image>=0.19',
      ],
    extras_require = {
      'tests': ['hypothesis'],
      },
    entry_points = {
      'console_scripts': ['focalsplat = FocalSplat.Commands:main'],
      },
    )
