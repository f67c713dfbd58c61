from setuptools import setup

setup()  # metadata, dependencies and entry points are in setup.cfg
