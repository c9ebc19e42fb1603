from setuptools import find_packages, setup

with open("requirements.txt") as f:
    requirements = [line.strip() for line in f if line.strip() and not line.startswith("#")]

setup(
    name="istr",
    version="0.1.0",
    description="Backdoor lab: poisoning attacks, Steps/DMS trigger inversion and unlearning on a numpy autograd engine",
    packages=find_packages(exclude=("tests",)),
    python_requires=">=3.9",
    install_requires=[r for r in requirements if r != "pytest"],
    entry_points={"console_scripts": ["istr=istr.pipeline.cli:main"]},
)
