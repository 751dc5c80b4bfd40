from setuptools import setup, find_packages


INSTALL_REQUIRES = [
    "jsonlines>=4.0.0",
    "numpy>=1.24",
    "pillow>=10.0.0",
    "safetensors>=0.4.1",
    "scipy>=1.11",
    "tabulate>=0.9.0",
    "torch>=2.2",
    "tqdm>=4.66",
    "transformers>=4.38",
    "xxhash>=3.3.0"
]

setup(
    name="glama_lab",
    version="0.1",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    install_requires=INSTALL_REQUIRES,
    extras_require={"test": ["pytest>=7.4"]},
    entry_points={"console_scripts": ["glama-lab=inpaint.cli:main"]},
    license="MIT",
    python_requires=">=3.10"
)
