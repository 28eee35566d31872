from setuptools import setup, find_packages

setup(
    name='DistilPy',
    version='0.1.0',
    author='DistilPy Developers',
    url='http://pypi.python.org/pypi/DistilPy/',
    description='Benchmarking distillation defenses against backdoored self-supervised encoders',
    # long_description=open('README.md').read(),
    python_requires='>=3.8',
    install_requires=[
        "numpy >= 1.20",
        "torch >= 1.12",
        "torchvision >= 0.13",
        "pyyaml >= 5.4",
        "pandas >= 1.3",
        "matplotlib >= 3.3",
        "networkx >= 2.5",
        "bitstring >= 3.1.3",
        "tqdm >= 4.50",
    ],
    tests_require=["pytest >= 6.0"],
    extras_require={'test': ["pytest >= 6.0", "pycodestyle"]},
    packages=find_packages(exclude=['examples', 'examples.*']),
    package_data={'DistilPy': ['docs/*.md']},
    include_package_data=True,
    entry_points={'console_scripts': ['distilpy = DistilPy.bench:shell_main']}
)
