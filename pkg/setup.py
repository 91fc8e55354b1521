from setuptools import setup, find_packages


def read_requirements(path='requirements.txt'):
    with open(path) as f:
        return [line.strip() for line in f if line.strip() and not line.startswith('#')]


setup(
    name="StrategicBiddingReserveSim",
    version="1.0.0",
    description="Multi-period electricity market clearing with strategic bidding, reserve and market-power reports.",
    long_description=open('README.md').read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=('tests',)),
    py_modules=['main'],
    include_package_data=True,
    package_data={'src': ['data/*.csv']},
    install_requires=read_requirements(),
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.9',
    entry_points={
        'console_scripts': [
            'market-sim=main:main',
        ],
    },
)
