"""
Legacy setup shim; supports pip install stagger-lab[distributed]
"""

# setup.py
from setuptools import setup, find_packages
import os


def read_file(filename):
    with open(os.path.join(os.path.dirname(__file__), filename)) as f:
        return f.read()


INSTALL_REQUIRES = [
    'numpy>=1.22',
    'scipy>=1.9',
    'pandas>=1.4',
    'scikit-learn>=1.1',
    'joblib>=1.2',
]

# Distributed Monte Carlo grids
DISTRIBUTED_REQUIRES = [
    'celery[redis]>=5.2.0',
    'redis>=4.3.0',
]

DEV_REQUIRES = [
    'pytest>=7.0.0',
    'pytest-cov>=4.0.0',
    'black>=22.0.0',
    'flake8>=5.0.0',
    'pre-commit>=2.20.0',
    'factory-boy>=3.2.0',
    'Faker>=15.0.0',
]

setup(
    name='stagger-lab',
    version='0.1.0',
    description='Event-study diagnostics, robust estimation and sensitivity analysis for staggered adoption designs',
    long_description=read_file('README.md'),
    long_description_content_type='text/markdown',
    packages=find_packages(include=['stagger_lab', 'stagger_lab.*']),
    include_package_data=True,
    zip_safe=False,
    install_requires=INSTALL_REQUIRES,
    extras_require={
        'distributed': DISTRIBUTED_REQUIRES,
        'dev': DEV_REQUIRES + DISTRIBUTED_REQUIRES,
    },
    entry_points={
        'console_scripts': ['stagger-lab=stagger_lab.cli:main'],
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    python_requires='>=3.9',
    keywords='econometrics event-study difference-in-differences staggered-adoption',
)
