from os import path

from setuptools import setup

with open(path.join(path.abspath(path.dirname(__file__)), 'README.md'), encoding='utf-8') as f:
    readme_description = f.read()

setup(
    name="debiasing",
    packages=["debiasing", "debiasing.utils"],
    version="1.0",
    license="MIT",
    description="De-biased inference for convex-regularized least squares in Gaussian designs",
    author="Debiasing developers",
    keywords=['python', 'statistics', 'lasso', 'group-lasso', 'ridge', 'high-dimensional', 'inference',
              'confidence-interval', 'degrees-of-freedom', 'stein', 'monte-carlo'],
    install_requires=['numpy>=1.21', 'scipy>=1.7', 'pandas>=1.5', 'psutil>=5.8.0', 'PyYAML>=6.0',
                      'typing; python_version<"3.8"'],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    entry_points={
        'console_scripts': ['debiasing=debiasing.cli:main'],
    },
    classifiers=['Development Status :: 4 - Beta', 'License :: OSI Approved :: MIT License', 'Programming Language :: Python :: 3',
                 'Programming Language :: Python :: 3.8', 'Programming Language :: Python :: 3.9', 'Programming Language :: Python :: 3.10',
                 'Topic :: Scientific/Engineering :: Mathematics'],
    long_description=readme_description,
    long_description_content_type="text/markdown",
    include_package_data=True,
    python_requires='>=3.8, <4',
    package_data={
        'debiasing': ['configs/*.yaml'],
    },
)
