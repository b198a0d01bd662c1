"""A setuptools based setup module.
See:
https://packaging.python.org/en/latest/distributing.html
"""

# Always prefer setuptools over distutils
from setuptools import setup, find_packages

setup(
    name='pysnow',

    # Versions should comply with PEP440.
    version='0.1.0',

    description='Marine-snow synthesis, removal and evaluation for '
                'underwater images',
    long_description=('''Synthesizes marine-snow patches with a small WGAN,
                       builds paired clean/degraded datasets, trains a U-Net
                       remover with a perceptual loss on a numpy autodiff
                       core, and scores results with full-reference and
                       underwater no-reference quality metrics.'''),

    license='MIT',

    # See https://pypi.python.org/pypi?%3Aaction=list_classifiers
    classifiers=[
        # How mature is this project? Common values are
        #   3 - Alpha
        #   4 - Beta
        #   5 - Production/Stable
        'Development Status :: 3 - Alpha',

        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Image Processing',

        'License :: OSI Approved :: MIT License',

        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
    ],

    keywords='marine snow; underwater imaging; denoising; GAN; U-Net',

    # You can just specify the packages manually here if your project is
    # simple. Or you can use find_packages().
    packages=find_packages(exclude=['misc', 'tests', 'examples*']),

    # List run-time dependencies here.  These will be installed by pip when
    # your project is installed. For an analysis of "install_requires" vs pip's
    # requirements files see:
    # https://packaging.python.org/en/latest/requirements.html
    install_requires=['numpy>=1.20', 'scipy', 'numexpr', 'dask', 'pandas',
                      'pyyaml', 'matplotlib', 'pillow',
                      'scikit-image>=0.19', 'tqdm'],

    # List additional groups of dependencies here (e.g. development
    # dependencies). You can install these using the following syntax,
    # for example:
    # $ pip install -e .[test]
    extras_require={'test': ['pytest']},

    package_data={},

    data_files=[],

    # Entry points provide cross-platform support and allow pip to create the
    # appropriate form of executable for the target platform.
    entry_points={'console_scripts': ['pysnow=pysnow.Cli:main']},
)
