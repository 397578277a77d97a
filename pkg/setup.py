from setuptools import setup, find_packages

with open("README.md", 'r') as f:
    long_description = f.read()
with open("requirements.txt", 'r') as f:
    required = f.read().splitlines()
VERSION = "0.1.0"


setup(
    name='skelbeat',
    version=VERSION,
    description='Bayesian energy-based adversarial training for '
                'skeletal-motion classifiers',
    license="LICENSE",
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=find_packages(include=['skelbeat*']),
    include_package_data=True,
    python_requires='>=3.8',
    install_requires=required,

    classifiers=[
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
    ],
    entry_points={
        'console_scripts': [
            'skelbeat = skelbeat.__main__:commandline_interface',
        ],
    }
)
