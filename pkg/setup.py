from setuptools import setup, find_packages

setup(
    name="tn-kalman",
    version="0.1.0",
    packages=find_packages(include=['src', 'src.*', 'experiments', 'experiments.*', 'config', 'config.*']),
    py_modules=['main'],
    install_requires=[
        "numpy",
        "pandas",
        "python-dotenv",
        "colorama",
        "tabulate",
    ],
    extras_require={
        "dev": ["pytest", "pytest-cov"],
    },
    entry_points={
        "console_scripts": ["tn-kalman=main:main"],
    },
    python_requires=">=3.10",
)
