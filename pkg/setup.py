from setuptools import find_packages, setup

# 运行时依赖与 requirements.txt 保持一致，pytest 只在测试时需要
setup(
    name='live-evo-memory',
    version='0.1.1',
    description='Forecasting agent with a self-evolving, weighted experience memory',
    packages=find_packages(include=['src', 'src.*']),
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.20',
        'httpx>=0.24',
    ],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    entry_points={
        'console_scripts': [
            'live-evo = src.cli:main',
        ],
    },
)
