from setuptools import find_namespace_packages, setup

setup(
    name="adguardian",
    version="0.0.1",
    description="Speech-based Alzheimer's disease screening pipeline",
    packages=find_namespace_packages(include=["src", "src.*"]),
    python_requires=">=3.9",
    install_requires=[
        "numpy",
        "pandas",
        "scipy",
        "scikit-learn",
        "joblib",
        "seaborn",
        "matplotlib",
        "python-box",
        "pyYAML",
        "tqdm",
        "ensure",
        "python-dotenv",
        "pydantic",
        "torch",
        "librosa",
        "soundfile",
        "editdistance",
    ],
)
