"""SketchKD: semi-supervised fine-grained sketch-based image retrieval by distilling a photo-only teacher."""

from setuptools import setup

setup(name = 'SketchKD',
    version = '1.0.0',
    description = "SketchKD: semi-supervised fine-grained sketch-based image retrieval by distilling a photo-only teacher.",
    install_requires = ['numpy>=1.18', 'scipy>=1.4', 'pytest', 'matplotlib', 'torch>=1.10', 'Pillow>=8.0'],
    python_requires ='>=3.7.0',
    license = 'MIT',
    packages = ['sketchkd'],
    zip_safe = False)
