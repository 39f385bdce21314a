"""Sphinx configuration for python-tsexpr."""
import os
import sys

sys.path.insert(0, os.path.abspath(".."))

from tsexpr import __version__  # noqa: E402

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.coverage",
    "sphinx.ext.viewcode",
    "sphinx.ext.intersphinx",
    "sphinxcontrib.apidoc",
    "sphinx_click.ext",
]

templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"

project = "python-tsexpr"
copyright = "2021, tsexpr developers"
author = "tsexpr developers"

# short X.Y version and the full release
version = ".".join(__version__.split(".")[:2])
release = __version__

language = None
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store", ".venv"]
pygments_style = "sphinx"

html_theme = "sphinx_rtd_theme"
html_static_path = []  # type: list
htmlhelp_basename = "python-tsexprdoc"

man_pages = [(master_doc, "tsexpr", "python-tsexpr Documentation", [author], 1)]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3.8", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
}

apidoc_module_dir = "../tsexpr"
apidoc_output_dir = "api"
apidoc_excluded_paths = ["tests"]
apidoc_separate_modules = True
autodoc_member_order = "groupwise"
autodoc_inherit_docstrings = True
autodoc_mock_imports = ["torch"]
