# Sphinx configuration of the skelbeat documentation.
import os
import sys
sys.path.insert(0, os.path.abspath('../../'))

from skelbeat import VERSION  # noqa: E402

project = 'skelbeat'
release = VERSION
version = '.'.join(VERSION.split('.')[:2])

extensions = [
    'myst_parser',
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.intersphinx',
    'sphinx_autodoc_typehints',
]
source_suffix = {'.rst': 'restructuredtext', '.md': 'markdown'}

# docstrings use "Args:", "Returns:" and "Raises:" sections
napoleon_google_docstring = True
napoleon_numpy_docstring = False
autodoc_member_order = 'bysource'
autodoc_default_options = {'members': True, 'show-inheritance': True}
typehints_fully_qualified = False

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
    'pandas': ('https://pandas.pydata.org/docs/', None),
    'networkx': ('https://networkx.org/documentation/stable/', None),
}

exclude_patterns = []

html_theme = 'sphinx_rtd_theme'
html_title = 'skelbeat %s' % release
html_theme_options = {
    'display_version': True,
    'navigation_depth': 3,
}
