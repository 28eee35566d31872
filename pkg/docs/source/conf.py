# -*- coding: utf-8 -*-
#
# DistilPy documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys

import sphinx_rtd_theme

sys.path.insert(0, os.path.abspath(os.path.join(os.pardir, os.pardir)))

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.intersphinx',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon',
]

autodoc_mock_imports = ['torch', 'torchvision']

templates_path = ['.templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'DistilPy'
copyright = u'2026, DistilPy Development Team'

version = '0.1'
release = '0.1.0'

exclude_patterns = []
pygments_style = 'sphinx'

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'torch': ('https://pytorch.org/docs/stable', None),
}

# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_short_title = "DistilPy Docs"
htmlhelp_basename = 'DistilPydoc'

# -- Options for LaTeX output ---------------------------------------------

latex_documents = [
    ('index', 'DistilPy.tex', u'DistilPy Documentation',
     u'DistilPy Development Team', 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    ('index', 'distilpy', u'DistilPy Documentation',
     [u'DistilPy Development Team'], 1)
]
