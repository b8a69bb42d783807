# Sphinx configuration for the motioncluster documentation.
#
# Build with:
#     sphinx-build -b html docs/source docs/build

import os
import sys

sys.path.insert(0, os.path.abspath('../..'))

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.napoleon', 'sphinx.ext.mathjax']
napoleon_google_docstring = True
autodoc_member_order = 'bysource'

templates_path = []
source_suffix = '.rst'
master_doc = 'index'

project = 'motioncluster'
copyright = '2024, motioncluster developers'
author = 'motioncluster developers'

version = '0.1'
release = '0.1.0'

language = 'en'
exclude_patterns = []
pygments_style = 'sphinx'
todo_include_todos = False

html_theme = 'alabaster'
htmlhelp_basename = 'motionclusterdoc'

latex_documents = [
    (master_doc, 'motioncluster.tex', 'motioncluster Documentation', author, 'manual'),
]

man_pages = [
    (master_doc, 'motioncluster', 'motioncluster Documentation', [author], 1),
]
