# Taxonomy-guided text-to-SQL toolkit
__version__ = "1.0.0"
