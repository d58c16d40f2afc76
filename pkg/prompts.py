"""Text templates for gene and path descriptions.

Centralized so that every embedding backend sees exactly the same strings
(embeddings are cached by text; changing a template invalidates stores).
"""

# ------------------ Genes ------------------

# Used when a gene has no curated description.
GENE_FALLBACK = "Gene {symbol} ({gene_id})."


# ------------------ Paths ------------------

PATH_PREFIX = "In this pathway: "
PATH_CLAUSE = "{role_a} {symbol_a} connect to {role_b} {symbol_b}"
PATH_CLAUSE_SEPARATOR = ", "
PATH_SUFFIX = "."

# Roles are positional: first node, intermediates, last node.
ROLE_RECEPTOR = "receptor gene"
ROLE_SIGNALING = "signaling gene"
ROLE_TARGET = "target gene"
