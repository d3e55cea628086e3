# Operator command-line surface
