# Numerical services behind the CLI and the API
