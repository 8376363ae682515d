# Read-only HTTP routers over run artifacts
