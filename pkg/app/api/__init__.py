"""API routers for the DP audit service."""
