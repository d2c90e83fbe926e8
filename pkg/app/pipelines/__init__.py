"""Runnable audit jobs behind the command line."""
