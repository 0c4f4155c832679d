"""
Shared test setup
"""
